#include <Eigen/Dense>
#include <cmath>

#include "signet/nn.hpp"

namespace signet::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMatrix>;
using MMap = Eigen::Map<RowMatrix>;

Eigen::Index ix(std::size_t n) { return static_cast<Eigen::Index>(n); }

void check_stream(const Tensor& x, const char* what) {
  if (x.ndim() != 3) {
    throw ShapeError(std::string(what) + " expects a [batch, time, channels] stream, got " +
                     to_string(x.shape()));
  }
}

void check_mask(const Tensor& x, const Tensor& mask) {
  if (mask.ndim() != 2 || mask.dim(0) != x.dim(0) || mask.dim(1) != x.dim(1)) {
    throw ShapeError("mask " + to_string(mask.shape()) + " does not match stream " +
                     to_string(x.shape()));
  }
}

}  // namespace

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  return Tensor::uniform(std::move(shape), -bound, bound, rng);
}

Linear::Linear(ParamStore& ps, const std::string& name, std::size_t in_dim, std::size_t out_dim,
               std::mt19937_64& rng)
    : in(in_dim), out(out_dim) {
  if (in == 0 || out == 0) throw ConfigError("linear layer '" + name + "' needs positive sizes");
  weight = ps.add(name + ".weight", fan_in_uniform({in, out}, in, rng));
  bias = ps.add(name + ".bias", Tensor::zeros({out}));
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.ndim() == 0 || x.dim(-1) != in) {
    throw ShapeError("linear layer expects trailing size " + std::to_string(in) + ", got " +
                     to_string(x.shape()));
  }
  return matmul(x, weight) + bias;
}

Tensor dropout(const Tensor& x, double rate, bool train, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!train || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> m(x.numel());
  const double s = 1.0 / (1.0 - rate);
  for (auto& v : m) v = keep(rng) ? s : 0.0;
  return x * Tensor::from(x.shape(), std::move(m));
}

Tensor layer_norm(const Tensor& x, double eps) {
  if (x.ndim() == 0) throw ShapeError("layer_norm needs at least one axis");
  const std::size_t d = x.dim(-1);
  const std::size_t rows = x.numel() / d;
  const auto xv = x.data();
  std::vector<double> y(x.numel());
  auto inv = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += p[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (p[j] - mu) * (p[j] - mu);
    var /= static_cast<double>(d);
    const double s = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = s;
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = (p[j] - mu) * s;
  }
  return custom_op(
      x.shape(), std::move(y), {x},
      [d, rows, inv](std::span<const double> out, std::span<const double> g,
                     std::span<const std::span<double>> gin) {
        if (gin[0].empty()) return;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* yr = out.data() + r * d;
          const double* gr = g.data() + r * d;
          double gm = 0.0, gy = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            gm += gr[j];
            gy += gr[j] * yr[j];
          }
          gm /= static_cast<double>(d);
          gy /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j)
            gin[0][r * d + j] += (*inv)[r] * (gr[j] - gm - yr[j] * gy);
        }
      },
      "layer_norm");
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, std::size_t dim) {
  gamma = ps.add(name + ".gamma", Tensor::ones({dim}));
  beta = ps.add(name + ".beta", Tensor::zeros({dim}));
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x) * gamma + beta; }

Tensor apply_mask(const Tensor& stream, const Tensor& mask) {
  check_stream(stream, "apply_mask");
  check_mask(stream, mask);
  return stream * reshape(mask, {mask.dim(0), mask.dim(1), 1});
}

Tensor fill_masked(const Tensor& stream, const Tensor& mask) {
  check_stream(stream, "fill_masked");
  check_mask(stream, mask);
  const std::size_t B = stream.dim(0), m = stream.dim(1), c = stream.dim(2);
  const auto mv = mask.data();
  auto src = std::make_shared<std::vector<std::ptrdiff_t>>(B * m, -1);
  for (std::size_t b = 0; b < B; ++b) {
    std::ptrdiff_t last = -1;
    for (std::size_t t = 0; t < m; ++t) {
      if (mv[b * m + t] != 0.0) last = static_cast<std::ptrdiff_t>(b * m + t);
      (*src)[b * m + t] = last;
    }
  }
  const auto xv = stream.data();
  std::vector<double> out(B * m * c, 0.0);
  for (std::size_t r = 0; r < B * m; ++r) {
    if ((*src)[r] < 0) continue;
    std::copy_n(xv.data() + (*src)[r] * static_cast<std::ptrdiff_t>(c), c, out.data() + r * c);
  }
  return custom_op(
      stream.shape(), std::move(out), {stream},
      [src, c](std::span<const double>, std::span<const double> g,
               std::span<const std::span<double>> gin) {
        if (gin[0].empty()) return;
        for (std::size_t r = 0; r < src->size(); ++r) {
          const auto s = (*src)[r];
          if (s < 0) continue;
          for (std::size_t j = 0; j < c; ++j) gin[0][static_cast<std::size_t>(s) * c + j] += g[r * c + j];
        }
      },
      "fill_masked");
}

// ---------------------------------------------------------------------------

Conv1d::Conv1d(ParamStore& ps, const std::string& name, std::size_t in_dim, std::size_t out_dim,
               std::size_t k, std::mt19937_64& rng)
    : in(in_dim), out(out_dim), kernel(k) {
  if (kernel % 2 == 0) {
    throw ContractError("conv1d kernel must be odd, got " + std::to_string(kernel));
  }
  if (in == 0 || out == 0) throw ConfigError("conv1d '" + name + "' needs positive sizes");
  weight = ps.add(name + ".weight", fan_in_uniform({kernel * in, out}, kernel * in, rng));
  bias = ps.add(name + ".bias", Tensor::zeros({out}));
}

Tensor Conv1d::operator()(const Tensor& x_in, const std::optional<Tensor>& mask) const {
  check_stream(x_in, "conv1d");
  if (x_in.dim(2) != in) {
    throw ShapeError("conv1d expects " + std::to_string(in) + " input channels, got " +
                     to_string(x_in.shape()));
  }
  const Tensor x = mask ? apply_mask(x_in, *mask) : x_in;
  const std::size_t B = x.dim(0), m = x.dim(1), kin = kernel * in;
  const auto half = static_cast<std::ptrdiff_t>(kernel / 2);

  // im2col: row (b, t) holds the kernel taps around t, zeros outside [0, m).
  auto col = std::make_shared<RowMatrix>(RowMatrix::Zero(ix(B * m), ix(kin)));
  const auto xv = x.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < m; ++t) {
      for (std::size_t j = 0; j < kernel; ++j) {
        const auto s = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
        if (s < 0 || s >= static_cast<std::ptrdiff_t>(m)) continue;
        const double* p = xv.data() + (b * m + static_cast<std::size_t>(s)) * in;
        for (std::size_t i = 0; i < in; ++i) (*col)(ix(b * m + t), ix(j * in + i)) = p[i];
      }
    }
  }
  std::vector<double> y(B * m * out);
  MMap ym(y.data(), ix(B * m), ix(out));
  ym.noalias() = *col * CMap(weight.data().data(), ix(kin), ix(out));
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), ix(out));

  const Tensor w = weight;
  const std::size_t in_ch = in, out_ch = out, kern = kernel;
  Tensor result = custom_op(
      {B, m, out}, std::move(y), {x, weight, bias},
      [col, w, B, m, in_ch, out_ch, kern, half](std::span<const double>, std::span<const double> g,
                                                std::span<const std::span<double>> gin) {
        CMap gm(g.data(), ix(B * m), ix(out_ch));
        if (!gin[1].empty()) {
          MMap(gin[1].data(), ix(kern * in_ch), ix(out_ch)).noalias() += col->transpose() * gm;
        }
        if (!gin[2].empty()) {
          Eigen::Map<Eigen::RowVectorXd>(gin[2].data(), ix(out_ch)) += gm.colwise().sum();
        }
        if (!gin[0].empty()) {
          const RowMatrix dcol = gm * CMap(w.data().data(), ix(kern * in_ch), ix(out_ch)).transpose();
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t t = 0; t < m; ++t) {
              for (std::size_t j = 0; j < kern; ++j) {
                const auto s = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
                if (s < 0 || s >= static_cast<std::ptrdiff_t>(m)) continue;
                double* p = gin[0].data() + (b * m + static_cast<std::size_t>(s)) * in_ch;
                for (std::size_t i = 0; i < in_ch; ++i) p[i] += dcol(ix(b * m + t), ix(j * in_ch + i));
              }
            }
          }
        }
      },
      "conv1d");
  return mask ? apply_mask(result, *mask) : result;
}

// ---------------------------------------------------------------------------

ClsToken::ClsToken(ParamStore& ps, const std::string& name, std::size_t dim,
                   std::mt19937_64& rng) {
  token = ps.add(name, Tensor::normal({dim}, 0.0, 0.02, rng));
}

Tensor ClsToken::prepend(const Tensor& x) const {
  check_stream(x, "cls token");
  const Tensor row = Tensor::ones({x.dim(0), 1, 1}) * token;
  return concat({row, x}, 1);
}

Tensor ClsToken::prepend_mask(const Tensor& mask) {
  return concat({Tensor::ones({mask.dim(0), 1}), mask}, 1);
}

FfnHead::FfnHead(ParamStore& ps, const std::string& name, std::size_t in,
                 const std::vector<std::size_t>& hidden, std::size_t classes,
                 std::mt19937_64& rng) {
  if (hidden.empty()) throw ConfigError("the classification head needs at least one hidden layer");
  if (classes < 2) throw ConfigError("the classification head needs at least two classes");
  std::size_t width = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers.emplace_back(ps, name + ".hidden" + std::to_string(i), width, hidden[i], rng);
    width = hidden[i];
  }
  out = Linear(ps, name + ".out", width, classes, rng);
}

Tensor FfnHead::operator()(const Tensor& x, double rate, bool train, std::mt19937_64& rng) const {
  Tensor h = x;
  for (const auto& l : layers) h = dropout(relu(l(h)), rate, train, rng);
  return out(h);
}

}  // namespace signet::nn
