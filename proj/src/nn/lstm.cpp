#include <Eigen/Dense>
#include <cmath>

#include "signet/nn.hpp"

namespace signet::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMatrix>;
using MMap = Eigen::Map<RowMatrix>;

Eigen::Index ix(std::size_t n) { return static_cast<Eigen::Index>(n); }

double sigm(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Per-step values kept for the backward sweep, each [b, h] (gates [b, 4h]).
struct Trace {
  std::vector<RowMatrix> gates;  // activated i, f, g, o
  std::vector<RowMatrix> c_prev, c_new, h_prev;
};

// One direction over the whole sequence. Output rows 0..m-1 are the per-step
// outputs, row m the final hidden state.
Tensor run_direction(const Tensor& x, const std::vector<double>& mask, const Lstm::Direction& p,
                     std::size_t H, bool reverse) {
  const std::size_t B = x.dim(0), m = x.dim(1), I = x.dim(2);
  const std::size_t G = 4 * H;

  auto xw = std::make_shared<RowMatrix>(CMap(x.data().data(), ix(B * m), ix(I)) *
                                        CMap(p.w_ih.data().data(), ix(I), ix(G)));
  const Eigen::Map<const Eigen::RowVectorXd> bias(p.bias.data().data(), ix(G));
  const CMap whh(p.w_hh.data().data(), ix(H), ix(G));

  auto tr = std::make_shared<Trace>();
  tr->gates.resize(m);
  tr->c_prev.resize(m);
  tr->c_new.resize(m);
  tr->h_prev.resize(m);

  std::vector<double> out((m + 1) * B * H, 0.0);
  // out layout is [b, m + 1, h].
  RowMatrix h = RowMatrix::Zero(ix(B), ix(H));
  RowMatrix c = RowMatrix::Zero(ix(B), ix(H));
  for (std::size_t s = 0; s < m; ++s) {
    const std::size_t t = reverse ? m - 1 - s : s;
    RowMatrix z = h * whh;
    for (std::size_t b = 0; b < B; ++b) z.row(ix(b)) += xw->row(ix(b * m + t)) + bias;
    RowMatrix a(ix(B), ix(G));
    for (Eigen::Index b = 0; b < ix(B); ++b) {
      for (Eigen::Index j = 0; j < ix(H); ++j) {
        a(b, j) = sigm(z(b, j));
        a(b, ix(H) + j) = sigm(z(b, ix(H) + j));
        a(b, ix(2 * H) + j) = std::tanh(z(b, ix(2 * H) + j));
        a(b, ix(3 * H) + j) = sigm(z(b, ix(3 * H) + j));
      }
    }
    tr->h_prev[t] = h;
    tr->c_prev[t] = c;
    RowMatrix cn = c;
    for (Eigen::Index b = 0; b < ix(B); ++b) {
      if (mask[static_cast<std::size_t>(b) * m + t] == 0.0) continue;
      for (Eigen::Index j = 0; j < ix(H); ++j) {
        cn(b, j) = a(b, ix(H) + j) * c(b, j) + a(b, j) * a(b, ix(2 * H) + j);
        h(b, j) = a(b, ix(3 * H) + j) * std::tanh(cn(b, j));
        out[(static_cast<std::size_t>(b) * (m + 1) + t) * H + static_cast<std::size_t>(j)] = h(b, j);
      }
    }
    c = cn;
    tr->c_new[t] = cn;
    tr->gates[t] = std::move(a);
  }
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < H; ++j) out[(b * (m + 1) + m) * H + j] = h(ix(b), ix(j));

  auto maskp = std::make_shared<std::vector<double>>(mask);
  const Tensor w_ih = p.w_ih, w_hh = p.w_hh;
  return custom_op(
      {B, m + 1, H}, std::move(out), {x, p.w_ih, p.w_hh, p.bias},
      [=](std::span<const double>, std::span<const double> g,
          std::span<const std::span<double>> gin) {
        const CMap wih(w_ih.data().data(), ix(I), ix(G));
        const CMap whh_b(w_hh.data().data(), ix(H), ix(G));
        RowMatrix dz_all = RowMatrix::Zero(ix(B * m), ix(G));
        RowMatrix dh(ix(B), ix(H)), dc = RowMatrix::Zero(ix(B), ix(H));
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t j = 0; j < H; ++j) dh(ix(b), ix(j)) = g[(b * (m + 1) + m) * H + j];
        RowMatrix dwhh = RowMatrix::Zero(ix(H), ix(G));
        for (std::size_t s = m; s-- > 0;) {
          const std::size_t t = reverse ? m - 1 - s : s;
          const RowMatrix& a = tr->gates[t];
          RowMatrix dz = RowMatrix::Zero(ix(B), ix(G));
          bool any = false;
          for (Eigen::Index b = 0; b < ix(B); ++b) {
            if ((*maskp)[static_cast<std::size_t>(b) * m + t] == 0.0) continue;
            any = true;
            for (Eigen::Index j = 0; j < ix(H); ++j) {
              const double dht =
                  dh(b, j) + g[(static_cast<std::size_t>(b) * (m + 1) + t) * H + static_cast<std::size_t>(j)];
              const double i = a(b, j), f = a(b, ix(H) + j), gg = a(b, ix(2 * H) + j),
                           o = a(b, ix(3 * H) + j);
              const double tc = std::tanh(tr->c_new[t](b, j));
              const double dct = dc(b, j) + dht * o * (1.0 - tc * tc);
              dz(b, j) = dct * gg * i * (1.0 - i);
              dz(b, ix(H) + j) = dct * tr->c_prev[t](b, j) * f * (1.0 - f);
              dz(b, ix(2 * H) + j) = dct * i * (1.0 - gg * gg);
              dz(b, ix(3 * H) + j) = dht * tc * o * (1.0 - o);
              dc(b, j) = dct * f;
              dh(b, j) = 0.0;
            }
          }
          if (!any) continue;
          // Masked rows of dz are zero, so their dh/dc pass through untouched.
          dh.noalias() += dz * whh_b.transpose();
          dwhh.noalias() += tr->h_prev[t].transpose() * dz;
          for (std::size_t b = 0; b < B; ++b) dz_all.row(ix(b * m + t)) = dz.row(ix(b));
        }
        if (!gin[0].empty()) MMap(gin[0].data(), ix(B * m), ix(I)).noalias() += dz_all * wih.transpose();
        if (!gin[1].empty()) {
          MMap(gin[1].data(), ix(I), ix(G)).noalias() +=
              CMap(x.data().data(), ix(B * m), ix(I)).transpose() * dz_all;
        }
        if (!gin[2].empty()) MMap(gin[2].data(), ix(H), ix(G)) += dwhh;
        if (!gin[3].empty()) {
          Eigen::Map<Eigen::RowVectorXd>(gin[3].data(), ix(G)) += dz_all.colwise().sum();
        }
      },
      "lstm");
}

Lstm::Direction make_direction(ParamStore& ps, const std::string& name, std::size_t in,
                               std::size_t hidden, std::mt19937_64& rng) {
  Lstm::Direction d;
  d.w_ih = ps.add(name + ".w_ih", fan_in_uniform({in, 4 * hidden}, in, rng));
  d.w_hh = ps.add(name + ".w_hh", fan_in_uniform({hidden, 4 * hidden}, hidden, rng));
  std::vector<double> b(4 * hidden, 0.0);
  std::fill(b.begin() + static_cast<std::ptrdiff_t>(hidden),
            b.begin() + static_cast<std::ptrdiff_t>(2 * hidden), 1.0);
  d.bias = ps.add(name + ".bias", Tensor::from({4 * hidden}, std::move(b)));
  return d;
}

}  // namespace

Lstm::Lstm(ParamStore& ps, const std::string& name, std::size_t in_dim, std::size_t hidden_dim,
           bool bidir, std::mt19937_64& rng)
    : in(in_dim), hidden(hidden_dim), bidirectional(bidir) {
  if (in == 0 || hidden == 0) throw ConfigError("lstm '" + name + "' needs positive sizes");
  fwd = make_direction(ps, name + ".fwd", in, hidden, rng);
  if (bidirectional) bwd = make_direction(ps, name + ".bwd", in, hidden, rng);
}

LstmOutput Lstm::operator()(const Tensor& x, const std::optional<Tensor>& mask) const {
  if (x.ndim() != 3 || x.dim(2) != in) {
    throw ShapeError("lstm expects [batch, time, " + std::to_string(in) + "], got " +
                     to_string(x.shape()));
  }
  const std::size_t B = x.dim(0), m = x.dim(1);
  if (m == 0) throw ShapeError("lstm needs at least one step");
  std::vector<double> mv(B * m, 1.0);
  if (mask) {
    if (mask->shape() != Shape{B, m}) {
      throw ShapeError("lstm mask " + to_string(mask->shape()) + " does not match input");
    }
    mv = mask->to_vector();
  }
  const Tensor f = run_direction(x, mv, fwd, hidden, false);
  LstmOutput out;
  if (!bidirectional) {
    out.outputs = slice(f, 1, 0, m);
    out.final = select(f, 1, m);
    return out;
  }
  const Tensor b = run_direction(x, mv, bwd, hidden, true);
  out.outputs = concat({slice(f, 1, 0, m), slice(b, 1, 0, m)}, 2);
  out.final = concat({select(f, 1, m), select(b, 1, m)}, 1);
  return out;
}

}  // namespace signet::nn
