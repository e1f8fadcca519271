#include <memory>
#include <string>

#include "signet/signature.hpp"

namespace signet::sig {

namespace {

enum class Output { final_only, expanding };

struct PathGeometry {
  std::size_t batch;
  std::size_t points;
  std::size_t channels;
  bool batched;
};

PathGeometry geometry(const Tensor& path) {
  const Shape& s = path.shape();
  if (s.size() != 2 && s.size() != 3) {
    throw ShapeError("signature input must be [m, c] or [b, m, c], got " + to_string(s));
  }
  PathGeometry g{};
  g.batched = s.size() == 3;
  g.batch = g.batched ? s[0] : 1;
  g.points = s[s.size() - 2];
  g.channels = s.back();
  if (g.points < 2) {
    throw ContractError("signature needs at least 2 points (one increment), got " +
                        std::to_string(g.points));
  }
  if (g.channels < 1) throw ContractError("signature needs at least one channel");
  return g;
}

// Prefix signatures P_0 = 1, P_j = P_{j-1} (x) exp(x_j - x_{j-1}).
std::vector<TruncatedTensor> prefixes(const double* x, std::size_t points, std::size_t c,
                                      std::size_t depth) {
  std::vector<TruncatedTensor> out;
  out.reserve(points);
  out.push_back(TruncatedTensor::identity(c, depth));
  std::vector<double> inc(c);
  for (std::size_t j = 1; j < points; ++j) {
    for (std::size_t a = 0; a < c; ++a) inc[a] = x[j * c + a] - x[(j - 1) * c + a];
    out.push_back(mul_exp(out.back(), inc));
  }
  return out;
}

void write_row(const TruncatedTensor& p, bool log_mode, const LyndonBasis* basis, double* row) {
  if (!log_mode) {
    const auto t = p.tail();
    std::copy(t.begin(), t.end(), row);
    return;
  }
  tensor_log_at(p, basis->positions(), row);
}

Tensor run(const Tensor& path, const SignatureSpec& spec, Output mode, const char* name) {
  const PathGeometry g = geometry(path);
  if (spec.channels != g.channels) {
    throw ShapeError("signature spec expects " + std::to_string(spec.channels) +
                     " channels, path has " + std::to_string(g.channels));
  }
  spec.validate();
  const std::size_t depth = spec.depth;
  const bool log_mode = spec.log_mode;
  const LyndonBasis* basis = log_mode ? &lyndon_basis(g.channels, depth) : nullptr;
  const std::size_t width = spec.out_channels();
  const std::size_t rows = mode == Output::expanding ? g.points - 1 : 1;

  auto stored = std::make_shared<std::vector<std::vector<TruncatedTensor>>>();
  stored->reserve(g.batch);
  std::vector<double> out(g.batch * rows * width);
  const double* x = path.data().data();
  const std::size_t stride = g.points * g.channels;
  for (std::size_t b = 0; b < g.batch; ++b) {
    stored->push_back(prefixes(x + b * stride, g.points, g.channels, depth));
    const auto& pre = stored->back();
    double* dst = out.data() + b * rows * width;
    if (mode == Output::expanding) {
      for (std::size_t j = 1; j < g.points; ++j)
        write_row(pre[j], log_mode, basis, dst + (j - 1) * width);
    } else {
      write_row(pre.back(), log_mode, basis, dst);
    }
  }

  Shape shape;
  if (g.batched) shape.push_back(g.batch);
  if (mode == Output::expanding) shape.push_back(rows);
  shape.push_back(width);

  return custom_op(
      std::move(shape), std::move(out), {path},
      [g, depth, log_mode, basis, width, rows, mode, stored, path](
          std::span<const double>, std::span<const double> grad,
          std::span<const std::span<double>> gin) {
        const std::size_t c = g.channels;
        const double* x = path.data().data();
        const std::size_t stride = g.points * c;
        std::vector<double> inc(c);
        std::vector<double> ginc(c);
        for (std::size_t b = 0; b < g.batch; ++b) {
          const auto& pre = (*stored)[b];
          const std::size_t size = pre.front().size();
          const double* gb = grad.data() + b * rows * width;
          const double* xb = x + b * stride;
          double* gx = gin[0].data() + b * stride;
          std::vector<double> gp(size, 0.0);
          for (std::size_t j = g.points - 1; j >= 1; --j) {
            const double* row = nullptr;
            if (mode == Output::expanding) {
              row = gb + (j - 1) * width;
            } else if (j == g.points - 1) {
              row = gb;
            }
            if (row) {
              if (!log_mode) {
                for (std::size_t i = 0; i < width; ++i) gp[i + 1] += row[i];
              } else {
                tensor_log_at_backward(pre[j], basis->positions(), row, gp);
              }
            }
            for (std::size_t a = 0; a < c; ++a) inc[a] = xb[j * c + a] - xb[(j - 1) * c + a];
            std::vector<double> gprev(size, 0.0);
            std::fill(ginc.begin(), ginc.end(), 0.0);
            mul_exp_backward(pre[j - 1], inc, gp, gprev, ginc);
            for (std::size_t a = 0; a < c; ++a) {
              gx[j * c + a] += ginc[a];
              gx[(j - 1) * c + a] -= ginc[a];
            }
            gp.swap(gprev);
          }
        }
      },
      name);
}

}  // namespace

Tensor signature(const Tensor& path, std::size_t depth) {
  const PathGeometry g = geometry(path);
  return run(path, SignatureSpec{g.channels, depth, false}, Output::final_only, "signature");
}

Tensor log_signature(const Tensor& path, std::size_t depth) {
  const PathGeometry g = geometry(path);
  return run(path, SignatureSpec{g.channels, depth, true}, Output::final_only, "log_signature");
}

Tensor transform(const Tensor& path, const SignatureSpec& spec) {
  return run(path, spec, Output::final_only, spec.log_mode ? "log_signature" : "signature");
}

Tensor expanding_signatures(const Tensor& stream, const SignatureSpec& spec) {
  return run(stream, spec, Output::expanding, "expanding_signatures");
}

}  // namespace signet::sig
