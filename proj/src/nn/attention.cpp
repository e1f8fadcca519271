#include <cmath>

#include "signet/nn.hpp"

namespace signet::nn {

Tensor masked_softmax(const Tensor& scores, const Tensor& key_mask) {
  if (scores.ndim() < 2 || key_mask.ndim() != 2 || key_mask.dim(0) != scores.dim(0) ||
      key_mask.dim(1) != scores.dim(-1)) {
    throw ShapeError("masked_softmax: scores " + to_string(scores.shape()) + " vs mask " +
                     to_string(key_mask.shape()));
  }
  const std::size_t B = scores.dim(0), m = scores.dim(-1);
  const std::size_t rows = scores.numel() / m;
  const std::size_t per_batch = rows / B;
  const auto sv = scores.data();
  const auto kv = key_mask.data();
  std::vector<double> y(scores.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* km = kv.data() + (r / per_batch) * m;
    const double* s = sv.data() + r * m;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < m; ++j)
      if (km[j] != 0.0) mx = std::max(mx, s[j]);
    if (mx == -INFINITY) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (km[j] == 0.0) continue;
      y[r * m + j] = std::exp(s[j] - mx);
      z += y[r * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) y[r * m + j] /= z;
  }
  return custom_op(
      scores.shape(), std::move(y), {scores, key_mask},
      [rows, m](std::span<const double> out, std::span<const double> g,
                std::span<const std::span<double>> gin) {
        if (gin[0].empty()) return;
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < m; ++j) dot += out[r * m + j] * g[r * m + j];
          for (std::size_t j = 0; j < m; ++j)
            gin[0][r * m + j] += out[r * m + j] * (g[r * m + j] - dot);
        }
      },
      "masked_softmax");
}

void check_heads(std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, const std::string& name, std::size_t d,
                                       std::size_t h, std::mt19937_64& rng)
    : dim(d), heads(h) {
  check_heads(dim, heads);
  q = Linear(ps, name + ".q", dim, dim, rng);
  k = Linear(ps, name + ".k", dim, dim, rng);
  v = Linear(ps, name + ".v", dim, dim, rng);
  o = Linear(ps, name + ".o", dim, dim, rng);
}

namespace {

// [b, m, d] -> [b, heads, m, d / heads]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t B = x.dim(0), m = x.dim(1), d = x.dim(2);
  return permute(reshape(x, {B, m, heads, d / heads}), {0, 2, 1, 3});
}

}  // namespace

Tensor MultiHeadAttention::weights(const Tensor& x, const Tensor& mask) const {
  if (x.ndim() != 3 || x.dim(2) != dim) {
    throw ShapeError("attention expects [batch, time, " + std::to_string(dim) + "], got " +
                     to_string(x.shape()));
  }
  const Tensor qh = split_heads(q(x), heads);
  const Tensor kh = split_heads(k(x), heads);
  const double s = 1.0 / std::sqrt(static_cast<double>(dim / heads));
  return masked_softmax(matmul(qh, transpose(kh, -1, -2)) * s, mask);
}

Tensor MultiHeadAttention::operator()(const Tensor& x, const Tensor& mask) const {
  const Tensor a = weights(x, mask);
  const Tensor ctx = matmul(a, split_heads(v(x), heads));
  const std::size_t B = x.dim(0), m = x.dim(1);
  return o(reshape(permute(ctx, {0, 2, 1, 3}), {B, m, dim}));
}

SwAttnBlock::SwAttnBlock(ParamStore& ps, const std::string& name, std::size_t dim,
                         std::size_t heads, std::mt19937_64& rng)
    : attn(ps, name + ".attn", dim, heads, rng),
      norm(ps, name + ".norm", dim),
      proj(ps, name + ".proj", dim, dim, rng) {}

Tensor SwAttnBlock::operator()(const Tensor& x, const Tensor& mask, double rate, bool train,
                               std::mt19937_64& rng) const {
  const Tensor h = norm(x + dropout(attn(x, mask), rate, train, rng));
  return apply_mask(proj(h), mask);
}

EncoderLayer::EncoderLayer(ParamStore& ps, const std::string& name, std::size_t dim,
                           std::size_t heads, std::size_t ff_dim, std::mt19937_64& rng)
    : attn(ps, name + ".attn", dim, heads, rng),
      norm1(ps, name + ".norm1", dim),
      ff1(ps, name + ".ff1", dim, ff_dim, rng),
      ff2(ps, name + ".ff2", ff_dim, dim, rng),
      norm2(ps, name + ".norm2", dim) {}

Tensor EncoderLayer::operator()(const Tensor& x, const Tensor& mask, double rate, bool train,
                                std::mt19937_64& rng) const {
  const Tensor h = norm1(x + dropout(attn(x, mask), rate, train, rng));
  return norm2(h + dropout(ff2(relu(ff1(h))), rate, train, rng));
}

}  // namespace signet::nn
