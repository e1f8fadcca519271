#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <string>

#include <Eigen/Core>

#include "signet/signature.hpp"

namespace signet::sig {

namespace {

std::size_t checked_pow(std::size_t base, std::size_t exponent) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exponent; ++i) {
    if (r > std::numeric_limits<std::size_t>::max() / base) {
      throw ContractError("signature dimension overflows for c=" + std::to_string(base) +
                          ", N=" + std::to_string(exponent));
    }
    r *= base;
  }
  return r;
}

int mobius(std::size_t n) {
  int result = 1;
  for (std::size_t p = 2; p * p <= n; ++p) {
    if (n % p == 0) {
      n /= p;
      if (n % p == 0) return 0;
      result = -result;
    }
  }
  if (n > 1) result = -result;
  return result;
}

void check_spec(std::size_t channels, std::size_t depth) {
  if (channels < 1 || depth < 1) {
    throw ContractError("signature needs channels >= 1 and depth >= 1, got c=" +
                        std::to_string(channels) + ", N=" + std::to_string(depth));
  }
}

void check_compatible(const TruncatedTensor& a, const TruncatedTensor& b) {
  if (a.channels() != b.channels() || a.depth() != b.depth()) {
    throw ContractError("truncated tensors differ: (c=" + std::to_string(a.channels()) +
                        ", N=" + std::to_string(a.depth()) + ") vs (c=" +
                        std::to_string(b.channels()) + ", N=" + std::to_string(b.depth()) + ")");
  }
}

}  // namespace

std::size_t sig_channels(std::size_t channels, std::size_t depth) {
  check_spec(channels, depth);
  std::size_t total = 0;
  for (std::size_t k = 1; k <= depth; ++k) total += checked_pow(channels, k);
  return total;
}

std::size_t logsig_channels(std::size_t channels, std::size_t depth) {
  check_spec(channels, depth);
  std::size_t total = 0;
  for (std::size_t k = 1; k <= depth; ++k) {
    // Necklace polynomial: (1/k) * sum_{d | k} mu(d) c^{k/d}.
    long long acc = 0;
    for (std::size_t d = 1; d <= k; ++d) {
      if (k % d != 0) continue;
      acc += static_cast<long long>(mobius(d)) *
             static_cast<long long>(checked_pow(channels, k / d));
    }
    total += static_cast<std::size_t>(acc / static_cast<long long>(k));
  }
  return total;
}

void SignatureSpec::validate() const { check_spec(channels, depth); }

std::size_t SignatureSpec::out_channels() const {
  return log_mode ? logsig_channels(channels, depth) : sig_channels(channels, depth);
}

bool is_lyndon(const Word& word) {
  if (word.empty()) return false;
  const std::size_t n = word.size();
  for (std::size_t r = 1; r < n; ++r) {
    // Compare word with its rotation starting at r.
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = word[i];
      const auto b = word[(i + r) % n];
      if (a < b) break;
      if (a > b) return false;
      if (i + 1 == n) return false;  // equal to a rotation: periodic
    }
  }
  return true;
}

LyndonBasis::LyndonBasis(std::size_t channels, std::size_t depth)
    : channels_(channels), depth_(depth) {
  check_spec(channels, depth);
  // Duval's generator yields Lyndon words of length <= depth in lex order.
  const auto c = static_cast<std::uint32_t>(channels);
  Word w{0};
  while (!w.empty()) {
    words_.push_back(w);
    const std::size_t n = w.size();
    while (w.size() < depth) w.push_back(w[w.size() - n]);
    while (!w.empty() && w.back() == c - 1) w.pop_back();
    if (!w.empty()) ++w.back();
  }
  std::stable_sort(words_.begin(), words_.end(),
                   [](const Word& a, const Word& b) { return a.size() < b.size(); });

  std::vector<std::size_t> level_start(depth + 1, 0);
  for (std::size_t k = 1; k < depth; ++k)
    level_start[k + 1] = level_start[k] + checked_pow(channels, k);
  positions_.reserve(words_.size());
  for (const auto& word : words_) {
    std::size_t idx = 0;
    for (auto letter : word) idx = idx * channels + letter;
    positions_.push_back(level_start[word.size()] + idx);
  }
}

const LyndonBasis& lyndon_basis(std::size_t channels, std::size_t depth) {
  static std::mutex mutex;
  static std::map<std::pair<std::size_t, std::size_t>, std::unique_ptr<LyndonBasis>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{channels, depth}];
  if (!slot) slot = std::make_unique<LyndonBasis>(channels, depth);
  return *slot;
}

// ---------------------------------------------------------------------------

TruncatedTensor::TruncatedTensor(std::size_t channels, std::size_t depth)
    : channels_(channels), depth_(depth) {
  check_spec(channels, depth);
  offsets_.resize(depth + 2);
  offsets_[0] = 0;
  std::size_t width = 1;
  for (std::size_t k = 0; k <= depth; ++k) {
    offsets_[k + 1] = offsets_[k] + width;
    width *= channels;
  }
  data_.assign(offsets_.back(), 0.0);
}

TruncatedTensor TruncatedTensor::identity(std::size_t channels, std::size_t depth) {
  TruncatedTensor t(channels, depth);
  t.data_[0] = 1.0;
  return t;
}

TruncatedTensor TruncatedTensor::from_levels(std::size_t channels, std::size_t depth,
                                             std::span<const double> levels, double level0) {
  TruncatedTensor t(channels, depth);
  if (levels.size() + 1 != t.size()) {
    throw ContractError("expected " + std::to_string(t.size() - 1) + " signature entries, got " +
                        std::to_string(levels.size()));
  }
  t.data_[0] = level0;
  std::copy(levels.begin(), levels.end(), t.data_.begin() + 1);
  return t;
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

Eigen::Map<const RowMat> cblock(const double* p, std::size_t r, std::size_t c) {
  return {p, Eigen::Index(r), Eigen::Index(c)};
}
Eigen::Map<Vec> vec(double* p, std::size_t n) { return {p, Eigen::Index(n)}; }
Eigen::Map<const Vec> cvec(std::span<const double> s) { return {s.data(), Eigen::Index(s.size())}; }

// Products where a's levels below a_low and b's below b_low are known zero.
TruncatedTensor mul_low(const TruncatedTensor& a, std::size_t a_low, const TruncatedTensor& b,
                        std::size_t b_low) {
  check_compatible(a, b);
  const std::size_t depth = a.depth();
  TruncatedTensor out(a.channels(), depth);
  auto od = out.data();
  for (std::size_t k = a_low + b_low; k <= depth; ++k) {
    double* ok = od.data() + out.level_offset(k);
    for (std::size_t i = a_low; i + b_low <= k; ++i) {
      const auto ai = a.level(i);
      const auto bj = b.level(k - i);
      const std::size_t nb = bj.size();
      for (std::size_t u = 0; u < ai.size(); ++u) {
        const double au = ai[u];
        if (au == 0.0) continue;
        double* row = ok + u * nb;
        for (std::size_t v = 0; v < nb; ++v) row[v] += au * bj[v];
      }
    }
  }
  return out;
}

void mul_low_backward(const TruncatedTensor& a, std::size_t a_low, const TruncatedTensor& b,
                      std::size_t b_low, std::span<const double> grad_out, std::span<double> grad_a,
                      std::span<double> grad_b) {
  check_compatible(a, b);
  const std::size_t depth = a.depth();
  for (std::size_t k = a_low + b_low; k <= depth; ++k) {
    const double* gk = grad_out.data() + a.level_offset(k);
    for (std::size_t i = 0; i <= k; ++i) {
      const std::size_t j = k - i;
      const auto ai = a.level(i);
      const auto bj = b.level(j);
      const std::size_t nb = bj.size();
      // zero levels still receive gradient; they just contribute none
      double* gai = grad_a.empty() || j < b_low ? nullptr : grad_a.data() + a.level_offset(i);
      double* gbj = grad_b.empty() || i < a_low ? nullptr : grad_b.data() + a.level_offset(j);
      const auto G = cblock(gk, ai.size(), nb);
      if (gai) vec(gai, ai.size()).noalias() += G * cvec(bj);
      if (gbj) vec(gbj, nb).noalias() += G.transpose() * cvec(ai);
    }
  }
}

}  // namespace

TruncatedTensor tensor_mul(const TruncatedTensor& a, const TruncatedTensor& b) {
  return mul_low(a, 0, b, 0);
}

void tensor_mul_backward(const TruncatedTensor& a, const TruncatedTensor& b,
                         std::span<const double> grad_out, std::span<double> grad_a,
                         std::span<double> grad_b) {
  mul_low_backward(a, 0, b, 0, grad_out, grad_a, grad_b);
}

TruncatedTensor tensor_exp(std::span<const double> increment, std::size_t depth) {
  const std::size_t c = increment.size();
  TruncatedTensor out = TruncatedTensor::identity(c, depth);
  for (std::size_t k = 1; k <= depth; ++k) {
    const auto prev = out.level(k - 1);
    auto cur = out.level(k);
    const double inv_k = 1.0 / static_cast<double>(k);
    for (std::size_t u = 0; u < prev.size(); ++u) {
      const double pu = prev[u] * inv_k;
      for (std::size_t a = 0; a < c; ++a) cur[u * c + a] = pu * increment[a];
    }
  }
  return out;
}

void tensor_exp_backward(std::span<const double> increment, const TruncatedTensor& exp_value,
                         std::span<const double> grad_out, std::span<double> grad_increment) {
  const std::size_t c = increment.size();
  const std::size_t depth = exp_value.depth();
  std::vector<double> g(grad_out.begin(), grad_out.end());
  for (std::size_t k = depth; k >= 1; --k) {
    const auto prev = exp_value.level(k - 1);
    const double* gk = g.data() + exp_value.level_offset(k);
    double* gprev = g.data() + exp_value.level_offset(k - 1);
    const double inv_k = 1.0 / static_cast<double>(k);
    for (std::size_t u = 0; u < prev.size(); ++u) {
      double acc = 0.0;
      for (std::size_t a = 0; a < c; ++a) {
        const double gv = gk[u * c + a] * inv_k;
        grad_increment[a] += gv * prev[u];
        acc += gv * increment[a];
      }
      gprev[u] += acc;
    }
  }
}

// Level k of a (x) exp(d) is Q_k with Q_0 = a_0 and
// Q_m = (Q_{m-1} (x) d) / (k - m + 1) + a_m.
TruncatedTensor mul_exp(const TruncatedTensor& a, std::span<const double> increment) {
  const std::size_t c = a.channels(), depth = a.depth();
  if (increment.size() != c) {
    throw ContractError("increment has " + std::to_string(increment.size()) + " channels, tensor has " +
                        std::to_string(c));
  }
  TruncatedTensor out = a;
  std::vector<double> q(a.level_size(depth > 0 ? depth - 1 : 0)), next(a.level_size(depth));
  for (std::size_t k = depth; k >= 1; --k) {
    q.assign(1, a.data()[0]);
    for (std::size_t m = 1; m <= k; ++m) {
      const double inv = 1.0 / static_cast<double>(k - m + 1);
      const auto am = a.level(m);
      double* dst = m == k ? out.level(k).data() : next.data();
      for (std::size_t u = 0; u < q.size(); ++u) {
        const double qu = q[u] * inv;
        for (std::size_t v = 0; v < c; ++v) dst[u * c + v] = qu * increment[v] + am[u * c + v];
      }
      if (m < k) q.assign(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(am.size()));
    }
  }
  return out;
}

void mul_exp_backward(const TruncatedTensor& a, std::span<const double> increment,
                      std::span<const double> grad_out, std::span<double> grad_a,
                      std::span<double> grad_increment) {
  const std::size_t c = a.channels(), depth = a.depth();
  // grad_out level 0 passes straight to a_0
  if (!grad_a.empty()) grad_a[0] += grad_out[0];
  std::vector<std::vector<double>> qs(depth);
  std::vector<double> g, gprev;
  for (std::size_t k = depth; k >= 1; --k) {
    // recompute Q_0 .. Q_{k-1}
    qs[0].assign(1, a.data()[0]);
    for (std::size_t m = 1; m < k; ++m) {
      const double inv = 1.0 / static_cast<double>(k - m + 1);
      const auto am = a.level(m);
      qs[m].resize(am.size());
      for (std::size_t u = 0; u < qs[m - 1].size(); ++u) {
        const double qu = qs[m - 1][u] * inv;
        for (std::size_t v = 0; v < c; ++v) qs[m][u * c + v] = qu * increment[v] + am[u * c + v];
      }
    }
    const auto gk = grad_out.subspan(a.level_offset(k), a.level_size(k));
    g.assign(gk.begin(), gk.end());
    for (std::size_t m = k; m >= 1; --m) {
      if (!grad_a.empty()) {
        double* ga = grad_a.data() + a.level_offset(m);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      const double inv = 1.0 / static_cast<double>(k - m + 1);
      const auto& q = qs[m - 1];
      gprev.resize(q.size());
      const auto G = cblock(g.data(), q.size(), c);
      vec(gprev.data(), q.size()).noalias() = inv * (G * cvec(increment));
      vec(grad_increment.data(), c).noalias() += inv * (G.transpose() * cvec(q));
      g.swap(gprev);
    }
    if (!grad_a.empty()) grad_a[0] += g[0];
  }
}

namespace {

std::vector<TruncatedTensor> log_powers(const TruncatedTensor& t) {
  if (std::abs(t.data()[0] - 1.0) > 1e-12) {
    throw DomainError("tensor logarithm needs level 0 equal to 1, got " +
                      std::to_string(t.data()[0]));
  }
  TruncatedTensor x = t;
  x.data()[0] = 0.0;
  std::vector<TruncatedTensor> powers{x};
  for (std::size_t j = 2; j <= t.depth(); ++j) powers.push_back(mul_low(powers.back(), j - 1, x, 1));
  return powers;
}

double log_coefficient(std::size_t j) {
  return (j % 2 == 1 ? 1.0 : -1.0) / static_cast<double>(j);
}

}  // namespace

TruncatedTensor tensor_log(const TruncatedTensor& t) {
  const auto powers = log_powers(t);
  TruncatedTensor out(t.channels(), t.depth());
  auto od = out.data();
  for (std::size_t j = 1; j <= powers.size(); ++j) {
    const double coef = log_coefficient(j);
    const auto pd = powers[j - 1].data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += coef * pd[i];
  }
  return out;
}

void tensor_log_at(const TruncatedTensor& t, std::span<const std::size_t> positions, double* out) {
  const auto powers = log_powers(t);
  for (std::size_t w = 0; w < positions.size(); ++w) {
    const std::size_t i = positions[w] + 1;
    double v = 0.0;
    for (std::size_t j = 1; j <= powers.size(); ++j) v += log_coefficient(j) * powers[j - 1].data()[i];
    out[w] = v;
  }
}

void tensor_log_at_backward(const TruncatedTensor& t, std::span<const std::size_t> positions,
                            const double* grad_out, std::span<double> grad_t) {
  std::vector<double> full(t.size(), 0.0);
  for (std::size_t w = 0; w < positions.size(); ++w) full[positions[w] + 1] = grad_out[w];
  tensor_log_backward(t, full, grad_t);
}

void tensor_log_backward(const TruncatedTensor& t, std::span<const double> grad_out,
                         std::span<double> grad_t) {
  const auto powers = log_powers(t);
  const std::size_t depth = powers.size();
  const std::size_t size = t.size();
  const TruncatedTensor& x = powers.front();
  std::vector<double> gcur(size);
  std::vector<double> gx(size, 0.0);
  for (std::size_t i = 0; i < size; ++i) gcur[i] = log_coefficient(depth) * grad_out[i];
  for (std::size_t j = depth; j >= 2; --j) {
    std::vector<double> gprev(size);
    const double coef = log_coefficient(j - 1);
    for (std::size_t i = 0; i < size; ++i) gprev[i] = coef * grad_out[i];
    mul_low_backward(powers[j - 2], j - 1, x, 1, gcur, gprev, gx);
    gcur.swap(gprev);
  }
  for (std::size_t i = 1; i < size; ++i) grad_t[i] += gx[i] + gcur[i];
}

}  // namespace signet::sig
