#include <cmath>

#include "signet/nn.hpp"

namespace signet::nn {

std::vector<double> alpha_from_frequencies(const std::vector<double>& freqs) {
  std::vector<double> alpha;
  alpha.reserve(freqs.size());
  for (double f : freqs) {
    if (!(f > 0.0 && f <= 1.0)) throw DomainError("class frequency must lie in (0, 1]");
    alpha.push_back(std::sqrt(1.0 / f));
  }
  return alpha;
}

std::vector<double> class_frequencies(const std::vector<std::int64_t>& labels,
                                      std::size_t num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  std::size_t n = 0;
  for (auto y : labels) {
    if (y < 0) continue;
    if (static_cast<std::size_t>(y) >= num_classes) throw IndexError("label out of range");
    counts[static_cast<std::size_t>(y)] += 1.0;
    ++n;
  }
  if (n == 0) throw ContractError("no labelled samples to count class frequencies from");
  for (auto& c : counts) c = std::max(c, 1.0) / static_cast<double>(n);
  return counts;
}

namespace {

void check_batch(const Tensor& logits, const std::vector<std::int64_t>& labels, std::size_t K) {
  if (logits.ndim() != 2) throw ShapeError("loss expects logits [batch, classes]");
  if (logits.dim(0) == 0 || labels.empty()) throw ContractError("loss over an empty batch");
  if (labels.size() != logits.dim(0)) {
    throw ShapeError("loss got " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.dim(0)) + " rows");
  }
  if (logits.dim(1) != K) {
    throw ShapeError("loss expects " + std::to_string(K) + " classes, logits have " +
                     std::to_string(logits.dim(1)));
  }
  for (auto y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= K) {
      throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
    }
  }
}

// Row-wise log-softmax.
std::vector<double> log_probs(std::span<const double> z, std::size_t B, std::size_t K) {
  std::vector<double> lp(B * K);
  for (std::size_t b = 0; b < B; ++b) {
    const double* r = z.data() + b * K;
    double mx = r[0];
    for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, r[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < K; ++j) s += std::exp(r[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < K; ++j) lp[b * K + j] = r[j] - lse;
  }
  return lp;
}

}  // namespace

Tensor focal_loss(const Tensor& logits, const std::vector<std::int64_t>& labels,
                  const FocalLossSpec& spec) {
  const std::size_t K = spec.num_classes();
  check_batch(logits, labels, K);
  for (double a : spec.alpha) {
    if (!(a > 0.0)) throw ConfigError("focal loss weights must be positive");
  }
  if (!(spec.gamma >= 0.0)) throw ConfigError("focal loss gamma must be non-negative");
  const std::size_t B = logits.dim(0);
  auto lp = std::make_shared<std::vector<double>>(log_probs(logits.data(), B, K));
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const auto y = static_cast<std::size_t>(labels[b]);
    const double l = (*lp)[b * K + y];
    const double p = std::exp(l);
    total += -spec.alpha[y] * std::pow(1.0 - p, spec.gamma) * l;
  }
  const double gamma = spec.gamma;
  const auto alpha = spec.alpha;
  return custom_op(
      {}, {total / static_cast<double>(B)}, {logits},
      [lp, labels, alpha, gamma, B, K](std::span<const double>, std::span<const double> g,
                                       std::span<const std::span<double>> gin) {
        if (gin[0].empty()) return;
        const double scale = g[0] / static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b) {
          const auto y = static_cast<std::size_t>(labels[b]);
          const double l = (*lp)[b * K + y];
          const double p = std::exp(l);
          const double q = 1.0 - p;
          // d loss / d log p_y, then through log-softmax.
          double coef = std::pow(q, gamma);
          if (gamma != 0.0 && q > 0.0) coef -= gamma * std::pow(q, gamma - 1.0) * p * l;
          coef *= -alpha[y];
          for (std::size_t j = 0; j < K; ++j) {
            const double pj = std::exp((*lp)[b * K + j]);
            gin[0][b * K + j] += scale * coef * ((j == y ? 1.0 : 0.0) - pj);
          }
        }
      },
      "focal_loss");
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  if (logits.ndim() != 2) throw ShapeError("loss expects logits [batch, classes]");
  const std::size_t K = logits.dim(1);
  check_batch(logits, labels, K);
  const std::size_t B = logits.dim(0);
  auto lp = std::make_shared<std::vector<double>>(log_probs(logits.data(), B, K));
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) total -= (*lp)[b * K + static_cast<std::size_t>(labels[b])];
  return custom_op(
      {}, {total / static_cast<double>(B)}, {logits},
      [lp, labels, B, K](std::span<const double>, std::span<const double> g,
                         std::span<const std::span<double>> gin) {
        if (gin[0].empty()) return;
        const double scale = g[0] / static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b) {
          const auto y = static_cast<std::size_t>(labels[b]);
          for (std::size_t j = 0; j < K; ++j)
            gin[0][b * K + j] += scale * (std::exp((*lp)[b * K + j]) - (j == y ? 1.0 : 0.0));
        }
      },
      "cross_entropy");
}

}  // namespace signet::nn
