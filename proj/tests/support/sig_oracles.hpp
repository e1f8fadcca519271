#pragma once

// Independent oracles for the signature kernels: a combinatorial
// iterated-integral formula for piecewise-linear paths and a brute-force
// Lyndon enumeration. Neither touches the Chen-product code path.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

namespace signet::testing {

using Path = std::vector<std::vector<double>>;  // [points][channels]

/// Signature coordinate for word `w` (0-based letters) of a piecewise-linear
/// path. Sums over weakly increasing segment assignments; a run of r letters
/// on one segment contributes the product of increments divided by r!.
inline double iterated_integral(const Path& path, const std::vector<std::size_t>& w) {
  const std::size_t segments = path.size() - 1;
  const std::size_t k = w.size();
  std::vector<std::size_t> seg(k);
  double total = 0.0;
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t pos, std::size_t from) {
    if (pos == k) {
      double term = 1.0;
      std::size_t run = 1;
      for (std::size_t t = 0; t < k; ++t) {
        const std::size_t j = seg[t];
        term *= path[j + 1][w[t]] - path[j][w[t]];
        if (t > 0 && seg[t] == seg[t - 1]) {
          ++run;
          term /= static_cast<double>(run);
        } else {
          run = 1;
        }
      }
      total += term;
      return;
    }
    for (std::size_t j = from; j < segments; ++j) {
      seg[pos] = j;
      rec(pos + 1, j);
    }
  };
  rec(0, 0);
  return total;
}

/// Full signature levels 1..N in level-major, row-major word order.
inline std::vector<double> brute_force_signature(const Path& path, std::size_t depth) {
  const std::size_t c = path.front().size();
  std::vector<double> out;
  for (std::size_t k = 1; k <= depth; ++k) {
    std::size_t count = 1;
    for (std::size_t i = 0; i < k; ++i) count *= c;
    for (std::size_t idx = 0; idx < count; ++idx) {
      std::vector<std::size_t> w(k);
      std::size_t r = idx;
      for (std::size_t i = k; i-- > 0;) {
        w[i] = r % c;
        r /= c;
      }
      out.push_back(iterated_integral(path, w));
    }
  }
  return out;
}

inline bool lyndon_by_rotation(const std::vector<std::size_t>& w) {
  for (std::size_t r = 1; r < w.size(); ++r) {
    std::vector<std::size_t> rot(w.begin() + static_cast<std::ptrdiff_t>(r), w.end());
    rot.insert(rot.end(), w.begin(), w.begin() + static_cast<std::ptrdiff_t>(r));
    if (!(w < rot)) return false;
  }
  return true;
}

/// Lyndon words of length <= depth by exhaustive enumeration, sorted by
/// (length, lexicographic).
inline std::vector<std::vector<std::size_t>> enumerate_lyndon(std::size_t c, std::size_t depth) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t k = 1; k <= depth; ++k) {
    std::size_t count = 1;
    for (std::size_t i = 0; i < k; ++i) count *= c;
    for (std::size_t idx = 0; idx < count; ++idx) {
      std::vector<std::size_t> w(k);
      std::size_t r = idx;
      for (std::size_t i = k; i-- > 0;) {
        w[i] = r % c;
        r /= c;
      }
      if (lyndon_by_rotation(w)) out.push_back(w);
    }
  }
  return out;
}

inline Path random_path(std::mt19937_64& rng, std::size_t points, std::size_t channels,
                        double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Path p(points, std::vector<double>(channels));
  for (auto& row : p)
    for (auto& v : row) v = dist(rng);
  return p;
}

inline std::vector<double> flatten(const Path& p) {
  std::vector<double> out;
  for (const auto& row : p) out.insert(out.end(), row.begin(), row.end());
  return out;
}

}  // namespace signet::testing
