#include "signet/prep/features.hpp"

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <random>

namespace signet::prep {

std::string to_string(Reduction r) {
  switch (r) {
    case Reduction::none: return "none";
    case Reduction::grp: return "grp";
    case Reduction::ppa_pca: return "ppa_pca";
    case Reduction::ppa_pca_ppa: return "ppa_pca_ppa";
  }
  return "?";
}

Reduction parse_reduction(const std::string& name) {
  for (auto r : {Reduction::none, Reduction::grp, Reduction::ppa_pca, Reduction::ppa_pca_ppa}) {
    if (to_string(r) == name) return r;
  }
  throw ConfigError("unknown reduction method '" + name + "'");
}

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

struct Principal {
  Vector mean;
  Matrix components;  // columns, descending variance
  Vector variances;
};

Principal principal_axes(const Matrix& fit) {
  Principal p;
  p.mean = fit.colwise().mean().transpose();
  const Matrix centered = fit.rowwise() - p.mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(fit.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("covariance eigen-decomposition failed");
  p.variances = solver.eigenvalues().reverse();
  p.components = solver.eigenvectors().rowwise().reverse();
  return p;
}

// Post-processing: centre, then remove the projection onto the dominant
// directions of the fitted rows.
Matrix ppa(const Matrix& all, const std::vector<std::size_t>& fit_rows) {
  Matrix fit(static_cast<Eigen::Index>(fit_rows.size()), all.cols());
  for (std::size_t i = 0; i < fit_rows.size(); ++i)
    fit.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(fit_rows[i]));
  const Principal p = principal_axes(fit);
  const auto k = std::min<Eigen::Index>(static_cast<Eigen::Index>(kPpaComponents), all.cols());
  const Matrix top = p.components.leftCols(k);
  const Matrix centered = all.rowwise() - p.mean.transpose();
  return centered - (centered * top) * top.transpose();
}

Matrix pca(const Matrix& all, const std::vector<std::size_t>& fit_rows, std::size_t dims) {
  Matrix fit(static_cast<Eigen::Index>(fit_rows.size()), all.cols());
  for (std::size_t i = 0; i < fit_rows.size(); ++i)
    fit.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(fit_rows[i]));
  const Principal p = principal_axes(fit);
  const double top = std::max(p.variances(0), 0.0);
  const auto d = static_cast<Eigen::Index>(dims);
  if (top <= 0.0 || p.variances(d - 1) <= 1e-12 * top) {
    Eigen::Index rank = 0;
    while (rank < p.variances.size() && p.variances(rank) > 1e-12 * top) ++rank;
    throw RankError("covariance rank " + std::to_string(rank) + " is below the requested " +
                    std::to_string(dims) + " dimensions");
  }
  return (all.rowwise() - p.mean.transpose()) * p.components.leftCols(d);
}

}  // namespace

StreamDataset reduce_dims(const StreamDataset& ds, Reduction method, std::size_t dims,
                          std::uint64_t seed, std::span<const std::size_t> fit_rows) {
  StreamDataset out = ds;
  const std::size_t e = ds.embedding_dim;
  if (method == Reduction::none) {
    for (auto& r : out.records) r.reduced = r.embedding;
    out.reduced_dim = e;
    out.reduction = "none";
    return out;
  }
  if (dims == 0 || dims >= e) {
    throw ContractError("reduction needs 0 < d < e, got d=" + std::to_string(dims) +
                        ", e=" + std::to_string(e));
  }
  const std::size_t n = ds.records.size();
  std::vector<std::size_t> fit(fit_rows.begin(), fit_rows.end());
  if (fit.empty()) fit = all_rows(n);
  for (auto r : fit) {
    if (r >= n) throw IndexError("fit row " + std::to_string(r) + " out of range");
  }

  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(e));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < e; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ds.records[i].embedding[j];

  Matrix reduced;
  switch (method) {
    case Reduction::grp: {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(dims)));
      Matrix proj(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(dims));
      for (Eigen::Index i = 0; i < proj.rows(); ++i)
        for (Eigen::Index j = 0; j < proj.cols(); ++j) proj(i, j) = dist(rng);
      reduced = x * proj;
      break;
    }
    case Reduction::ppa_pca:
      reduced = pca(ppa(x, fit), fit, dims);
      break;
    case Reduction::ppa_pca_ppa:
      reduced = ppa(pca(ppa(x, fit), fit, dims), fit);
      break;
    case Reduction::none:
      break;
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = out.records[i].reduced;
    r.resize(dims);
    for (std::size_t j = 0; j < dims; ++j)
      r[j] = reduced(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  out.reduced_dim = dims;
  out.reduction = to_string(method);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> raw_time_feature(const StreamDataset& ds, TimeFeature kind) {
  using namespace std::chrono;
  std::vector<double> out(ds.records.size());
  if (kind != TimeFeature::timeline_index && !ds.has_timestamps()) {
    throw ContractError("time feature '" + to_string(kind) +
                        "' needs timestamps on every record");
  }
  for (const auto& [begin, end] : ds.streams()) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& rec = ds.records[i];
      switch (kind) {
        case TimeFeature::timeline_index:
          out[i] = static_cast<double>(i - begin + 1);
          break;
        case TimeFeature::time_diff:
          out[i] = i == begin ? 0.0 : *rec.timestamp - *ds.records[i - 1].timestamp;
          break;
        case TimeFeature::time_encoding: {
          const double t = *rec.timestamp;
          const sys_days day{days{static_cast<long>(std::floor(t / 86400.0))}};
          const year y = year_month_day{day}.year();
          const double start = sys_days{y / January / 1}.time_since_epoch().count() * 86400.0;
          const double next = sys_days{(y + years{1}) / January / 1}.time_since_epoch().count() * 86400.0;
          out[i] = static_cast<int>(y) + (t - start) / (next - start);
          break;
        }
        case TimeFeature::time_encoding_minute: {
          const double t = *rec.timestamp;
          const double midnight = std::floor(t / 86400.0) * 86400.0;
          out[i] = (t - midnight) / 60.0 / 1440.0;
          break;
        }
      }
    }
  }
  return out;
}

FittedStandardization fit_standardization(Standardization method, std::span<const double> values,
                                          const std::string& feature) {
  FittedStandardization fit;
  fit.method = method;
  if (method == Standardization::none) return fit;
  if (values.empty()) throw DegenerateError("no values to fit standardization of " + feature);
  double sum = 0.0, mn = values[0], mx = values[0];
  for (double v : values) {
    sum += v;
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  const double mean = sum / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  fit.mean = mean;
  fit.std = std::sqrt(var);
  fit.sum = sum;
  fit.min = mn;
  fit.max = mx;
  switch (method) {
    case Standardization::z_score:
      if (fit.std == 0.0) throw DegenerateError("z_score of " + feature + ": zero standard deviation");
      break;
    case Standardization::sum_divide:
      if (fit.sum == 0.0) throw DegenerateError("sum_divide of " + feature + ": zero sum");
      break;
    case Standardization::minmax:
      if (fit.max == fit.min) throw DegenerateError("minmax of " + feature + ": zero range");
      break;
    case Standardization::none:
      break;
  }
  return fit;
}

StreamDataset derive_time_features(const StreamDataset& ds,
                                   std::span<const TimeFeatureRequest> requests,
                                   std::span<const std::size_t> fit_rows) {
  StreamDataset out = ds;
  out.time_features.clear();
  for (auto& r : out.records) r.time_values.clear();
  const std::size_t n = ds.records.size();
  for (auto r : fit_rows) {
    if (r >= n) throw IndexError("fit row " + std::to_string(r) + " out of range");
  }
  for (const auto& req : requests) {
    const auto raw = raw_time_feature(ds, req.kind);
    std::vector<double> fit_values;
    if (fit_rows.empty()) {
      fit_values = raw;
    } else {
      for (auto r : fit_rows) fit_values.push_back(raw[r]);
    }
    TimeFeatureInfo info;
    info.kind = req.kind;
    info.in_path = req.in_path;
    info.in_input = req.in_input;
    info.fit = fit_standardization(req.standardization, fit_values, to_string(req.kind));
    for (std::size_t i = 0; i < n; ++i) out.records[i].time_values.push_back(info.fit.apply(raw[i]));
    out.time_features.push_back(info);
  }
  return out;
}

}  // namespace signet::prep
