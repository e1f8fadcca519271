#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "signet/prep/dataset.hpp"

namespace signet::prep {

enum class Reduction { none, grp, ppa_pca, ppa_pca_ppa };

std::string to_string(Reduction r);
Reduction parse_reduction(const std::string& name);

/// Number of dominant directions removed by each post-processing pass.
inline constexpr std::size_t kPpaComponents = 2;

/// Fills StreamRecord::reduced with a `dims`-wide projection of each
/// embedding. Projections are fitted on `fit_rows` (every record when
/// empty) and applied to all records. `seed` drives the Gaussian matrix.
StreamDataset reduce_dims(const StreamDataset& ds, Reduction method, std::size_t dims,
                          std::uint64_t seed = 0, std::span<const std::size_t> fit_rows = {});

struct TimeFeatureRequest {
  TimeFeature kind;
  Standardization standardization = Standardization::none;
  bool in_path = true;
  bool in_input = false;
};

/// Raw (unstandardized) value of `kind` for every record, in record order.
///   time_encoding        year + elapsed fraction of that (UTC) year
///   time_encoding_minute minutes since UTC midnight / 1440
///   time_diff            seconds since the previous point of the stream
///   timeline_index       1-based position within the stream
std::vector<double> raw_time_feature(const StreamDataset& ds, TimeFeature kind);

/// Replaces the dataset's time features with `requests`, standardizing each
/// with statistics fitted on `fit_rows` (every record when empty).
StreamDataset derive_time_features(const StreamDataset& ds,
                                   std::span<const TimeFeatureRequest> requests,
                                   std::span<const std::size_t> fit_rows = {});

FittedStandardization fit_standardization(Standardization method,
                                          std::span<const double> values,
                                          const std::string& feature = "feature");

}  // namespace signet::prep
