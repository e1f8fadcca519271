#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "signet/prep/dataset.hpp"
#include "signet/tensor.hpp"

namespace signet::prep {

enum class HistoryMode { window, unit };

/// Which per-point vector opens the in-path channels.
enum class PathSource { reduced, embedding };

/// Padded history of every classified point.
///
/// Window mode: points [B, w, C]. Unit mode: points [B, n, w, C], where unit
/// q (0-based) of a point at stream position p covers positions
/// p - (n-1-q)k - (w-1) .. p - (n-1-q)k. Positions before the stream start
/// are zero rows with mask 0.
struct HistoryBatch {
  HistoryMode mode = HistoryMode::window;
  std::size_t w = 0;
  std::size_t k = 1;
  std::size_t n = 1;
  Tensor points;
  Tensor mask;     // [B, w] or [B, n, w]; 1 real, 0 padded
  Tensor current;  // [B, e + in-input features]
  std::vector<std::int64_t> labels;        // -1 when unlabelled
  std::vector<std::size_t> record_index;   // dataset record of each sample
  std::vector<std::int64_t> source_index;  // record per history slot, -1 for pads

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return points.dim(-1); }
  std::size_t slots_per_sample() const { return mode == HistoryMode::unit ? n * w : w; }
  /// Rows `rows` of every field, in the given order.
  HistoryBatch select(std::span<const std::size_t> rows) const;
};

struct HistoryOptions {
  PathSource source = PathSource::reduced;
  /// Records to turn into samples; every classify=true record when empty.
  std::vector<std::size_t> records;
  /// Upper bound on the bytes held by the points tensor.
  std::size_t memory_budget = std::size_t{4} << 30;
};

HistoryBatch build_window_input(const StreamDataset& ds, std::size_t w,
                                const HistoryOptions& opts = {});
HistoryBatch build_unit_input(const StreamDataset& ds, std::size_t w, std::size_t k,
                              std::size_t n, const HistoryOptions& opts = {});

/// Channel vector placed on the path for record `r`.
std::vector<double> path_features(const StreamDataset& ds, std::size_t r, PathSource source);
/// Full embedding followed by in-input time and external features.
std::vector<double> input_features(const StreamDataset& ds, std::size_t r);

}  // namespace signet::prep
