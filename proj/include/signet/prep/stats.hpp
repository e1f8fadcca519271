#pragma once

#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "signet/prep/dataset.hpp"

namespace signet::prep {

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
};

/// Mean and median of `values`; absent when empty.
std::optional<Summary> summarize(std::vector<double> values);

struct StatsReport {
  std::size_t num_streams = 0;
  std::size_t num_records = 0;
  std::size_t num_labelled = 0;
  std::vector<std::size_t> label_counts;
  std::vector<std::size_t> event_classes;

  /// Seconds between consecutive points of a stream.
  std::optional<Summary> time_diff;
  /// Lengths of maximal runs of consecutive event-labelled points.
  std::optional<Summary> consecutive_events;
  /// Event-labelled points per stream, streams without events included.
  std::optional<Summary> events_per_stream;
  /// Set when the dataset has no timestamps and time rows were skipped.
  bool time_rows_omitted = false;
  /// Set when nothing is labelled; the event families are then absent.
  bool labels_missing = false;

  nlohmann::json to_json() const;
};

/// Throws ContractError when no record is labelled unless `require_labels`
/// is false, in which case only the label-free rows are filled.
StatsReport dataset_stats(const StreamDataset& ds, std::span<const std::size_t> event_classes,
                          bool require_labels = true);

}  // namespace signet::prep
