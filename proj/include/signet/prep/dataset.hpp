#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "signet/error.hpp"

namespace signet::prep {

/// One data point of a stream.
struct StreamRecord {
  std::string stream_id;
  std::optional<double> timestamp;  // seconds since the Unix epoch, UTC
  std::optional<std::int64_t> position;
  std::optional<std::size_t> label;
  std::vector<double> embedding;
  std::vector<double> external;
  bool classify = true;
  std::size_t input_row = 0;  // 0-based data row in the metadata file

  /// In-path linguistic channels; equals `embedding` until reduce_dims runs.
  std::vector<double> reduced;
  /// Standardized time features, parallel to StreamDataset::time_features.
  std::vector<double> time_values;
};

enum class TimeFeature { time_encoding, time_encoding_minute, time_diff, timeline_index };
enum class Standardization { none, z_score, sum_divide, minmax };

std::string to_string(TimeFeature f);
std::string to_string(Standardization s);
TimeFeature parse_time_feature(const std::string& name);
Standardization parse_standardization(const std::string& name);

/// Statistics fitted on the training records for one standardized feature.
struct FittedStandardization {
  Standardization method = Standardization::none;
  double mean = 0.0;
  double std = 1.0;
  double sum = 1.0;
  double min = 0.0;
  double max = 1.0;

  double apply(double x) const;
  double invert(double y) const;
};

struct TimeFeatureInfo {
  TimeFeature kind;
  FittedStandardization fit;
  bool in_path = true;
  bool in_input = false;
};

/// Records ordered by (stream_id, timestamp, position, input row).
struct StreamDataset {
  std::vector<StreamRecord> records;
  std::size_t num_classes = 0;
  std::size_t embedding_dim = 0;
  std::size_t reduced_dim = 0;
  std::string reduction = "none";
  std::vector<std::string> external_names;
  bool external_in_path = false;
  bool external_in_input = false;
  std::vector<TimeFeatureInfo> time_features;

  /// [begin, end) record ranges, one per stream, in record order.
  std::vector<std::pair<std::size_t, std::size_t>> streams() const;
  bool has_timestamps() const;
  std::size_t in_path_time_count() const;
  std::size_t in_input_time_count() const;
  /// Width of the in-path channels: reduced embedding + time + external.
  std::size_t path_channels() const;
  /// Width of the features appended after the current embedding.
  std::size_t input_extra_channels() const;
};

/// Parses an RFC 3339 instant ("2021-03-04T05:06:07.5+01:00") into UTC
/// seconds since the epoch. A space may replace the 'T'.
double parse_rfc3339(const std::string& text);

/// Reads a CSV document into rows of fields; handles quoting and CRLF.
std::vector<std::vector<std::string>> read_csv(std::istream& in);

/// Embedding container: "SGEM", u32 version 1, u32 rows, u32 cols, then
/// rows*cols little-endian float32 values, row-major.
struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

EmbeddingMatrix read_embeddings(const std::filesystem::path& file);
void write_embeddings(const std::filesystem::path& file, const EmbeddingMatrix& m);
EmbeddingMatrix read_embeddings(std::istream& in);
void write_embeddings(std::ostream& out, const EmbeddingMatrix& m);

/// Joins a metadata CSV with its embedding rows. `num_classes` of zero means
/// one more than the largest label present.
StreamDataset load_dataset(const std::filesystem::path& metadata,
                           const std::filesystem::path& embeddings, std::size_t num_classes = 0);
StreamDataset load_dataset(std::istream& metadata, const EmbeddingMatrix& embeddings,
                           std::size_t num_classes = 0);

}  // namespace signet::prep
