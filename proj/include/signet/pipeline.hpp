#pragma once
// Experiment plumbing behind the command-line tool: one JSON config drives
// data preparation, statistics, training, tuning and evaluation.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "signet/models.hpp"
#include "signet/prep/dataset.hpp"
#include "signet/prep/features.hpp"
#include "signet/prep/splits.hpp"
#include "signet/train.hpp"

namespace signet::pipeline {

struct ExperimentConfig {
  std::filesystem::path metadata;
  std::filesystem::path embeddings;
  std::size_t num_classes = 0;  // 0: from the labels
  bool external_in_path = false;
  bool external_in_input = false;

  prep::Reduction reduction = prep::Reduction::none;
  std::size_t reduced_dims = 0;
  std::uint64_t reduction_seed = 0;
  std::vector<prep::TimeFeatureRequest> time_features;

  prep::SplitOptions split;
  models::ModelConfig model;  // data sizes are filled in from the dataset
  train::TrainSpec train;
  std::optional<train::GridSpec> grid;
  std::vector<std::size_t> event_classes;
  std::filesystem::path out = "out";

  nlohmann::json source;  // the file as read, echoed into outputs

  /// Relative paths are resolved against `base_dir`. Throws ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static ExperimentConfig load(const std::filesystem::path& file);
  /// Settings that determine the prepared data.
  nlohmann::json prep_json() const;
};

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& file);

prep::StreamDataset load_raw(const ExperimentConfig& cfg);
/// Model input sizes for `family` on prepared data.
models::DataDims data_dims(const prep::StreamDataset& ds, models::Family family);
/// Reduction and time features fitted on the fold's train and validation
/// records, applied to every record.
prep::StreamDataset prepare_fold(const ExperimentConfig& cfg, const prep::StreamDataset& raw,
                                 const prep::Fold& fold);
/// Window or unit history for the model's family.
prep::HistoryBatch build_history(const prep::StreamDataset& ds, const models::ModelConfig& model);
/// Points covered by one sample's history: w, or k*n + (w - k) for units.
std::size_t history_length(const models::ModelConfig& model);

struct Prepared {
  prep::SplitPlan plan;
  std::vector<prep::StreamDataset> folds;  // prepared data of each fold
  nlohmann::json manifest;
};

/// Writes splits, per-fold reduced embeddings and feature fits, and a
/// manifest with content hashes into `out`. Returns the manifest.
nlohmann::json prepare(const ExperimentConfig& cfg, const std::filesystem::path& out);
/// Reads what prepare() wrote; throws ContractError when it was produced
/// from different inputs or settings.
Prepared load_prepared(const ExperimentConfig& cfg, const std::filesystem::path& out);

struct RunOptions {
  std::size_t jobs = 1;
  std::optional<std::vector<std::uint64_t>> seeds;  // overrides train.seeds
  bool json = false;                                // print JSON, not tables
  std::ostream* log = nullptr;                      // progress lines
};

/// Each command writes its files under `out` and prints a table (or JSON)
/// to `print`. The returned JSON is what was written as the main result.
nlohmann::json cmd_prepare(const ExperimentConfig& cfg, const std::filesystem::path& out,
                           const RunOptions& opts, std::ostream& print);
nlohmann::json cmd_stats(const ExperimentConfig& cfg, const std::filesystem::path& out,
                         const RunOptions& opts, std::ostream& print);
nlohmann::json cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out,
                         const RunOptions& opts, std::ostream& print);
nlohmann::json cmd_tune(const ExperimentConfig& cfg, const std::filesystem::path& out,
                        const RunOptions& opts, std::ostream& print);
/// Scores the saved best checkpoint on one split ("test", "validation",
/// "train" or "all") of the fold it was trained on.
nlohmann::json cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& out,
                        const RunOptions& opts, std::ostream& print, const std::string& split = "test");

/// 0 success, 1 validation, 2 I/O, 3 numeric.
int exit_code(const std::exception& e);

}  // namespace signet::pipeline
