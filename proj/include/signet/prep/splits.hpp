#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "signet/prep/dataset.hpp"

namespace signet::prep {

/// Record indices of one train/validation/test partition, each sorted.
struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

enum class SplitMode { kfold, single, predefined };

std::string to_string(SplitMode m);
SplitMode parse_split_mode(const std::string& name);

struct SplitOptions {
  SplitMode mode = SplitMode::kfold;
  std::size_t folds = 5;
  double train_fraction = 0.8;
  double validation_fraction = 0.1;
  double test_fraction = 0.1;
  /// Share of each k-fold training set moved to validation.
  double kfold_validation_fraction = 0.33;
  std::uint64_t seed = 0;
  bool stratify_by_stream = true;
  std::vector<Fold> predefined;
};

struct SplitPlan {
  SplitMode mode = SplitMode::kfold;
  std::uint64_t seed = 0;
  bool stratify_by_stream = true;
  std::size_t num_records = 0;
  std::vector<Fold> folds;

  nlohmann::json to_json() const;
  static SplitPlan from_json(const nlohmann::json& j);
};

SplitPlan make_splits(const StreamDataset& ds, const SplitOptions& opts);

}  // namespace signet::prep
