#pragma once
// Training loop, early stopping, metrics and grid search.

#include <functional>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "signet/models.hpp"
#include "signet/prep/splits.hpp"

namespace signet::train {

/// Non-finite training loss; carries the 1-based epoch and batch.
class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t epoch, std::size_t batch)
      : NumericError("training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
                     ", batch " + std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_, batch_;
};

enum class LossKind { focal, cross_entropy };

struct TrainSpec {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  /// false: L2 term added to the gradient before the moments (coupled).
  bool decoupled_weight_decay = false;
  std::size_t max_epochs = 100;
  std::size_t batch_size = 64;
  std::size_t patience = 3;
  LossKind loss = LossKind::focal;
  double gamma = 2.0;
  std::vector<std::uint64_t> seeds{1, 12, 123};

  void validate() const;
  nlohmann::json to_json() const;
  static TrainSpec from_json(const nlohmann::json& j);
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, const TrainSpec& spec);
  /// One update from the gradients currently held by the parameters.
  void step();

 private:
  std::vector<Tensor> params_;
  TrainSpec spec_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct Metrics {
  std::vector<double> precision, recall, f1;
  std::vector<std::size_t> support;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  /// confusion[truth][prediction]
  std::vector<std::vector<std::size_t>> confusion;

  nlohmann::json to_json() const;
};

/// Per-class scores over the declared label space [0, K). F1 is 0 when
/// precision + recall is 0; absent classes count towards the macro mean.
Metrics evaluate(const std::vector<std::int64_t>& truth, const std::vector<std::int64_t>& predicted,
                 std::size_t num_classes);
/// Argmax predictions of the model on every labelled sample of `batch`.
Metrics evaluate(const models::Model& model, const prep::HistoryBatch& batch,
                 std::size_t batch_size = 256);
std::vector<std::int64_t> predict(const models::Model& model, const prep::HistoryBatch& batch,
                                  std::size_t batch_size = 256);

/// Stops once `patience` consecutive epochs fail to beat the best score.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Records the score of the next epoch; true when it is a new best.
  bool update(double score);
  bool should_stop() const { return since_best_ >= patience_; }
  /// 1-based; 0 before any update.
  std::size_t best_epoch() const { return best_epoch_; }
  double best_score() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0, best_epoch_ = 0, since_best_ = 0;
  double best_ = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_macro_f1 = 0.0;
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
  std::uint64_t seed = 0;
  Metrics validation;
  std::optional<Metrics> test;
  std::string checkpoint;  // path of the saved best parameters, if any
  double wall_seconds = 0.0;
  nlohmann::json config;  // model and train spec echo

  /// Deterministic content; wall-clock time is left out.
  nlohmann::json to_json() const;
};

/// Samples of `batch` whose records fall in `records` and carry a label.
std::vector<std::size_t> rows_for(const prep::HistoryBatch& batch,
                                  const std::vector<std::size_t>& records);

struct TrainResult {
  TrainReport report;
  std::unique_ptr<models::Model> model;  // holds the best-epoch parameters
};

/// Trains a fresh model (parameters seeded by `seed`) on fold.train,
/// early-stops on fold.validation macro-F1 and evaluates fold.test when it
/// is non-empty.
TrainResult train(const models::ModelConfig& cfg, const prep::HistoryBatch& batch,
                  const prep::Fold& fold, const TrainSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Grid search.

/// Ordered axes; each axis name is a dotted config path ("unit.hidden_dim",
/// "train.lr") or several paths joined by '+' that take the same value.
struct GridSpec {
  std::vector<std::pair<std::string, std::vector<nlohmann::json>>> axes;

  /// Number of points; 1 when there are no axes.
  std::size_t size() const;
  /// Cartesian product, first axis slowest.
  std::vector<nlohmann::json> points() const;
  static GridSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Applies one grid point to copies of the configs. Unknown paths raise
/// ConfigError.
std::pair<models::ModelConfig, TrainSpec> apply_point(const models::ModelConfig& cfg,
                                                      const TrainSpec& spec,
                                                      const nlohmann::json& point);

/// Stable hex digest of a JSON value (SHA-256 of its compact dump, first 16
/// hex digits).
std::string config_hash(const nlohmann::json& j);

struct RunRow {
  std::size_t point = 0;
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::string config_hash;  // of the applied model config and train spec
  TrainReport report;
};

struct Skip {
  std::size_t point = 0;
  std::string reason;
};

struct PointSummary {
  std::size_t point = 0;
  nlohmann::json values;
  double mean_val_macro_f1 = 0.0;
  double mean_test_macro_f1 = 0.0;
  std::vector<double> mean_test_f1;  // per class
  std::size_t runs = 0;
};

struct GridResult {
  std::vector<nlohmann::json> points;
  std::vector<RunRow> rows;  // ordered by (point, fold, seed)
  std::vector<Skip> skipped;
  std::vector<PointSummary> summaries;  // feasible points in order
  std::size_t best_point = 0;
  /// Test scores of the single best point, averaged over folds and seeds.
  PointSummary best;
  /// Test scores when each fold picks its own best point.
  double per_fold_best_test_macro_f1 = 0.0;
  std::vector<double> per_fold_best_test_f1;
  std::vector<std::size_t> per_fold_best_points;

  /// One JSON object per run.
  std::vector<nlohmann::json> json_lines() const;
  nlohmann::json summary_json() const;
};

struct GridOptions {
  std::size_t jobs = 1;
  /// Called after each finished run (from worker threads, serialized).
  std::function<void(const RunRow&)> on_run;
};

/// History samples for one fold under one (applied) model config. Called
/// from worker threads; implementations cache and lock as needed.
using BatchProvider = std::function<std::shared_ptr<const prep::HistoryBatch>(
    const models::ModelConfig& cfg, std::size_t fold)>;

/// Every feasible grid point is trained on every fold with every seed of
/// `spec.seeds`. Infeasible points are recorded in `skipped`; an all-skipped
/// grid raises ConfigError. A grid without axes is the single base point.
GridResult grid_search(const models::ModelConfig& cfg, const TrainSpec& spec, const GridSpec& grid,
                       const BatchProvider& batches, const std::vector<prep::Fold>& folds,
                       const GridOptions& options = {});
/// Same samples for every fold and grid point.
GridResult grid_search(const models::ModelConfig& cfg, const TrainSpec& spec, const GridSpec& grid,
                       const prep::HistoryBatch& batch, const std::vector<prep::Fold>& folds,
                       const GridOptions& options = {});

/// Aligned text table: one row per entry, class F1 columns then macro.
std::string format_table(const std::vector<std::string>& row_names,
                         const std::vector<std::vector<double>>& class_f1,
                         const std::vector<double>& macro,
                         const std::vector<std::string>& class_names);

}  // namespace signet::train
