#include <atomic>
#include <exception>
#include <fmt/format.h>
#include <mutex>
#include <openssl/evp.h>
#include <thread>

#include "signet/train.hpp"

namespace signet::train {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) return out;
    start = pos + 1;
  }
}

// Sets an existing dotted path inside `root`.
void set_path(nlohmann::json& root, const std::string& path, const nlohmann::json& value,
              const std::string& axis) {
  nlohmann::json* node = &root;
  for (const auto& key : split(path, '.')) {
    if (!node->is_object() || !node->contains(key))
      throw ConfigError("grid axis '" + axis + "' names unknown setting '" + path + "'");
    node = &(*node)[key];
  }
  *node = value;
}

}  // namespace

std::size_t GridSpec::size() const {
  std::size_t n = 1;
  for (const auto& [name, values] : axes) n *= values.size();
  return n;
}

std::vector<nlohmann::json> GridSpec::points() const {
  std::vector<nlohmann::json> out;
  const std::size_t total = size();
  for (std::size_t i = 0; i < total; ++i) {
    nlohmann::json p = nlohmann::json::object();
    std::size_t rest = i;
    for (std::size_t a = axes.size(); a-- > 0;) {
      const auto& values = axes[a].second;
      p[axes[a].first] = values[rest % values.size()];
      rest /= values.size();
    }
    out.push_back(std::move(p));
  }
  return out;
}

GridSpec GridSpec::from_json(const nlohmann::json& j) {
  GridSpec g;
  // [[name, [values...]], ...] keeps axis order; an object is read in key order
  if (j.is_array()) {
    for (const auto& axis : j) {
      if (!axis.is_array() || axis.size() != 2 || !axis[0].is_string() || !axis[1].is_array())
        throw ConfigError("grid axes must be [name, [values...]] pairs");
      g.axes.emplace_back(axis[0].get<std::string>(), axis[1].get<std::vector<nlohmann::json>>());
    }
  } else if (j.is_object()) {
    for (const auto& [name, values] : j.items()) {
      if (!values.is_array()) throw ConfigError("grid axis '" + name + "' must list values");
      g.axes.emplace_back(name, values.get<std::vector<nlohmann::json>>());
    }
  } else {
    throw ConfigError("grid must be an array of axes or an object");
  }
  for (const auto& [name, values] : g.axes)
    if (values.empty()) throw ConfigError("grid axis '" + name + "' has no values");
  if (g.axes.empty()) throw ConfigError("grid is empty");
  return g;
}

nlohmann::json GridSpec::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [name, values] : axes) j.push_back({name, values});
  return j;
}

std::pair<models::ModelConfig, TrainSpec> apply_point(const models::ModelConfig& cfg,
                                                      const TrainSpec& spec,
                                                      const nlohmann::json& point) {
  nlohmann::json mj = cfg.to_json(), tj = spec.to_json();
  for (const auto& [axis, value] : point.items()) {
    for (const auto& path : split(axis, '+')) {
      if (path.rfind("train.", 0) == 0)
        set_path(tj, path.substr(6), value, axis);
      else
        set_path(mj, path, value, axis);
    }
  }
  return {models::ModelConfig::from_json(mj), TrainSpec::from_json(tj)};
}

std::string config_hash(const nlohmann::json& j) {
  const std::string text = j.dump();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  std::string hex;
  for (unsigned i = 0; i < 8; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

GridResult grid_search(const models::ModelConfig& cfg, const TrainSpec& spec, const GridSpec& grid,
                       const prep::HistoryBatch& batch, const std::vector<prep::Fold>& folds,
                       const GridOptions& options) {
  // non-owning view; the caller keeps `batch` alive for the call
  const std::shared_ptr<const prep::HistoryBatch> shared(&batch, [](const prep::HistoryBatch*) {});
  return grid_search(
      cfg, spec, grid, [&](const models::ModelConfig&, std::size_t) { return shared; }, folds, options);
}

GridResult grid_search(const models::ModelConfig& cfg, const TrainSpec& spec, const GridSpec& grid,
                       const BatchProvider& batches, const std::vector<prep::Fold>& folds,
                       const GridOptions& options) {
  if (grid.size() == 0) throw ConfigError("grid is empty");
  if (folds.empty()) throw ContractError("grid search needs at least one fold");
  GridResult result;
  result.points = grid.points();

  struct Task {
    std::size_t point, fold;
    std::uint64_t seed;
  };
  std::vector<std::pair<models::ModelConfig, TrainSpec>> applied(result.points.size());
  std::vector<std::string> hashes(result.points.size());
  std::vector<bool> feasible(result.points.size(), false);
  std::vector<Task> tasks;
  for (std::size_t p = 0; p < result.points.size(); ++p) {
    try {
      applied[p] = apply_point(cfg, spec, result.points[p]);
      applied[p].first.validate();
      applied[p].second.validate();
    } catch (const ConfigError& e) {
      result.skipped.push_back({p, e.what()});
      continue;
    }
    feasible[p] = true;
    hashes[p] = config_hash({{"model", applied[p].first.to_json()},
                             {"train", applied[p].second.to_json()}});
    for (std::size_t f = 0; f < folds.size(); ++f)
      for (auto seed : applied[p].second.seeds) tasks.push_back({p, f, seed});
  }
  if (tasks.empty())
    throw ConfigError("every grid point is infeasible; first: " + result.skipped.front().reason);

  std::vector<RunRow> rows(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex callback;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= tasks.size()) return;
      const auto& t = tasks[i];
      try {
        const auto& [mc, ts] = applied[t.point];
        const auto batch = batches(mc, t.fold);
        auto run = train(mc, *batch, folds[t.fold], ts, t.seed);
        rows[i] = {t.point, t.fold, t.seed, hashes[t.point], std::move(run.report)};
        if (options.on_run) {
          std::lock_guard lock(callback);
          options.on_run(rows[i]);
        }
      } catch (...) {
        errors[i] = std::current_exception();
        next = tasks.size();  // stop handing out work
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, tasks.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  result.rows = std::move(rows);

  // per-point means, in enumeration order
  const std::size_t K = cfg.data.num_classes;
  std::vector<std::vector<double>> fold_val(result.points.size(), std::vector<double>(folds.size(), 0.0));
  std::vector<std::vector<double>> fold_test(result.points.size(), std::vector<double>(folds.size(), 0.0));
  std::vector<std::vector<std::vector<double>>> fold_test_f1(
      result.points.size(), std::vector<std::vector<double>>(folds.size(), std::vector<double>(K, 0.0)));
  std::vector<std::vector<std::size_t>> fold_runs(result.points.size(), std::vector<std::size_t>(folds.size(), 0));
  for (const auto& r : result.rows) {
    fold_val[r.point][r.fold] += r.report.validation.macro_f1;
    if (r.report.test) {
      fold_test[r.point][r.fold] += r.report.test->macro_f1;
      for (std::size_t c = 0; c < K; ++c) fold_test_f1[r.point][r.fold][c] += r.report.test->f1[c];
    }
    ++fold_runs[r.point][r.fold];
  }
  bool have_best = false;
  for (std::size_t p = 0; p < result.points.size(); ++p) {
    if (!feasible[p]) continue;
    PointSummary s;
    s.point = p;
    s.values = result.points[p];
    s.mean_test_f1.assign(K, 0.0);
    for (std::size_t f = 0; f < folds.size(); ++f) {
      s.runs += fold_runs[p][f];
      s.mean_val_macro_f1 += fold_val[p][f];
      s.mean_test_macro_f1 += fold_test[p][f];
      for (std::size_t c = 0; c < K; ++c) s.mean_test_f1[c] += fold_test_f1[p][f][c];
    }
    s.mean_val_macro_f1 /= double(s.runs);
    s.mean_test_macro_f1 /= double(s.runs);
    for (auto& v : s.mean_test_f1) v /= double(s.runs);
    if (!have_best || s.mean_val_macro_f1 > result.best.mean_val_macro_f1) {
      result.best = s;
      result.best_point = p;
      have_best = true;
    }
    result.summaries.push_back(std::move(s));
  }

  // each fold choosing its own point
  result.per_fold_best_test_f1.assign(K, 0.0);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::size_t best = 0;
    double best_val = -1.0;
    for (std::size_t p = 0; p < result.points.size(); ++p) {
      if (!feasible[p]) continue;
      const double v = fold_val[p][f] / double(fold_runs[p][f]);
      if (v > best_val) {
        best_val = v;
        best = p;
      }
    }
    result.per_fold_best_points.push_back(best);
    const double n = double(fold_runs[best][f]);
    result.per_fold_best_test_macro_f1 += fold_test[best][f] / n / double(folds.size());
    for (std::size_t c = 0; c < K; ++c)
      result.per_fold_best_test_f1[c] += fold_test_f1[best][f][c] / n / double(folds.size());
  }
  return result;
}

std::vector<nlohmann::json> GridResult::json_lines() const {
  std::vector<nlohmann::json> out;
  for (const auto& r : rows) {
    nlohmann::json j = {{"point", r.point},
                        {"values", points[r.point]},
                        {"config_hash", r.config_hash},
                        {"fold", r.fold},
                        {"seed", r.seed},
                        {"best_epoch", r.report.best_epoch},
                        {"stopped_epoch", r.report.stopped_epoch},
                        {"val_macro_f1", r.report.validation.macro_f1},
                        {"val_f1", r.report.validation.f1}};
    if (r.report.test) {
      j["test_macro_f1"] = r.report.test->macro_f1;
      j["test_f1"] = r.report.test->f1;
      j["test_confusion"] = r.report.test->confusion;
    } else {
      j["test_macro_f1"] = nullptr;
    }
    out.push_back(std::move(j));
  }
  return out;
}

nlohmann::json GridResult::summary_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& s : summaries)
    pts.push_back({{"point", s.point},
                   {"values", s.values},
                   {"runs", s.runs},
                   {"mean_val_macro_f1", s.mean_val_macro_f1},
                   {"mean_test_macro_f1", s.mean_test_macro_f1},
                   {"mean_test_f1", s.mean_test_f1}});
  nlohmann::json skips = nlohmann::json::array();
  for (const auto& s : skipped) skips.push_back({{"point", s.point}, {"values", points[s.point]}, {"reason", s.reason}});
  return {{"points", pts},
          {"skipped", skips},
          {"global_best",
           {{"point", best_point},
            {"values", best.values},
            {"mean_val_macro_f1", best.mean_val_macro_f1},
            {"test_macro_f1", best.mean_test_macro_f1},
            {"test_f1", best.mean_test_f1}}},
          {"per_fold_best",
           {{"points", per_fold_best_points},
            {"test_macro_f1", per_fold_best_test_macro_f1},
            {"test_f1", per_fold_best_test_f1}}}};
}

}  // namespace signet::train
