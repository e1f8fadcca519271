#include <chrono>
#include <filesystem>
#include <fmt/format.h>
#include <map>
#include <mutex>
#include <ostream>
#include <tuple>

#include "pipeline_util.hpp"
#include "signet/pipeline.hpp"
#include "signet/prep/history.hpp"
#include "signet/prep/stats.hpp"

namespace signet::pipeline {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> class_names(std::size_t K) {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < K; ++c) out.push_back(std::to_string(c));
  return out;
}

std::string seconds(double s) { return fmt::format("{:.6g}s", s); }

std::string two_col(const std::vector<std::pair<std::string, std::string>>& rows) {
  std::size_t w = 0;
  for (const auto& [k, v] : rows) w = std::max(w, k.size());
  std::string out;
  for (const auto& [k, v] : rows) out += fmt::format("{:<{}}  {}\n", k, w, v);
  return out;
}

// Histories per (fold, history shape), built once and shared by workers.
class BatchCache {
 public:
  explicit BatchCache(const Prepared& p) : prepared_(p) {}

  std::shared_ptr<const prep::HistoryBatch> get(const models::ModelConfig& mc, std::size_t fold) {
    const bool units = models::unit_mode(mc.family);
    const auto key = std::make_tuple(fold, int(models::path_source(mc.family)), units, mc.w,
                                     units ? mc.k : 0, units ? mc.n : 0);
    std::lock_guard lock(mutex_);
    auto it = cache_.find(key);
    if (it == cache_.end())
      it = cache_.emplace(key, std::make_shared<const prep::HistoryBatch>(
                                   build_history(prepared_.folds.at(fold), mc)))
               .first;
    return it->second;
  }

 private:
  const Prepared& prepared_;
  std::mutex mutex_;
  std::map<std::tuple<std::size_t, int, bool, std::size_t, std::size_t, std::size_t>,
           std::shared_ptr<const prep::HistoryBatch>>
      cache_;
};

nlohmann::json run_experiment(const ExperimentConfig& cfg, const fs::path& out, const RunOptions& opts,
                              std::ostream& print, const train::GridSpec& grid, const std::string& command) {
  const auto started = std::chrono::steady_clock::now();
  const std::string started_at = detail::utc_now();
  const auto prepared = load_prepared(cfg, out);

  auto base = cfg.model;
  base.data = data_dims(prepared.folds.at(0), base.family);
  if (command == "train") base.validate();
  auto spec = cfg.train;
  if (opts.seeds) spec.seeds = *opts.seeds;
  spec.validate();

  BatchCache cache(prepared);
  train::GridOptions go;
  go.jobs = opts.jobs;
  if (opts.log) {
    go.on_run = [&](const train::RunRow& r) {
      *opts.log << fmt::format("point {} fold {} seed {}: best epoch {}, val macro-F1 {:.4f}", r.point,
                               r.fold, r.seed, r.report.best_epoch, r.report.validation.macro_f1);
      if (r.report.test) *opts.log << fmt::format(", test macro-F1 {:.4f}", r.report.test->macro_f1);
      *opts.log << std::endl;
    };
  }
  const auto result = train::grid_search(
      base, spec, grid, [&](const models::ModelConfig& mc, std::size_t f) { return cache.get(mc, f); },
      prepared.plan.folds, go);

  std::string lines;
  for (const auto& j : result.json_lines()) lines += j.dump() + "\n";
  detail::write_text(out / "results.jsonl", lines);

  // the best point's strongest run, retrained (training is deterministic)
  const train::RunRow* best_row = nullptr;
  for (const auto& r : result.rows)
    if (r.point == result.best_point &&
        (!best_row || r.report.validation.macro_f1 > best_row->report.validation.macro_f1))
      best_row = &r;
  const auto [mc, ts] = train::apply_point(base, spec, result.points[result.best_point]);
  const auto& fold = prepared.plan.folds[best_row->fold];
  auto run = train::train(mc, *cache.get(mc, best_row->fold), fold, ts, best_row->seed);
  run.report.checkpoint = "best/model.sgem";
  fs::create_directories(out / "best");
  run.model->params().save(out / "best" / "model.sgem");
  auto saved_model = mc;
  saved_model.seed = best_row->seed;
  detail::write_text(out / "best" / "model.json",
                     nlohmann::json{{"model", saved_model.to_json()},
                                    {"train", ts.to_json()},
                                    {"point", result.best_point},
                                    {"values", result.points[result.best_point]},
                                    {"fold", best_row->fold},
                                    {"seed", best_row->seed}}
                             .dump(2) + "\n");

  const auto K = base.data.num_classes;
  const std::string family = models::to_string(base.family);
  std::vector<std::string> names;
  std::vector<std::vector<double>> f1;
  std::vector<double> macro;
  if (command == "train") {
    names.push_back(family);
    f1.push_back(result.best.mean_test_f1);
    macro.push_back(result.best.mean_test_macro_f1);
  } else {
    names = {family + " (global best)", family + " (per-fold best)"};
    f1 = {result.best.mean_test_f1, result.per_fold_best_test_f1};
    macro = {result.best.mean_test_macro_f1, result.per_fold_best_test_macro_f1};
  }
  const std::string table = train::format_table(names, f1, macro, class_names(K));
  detail::write_text(out / "summary.txt", table);

  nlohmann::json results = {
      {"command", command},
      {"config", cfg.source},
      {"overrides", opts.seeds ? nlohmann::json{{"seeds", *opts.seeds}} : nlohmann::json::object()},
      {"family", family},
      {"class_names", class_names(K)},
      {"runs", result.rows.size()},
      {"summary", result.summary_json()},
      {"table", {{"rows", names}, {"class_f1", f1}, {"macro_f1", macro}}},
      {"best_run", {{"fold", best_row->fold}, {"seed", best_row->seed}, {"report", run.report.to_json()}}}};
  auto written = results;
  written["timestamp"] = {
      {"started", started_at},
      {"finished", detail::utc_now()},
      {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()}};
  detail::write_text(out / "results.json", written.dump(2) + "\n");
  print << (opts.json ? results.dump(2) + "\n" : table);
  return results;
}

}  // namespace

nlohmann::json cmd_prepare(const ExperimentConfig& cfg, const fs::path& out, const RunOptions& opts,
                           std::ostream& print) {
  const auto manifest = prepare(cfg, out);
  if (opts.json) {
    print << manifest.dump(2) << "\n";
    return manifest;
  }
  const auto& d = manifest["dataset"];
  std::vector<std::pair<std::string, std::string>> rows{
      {"streams", std::to_string(d["streams"].get<std::size_t>())},
      {"records", std::to_string(d["records"].get<std::size_t>())},
      {"labelled", std::to_string(d["labelled"].get<std::size_t>())},
      {"history length", std::to_string(manifest["history"]["length"].get<std::size_t>())}};
  std::size_t i = 0;
  for (const auto& f : manifest["splits"]["folds"])
    rows.emplace_back(fmt::format("fold {} train/val/test", i++),
                      fmt::format("{}/{}/{}", f["train"].get<std::size_t>(), f["validation"].get<std::size_t>(),
                                  f["test"].get<std::size_t>()));
  print << two_col(rows);
  return manifest;
}

nlohmann::json cmd_stats(const ExperimentConfig& cfg, const fs::path& out, const RunOptions& opts,
                         std::ostream& print) {
  const auto raw = load_raw(cfg);
  detail::check_against_data(cfg, raw);
  const auto rep = prep::dataset_stats(raw, cfg.event_classes, false);
  nlohmann::json warnings = nlohmann::json::array();
  if (rep.labels_missing) warnings.push_back("no labelled records; event statistics omitted");
  if (rep.time_rows_omitted) warnings.push_back("no timestamps; time statistics omitted");
  nlohmann::json result = {{"stats", rep.to_json()}, {"warnings", warnings}};
  auto written = result;
  written["timestamp"] = detail::utc_now();
  detail::write_text(out / "stats.json", written.dump(2) + "\n");
  if (opts.json) {
    print << result.dump(2) << "\n";
    return result;
  }

  std::vector<std::pair<std::string, std::string>> rows{
      {"Number of streams", std::to_string(rep.num_streams)},
      {"Number of points", std::to_string(rep.num_records)},
      {"Labelled points", std::to_string(rep.num_labelled)}};
  for (std::size_t c = 0; c < rep.label_counts.size(); ++c)
    rows.emplace_back(fmt::format("Class {} points", c), std::to_string(rep.label_counts[c]));
  if (rep.time_diff) {
    rows.emplace_back("Mean Point Time Diff.", seconds(rep.time_diff->mean));
    rows.emplace_back("Median Point Time Diff.", seconds(rep.time_diff->median));
  }
  if (!rep.labels_missing) {
    auto num = [](const std::optional<prep::Summary>& s, bool mean) {
      return s ? fmt::format("{:.4g}", mean ? s->mean : s->median) : std::string("0");
    };
    rows.emplace_back("Mean Consecutive Events", num(rep.consecutive_events, true));
    rows.emplace_back("Median Consecutive Events", num(rep.consecutive_events, false));
    rows.emplace_back("Mean Events per Stream", num(rep.events_per_stream, true));
    rows.emplace_back("Median Events per Stream", num(rep.events_per_stream, false));
  }
  print << two_col(rows);
  for (const auto& w : warnings) print << "warning: " << w.get<std::string>() << "\n";
  return result;
}

nlohmann::json cmd_train(const ExperimentConfig& cfg, const fs::path& out, const RunOptions& opts,
                         std::ostream& print) {
  return run_experiment(cfg, out, opts, print, train::GridSpec{}, "train");
}

nlohmann::json cmd_tune(const ExperimentConfig& cfg, const fs::path& out, const RunOptions& opts,
                        std::ostream& print) {
  if (!cfg.grid) throw ConfigError("tune needs a 'grid' in the config");
  return run_experiment(cfg, out, opts, print, *cfg.grid, "tune");
}

nlohmann::json cmd_eval(const ExperimentConfig& cfg, const fs::path& out, const RunOptions& opts,
                        std::ostream& print, const std::string& split) {
  const auto meta = detail::read_json(out / "best" / "model.json");
  const auto prepared = load_prepared(cfg, out);
  const auto mc = models::ModelConfig::from_json(meta.at("model"));
  const std::size_t f = meta.at("fold").get<std::size_t>();
  if (f >= prepared.plan.folds.size()) throw ContractError("checkpoint fold outside the split plan");
  models::Model model(mc);
  model.params().load(out / "best" / "model.sgem");

  const auto batch = build_history(prepared.folds[f], mc);
  const auto& fold = prepared.plan.folds[f];
  std::vector<std::size_t> records;
  if (split == "test")
    records = fold.test;
  else if (split == "validation")
    records = fold.validation;
  else if (split == "train")
    records = fold.train;
  else if (split == "all")
    for (std::size_t r = 0; r < batch.record_index.size(); ++r) records.push_back(batch.record_index[r]);
  else
    throw ConfigError("unknown split '" + split + "' (test, validation, train or all)");
  const auto rows = train::rows_for(batch, records);
  if (rows.empty()) throw ContractError("the " + split + " split has no labelled sample");
  const auto metrics = train::evaluate(model, batch.select(rows));

  const auto K = mc.data.num_classes;
  nlohmann::json result = {{"split", split},
                           {"fold", f},
                           {"family", models::to_string(mc.family)},
                           {"samples", rows.size()},
                           {"metrics", metrics.to_json()}};
  auto written = result;
  written["timestamp"] = detail::utc_now();
  detail::write_text(out / fmt::format("eval_{}.json", split), written.dump(2) + "\n");
  print << (opts.json ? result.dump(2) + "\n"
                      : train::format_table({models::to_string(mc.family) + " (" + split + ")"}, {metrics.f1},
                                            {metrics.macro_f1}, class_names(K)));
  return result;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return 2;
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const DomainError*>(&e)) return 3;
  return 1;
}

}  // namespace signet::pipeline
