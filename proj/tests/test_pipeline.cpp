#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "signet/pipeline.hpp"
#include "signet/prep/stats.hpp"
#include "support/datasets.hpp"
#include "support/experiment.hpp"

using namespace signet;
using namespace signet::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("signet_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

// 2 streams, 12 and 9 points, 4-dim embeddings, 2 classes.
fs::path toy(const std::string& name, json cfg = json::object()) {
  const auto dir = scratch(name);
  testing::write_dataset(dir, testing::synthetic_dataset({12, 9}, 4, 3));
  auto base = testing::base_config("ffn");
  base["split"] = {{"mode", "single"}, {"seed", 3}, {"stratify_by_stream", false}};
  base.merge_patch(cfg);
  return testing::write_config(dir, base);
}

fs::path medium(const std::string& name, json cfg = json::object()) {
  const auto dir = scratch(name);
  std::vector<std::size_t> lengths(20, 10);
  testing::write_dataset(dir, testing::synthetic_dataset(lengths, 4, 5));
  auto base = testing::base_config("ffn");
  base.merge_patch(cfg);
  return testing::write_config(dir, base);
}

// Value printed after a row label in a two-column table.
std::string line_value(const std::string& text, const std::string& label) {
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (line.rfind(label, 0) == 0) {
      std::istringstream rest(line.substr(label.size()));
      std::string v;
      rest >> v;
      return v;
    }
  return "<missing>";
}

json without_timestamp(json j) {
  j.erase("timestamp");
  return j;
}

}  // namespace

TEST_CASE("prepare: toy fixture manifest and rerun hashes") {
  const auto file = toy("prepare");
  const auto cfg = ExperimentConfig::load(file);
  std::ostringstream sink;
  const auto m1 = cmd_prepare(cfg, cfg.out, {}, sink);
  CHECK(m1["dataset"]["streams"] == 2);
  CHECK(m1["dataset"]["records"] == 21);
  CHECK(m1["dataset"]["labelled"] == 21);
  CHECK(m1["dataset"]["stream_records"] == json{{"s000", 12}, {"s001", 9}});
  CHECK(m1["splits"]["folds"].size() == 1);
  const auto& f = m1["splits"]["folds"][0];
  CHECK(f["train"].get<std::size_t>() + f["validation"].get<std::size_t>() + f["test"].get<std::size_t>() == 21);
  CHECK(sink.str().find("streams") != std::string::npos);

  const auto on_disk = json::parse(slurp(cfg.out / "manifest.json"));
  CHECK(on_disk.contains("timestamp"));
  CHECK(without_timestamp(on_disk) == m1);

  const auto m2 = cmd_prepare(cfg, cfg.out, {}, sink);
  CHECK(m2 == m1);
  CHECK(m2["prep_hash"] == m1["prep_hash"]);
  CHECK(m2["inputs"] == m1["inputs"]);
  CHECK(m2["files"] == m1["files"]);
  CHECK(load_prepared(cfg, cfg.out).folds.size() == 1);
}

TEST_CASE("prepare: reduction writes per-fold embeddings, stale inputs are refused") {
  const auto file = toy("reduce", {{"reduction", {{"method", "grp"}, {"dims", 2}, {"seed", 1}}},
                                   {"time_features", {{{"kind", "time_encoding"}, {"standardization", "z_score"}}}},
                                   {"model", {{"family", "swnu"}}}});
  auto cfg = ExperimentConfig::load(file);
  std::ostringstream sink;
  const auto m = cmd_prepare(cfg, cfg.out, {}, sink);
  CHECK(fs::exists(cfg.out / "fold_0" / "reduced.sgem"));
  CHECK(fs::exists(cfg.out / "fold_0" / "features.json"));
  const auto prepared = load_prepared(cfg, cfg.out);
  CHECK(prepared.folds[0].reduced_dim == 2);
  CHECK(data_dims(prepared.folds[0], models::Family::swnu).path_channels == 3);

  auto other = cfg;
  other.reduced_dims = 3;
  CHECK_THROWS_AS(load_prepared(other, cfg.out), ContractError);

  // edit an input after preparing
  testing::write_dataset(file.parent_path(), testing::synthetic_dataset({12, 9}, 4, 4));
  CHECK_THROWS_AS(load_prepared(cfg, cfg.out), ContractError);
}

TEST_CASE("prepare: missing embedding file is an I/O failure naming the path") {
  const auto file = toy("missing");
  fs::remove(file.parent_path() / "embeddings.sgem");
  const auto cfg = ExperimentConfig::load(file);
  std::ostringstream sink;
  try {
    cmd_prepare(cfg, cfg.out, {}, sink);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(exit_code(e) == 2);
    CHECK(std::string(e.what()).find((file.parent_path() / "embeddings.sgem").string()) != std::string::npos);
  }
}

TEST_CASE("prepare: seq_sig_net (5,3,3) covers 11 points") {
  for (auto [n, len] : {std::pair{3, 11}, {6, 20}, {11, 35}}) {
    const auto file = toy("history", {{"model", {{"family", "seq_sig_net"}, {"w", 5}, {"k", 3}, {"n", n}}}});
    const auto cfg = ExperimentConfig::load(file);
    std::ostringstream sink;
    const auto m = cmd_prepare(cfg, cfg.out, {}, sink);
    CHECK(m["history"]["length"] == len);
    CHECK(m["history"]["n"] == n);
  }
}

TEST_CASE("config: unknown keys and bad values fail before any compute") {
  const auto dir = scratch("config");
  auto j = testing::base_config("ffn");
  j["model"]["unit"] = {{"hiden_dim", 3}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j, dir), ConfigError);
  j = testing::base_config("ffn");
  j["trian"] = json::object();
  CHECK_THROWS_AS(ExperimentConfig::from_json(j, dir), ConfigError);
  j = testing::base_config("ffn");
  j["model"]["data"] = {{"num_classes", 2}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j, dir), ConfigError);
  j = testing::base_config("ffn");
  j["train"]["lr"] = -1.0;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j, dir), ConfigError);

  // relative paths follow the config file
  const auto c = ExperimentConfig::from_json(testing::base_config("ffn"), dir);
  CHECK(c.metadata == dir / "metadata.csv");
  CHECK(c.out == dir / "out");

  // infeasible model against the data: attention heads must divide the width
  const auto file = toy("heads", {{"model", {{"family", "swattn"}, {"unit", {{"recurrence", "attention"}, {"num_heads", 4}}}}}});
  const auto cfg = ExperimentConfig::load(file);
  std::ostringstream sink;
  try {
    cmd_prepare(cfg, cfg.out, {}, sink);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(exit_code(e) == 1);
  }
  CHECK_FALSE(fs::exists(cfg.out / "manifest.json"));
}

TEST_CASE("stats: uniform 60 s spacing, empty event set, missing labels") {
  auto file = toy("stats");
  auto cfg = ExperimentConfig::load(file);
  std::ostringstream out;
  const auto r = cmd_stats(cfg, cfg.out, {}, out);
  const auto text = out.str();
  CHECK(text.find("Mean Point Time Diff.") != std::string::npos);
  CHECK(text.find(" 60s\n") != std::string::npos);
  CHECK(line_value(text, "Mean Events per Stream") == "0");
  CHECK(line_value(text, "Median Consecutive Events") == "0");
  CHECK(r["stats"]["time_diff_seconds"]["mean"].get<double>() == doctest::Approx(60.0));
  CHECK(json::parse(slurp(cfg.out / "stats.json")).contains("timestamp"));

  // one event class: run lengths follow the cycling labels
  cfg.event_classes = {1};
  std::ostringstream out2;
  const auto r2 = cmd_stats(cfg, cfg.out, {}, out2);
  const auto expected = prep::dataset_stats(load_raw(cfg), cfg.event_classes);
  CHECK(r2["stats"] == expected.to_json());
  CHECK(out2.str().find("Median Consecutive Events") != std::string::npos);

  testing::write_dataset(file.parent_path(), testing::synthetic_dataset({12, 9}, 4, 3), false);
  std::ostringstream out3;
  const auto r3 = cmd_stats(cfg, cfg.out, {}, out3);
  CHECK(r3["warnings"].size() == 1);
  CHECK(out3.str().find("warning:") != std::string::npos);
  CHECK(out3.str().find("Events") == std::string::npos);
}

TEST_CASE("train: ffn table layout, rows per fold and seed, checkpoint, eval") {
  const auto file = medium("train", {{"train", {{"seeds", {1, 12}}}}});
  const auto cfg = ExperimentConfig::load(file);
  std::ostringstream sink, table;
  cmd_prepare(cfg, cfg.out, {}, sink);
  const auto r = cmd_train(cfg, cfg.out, {}, table);
  std::istringstream lines(table.str());
  std::string header;
  std::getline(lines, header);
  std::istringstream cols(header);
  std::vector<std::string> names;
  for (std::string c; cols >> c;) names.push_back(c);
  CHECK(names == std::vector<std::string>{"model", "0", "1", "macro-avg"});
  CHECK(table.str().find("\nffn ") != std::string::npos);
  CHECK(count_lines(cfg.out / "results.jsonl") == 10);
  CHECK(r["runs"] == 10);
  CHECK(r["config"] == json::parse(slurp(file)));
  CHECK(slurp(cfg.out / "summary.txt") == table.str());
  CHECK(fs::exists(cfg.out / "best" / "model.sgem"));

  std::ostringstream ev;
  const auto e = cmd_eval(cfg, cfg.out, {}, ev);
  const auto best_test = r["best_run"]["report"]["test"]["macro_f1"].get<double>();
  CHECK(e["metrics"]["macro_f1"].get<double>() == doctest::Approx(best_test).epsilon(1e-12));
  CHECK(ev.str().find("ffn (test)") != std::string::npos);
  std::ostringstream bad;
  CHECK_THROWS_AS(cmd_eval(cfg, cfg.out, {}, bad, "holdout"), ConfigError);
}

TEST_CASE("tune: 3x2 grid over 5 folds and 3 seeds gives 90 rows") {
  const auto file = medium("tune", {{"train", {{"max_epochs", 1}, {"seeds", {1, 12, 123}}}},
                                    {"grid", {{"train.lr", {1e-3, 5e-4, 1e-4}}, {"head.dropout", {0.0, 0.1}}}}});
  const auto cfg = ExperimentConfig::load(file);
  std::ostringstream sink, table;
  cmd_prepare(cfg, cfg.out, {}, sink);
  RunOptions opts;
  opts.jobs = 3;
  const auto r = cmd_tune(cfg, cfg.out, opts, table);
  CHECK(count_lines(cfg.out / "results.jsonl") == 90);
  CHECK(r["runs"] == 90);
  CHECK(table.str().find("ffn (global best)") != std::string::npos);
  CHECK(table.str().find("ffn (per-fold best)") != std::string::npos);

  auto no_grid = cfg;
  no_grid.grid.reset();
  CHECK_THROWS_AS(cmd_tune(no_grid, cfg.out, opts, sink), ConfigError);
}

TEST_CASE("train: identical config and seed gives byte-identical results") {
  const auto file = medium("determinism", {{"model", {{"family", "swnu"}, {"unit", {{"hidden_dim", 4}, {"output_channels", 4}, {"depth", 2}}}}},
                                           {"train", {{"max_epochs", 2}, {"seeds", {5}}}}});
  const auto cfg = ExperimentConfig::load(file);
  std::ostringstream sink;
  cmd_prepare(cfg, cfg.out, {}, sink);
  cmd_train(cfg, cfg.out, {}, sink);
  const auto a = without_timestamp(json::parse(slurp(cfg.out / "results.json"))).dump(2);
  const auto a_lines = slurp(cfg.out / "results.jsonl");
  const auto a_ckpt = slurp(cfg.out / "best" / "model.sgem");
  RunOptions opts;
  opts.jobs = 4;
  cmd_train(cfg, cfg.out, opts, sink);
  CHECK(without_timestamp(json::parse(slurp(cfg.out / "results.json"))).dump(2) == a);
  CHECK(slurp(cfg.out / "results.jsonl") == a_lines);
  CHECK(slurp(cfg.out / "best" / "model.sgem") == a_ckpt);

  // seed override reaches the runs
  opts.seeds = std::vector<std::uint64_t>{8, 9};
  const auto r = cmd_train(cfg, cfg.out, opts, sink);
  CHECK(r["runs"] == 10);
}

#ifdef SIGNET_CLI
TEST_CASE("cli: exit codes") {
  const auto file = toy("cli");
  const std::string exe = SIGNET_CLI;
  const auto run = [&](const std::string& args) {
    const int status = std::system((exe + " " + args + " > /dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  CHECK(run("prepare --config " + file.string()) == 0);
  CHECK(run("stats --config " + file.string() + " --format json") == 0);
  CHECK(run("prepare") == 1);
  CHECK(run("prepare --config " + (file.parent_path() / "nope.json").string()) == 2);
  fs::remove(file.parent_path() / "embeddings.sgem");
  CHECK(run("prepare --config " + file.string()) == 2);
  std::ofstream(file.parent_path() / "bad.json") << R"({"data": {}, "model": {"family": "ffn"}})";
  CHECK(run("prepare --config " + (file.parent_path() / "bad.json").string()) == 1);
}
#endif
