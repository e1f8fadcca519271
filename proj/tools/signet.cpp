// Command-line front end: prepare, stats, train, tune, eval.
#include <CLI11.hpp>
#include <iostream>

#include "signet/pipeline.hpp"

namespace sp = signet::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Signature models for streams of embeddings"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  std::string format = "table";
  std::string split = "test";
  std::size_t jobs = 1;
  std::vector<std::uint64_t> seeds;
  bool quiet = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config, "experiment config (JSON)")->required();
    sub->add_option("-o,--out", out, "output directory (overrides the config)");
    sub->add_option("--format", format, "table or json")->check(CLI::IsMember({"table", "json"}));
  };
  auto running = [&](CLI::App* sub) {
    sub->add_option("-j,--jobs", jobs, "parallel training runs")->check(CLI::PositiveNumber);
    sub->add_option("--seed-list", seeds, "seeds, overriding train.seeds")->delimiter(',');
    sub->add_flag("-q,--quiet", quiet, "no per-run progress");
  };

  auto* prepare = app.add_subcommand("prepare", "split, reduce and fit features; write a manifest");
  auto* stats = app.add_subcommand("stats", "dataset statistics");
  auto* train = app.add_subcommand("train", "train the configured model over folds and seeds");
  auto* tune = app.add_subcommand("tune", "grid search over the config's grid");
  auto* eval = app.add_subcommand("eval", "score the saved best checkpoint");
  for (auto* s : {prepare, stats, train, tune, eval}) common(s);
  running(train);
  running(tune);
  eval->add_option("--split", split, "test, validation, train or all")
      ->check(CLI::IsMember({"test", "validation", "train", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const auto cfg = sp::ExperimentConfig::load(config);
    const std::filesystem::path dir = out.empty() ? cfg.out : std::filesystem::path(out);
    sp::RunOptions opts;
    opts.jobs = jobs;
    opts.json = format == "json";
    if (!seeds.empty()) opts.seeds = seeds;
    if (!quiet) opts.log = &std::cerr;

    if (*prepare) sp::cmd_prepare(cfg, dir, opts, std::cout);
    else if (*stats) sp::cmd_stats(cfg, dir, opts, std::cout);
    else if (*train) sp::cmd_train(cfg, dir, opts, std::cout);
    else if (*tune) sp::cmd_tune(cfg, dir, opts, std::cout);
    else sp::cmd_eval(cfg, dir, opts, std::cout, split);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return sp::exit_code(e);
  }
  return 0;
}
