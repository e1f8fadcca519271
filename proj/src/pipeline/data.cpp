#include <algorithm>
#include <chrono>
#include <ctime>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <memory>
#include <openssl/evp.h>
#include <set>

#include "signet/pipeline.hpp"
#include "signet/prep/history.hpp"
#include "pipeline_util.hpp"

namespace signet::pipeline {

namespace fs = std::filesystem;

std::string sha256_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("SHA-256 init failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), std::streamsize(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), std::size_t(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::string hex;
  for (unsigned i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

namespace detail {

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
  if (!out) throw IoError("failed writing " + file.string());
}

nlohmann::json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(file.string() + " is not valid JSON: " + e.what());
  }
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

prep::StreamDataset load_raw(const ExperimentConfig& cfg) {
  auto ds = prep::load_dataset(cfg.metadata, cfg.embeddings, cfg.num_classes);
  ds.external_in_path = cfg.external_in_path;
  ds.external_in_input = cfg.external_in_input;
  return ds;
}

models::DataDims data_dims(const prep::StreamDataset& ds, models::Family family) {
  if (ds.records.empty()) throw ContractError("dataset has no records");
  return {prep::path_features(ds, 0, models::path_source(family)).size(), ds.embedding_dim,
          ds.input_extra_channels(), ds.num_classes};
}

namespace detail {

// Sizes the prepared data will have, known before any fitting.
models::DataDims expected_dims(const ExperimentConfig& cfg, const prep::StreamDataset& raw,
                               models::Family family) {
  std::size_t path_time = 0, input_time = 0;
  for (const auto& t : cfg.time_features) {
    path_time += t.in_path;
    input_time += t.in_input;
  }
  const std::size_t ext = raw.external_names.size();
  const bool reduced = models::path_source(family) == prep::PathSource::reduced &&
                       cfg.reduction != prep::Reduction::none;
  const std::size_t lead = reduced ? cfg.reduced_dims : raw.embedding_dim;
  return {lead + path_time + (cfg.external_in_path ? ext : 0), raw.embedding_dim,
          input_time + (cfg.external_in_input ? ext : 0), raw.num_classes};
}

// Checks every setting against the loaded data before any compute.
void check_against_data(const ExperimentConfig& cfg, const prep::StreamDataset& raw) {
  if (cfg.reduction != prep::Reduction::none &&
      (cfg.reduced_dims == 0 || cfg.reduced_dims >= raw.embedding_dim))
    throw ConfigError("reduction dims must lie in [1, " + std::to_string(raw.embedding_dim) +
                      "), got " + std::to_string(cfg.reduced_dims));
  if (!cfg.time_features.empty() && !raw.has_timestamps()) {
    for (const auto& t : cfg.time_features)
      if (t.kind != prep::TimeFeature::timeline_index)
        throw ContractError("time feature '" + prep::to_string(t.kind) + "' needs timestamps");
  }
  for (auto c : cfg.event_classes)
    if (raw.num_classes > 0 && c >= raw.num_classes)
      throw ConfigError("event class " + std::to_string(c) + " outside " +
                        std::to_string(raw.num_classes) + " classes");
}

}  // namespace detail

prep::StreamDataset prepare_fold(const ExperimentConfig& cfg, const prep::StreamDataset& raw,
                                 const prep::Fold& fold) {
  std::vector<std::size_t> fit(fold.train);
  fit.insert(fit.end(), fold.validation.begin(), fold.validation.end());
  std::sort(fit.begin(), fit.end());
  auto ds = cfg.reduction == prep::Reduction::none
                ? raw
                : prep::reduce_dims(raw, cfg.reduction, cfg.reduced_dims, cfg.reduction_seed, fit);
  if (!cfg.time_features.empty()) ds = prep::derive_time_features(ds, cfg.time_features, fit);
  return ds;
}

prep::HistoryBatch build_history(const prep::StreamDataset& ds, const models::ModelConfig& model) {
  prep::HistoryOptions opts;
  opts.source = models::path_source(model.family);
  return models::unit_mode(model.family) ? prep::build_unit_input(ds, model.w, model.k, model.n, opts)
                                         : prep::build_window_input(ds, model.w, opts);
}

std::size_t history_length(const models::ModelConfig& model) {
  return models::unit_mode(model.family) ? model.k * model.n + (model.w - model.k) : model.w;
}

namespace {

fs::path fold_dir(const fs::path& out, std::size_t i) { return out / fmt::format("fold_{}", i); }

nlohmann::json feature_fits(const prep::StreamDataset& ds) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : ds.time_features)
    arr.push_back({{"kind", prep::to_string(t.kind)},
                   {"standardization", prep::to_string(t.fit.method)},
                   {"mean", t.fit.mean},
                   {"std", t.fit.std},
                   {"sum", t.fit.sum},
                   {"min", t.fit.min},
                   {"max", t.fit.max},
                   {"in_path", t.in_path},
                   {"in_input", t.in_input}});
  return {{"time_features", arr}};
}

nlohmann::json inputs_json(const ExperimentConfig& cfg) {
  return {{"metadata", {{"path", cfg.metadata.string()}, {"sha256", sha256_file(cfg.metadata)}}},
          {"embeddings", {{"path", cfg.embeddings.string()}, {"sha256", sha256_file(cfg.embeddings)}}}};
}

}  // namespace

nlohmann::json prepare(const ExperimentConfig& cfg, const fs::path& out) {
  const auto raw = load_raw(cfg);
  detail::check_against_data(cfg, raw);
  auto model = cfg.model;
  model.data = detail::expected_dims(cfg, raw, model.family);
  if (!cfg.grid) model.validate();  // grids may repair the base point

  const auto plan = prep::make_splits(raw, cfg.split);
  nlohmann::json files = nlohmann::json::object();
  detail::write_text(out / "splits.json", plan.to_json().dump(2) + "\n");
  files["splits.json"] = sha256_file(out / "splits.json");

  nlohmann::json folds = nlohmann::json::array();
  for (std::size_t i = 0; i < plan.folds.size(); ++i) {
    const auto& f = plan.folds[i];
    const auto ds = prepare_fold(cfg, raw, f);
    const auto dir = fold_dir(out, i);
    fs::create_directories(dir);
    nlohmann::json fold_files = nlohmann::json::object();
    if (cfg.reduction != prep::Reduction::none) {
      prep::EmbeddingMatrix m{ds.records.size(), ds.reduced_dim, {}};
      m.values.reserve(m.rows * m.cols);
      for (const auto& r : ds.records) m.values.insert(m.values.end(), r.reduced.begin(), r.reduced.end());
      prep::write_embeddings(dir / "reduced.sgem", m);
      fold_files["reduced.sgem"] = sha256_file(dir / "reduced.sgem");
    }
    detail::write_text(dir / "features.json", feature_fits(ds).dump(2) + "\n");
    fold_files["features.json"] = sha256_file(dir / "features.json");
    folds.push_back({{"train", f.train.size()},
                     {"validation", f.validation.size()},
                     {"test", f.test.size()},
                     {"files", fold_files}});
  }

  std::map<std::string, std::size_t> per_stream;
  std::size_t labelled = 0;
  for (const auto& r : raw.records) {
    ++per_stream[r.stream_id];
    labelled += r.label.has_value();
  }
  nlohmann::json manifest = {
      {"format", "signet-prepared"},
      {"version", 1},
      {"prep", cfg.prep_json()},
      {"prep_hash", train::config_hash(cfg.prep_json())},
      {"inputs", inputs_json(cfg)},
      {"dataset",
       {{"streams", per_stream.size()},
        {"records", raw.records.size()},
        {"labelled", labelled},
        {"num_classes", raw.num_classes},
        {"embedding_dim", raw.embedding_dim},
        {"stream_records", per_stream}}},
      {"history",
       {{"family", models::to_string(model.family)},
        {"mode", models::unit_mode(model.family) ? "unit" : "window"},
        {"w", model.w},
        {"k", model.k},
        {"n", model.n},
        {"length", history_length(model)}}},
      {"splits", {{"mode", prep::to_string(plan.mode)}, {"folds", folds}}},
      {"files", files}};
  auto written = manifest;
  written["timestamp"] = detail::utc_now();
  detail::write_text(out / "manifest.json", written.dump(2) + "\n");
  return manifest;
}

Prepared load_prepared(const ExperimentConfig& cfg, const fs::path& out) {
  if (!fs::exists(out / "manifest.json"))
    throw IoError("no prepared data in " + out.string() + "; run prepare first");
  Prepared p;
  p.manifest = detail::read_json(out / "manifest.json");
  if (p.manifest.value("prep_hash", "") != train::config_hash(cfg.prep_json()) ||
      p.manifest.value("inputs", nlohmann::json()) != inputs_json(cfg))
    throw ContractError("prepared data in " + out.string() +
                        " was made from other inputs or settings; run prepare again");

  const auto raw = load_raw(cfg);
  detail::check_against_data(cfg, raw);
  const auto& files = p.manifest.at("files");
  if (sha256_file(out / "splits.json") != files.at("splits.json"))
    throw ContractError("splits.json does not match the manifest");
  p.plan = prep::SplitPlan::from_json(detail::read_json(out / "splits.json"));
  const auto& folds = p.manifest.at("splits").at("folds");
  if (folds.size() != p.plan.folds.size()) throw ContractError("manifest and split plan disagree");

  for (std::size_t i = 0; i < p.plan.folds.size(); ++i) {
    const auto dir = fold_dir(out, i);
    auto ds = raw;
    if (cfg.reduction != prep::Reduction::none) {
      const auto file = dir / "reduced.sgem";
      if (sha256_file(file) != folds[i].at("files").at("reduced.sgem"))
        throw ContractError(file.string() + " does not match the manifest");
      const auto m = prep::read_embeddings(file);
      if (m.rows != ds.records.size())
        throw ContractError(file.string() + " has " + std::to_string(m.rows) + " rows for " +
                            std::to_string(ds.records.size()) + " records");
      for (std::size_t r = 0; r < m.rows; ++r)
        ds.records[r].reduced.assign(m.values.begin() + std::ptrdiff_t(r * m.cols),
                                     m.values.begin() + std::ptrdiff_t((r + 1) * m.cols));
      ds.reduced_dim = m.cols;
      ds.reduction = prep::to_string(cfg.reduction);
    }
    if (!cfg.time_features.empty()) {
      const auto& f = p.plan.folds[i];
      std::vector<std::size_t> fit(f.train);
      fit.insert(fit.end(), f.validation.begin(), f.validation.end());
      std::sort(fit.begin(), fit.end());
      ds = prep::derive_time_features(ds, cfg.time_features, fit);
    }
    p.folds.push_back(std::move(ds));
  }
  return p;
}

}  // namespace signet::pipeline
