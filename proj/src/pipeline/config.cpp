#include <fstream>

#include "signet/pipeline.hpp"

namespace signet::pipeline {

namespace fs = std::filesystem;

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

// Every key of `given` must exist in `known`, recursively for objects.
void check_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& where) {
  if (!given.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) throw ConfigError("unknown setting '" + where + "." + key + "'");
    if (value.is_object() && known[key].is_object()) check_keys(value, known[key], where + "." + key);
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

prep::Fold fold_from_json(const nlohmann::json& j) {
  prep::Fold f;
  f.train = j.value("train", f.train);
  f.validation = j.value("validation", f.validation);
  f.test = j.value("test", f.test);
  return f;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  static const char* kTop[] = {"data",  "reduction", "time_features", "split", "model",
                               "train", "grid",      "event_classes", "out"};
  require(j.is_object(), "experiment config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kTop), std::end(kTop), key) == std::end(kTop))
      throw ConfigError("unknown top-level setting '" + key + "'");
  }
  ExperimentConfig c;
  c.source = j;
  try {
    const auto& d = j.at("data");
    check_keys(d, {{"metadata", 0}, {"embeddings", 0}, {"num_classes", 0},
                   {"external_in_path", 0}, {"external_in_input", 0}}, "data");
    c.metadata = resolve(base_dir, d.at("metadata").get<std::string>());
    c.embeddings = resolve(base_dir, d.at("embeddings").get<std::string>());
    c.num_classes = d.value("num_classes", c.num_classes);
    c.external_in_path = d.value("external_in_path", c.external_in_path);
    c.external_in_input = d.value("external_in_input", c.external_in_input);

    if (j.contains("reduction")) {
      const auto& r = j["reduction"];
      check_keys(r, {{"method", 0}, {"dims", 0}, {"seed", 0}}, "reduction");
      c.reduction = prep::parse_reduction(r.value("method", std::string("none")));
      c.reduced_dims = r.value("dims", c.reduced_dims);
      c.reduction_seed = r.value("seed", c.reduction_seed);
    }
    for (const auto& t : j.value("time_features", nlohmann::json::array())) {
      check_keys(t, {{"kind", 0}, {"standardization", 0}, {"in_path", 0}, {"in_input", 0}},
                 "time_features[]");
      prep::TimeFeatureRequest req{prep::parse_time_feature(t.at("kind").get<std::string>())};
      req.standardization = prep::parse_standardization(t.value("standardization", std::string("none")));
      req.in_path = t.value("in_path", req.in_path);
      req.in_input = t.value("in_input", req.in_input);
      c.time_features.push_back(req);
    }
    if (j.contains("split")) {
      const auto& s = j["split"];
      check_keys(s, {{"mode", 0}, {"folds", 0}, {"seed", 0}, {"train_fraction", 0},
                     {"validation_fraction", 0}, {"test_fraction", 0},
                     {"kfold_validation_fraction", 0}, {"stratify_by_stream", 0}, {"predefined", 0}},
                 "split");
      auto& o = c.split;
      o.mode = prep::parse_split_mode(s.value("mode", std::string("kfold")));
      o.folds = s.value("folds", o.folds);
      o.seed = s.value("seed", o.seed);
      o.train_fraction = s.value("train_fraction", o.train_fraction);
      o.validation_fraction = s.value("validation_fraction", o.validation_fraction);
      o.test_fraction = s.value("test_fraction", o.test_fraction);
      o.kfold_validation_fraction = s.value("kfold_validation_fraction", o.kfold_validation_fraction);
      o.stratify_by_stream = s.value("stratify_by_stream", o.stratify_by_stream);
      for (const auto& f : s.value("predefined", nlohmann::json::array())) o.predefined.push_back(fold_from_json(f));
    }

    auto model = j.at("model");
    require(model.contains("family"), "model.family is required");
    require(!model.contains("data"), "model.data is derived from the dataset; remove it");
    check_keys(model, models::ModelConfig{}.to_json(), "model");
    c.model = models::ModelConfig::from_json(model);

    if (j.contains("train")) {
      check_keys(j["train"], train::TrainSpec{}.to_json(), "train");
      c.train = train::TrainSpec::from_json(j["train"]);
    }
    c.train.validate();
    if (j.contains("grid")) c.grid = train::GridSpec::from_json(j["grid"]);
    c.event_classes = j.value("event_classes", c.event_classes);
    if (j.contains("out")) c.out = resolve(base_dir, j["out"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open config " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, file.parent_path());
}

nlohmann::json ExperimentConfig::prep_json() const {
  nlohmann::json tf = nlohmann::json::array();
  for (const auto& t : time_features)
    tf.push_back({{"kind", prep::to_string(t.kind)},
                  {"standardization", prep::to_string(t.standardization)},
                  {"in_path", t.in_path},
                  {"in_input", t.in_input}});
  nlohmann::json predefined = nlohmann::json::array();
  for (const auto& f : split.predefined)
    predefined.push_back({{"train", f.train}, {"validation", f.validation}, {"test", f.test}});
  return {{"num_classes", num_classes},
          {"external_in_path", external_in_path},
          {"external_in_input", external_in_input},
          {"reduction", {{"method", prep::to_string(reduction)}, {"dims", reduced_dims}, {"seed", reduction_seed}}},
          {"time_features", tf},
          {"split",
           {{"mode", prep::to_string(split.mode)},
            {"folds", split.folds},
            {"seed", split.seed},
            {"fractions", {split.train_fraction, split.validation_fraction, split.test_fraction}},
            {"kfold_validation_fraction", split.kfold_validation_fraction},
            {"stratify_by_stream", split.stratify_by_stream},
            {"predefined", predefined}}}};
}

}  // namespace signet::pipeline
