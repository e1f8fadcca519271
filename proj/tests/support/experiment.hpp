#pragma once
// On-disk experiment fixtures: metadata CSV, SGEM embeddings, config JSON.

#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <json.hpp>

#include "signet/prep/dataset.hpp"

namespace signet::testing {

inline std::string rfc3339(double t) {
  const auto secs = static_cast<std::time_t>(std::floor(t));
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Writes metadata.csv and embeddings.sgem for `ds` into `dir`.
inline void write_dataset(const std::filesystem::path& dir, const prep::StreamDataset& ds,
                          bool with_labels = true) {
  std::filesystem::create_directories(dir);
  std::ofstream meta(dir / "metadata.csv");
  meta << "stream_id,timestamp,label\n";
  prep::EmbeddingMatrix m;
  m.rows = ds.records.size();
  m.cols = ds.embedding_dim;
  for (const auto& r : ds.records) {
    meta << r.stream_id << "," << (r.timestamp ? rfc3339(*r.timestamp) : std::string()) << ",";
    if (with_labels && r.label) meta << *r.label;
    meta << "\n";
    m.values.insert(m.values.end(), r.embedding.begin(), r.embedding.end());
  }
  prep::write_embeddings(dir / "embeddings.sgem", m);
}

// Config over the files written by write_dataset; callers adjust the rest.
inline nlohmann::json base_config(const std::string& family) {
  return {{"data", {{"metadata", "metadata.csv"}, {"embeddings", "embeddings.sgem"}}},
          {"split", {{"mode", "kfold"}, {"folds", 5}, {"seed", 7}}},
          {"model", {{"family", family}}},
          {"train", {{"max_epochs", 2}, {"batch_size", 32}, {"seeds", {1}}}},
          {"out", "out"}};
}

inline std::filesystem::path write_config(const std::filesystem::path& dir, const nlohmann::json& j,
                                          const std::string& name = "config.json") {
  std::ofstream(dir / name) << j.dump(2);
  return dir / name;
}

// Streams whose label depends only on the recent past: point i is class 1
// when the signed area swept by channels 0 and 1 over points i-9..i is
// positive. The current point alone carries little of that signal.
inline prep::StreamDataset history_task(std::size_t streams, std::size_t length, std::size_t c,
                                        std::uint64_t seed, std::size_t lookback = 10) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  prep::StreamDataset ds;
  ds.embedding_dim = c;
  ds.reduced_dim = c;
  ds.num_classes = 2;
  std::size_t row = 0;
  for (std::size_t s = 0; s < streams; ++s) {
    char name[32];
    std::snprintf(name, sizeof name, "s%03zu", s);
    std::vector<std::vector<double>> pts(length, std::vector<double>(c));
    for (auto& p : pts)
      for (auto& v : p) v = g(rng);
    for (std::size_t i = 0; i < length; ++i) {
      const std::size_t lo = i + 1 >= lookback ? i + 1 - lookback : 0;
      double area = 0.0;
      for (std::size_t j = lo; j < i; ++j) area += pts[j][0] * pts[j + 1][1] - pts[j][1] * pts[j + 1][0];
      prep::StreamRecord r;
      r.stream_id = name;
      r.timestamp = 1609459200.0 + 60.0 * static_cast<double>(i);
      r.label = area > 0.0 ? 1 : 0;
      r.input_row = row++;
      r.embedding = pts[i];
      r.reduced = r.embedding;
      ds.records.push_back(std::move(r));
    }
  }
  return ds;
}

}  // namespace signet::testing
