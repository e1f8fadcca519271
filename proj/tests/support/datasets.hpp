#pragma once

#include <random>
#include <string>
#include <vector>

#include "signet/prep/dataset.hpp"

namespace signet::testing {

// Streams named s000, s001, ... with the given lengths, Gaussian embeddings,
// 60-second spacing from 2021-01-01 and labels cycling through the classes.
inline prep::StreamDataset synthetic_dataset(const std::vector<std::size_t>& lengths,
                                             std::size_t e, std::uint64_t seed = 1,
                                             std::size_t num_classes = 2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  prep::StreamDataset ds;
  ds.embedding_dim = e;
  ds.reduced_dim = e;
  ds.num_classes = num_classes;
  std::size_t row = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    char name[16];
    std::snprintf(name, sizeof name, "s%03zu", s);
    for (std::size_t i = 0; i < lengths[s]; ++i) {
      prep::StreamRecord r;
      r.stream_id = name;
      r.timestamp = 1609459200.0 + 60.0 * static_cast<double>(i);
      r.label = (row + s) % num_classes;
      r.input_row = row++;
      r.embedding.resize(e);
      for (auto& v : r.embedding) v = g(rng);
      r.reduced = r.embedding;
      ds.records.push_back(std::move(r));
    }
  }
  return ds;
}

}  // namespace signet::testing
