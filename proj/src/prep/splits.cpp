#include "signet/prep/splits.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace signet::prep {

std::string to_string(SplitMode m) {
  switch (m) {
    case SplitMode::kfold: return "kfold";
    case SplitMode::single: return "single";
    case SplitMode::predefined: return "predefined";
  }
  return "?";
}

SplitMode parse_split_mode(const std::string& name) {
  for (auto m : {SplitMode::kfold, SplitMode::single, SplitMode::predefined}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown split mode '" + name + "'");
}

namespace {

using Group = std::vector<std::size_t>;

// Whole streams when stratifying, single records otherwise.
std::vector<Group> make_groups(const StreamDataset& ds, bool by_stream) {
  std::vector<Group> groups;
  if (by_stream) {
    for (const auto& [b, e] : ds.streams()) {
      Group g(e - b);
      std::iota(g.begin(), g.end(), b);
      groups.push_back(std::move(g));
    }
  } else {
    for (std::size_t i = 0; i < ds.records.size(); ++i) groups.push_back({i});
  }
  return groups;
}

void append(std::vector<std::size_t>& dst, const Group& g) { dst.insert(dst.end(), g.begin(), g.end()); }

void finish(Fold& f) {
  std::sort(f.train.begin(), f.train.end());
  std::sort(f.validation.begin(), f.validation.end());
  std::sort(f.test.begin(), f.test.end());
}

std::size_t target_count(double fraction, std::size_t total) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
}

// Moves whole groups (in the given order) from train into validation until
// the validation share reaches `fraction` of the training records.
void carve_validation(Fold& fold, const std::vector<const Group*>& train_groups, double fraction) {
  std::size_t total = 0;
  for (const auto* g : train_groups) total += g->size();
  const std::size_t target = target_count(fraction, total);
  std::vector<bool> to_val(train_groups.size(), false);
  std::size_t taken = 0;
  for (std::size_t i = 0; i < train_groups.size(); ++i) {
    if (taken + train_groups[i]->size() <= target) {
      to_val[i] = true;
      taken += train_groups[i]->size();
    }
  }
  if (taken == 0 && target > 0 && train_groups.size() > 1) {
    to_val[0] = true;
  }
  for (std::size_t i = 0; i < train_groups.size(); ++i) {
    append(to_val[i] ? fold.validation : fold.train, *train_groups[i]);
  }
}

SplitPlan kfold(const StreamDataset& ds, const SplitOptions& opts, std::vector<Group> groups,
                std::mt19937_64& rng) {
  const std::size_t K = opts.folds;
  if (K < 2) throw ConfigError("k-fold needs at least 2 folds, got " + std::to_string(K));
  if (groups.size() < K) {
    throw ContractError("cannot form " + std::to_string(K) + " folds from " +
                        std::to_string(groups.size()) +
                        (opts.stratify_by_stream ? " streams" : " records"));
  }
  const std::size_t N = ds.records.size();
  const std::size_t cap = (N + K - 1) / K;
  for (const auto& g : groups) {
    if (g.size() > cap) {
      throw ContractError("stream '" + ds.records[g.front()].stream_id + "' has " +
                          std::to_string(g.size()) + " records, more than a fold of " +
                          std::to_string(cap));
    }
  }
  std::shuffle(groups.begin(), groups.end(), rng);

  std::vector<std::size_t> assigned(groups.size());
  std::vector<std::size_t> load(K, 0);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto f = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
    assigned[i] = f;
    load[f] += groups[i].size();
  }

  SplitPlan plan;
  for (std::size_t f = 0; f < K; ++f) {
    Fold fold;
    std::vector<const Group*> train;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (assigned[i] == f) {
        append(fold.test, groups[i]);
      } else {
        train.push_back(&groups[i]);
      }
    }
    carve_validation(fold, train, opts.kfold_validation_fraction);
    finish(fold);
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

SplitPlan single(const StreamDataset& ds, const SplitOptions& opts, std::vector<Group> groups,
                 std::mt19937_64& rng) {
  const double fr[] = {opts.train_fraction, opts.validation_fraction, opts.test_fraction};
  for (double f : fr) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
  }
  if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  std::shuffle(groups.begin(), groups.end(), rng);
  const std::size_t N = ds.records.size();
  const std::size_t test_target = target_count(opts.test_fraction, N);
  const std::size_t val_target = target_count(opts.validation_fraction, N);
  Fold fold;
  for (const auto& g : groups) {
    if (fold.test.size() < test_target) {
      append(fold.test, g);
    } else if (fold.validation.size() < val_target) {
      append(fold.validation, g);
    } else {
      append(fold.train, g);
    }
  }
  finish(fold);
  SplitPlan plan;
  plan.folds.push_back(std::move(fold));
  return plan;
}

SplitPlan predefined(const StreamDataset& ds, const SplitOptions& opts) {
  if (opts.predefined.empty()) throw ConfigError("predefined split without folds");
  const std::size_t N = ds.records.size();
  SplitPlan plan;
  for (auto fold : opts.predefined) {
    std::vector<int> side(N, -1);
    int s = 0;
    for (const auto* part : {&fold.train, &fold.validation, &fold.test}) {
      for (auto r : *part) {
        if (r >= N) {
          throw IndexError("split index " + std::to_string(r) + " out of range for " +
                           std::to_string(N) + " records");
        }
        if (side[r] != -1) throw ContractError("record " + std::to_string(r) + " appears twice in a fold");
        side[r] = s;
      }
      ++s;
    }
    if (opts.stratify_by_stream) {
      for (const auto& [b, e] : ds.streams()) {
        for (std::size_t i = b + 1; i < e; ++i) {
          if (side[i] != side[b]) {
            throw ContractError("stream '" + ds.records[b].stream_id +
                                "' is split across partitions");
          }
        }
      }
    }
    finish(fold);
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

nlohmann::json fold_json(const Fold& f) {
  return {{"train", f.train}, {"validation", f.validation}, {"test", f.test}};
}

}  // namespace

SplitPlan make_splits(const StreamDataset& ds, const SplitOptions& opts) {
  if (ds.records.empty()) throw ContractError("cannot split an empty dataset");
  std::mt19937_64 rng(opts.seed);
  SplitPlan plan;
  switch (opts.mode) {
    case SplitMode::kfold:
      plan = kfold(ds, opts, make_groups(ds, opts.stratify_by_stream), rng);
      break;
    case SplitMode::single:
      plan = single(ds, opts, make_groups(ds, opts.stratify_by_stream), rng);
      break;
    case SplitMode::predefined:
      plan = predefined(ds, opts);
      break;
  }
  plan.mode = opts.mode;
  plan.seed = opts.seed;
  plan.stratify_by_stream = opts.stratify_by_stream;
  plan.num_records = ds.records.size();
  return plan;
}

nlohmann::json SplitPlan::to_json() const {
  nlohmann::json folds_json = nlohmann::json::array();
  for (const auto& f : folds) folds_json.push_back(fold_json(f));
  return {{"mode", to_string(mode)},
          {"seed", seed},
          {"stratify_by_stream", stratify_by_stream},
          {"num_records", num_records},
          {"folds", folds_json}};
}

SplitPlan SplitPlan::from_json(const nlohmann::json& j) {
  try {
    SplitPlan p;
    p.mode = parse_split_mode(j.at("mode").get<std::string>());
    p.seed = j.at("seed").get<std::uint64_t>();
    p.stratify_by_stream = j.at("stratify_by_stream").get<bool>();
    p.num_records = j.at("num_records").get<std::size_t>();
    for (const auto& f : j.at("folds")) {
      Fold fold;
      fold.train = f.at("train").get<std::vector<std::size_t>>();
      fold.validation = f.at("validation").get<std::vector<std::size_t>>();
      fold.test = f.at("test").get<std::vector<std::size_t>>();
      p.folds.push_back(std::move(fold));
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed split plan: ") + e.what());
  }
}

}  // namespace signet::prep
