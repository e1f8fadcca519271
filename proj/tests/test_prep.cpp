#include <doctest.h>

#include <cmath>
#include <random>
#include <map>
#include <set>
#include <sstream>

#include "signet/prep/features.hpp"
#include "signet/prep/history.hpp"
#include "signet/prep/splits.hpp"
#include "signet/prep/stats.hpp"
#include "support/datasets.hpp"

using namespace signet;
using namespace signet::prep;
using signet::testing::synthetic_dataset;

namespace {

EmbeddingMatrix iota_embeddings(std::size_t rows, std::size_t cols) {
  EmbeddingMatrix m{rows, cols, {}};
  for (std::size_t i = 0; i < rows * cols; ++i) m.values.push_back(static_cast<double>(i));
  return m;
}

StreamDataset from_csv(const std::string& csv, std::size_t e = 2) {
  std::istringstream in(csv);
  const auto rows = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) - 1;
  return load_dataset(in, iota_embeddings(rows, e));
}

}  // namespace

TEST_CASE("load orders records by stream then time") {
  const auto ds = from_csv(
      "stream_id,timestamp,label\n"
      "b,2021-01-01T00:00:10Z,1\n"
      "a,2021-01-01T00:00:05Z,0\n"
      "b,2021-01-01T00:00:01Z,0\n");
  REQUIRE(ds.records.size() == 3);
  CHECK(ds.records[0].stream_id == "a");
  CHECK(ds.records[1].stream_id == "b");
  CHECK(ds.records[1].input_row == 2);
  CHECK(ds.records[2].input_row == 0);
  CHECK(ds.num_classes == 2);
  CHECK(ds.streams().size() == 2);
  CHECK(ds.records[2].embedding == std::vector<double>{0.0, 1.0});
}

TEST_CASE("equal timestamps keep input order") {
  const auto ds = from_csv(
      "stream_id,timestamp,label\n"
      "a,2021-01-01T00:00:00Z,1\n"
      "a,2021-01-01T00:00:00Z,0\n");
  CHECK(ds.records[0].input_row == 0);
  CHECK(ds.records[1].input_row == 1);
}

TEST_CASE("load errors") {
  std::istringstream meta("stream_id,label\na,0\na,1\nb,0\nb,1\n");
  try {
    load_dataset(meta, iota_embeddings(5, 2));
    FAIL("expected an alignment error");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("5") != std::string::npos);
    CHECK(std::string(e.what()).find("4") != std::string::npos);
  }

  try {
    from_csv("stream_id,timestamp,label\na,2021-01-01T00:00:00Z,0\na,yesterday,1\n");
    FAIL("expected a timestamp error");
  } catch (const LoadError& e) {
    CHECK(e.row() == 2);
  }

  CHECK_THROWS_AS(from_csv("stream_id,position,label\na,1,0\na,1,1\n"), LoadError);
  CHECK_THROWS_AS(from_csv("stream_id,label\na,-1\n"), LoadError);
  CHECK_THROWS_AS(from_csv("stream,label\na,0\n"), LoadError);
}

TEST_CASE("missing timestamps load and fail at time-feature derivation") {
  const auto ds = from_csv("stream_id,label\na,0\na,1\n");
  CHECK_FALSE(ds.has_timestamps());
  const TimeFeatureRequest diff{TimeFeature::time_diff};
  CHECK_THROWS_AS(derive_time_features(ds, std::span(&diff, 1)), ContractError);
  const TimeFeatureRequest idx{TimeFeature::timeline_index};
  CHECK_NOTHROW(derive_time_features(ds, std::span(&idx, 1)));
}

TEST_CASE("rfc3339 parsing") {
  CHECK(parse_rfc3339("1970-01-01T00:00:00Z") == 0.0);
  CHECK(parse_rfc3339("2021-03-04T05:06:07.5+01:00") ==
        doctest::Approx(parse_rfc3339("2021-03-04T04:06:07.5Z")));
  CHECK(parse_rfc3339("2000-01-01 00:00:00Z") == 946684800.0);
  CHECK_THROWS_AS(parse_rfc3339("2021-13-01T00:00:00Z"), LoadError);
}

TEST_CASE("embedding container round trip") {
  EmbeddingMatrix m{2, 3, {0.5, -1.0, 2.0, 3.25, 0.0, -7.5}};
  std::stringstream buf;
  write_embeddings(buf, m);
  CHECK(buf.str().substr(0, 4) == "SGEM");
  CHECK(buf.str().size() == 16 + 6 * 4);
  const auto back = read_embeddings(buf);
  CHECK(back.rows == 2);
  CHECK(back.cols == 3);
  CHECK(back.values == m.values);

  std::stringstream bad("SGEX");
  CHECK_THROWS_AS(read_embeddings(bad), IoError);
}

TEST_CASE("reduce_dims") {
  auto ds = synthetic_dataset({20, 30}, 8);
  const auto same = reduce_dims(ds, Reduction::none, 0);
  CHECK(same.reduced_dim == 8);
  for (const auto& r : same.records) CHECK(r.reduced == r.embedding);

  const auto a = reduce_dims(ds, Reduction::grp, 3, 42);
  const auto b = reduce_dims(ds, Reduction::grp, 3, 42);
  const auto c = reduce_dims(ds, Reduction::grp, 3, 43);
  CHECK(a.records[7].reduced == b.records[7].reduced);
  CHECK(a.records[7].reduced != c.records[7].reduced);
  CHECK(a.reduced_dim == 3);

  CHECK_THROWS_AS(reduce_dims(ds, Reduction::grp, 8), ContractError);
  CHECK_THROWS_AS(reduce_dims(ds, Reduction::ppa_pca, 0), ContractError);
}

TEST_CASE("gaussian projection roughly preserves squared distances") {
  const std::size_t e = 384, d = 15, n = 1000;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  StreamDataset ds;
  ds.embedding_dim = e;
  for (std::size_t i = 0; i < n; ++i) {
    StreamRecord r;
    r.stream_id = "s";
    r.embedding.resize(e);
    double norm = 0.0;
    for (auto& v : r.embedding) {
      v = g(rng);
      norm += v * v;
    }
    for (auto& v : r.embedding) v /= std::sqrt(norm);
    ds.records.push_back(std::move(r));
  }
  const auto red = reduce_dims(ds, Reduction::grp, d, 11);
  double ratio = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double hi = 0.0, lo = 0.0;
      for (std::size_t k = 0; k < e; ++k) {
        const double t = ds.records[i].embedding[k] - ds.records[j].embedding[k];
        hi += t * t;
      }
      for (std::size_t k = 0; k < d; ++k) {
        const double t = red.records[i].reduced[k] - red.records[j].reduced[k];
        lo += t * t;
      }
      ratio += lo / hi;
      ++pairs;
    }
  }
  ratio /= static_cast<double>(pairs);
  CHECK(ratio > 0.75);
  CHECK(ratio < 1.25);
}

TEST_CASE("post-processed PCA gives centred, uncorrelated, ordered components") {
  const auto ds = synthetic_dataset({60, 40}, 10, 3);
  for (auto method : {Reduction::ppa_pca, Reduction::ppa_pca_ppa}) {
    const auto red = reduce_dims(ds, method, 4);
    const std::size_t n = red.records.size();
    std::vector<double> mean(4, 0.0);
    for (const auto& r : red.records)
      for (std::size_t j = 0; j < 4; ++j) mean[j] += r.reduced[j] / static_cast<double>(n);
    for (double m : mean) CHECK(std::abs(m) < 1e-10);
    if (method == Reduction::ppa_pca) {
      double prev = INFINITY;
      for (std::size_t a = 0; a < 4; ++a) {
        for (std::size_t b = 0; b < 4; ++b) {
          double cov = 0.0;
          for (const auto& r : red.records) cov += r.reduced[a] * r.reduced[b];
          cov /= static_cast<double>(n);
          if (a != b) CHECK(std::abs(cov) < 1e-10);
          if (a == b) {
            CHECK(cov <= prev + 1e-12);
            prev = cov;
          }
        }
      }
    }
  }

  // Embeddings confined to a 3-dimensional subspace cannot give 5 components.
  auto flat = synthetic_dataset({50}, 10, 4);
  for (auto& r : flat.records) {
    for (std::size_t j = 3; j < 10; ++j) r.embedding[j] = 0.0;
  }
  CHECK_THROWS_AS(reduce_dims(flat, Reduction::ppa_pca, 5), RankError);
}

TEST_CASE("projection is fitted on the requested rows only") {
  const auto ds = synthetic_dataset({30, 30}, 6, 8);
  std::vector<std::size_t> fit(30);
  for (std::size_t i = 0; i < 30; ++i) fit[i] = i;
  const auto a = reduce_dims(ds, Reduction::ppa_pca, 2, 0, fit);
  auto changed = ds;
  for (std::size_t i = 30; i < 60; ++i)
    for (auto& v : changed.records[i].embedding) v *= 3.0;
  const auto b = reduce_dims(changed, Reduction::ppa_pca, 2, 0, fit);
  for (std::size_t i = 0; i < 30; ++i) {
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(a.records[i].reduced[j] == doctest::Approx(b.records[i].reduced[j]).epsilon(1e-12));
  }
}

TEST_CASE("time features") {
  auto ds = from_csv(
      "stream_id,timestamp,label\n"
      "a,2021-01-01T00:00:00Z,0\n"
      "a,2021-07-02T12:00:00Z,1\n"
      "a,2021-07-02T18:00:00Z,1\n"
      "b,2020-03-01T06:00:00Z,0\n");
  const auto enc = raw_time_feature(ds, TimeFeature::time_encoding);
  CHECK(enc[0] == 2021.0);
  CHECK(enc[1] == doctest::Approx(2021.0 + 182.5 / 365.0));
  CHECK(enc[3] == doctest::Approx(2020.0 + 60.25 / 366.0));

  const auto minute = raw_time_feature(ds, TimeFeature::time_encoding_minute);
  CHECK(minute[0] == 0.0);
  CHECK(minute[1] == doctest::Approx(0.5));
  CHECK(minute[2] == doctest::Approx(0.75));

  const auto diff = raw_time_feature(ds, TimeFeature::time_diff);
  CHECK(diff[0] == 0.0);
  CHECK(diff[2] == 6 * 3600.0);
  CHECK(diff[3] == 0.0);

  const auto idx = raw_time_feature(ds, TimeFeature::timeline_index);
  CHECK(idx == std::vector<double>{1, 2, 3, 1});

  const std::vector<TimeFeatureRequest> req{{TimeFeature::timeline_index, Standardization::minmax}};
  const auto out = derive_time_features(ds, req, std::vector<std::size_t>{0, 1, 2});
  CHECK(out.records[0].time_values[0] == 0.0);
  CHECK(out.records[1].time_values[0] == 0.5);
  CHECK(out.records[2].time_values[0] == 1.0);
  CHECK(out.path_channels() == 3);
}

TEST_CASE("standardization fits, round-trips and rejects degenerate data") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> xs(17);
    for (auto& x : xs) x = u(rng);
    for (auto m : {Standardization::z_score, Standardization::sum_divide, Standardization::minmax}) {
      const auto fit = fit_standardization(m, xs);
      for (double x : xs) CHECK(std::abs(fit.invert(fit.apply(x)) - x) < 1e-12);
    }
    const auto z = fit_standardization(Standardization::z_score, xs);
    double mean = 0.0, var = 0.0;
    for (double x : xs) mean += z.apply(x) / 17.0;
    for (double x : xs) var += (z.apply(x) - mean) * (z.apply(x) - mean) / 17.0;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::abs(var - 1.0) < 1e-12);
  }
  const std::vector<double> flat{2, 2, 2};
  CHECK_THROWS_AS(fit_standardization(Standardization::z_score, flat), DegenerateError);
  CHECK_THROWS_AS(fit_standardization(Standardization::minmax, flat), DegenerateError);
  const std::vector<double> zero_sum{1, -1};
  CHECK_THROWS_AS(fit_standardization(Standardization::sum_divide, zero_sum), DegenerateError);
}

TEST_CASE("unit history covers k*n + w - k points") {
  const auto ds = synthetic_dataset({60}, 3);
  const std::vector<std::size_t> last{59};
  const struct { std::size_t n, expect; } table[] = {{3, 11}, {6, 20}, {11, 35}};
  for (const auto& t : table) {
    const auto hb = build_unit_input(ds, 5, 3, t.n, {.records = last, .memory_budget = 1 << 20});
    const std::set<std::int64_t> distinct(hb.source_index.begin(), hb.source_index.end());
    CHECK(distinct.size() == t.expect);
    CHECK(hb.points.shape() == Shape{1, t.n, 5, 3});
    // The current point closes the last unit.
    CHECK(hb.source_index.back() == 59);
  }
}

TEST_CASE("history slot formula, padding and coverage over random configurations") {
  std::mt19937_64 rng(21);
  const auto ds = synthetic_dataset({1, 4, 9, 25}, 2, 6);
  const auto starts = ds.streams();
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t w = 2 + rng() % 6;
    const std::size_t k = 1 + rng() % w;
    const std::size_t n = 1 + rng() % 5;
    const auto hb = build_unit_input(ds, w, k, n);
    REQUIRE(hb.size() == ds.records.size());
    for (std::size_t b = 0; b < hb.size(); ++b) {
      const std::size_t r = hb.record_index[b];
      std::size_t begin = 0;
      for (const auto& [s, e] : starts)
        if (r >= s && r < e) begin = s;
      const auto pos = static_cast<std::int64_t>(r - begin);
      std::set<std::int64_t> positions;
      std::size_t masked = 0;
      for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t slot = b * n * w + q * w + j;
          const auto p = pos - static_cast<std::int64_t>((n - 1 - q) * k + (w - 1 - j));
          positions.insert(p);
          const double m = hb.mask.data()[slot];
          if (p < 0) {
            CHECK(hb.source_index[slot] == -1);
            CHECK(m == 0.0);
            for (std::size_t c = 0; c < 2; ++c) CHECK(hb.points.data()[slot * 2 + c] == 0.0);
          } else {
            CHECK(hb.source_index[slot] == static_cast<std::int64_t>(begin) + p);
            CHECK(m == 1.0);
            CHECK(hb.points.data()[slot * 2] == ds.records[begin + p].embedding[0]);
          }
        }
      }
      CHECK(positions.size() == k * n + w - k);
      for (auto p : positions)
        if (p < 0) ++masked;
      const auto required = static_cast<std::int64_t>(k * n + w - k);
      CHECK(masked == static_cast<std::size_t>(std::max<std::int64_t>(0, required - (pos + 1))));
    }
  }
}

TEST_CASE("window history equals a single unit and pre-pads") {
  const auto ds = synthetic_dataset({3, 8}, 4);
  const auto win = build_window_input(ds, 5);
  const auto unit = build_unit_input(ds, 5, 2, 1);
  CHECK(win.points.to_vector() == unit.points.to_vector());
  CHECK(win.mask.to_vector() == unit.mask.to_vector());
  CHECK(win.points.shape() == Shape{11, 5, 4});
  // First point of a stream: four pads then the point itself.
  const auto m = win.mask.to_vector();
  CHECK(std::vector<double>(m.begin(), m.begin() + 5) == std::vector<double>{0, 0, 0, 0, 1});
  CHECK(win.current.shape() == Shape{11, 4});
  CHECK(win.labels[0] == 0);
}

TEST_CASE("history channel layout and selection") {
  auto ds = synthetic_dataset({6}, 4);
  ds = reduce_dims(ds, Reduction::grp, 2, 1);
  const std::vector<TimeFeatureRequest> req{
      {TimeFeature::timeline_index, Standardization::none, true, false},
      {TimeFeature::time_diff, Standardization::none, false, true}};
  ds = derive_time_features(ds, req);
  const auto hb = build_window_input(ds, 3);
  CHECK(hb.channels() == 3);
  CHECK(hb.current.dim(1) == 5);
  const auto p = hb.points.to_vector();
  // Last slot of the last sample: reduced embedding then timeline index 6.
  CHECK(p[p.size() - 1] == 6.0);
  CHECK(p[p.size() - 3] == ds.records[5].reduced[0]);
  CHECK(hb.current.to_vector().back() == 60.0);

  const auto full = build_window_input(ds, 3, {.source = PathSource::embedding, .records = {}});
  CHECK(full.channels() == 5);

  const std::vector<std::size_t> pick{4, 1};
  const auto sub = hb.select(pick);
  CHECK(sub.size() == 2);
  CHECK(sub.record_index == std::vector<std::size_t>{4, 1});
  CHECK(sub.source_index.size() == 6);
  CHECK(sub.source_index[2] == 4);
}

TEST_CASE("history errors") {
  auto ds = synthetic_dataset({4}, 2);
  CHECK_THROWS_AS(build_window_input(ds, 1), ContractError);
  CHECK_THROWS_AS(build_unit_input(ds, 3, 4, 2), ContractError);
  CHECK_THROWS_AS(build_unit_input(ds, 3, 1, 2, {.records = {}, .memory_budget = 64}), ResourceError);
  for (auto& r : ds.records) r.classify = false;
  CHECK_THROWS_AS(build_window_input(ds, 3), ContractError);
}

TEST_CASE("k-fold splits keep streams whole") {
  const auto ds = synthetic_dataset(std::vector<std::size_t>(10, 4), 2);
  SplitOptions opts;
  opts.folds = 5;
  opts.seed = 3;
  const auto plan = make_splits(ds, opts);
  REQUIRE(plan.folds.size() == 5);
  std::set<std::size_t> tested;
  for (const auto& f : plan.folds) {
    std::set<std::string> test_streams;
    for (auto r : f.test) test_streams.insert(ds.records[r].stream_id);
    CHECK(test_streams.size() == 2);
    CHECK(f.test.size() == 8);
    CHECK(f.train.size() + f.validation.size() + f.test.size() == 40);
    tested.insert(f.test.begin(), f.test.end());
  }
  CHECK(tested.size() == 40);

  const auto again = make_splits(ds, opts);
  CHECK(again.to_json() == plan.to_json());
  CHECK(SplitPlan::from_json(plan.to_json()).to_json() == plan.to_json());
}

TEST_CASE("splits are stream-disjoint over random datasets") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<std::size_t> lengths(6 + rng() % 10);
    for (auto& l : lengths) l = 1 + rng() % 5;
    const auto ds = synthetic_dataset(lengths, 2, trial);
    SplitOptions opts;
    opts.seed = rng();
    std::vector<std::pair<SplitOptions, SplitPlan>> plans;
    opts.folds = 2 + rng() % 3;
    try {
      plans.emplace_back(opts, make_splits(ds, opts));
    } catch (const ContractError&) {
      // Infeasible only when a stream outgrows a fold.
      const std::size_t cap = (ds.records.size() + opts.folds - 1) / opts.folds;
      bool big = false;
      for (auto l : lengths) big = big || l > cap;
      CHECK(big);
    }
    opts.mode = SplitMode::single;
    plans.emplace_back(opts, make_splits(ds, opts));
    for (const auto& [o, plan] : plans) {
      CHECK(plan.to_json() == make_splits(ds, o).to_json());
      for (const auto& f : plan.folds) {
        std::map<std::string, int> side;
        std::size_t total = 0;
        int s = 0;
        for (const auto* part : {&f.train, &f.validation, &f.test}) {
          for (auto r : *part) {
            const auto [it, fresh] = side.emplace(ds.records[r].stream_id, s);
            CHECK(it->second == s);
            ++total;
          }
          ++s;
        }
        CHECK(total == ds.records.size());
      }
    }
  }
}

TEST_CASE("validation is carved from train and split errors") {
  const auto ds = synthetic_dataset(std::vector<std::size_t>(30, 1), 2);
  SplitOptions opts;
  opts.folds = 3;
  const auto plan = make_splits(ds, opts);
  for (const auto& f : plan.folds) {
    CHECK(f.test.size() == 10);
    CHECK(f.validation.size() == 7);  // round(0.33 * 20)
    CHECK(f.train.size() == 13);
  }

  const auto lopsided = synthetic_dataset({20, 2, 2, 2, 2}, 2);
  CHECK_THROWS_AS(make_splits(lopsided, opts), ContractError);
  opts.folds = 31;
  CHECK_THROWS_AS(make_splits(ds, opts), ContractError);

  SplitOptions pre;
  pre.mode = SplitMode::predefined;
  pre.predefined.push_back({{0, 1}, {}, {99}});
  CHECK_THROWS_AS(make_splits(ds, pre), IndexError);
  pre.predefined = {{{0, 1}, {}, {2}}};
  CHECK_NOTHROW(make_splits(ds, pre));

  SplitOptions bad;
  bad.mode = SplitMode::single;
  bad.train_fraction = 0.9;
  CHECK_THROWS_AS(make_splits(ds, bad), ConfigError);
}

TEST_CASE("dataset statistics") {
  auto ds = synthetic_dataset({5}, 2);
  const std::size_t labels[] = {0, 1, 1, 0, 1};
  for (std::size_t i = 0; i < 5; ++i) ds.records[i].label = labels[i];
  const std::size_t event[] = {1};
  const auto rep = dataset_stats(ds, event);
  REQUIRE(rep.consecutive_events);
  CHECK(rep.consecutive_events->mean == 1.5);
  CHECK(rep.consecutive_events->median == 1.5);
  CHECK(rep.events_per_stream->mean == 3.0);
  CHECK(rep.time_diff->mean == 60.0);
  CHECK(rep.time_diff->median == 60.0);
  CHECK(rep.to_json()["consecutive_events"]["count"] == 2);

  const auto singles = synthetic_dataset({1, 1, 1}, 2);
  const auto srep = dataset_stats(singles, event);
  CHECK_FALSE(srep.time_diff.has_value());
  CHECK(srep.to_json()["time_diff_seconds"].is_null());
  CHECK(srep.events_per_stream->count == 3);

  auto untimed = ds;
  for (auto& r : untimed.records) r.timestamp.reset();
  const auto urep = dataset_stats(untimed, event);
  CHECK(urep.time_rows_omitted);
  CHECK_FALSE(urep.time_diff.has_value());
}
