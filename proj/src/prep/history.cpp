#include "signet/prep/history.hpp"

#include <algorithm>

namespace signet::prep {

std::vector<double> path_features(const StreamDataset& ds, std::size_t r, PathSource source) {
  const auto& rec = ds.records[r];
  std::vector<double> out = source == PathSource::reduced ? rec.reduced : rec.embedding;
  for (std::size_t f = 0; f < ds.time_features.size(); ++f) {
    if (ds.time_features[f].in_path) out.push_back(rec.time_values[f]);
  }
  if (ds.external_in_path) out.insert(out.end(), rec.external.begin(), rec.external.end());
  return out;
}

std::vector<double> input_features(const StreamDataset& ds, std::size_t r) {
  const auto& rec = ds.records[r];
  std::vector<double> out = rec.embedding;
  for (std::size_t f = 0; f < ds.time_features.size(); ++f) {
    if (ds.time_features[f].in_input) out.push_back(rec.time_values[f]);
  }
  if (ds.external_in_input) out.insert(out.end(), rec.external.begin(), rec.external.end());
  return out;
}

namespace {

HistoryBatch build(const StreamDataset& ds, HistoryMode mode, std::size_t w, std::size_t k,
                   std::size_t n, const HistoryOptions& opts) {
  if (w < 2) throw ContractError("window size must be at least 2, got " + std::to_string(w));
  if (k < 1 || n < 1) throw ContractError("unit shift and count must be positive");
  if (k > w) {
    throw ContractError("unit shift k=" + std::to_string(k) + " exceeds window size w=" +
                        std::to_string(w));
  }

  std::vector<std::size_t> rows = opts.records;
  if (rows.empty()) {
    for (std::size_t i = 0; i < ds.records.size(); ++i)
      if (ds.records[i].classify) rows.push_back(i);
  }
  if (rows.empty()) throw ContractError("no classifiable records to build histories from");
  for (auto r : rows) {
    if (r >= ds.records.size()) throw IndexError("record " + std::to_string(r) + " out of range");
  }

  // Stream start of every record.
  std::vector<std::size_t> start(ds.records.size());
  for (const auto& [b, e] : ds.streams())
    for (std::size_t i = b; i < e; ++i) start[i] = b;

  const std::size_t channels =
      opts.source == PathSource::reduced
          ? ds.path_channels()
          : ds.path_channels() - ds.reduced_dim + ds.embedding_dim;
  const std::size_t slots = n * w;
  const std::size_t bytes = rows.size() * slots * channels * sizeof(double);
  if (channels != 0 && bytes / channels / sizeof(double) / slots != rows.size()) {
    throw ResourceError("history tensor size overflows");
  }
  if (bytes > opts.memory_budget) {
    throw ResourceError("history tensor needs " + std::to_string(bytes) + " bytes, budget is " +
                        std::to_string(opts.memory_budget));
  }

  HistoryBatch hb;
  hb.mode = mode;
  hb.w = w;
  hb.k = k;
  hb.n = n;
  const std::size_t in_width = ds.embedding_dim + ds.input_extra_channels();
  std::vector<double> points(rows.size() * slots * channels, 0.0);
  std::vector<double> mask(rows.size() * slots, 0.0);
  std::vector<double> current(rows.size() * in_width);
  hb.labels.reserve(rows.size());
  hb.record_index = rows;
  hb.source_index.assign(rows.size() * slots, -1);

  for (std::size_t b = 0; b < rows.size(); ++b) {
    const std::size_t r = rows[b];
    const auto& rec = ds.records[r];
    hb.labels.push_back(rec.label ? static_cast<std::int64_t>(*rec.label) : -1);
    const auto cur = input_features(ds, r);
    std::copy(cur.begin(), cur.end(), current.begin() + static_cast<std::ptrdiff_t>(b * in_width));

    const auto pos = static_cast<std::int64_t>(r - start[r]);
    for (std::size_t q = 0; q < n; ++q) {
      const auto last = pos - static_cast<std::int64_t>((n - 1 - q) * k);
      for (std::size_t j = 0; j < w; ++j) {
        const auto p = last - static_cast<std::int64_t>(w - 1 - j);
        if (p < 0) continue;
        const std::size_t src = start[r] + static_cast<std::size_t>(p);
        const std::size_t slot = b * slots + q * w + j;
        const auto feat = path_features(ds, src, opts.source);
        std::copy(feat.begin(), feat.end(),
                  points.begin() + static_cast<std::ptrdiff_t>(slot * channels));
        mask[slot] = 1.0;
        hb.source_index[slot] = static_cast<std::int64_t>(src);
      }
    }
  }

  const std::size_t B = rows.size();
  if (mode == HistoryMode::unit) {
    hb.points = Tensor::from({B, n, w, channels}, std::move(points));
    hb.mask = Tensor::from({B, n, w}, std::move(mask));
  } else {
    hb.points = Tensor::from({B, w, channels}, std::move(points));
    hb.mask = Tensor::from({B, w}, std::move(mask));
  }
  hb.current = Tensor::from({B, in_width}, std::move(current));
  return hb;
}

}  // namespace

HistoryBatch build_window_input(const StreamDataset& ds, std::size_t w, const HistoryOptions& opts) {
  return build(ds, HistoryMode::window, w, 1, 1, opts);
}

HistoryBatch build_unit_input(const StreamDataset& ds, std::size_t w, std::size_t k, std::size_t n,
                              const HistoryOptions& opts) {
  return build(ds, HistoryMode::unit, w, k, n, opts);
}

HistoryBatch HistoryBatch::select(std::span<const std::size_t> rows) const {
  for (auto r : rows) {
    if (r >= size()) throw IndexError("batch row " + std::to_string(r) + " out of range");
  }
  HistoryBatch out;
  out.mode = mode;
  out.w = w;
  out.k = k;
  out.n = n;
  out.points = index_select(points, rows);
  out.mask = index_select(mask, rows);
  out.current = index_select(current, rows);
  const std::size_t slots = slots_per_sample();
  for (auto r : rows) {
    out.labels.push_back(labels[r]);
    out.record_index.push_back(record_index[r]);
    out.source_index.insert(out.source_index.end(),
                            source_index.begin() + static_cast<std::ptrdiff_t>(r * slots),
                            source_index.begin() + static_cast<std::ptrdiff_t>((r + 1) * slots));
  }
  return out;
}

}  // namespace signet::prep
