#include "signet/prep/stats.hpp"

#include <algorithm>
#include <numeric>

namespace signet::prep {

std::optional<Summary> summarize(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  Summary s;
  s.count = values.size();
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.count);
  std::sort(values.begin(), values.end());
  const std::size_t mid = s.count / 2;
  s.median = s.count % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  return s;
}

StatsReport dataset_stats(const StreamDataset& ds, std::span<const std::size_t> event_classes,
                          bool require_labels) {
  StatsReport rep;
  rep.num_records = ds.records.size();
  rep.event_classes.assign(event_classes.begin(), event_classes.end());
  std::sort(rep.event_classes.begin(), rep.event_classes.end());
  rep.label_counts.assign(ds.num_classes, 0);
  for (const auto& r : ds.records) {
    if (!r.label) continue;
    ++rep.num_labelled;
    if (*r.label < rep.label_counts.size()) ++rep.label_counts[*r.label];
  }
  if (rep.num_labelled == 0) {
    if (require_labels) throw ContractError("dataset statistics need labelled records");
    rep.labels_missing = true;
  }
  for (auto c : rep.event_classes) {
    if (!rep.labels_missing && c >= ds.num_classes) {
      throw ContractError("event class " + std::to_string(c) + " outside " +
                          std::to_string(ds.num_classes) + " classes");
    }
  }

  const auto is_event = [&](const StreamRecord& r) {
    return r.label && std::binary_search(rep.event_classes.begin(), rep.event_classes.end(), *r.label);
  };

  const bool timed = ds.has_timestamps();
  rep.time_rows_omitted = !timed;
  std::vector<double> diffs, runs, per_stream;
  const auto streams = ds.streams();
  rep.num_streams = streams.size();
  for (const auto& [b, e] : streams) {
    std::size_t events = 0, run = 0;
    for (std::size_t i = b; i < e; ++i) {
      const auto& rec = ds.records[i];
      if (timed && i > b) diffs.push_back(*rec.timestamp - *ds.records[i - 1].timestamp);
      if (is_event(rec)) {
        ++events;
        ++run;
      } else if (run > 0) {
        runs.push_back(static_cast<double>(run));
        run = 0;
      }
    }
    if (run > 0) runs.push_back(static_cast<double>(run));
    per_stream.push_back(static_cast<double>(events));
  }
  if (timed) rep.time_diff = summarize(std::move(diffs));
  if (rep.labels_missing) return rep;
  rep.consecutive_events = summarize(std::move(runs));
  rep.events_per_stream = summarize(std::move(per_stream));
  return rep;
}

namespace {

nlohmann::json summary_json(const std::optional<Summary>& s) {
  if (!s) return nullptr;
  return {{"count", s->count}, {"mean", s->mean}, {"median", s->median}};
}

}  // namespace

nlohmann::json StatsReport::to_json() const {
  return {{"num_streams", num_streams},
          {"num_records", num_records},
          {"num_labelled", num_labelled},
          {"label_counts", label_counts},
          {"event_classes", event_classes},
          {"time_diff_seconds", summary_json(time_diff)},
          {"consecutive_events", summary_json(consecutive_events)},
          {"events_per_stream", summary_json(events_per_stream)},
          {"time_rows_omitted", time_rows_omitted},
          {"labels_missing", labels_missing}};
}

}  // namespace signet::prep
