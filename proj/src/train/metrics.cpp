#include <algorithm>
#include <fmt/format.h>

#include "signet/train.hpp"

namespace signet::train {

Metrics evaluate(const std::vector<std::int64_t>& truth, const std::vector<std::int64_t>& predicted,
                 std::size_t num_classes) {
  if (truth.size() != predicted.size())
    throw ShapeError("evaluate: " + std::to_string(truth.size()) + " labels but " +
                     std::to_string(predicted.size()) + " predictions");
  const std::size_t K = num_classes;
  Metrics m;
  m.confusion.assign(K, std::vector<std::size_t>(K, 0));
  std::size_t seen = 0, correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0) continue;  // unlabelled
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (t >= K || predicted[i] < 0 || p >= K)
      throw IndexError("evaluate: class outside [0, " + std::to_string(K) + ")");
    ++m.confusion[t][p];
    ++seen;
    correct += t == p;
  }
  m.precision.assign(K, 0.0);
  m.recall.assign(K, 0.0);
  m.f1.assign(K, 0.0);
  m.support.assign(K, 0);
  double total = 0.0;
  for (std::size_t c = 0; c < K; ++c) {
    std::size_t tp = m.confusion[c][c], col = 0;
    for (std::size_t r = 0; r < K; ++r) {
      m.support[c] += m.confusion[c][r];
      col += m.confusion[r][c];
    }
    m.precision[c] = col ? double(tp) / double(col) : 0.0;
    m.recall[c] = m.support[c] ? double(tp) / double(m.support[c]) : 0.0;
    const double pr = m.precision[c] + m.recall[c];
    m.f1[c] = pr > 0.0 ? 2.0 * m.precision[c] * m.recall[c] / pr : 0.0;
    total += m.f1[c];
  }
  m.macro_f1 = K ? total / double(K) : 0.0;
  m.accuracy = seen ? double(correct) / double(seen) : 0.0;
  return m;
}

std::vector<std::int64_t> predict(const models::Model& model, const prep::HistoryBatch& batch,
                                  std::size_t batch_size) {
  std::vector<std::int64_t> out;
  out.reserve(batch.size());
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < batch.size(); start += batch_size) {
    rows.clear();
    for (std::size_t i = start; i < std::min(batch.size(), start + batch_size); ++i) rows.push_back(i);
    const Tensor logits = model.predict_logits(batch.select(rows));
    const std::size_t K = logits.dim(1);
    auto v = logits.data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto first = v.begin() + static_cast<std::ptrdiff_t>(r * K);
      out.push_back(std::max_element(first, first + static_cast<std::ptrdiff_t>(K)) - first);
    }
  }
  return out;
}

Metrics evaluate(const models::Model& model, const prep::HistoryBatch& batch,
                 std::size_t batch_size) {
  return evaluate(batch.labels, predict(model, batch, batch_size), model.config().data.num_classes);
}

nlohmann::json Metrics::to_json() const {
  return {{"precision", precision}, {"recall", recall}, {"f1", f1},
          {"support", support},     {"macro_f1", macro_f1}, {"accuracy", accuracy},
          {"confusion", confusion}};
}

std::string format_table(const std::vector<std::string>& row_names,
                         const std::vector<std::vector<double>>& class_f1,
                         const std::vector<double>& macro,
                         const std::vector<std::string>& class_names) {
  std::vector<std::string> header{"model"};
  header.insert(header.end(), class_names.begin(), class_names.end());
  header.push_back("macro-avg");
  std::vector<std::vector<std::string>> cells{header};
  for (std::size_t r = 0; r < row_names.size(); ++r) {
    std::vector<std::string> row{row_names[r]};
    for (double v : class_f1[r]) row.push_back(fmt::format("{:.4f}", v));
    row.push_back(fmt::format("{:.4f}", macro[r]));
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c) out += "  ";
      out += c == 0 ? fmt::format("{:<{}}", cells[r][c], width[c])
                    : fmt::format("{:>{}}", cells[r][c], width[c]);
    }
    out += '\n';
    if (r == 0) {
      std::size_t len = 0;
      for (auto w : width) len += w;
      out += std::string(len + 2 * (width.size() - 1), '-') + '\n';
    }
  }
  return out;
}

}  // namespace signet::train
