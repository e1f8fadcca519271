#include "signet/prep/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace signet::prep {

std::string to_string(TimeFeature f) {
  switch (f) {
    case TimeFeature::time_encoding: return "time_encoding";
    case TimeFeature::time_encoding_minute: return "time_encoding_minute";
    case TimeFeature::time_diff: return "time_diff";
    case TimeFeature::timeline_index: return "timeline_index";
  }
  return "?";
}

std::string to_string(Standardization s) {
  switch (s) {
    case Standardization::none: return "none";
    case Standardization::z_score: return "z_score";
    case Standardization::sum_divide: return "sum_divide";
    case Standardization::minmax: return "minmax";
  }
  return "?";
}

TimeFeature parse_time_feature(const std::string& name) {
  for (auto f : {TimeFeature::time_encoding, TimeFeature::time_encoding_minute,
                 TimeFeature::time_diff, TimeFeature::timeline_index}) {
    if (to_string(f) == name) return f;
  }
  throw ConfigError("unknown time feature '" + name + "'");
}

Standardization parse_standardization(const std::string& name) {
  if (name.empty() || name == "None" || name == "null") return Standardization::none;
  for (auto s : {Standardization::none, Standardization::z_score, Standardization::sum_divide,
                 Standardization::minmax}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown standardization '" + name + "'");
}

double FittedStandardization::apply(double x) const {
  switch (method) {
    case Standardization::none: return x;
    case Standardization::z_score: return (x - mean) / std;
    case Standardization::sum_divide: return x / sum;
    case Standardization::minmax: return (x - min) / (max - min);
  }
  return x;
}

double FittedStandardization::invert(double y) const {
  switch (method) {
    case Standardization::none: return y;
    case Standardization::z_score: return y * std + mean;
    case Standardization::sum_divide: return y * sum;
    case Standardization::minmax: return y * (max - min) + min;
  }
  return y;
}

std::vector<std::pair<std::size_t, std::size_t>> StreamDataset::streams() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= records.size(); ++i) {
    if (i == records.size() || records[i].stream_id != records[begin].stream_id) {
      out.emplace_back(begin, i);
      begin = i;
    }
  }
  return out;
}

bool StreamDataset::has_timestamps() const {
  return !records.empty() &&
         std::all_of(records.begin(), records.end(),
                     [](const StreamRecord& r) { return r.timestamp.has_value(); });
}

std::size_t StreamDataset::in_path_time_count() const {
  return static_cast<std::size_t>(std::count_if(
      time_features.begin(), time_features.end(), [](const auto& f) { return f.in_path; }));
}

std::size_t StreamDataset::in_input_time_count() const {
  return static_cast<std::size_t>(std::count_if(
      time_features.begin(), time_features.end(), [](const auto& f) { return f.in_input; }));
}

std::size_t StreamDataset::path_channels() const {
  return reduced_dim + in_path_time_count() + (external_in_path ? external_names.size() : 0);
}

std::size_t StreamDataset::input_extra_channels() const {
  return in_input_time_count() + (external_in_input ? external_names.size() : 0);
}

// ---------------------------------------------------------------------------

namespace {

int parse_int(const std::string& s, std::size_t pos, std::size_t len, const std::string& text) {
  int v = 0;
  if (pos + len > s.size()) throw LoadError("unparseable timestamp '" + text + "'");
  const auto* first = s.data() + pos;
  const auto [ptr, ec] = std::from_chars(first, first + len, v);
  if (ec != std::errc() || ptr != first + len) {
    throw LoadError("unparseable timestamp '" + text + "'");
  }
  return v;
}

}  // namespace

double parse_rfc3339(const std::string& text) {
  using namespace std::chrono;
  const std::string& s = text;
  auto bad = [&] { return LoadError("unparseable timestamp '" + text + "'"); };
  if (s.size() < 19 || s[4] != '-' || s[7] != '-' || s[13] != ':' || s[16] != ':') throw bad();
  if (s[10] != 'T' && s[10] != 't' && s[10] != ' ') throw bad();
  const int yy = parse_int(s, 0, 4, text);
  const int mo = parse_int(s, 5, 2, text);
  const int dd = parse_int(s, 8, 2, text);
  const int hh = parse_int(s, 11, 2, text);
  const int mi = parse_int(s, 14, 2, text);
  const int ss = parse_int(s, 17, 2, text);
  const year_month_day ymd{year{yy}, month{static_cast<unsigned>(mo)},
                           day{static_cast<unsigned>(dd)}};
  if (!ymd.ok() || hh > 23 || mi > 59 || ss > 60) throw bad();

  std::size_t pos = 19;
  double frac = 0.0;
  if (pos < s.size() && s[pos] == '.') {
    std::size_t end = pos + 1;
    while (end < s.size() && std::isdigit(static_cast<unsigned char>(s[end]))) ++end;
    if (end == pos + 1) throw bad();
    frac = std::stod("0" + s.substr(pos, end - pos));
    pos = end;
  }
  int offset = 0;
  if (pos >= s.size()) throw bad();
  if (s[pos] == 'Z' || s[pos] == 'z') {
    ++pos;
  } else if (s[pos] == '+' || s[pos] == '-') {
    if (pos + 6 != s.size() || s[pos + 3] != ':') throw bad();
    const int oh = parse_int(s, pos + 1, 2, text);
    const int om = parse_int(s, pos + 4, 2, text);
    if (oh > 23 || om > 59) throw bad();
    offset = (s[pos] == '+' ? 1 : -1) * (oh * 3600 + om * 60);
    pos += 6;
  } else {
    throw bad();
  }
  if (pos != s.size()) throw bad();
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<double>(days) * 86400.0 + hh * 3600.0 + mi * 60.0 + ss + frac - offset;
}

std::vector<std::vector<std::string>> read_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  char ch;
  bool first_char = true;
  auto end_field = [&] {
    row.push_back(field);
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(row);
    row.clear();
  };
  while (in.get(ch)) {
    if (first_char) {
      first_char = false;
      // UTF-8 byte order mark.
      if (static_cast<unsigned char>(ch) == 0xEF) {
        char b1, b2;
        if (in.get(b1) && in.get(b2) && static_cast<unsigned char>(b1) == 0xBB &&
            static_cast<unsigned char>(b2) == 0xBF) {
          continue;
        }
        throw LoadError("malformed UTF-8 byte order mark");
      }
    }
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (field_started) throw LoadError("stray quote in CSV field", rows.size());
        quoted = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        break;
      default:
        field.push_back(ch);
        field_started = true;
    }
  }
  if (quoted) throw LoadError("unterminated quoted CSV field", rows.size());
  if (!row.empty() || !field.empty() || field_started) end_row();
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'G', 'E', 'M'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated embedding header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

EmbeddingMatrix read_embeddings(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("embedding file does not start with SGEM magic");
  }
  const auto version = get_u32(in);
  if (version != 1) throw IoError("unsupported embedding format version " + std::to_string(version));
  EmbeddingMatrix m;
  m.rows = get_u32(in);
  m.cols = get_u32(in);
  const std::size_t n = m.rows * m.cols;
  std::vector<unsigned char> raw(n * 4);
  if (n && !in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw IoError("embedding payload truncated: expected " + std::to_string(n) + " values");
  }
  m.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* b = raw.data() + 4 * i;
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                               (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) |
                               (static_cast<std::uint32_t>(b[3]) << 24);
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f)) throw LoadError("non-finite embedding value", i / m.cols + 1);
    m.values[i] = static_cast<double>(f);
  }
  return m;
}

void write_embeddings(std::ostream& out, const EmbeddingMatrix& m) {
  if (m.values.size() != m.rows * m.cols) throw ContractError("embedding matrix size mismatch");
  out.write(kMagic, 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(m.rows));
  put_u32(out, static_cast<std::uint32_t>(m.cols));
  for (double v : m.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw IoError("failed writing embedding payload");
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open embedding file " + file.string());
  return read_embeddings(in);
}

void write_embeddings(const std::filesystem::path& file, const EmbeddingMatrix& m) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot create embedding file " + file.string());
  write_embeddings(out, m);
}

// ---------------------------------------------------------------------------

namespace {

bool parse_bool_cell(const std::string& s, std::size_t row) {
  if (s == "1" || s == "true" || s == "True") return true;
  if (s == "0" || s == "false" || s == "False") return false;
  throw LoadError("classify must be 0/1, got '" + s + "'", row);
}

template <class T>
T parse_number(const std::string& s, const char* what, std::size_t row) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw LoadError(std::string("unparseable ") + what + " '" + s + "'", row);
  }
  return v;
}

}  // namespace

StreamDataset load_dataset(std::istream& metadata, const EmbeddingMatrix& embeddings,
                           std::size_t num_classes) {
  const auto rows = read_csv(metadata);
  if (rows.empty()) throw LoadError("metadata file has no header row");
  const auto& header = rows.front();
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!col.emplace(header[i], i).second) throw LoadError("duplicate column '" + header[i] + "'");
  }
  for (const char* required : {"stream_id", "label"}) {
    if (!col.count(required)) throw LoadError(std::string("missing required column ") + required);
  }
  const std::size_t data_rows = rows.size() - 1;
  if (data_rows != embeddings.rows) {
    throw LoadError("embedding file has " + std::to_string(embeddings.rows) +
                    " rows but metadata has " + std::to_string(data_rows));
  }

  StreamDataset ds;
  ds.embedding_dim = embeddings.cols;
  ds.reduced_dim = embeddings.cols;
  std::vector<std::size_t> external_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].rfind("external_", 0) == 0) {
      external_cols.push_back(i);
      ds.external_names.push_back(header[i].substr(9));
    }
  }
  const auto ts_col = col.count("timestamp") ? std::optional(col["timestamp"]) : std::nullopt;
  const auto pos_col = col.count("position") ? std::optional(col["position"]) : std::nullopt;
  const auto cls_col = col.count("classify") ? std::optional(col["classify"]) : std::nullopt;

  std::size_t max_label = 0;
  bool any_label = false;
  ds.records.reserve(data_rows);
  for (std::size_t r = 0; r < data_rows; ++r) {
    const auto& fields = rows[r + 1];
    const std::size_t row_no = r + 1;
    if (fields.size() != header.size()) {
      throw LoadError("expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()),
                      row_no);
    }
    StreamRecord rec;
    rec.input_row = r;
    rec.stream_id = fields[col["stream_id"]];
    if (rec.stream_id.empty()) throw LoadError("empty stream_id", row_no);
    const auto& label = fields[col["label"]];
    if (!label.empty()) {
      const auto v = parse_number<long long>(label, "label", row_no);
      if (v < 0) throw LoadError("negative label", row_no);
      rec.label = static_cast<std::size_t>(v);
      max_label = std::max(max_label, *rec.label);
      any_label = true;
    }
    if (ts_col) {
      try {
        rec.timestamp = parse_rfc3339(fields[*ts_col]);
      } catch (const LoadError& e) {
        throw LoadError(e.what(), row_no);
      }
    }
    if (pos_col) rec.position = parse_number<long long>(fields[*pos_col], "position", row_no);
    if (cls_col) rec.classify = parse_bool_cell(fields[*cls_col], row_no);
    for (auto c : external_cols) {
      rec.external.push_back(parse_number<double>(fields[c], "external feature", row_no));
      if (!std::isfinite(rec.external.back())) throw LoadError("non-finite external feature", row_no);
    }
    rec.embedding.assign(embeddings.values.begin() + static_cast<std::ptrdiff_t>(r * embeddings.cols),
                         embeddings.values.begin() +
                             static_cast<std::ptrdiff_t>((r + 1) * embeddings.cols));
    rec.reduced = rec.embedding;
    ds.records.push_back(std::move(rec));
  }

  if (num_classes == 0) {
    num_classes = any_label ? max_label + 1 : 0;
  } else if (any_label && max_label >= num_classes) {
    for (const auto& rec : ds.records) {
      if (rec.label && *rec.label >= num_classes) {
        throw LoadError("label " + std::to_string(*rec.label) + " outside [0, " +
                        std::to_string(num_classes) + ")",
                        rec.input_row + 1);
      }
    }
  }
  ds.num_classes = num_classes;

  if (pos_col) {
    std::set<std::pair<std::string, std::int64_t>> seen;
    for (const auto& rec : ds.records) {
      if (!seen.emplace(rec.stream_id, *rec.position).second) {
        throw LoadError("duplicate (stream_id, position) = (" + rec.stream_id + ", " +
                        std::to_string(*rec.position) + ")",
                        rec.input_row + 1);
      }
    }
  }

  std::stable_sort(ds.records.begin(), ds.records.end(),
                   [](const StreamRecord& a, const StreamRecord& b) {
                     if (a.stream_id != b.stream_id) return a.stream_id < b.stream_id;
                     if (a.timestamp && b.timestamp && *a.timestamp != *b.timestamp)
                       return *a.timestamp < *b.timestamp;
                     if (a.position && b.position && *a.position != *b.position)
                       return *a.position < *b.position;
                     return a.input_row < b.input_row;
                   });
  return ds;
}

StreamDataset load_dataset(const std::filesystem::path& metadata,
                           const std::filesystem::path& embeddings, std::size_t num_classes) {
  std::ifstream meta(metadata);
  if (!meta) throw IoError("cannot open metadata file " + metadata.string());
  const auto emb = read_embeddings(embeddings);
  return load_dataset(meta, emb, num_classes);
}

}  // namespace signet::prep
