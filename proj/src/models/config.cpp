#include "signet/models.hpp"
#include "signet/signature.hpp"

namespace signet::models {

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const E (&all)[N], const char* what) {
  for (auto e : all) {
    if (to_string(e) == s) return e;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

constexpr Family kFamilies[] = {Family::ffn,    Family::ffn_history,  Family::bilstm,
                                Family::swnu,   Family::swattn,       Family::seq_sig_net,
                                Family::swattn_bilstm, Family::swattn_encoder};
constexpr Pooling kPoolings[] = {Pooling::signature, Pooling::last_hidden};
constexpr Recurrence kRecurrences[] = {Recurrence::lstm, Recurrence::bilstm, Recurrence::attention};
constexpr Augmentation kAugmentations[] = {Augmentation::conv1d, Augmentation::cnn};

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

void check_rate(double r, const char* what) {
  require(r >= 0.0 && r < 1.0, std::string(what) + " dropout must lie in [0, 1)");
}

}  // namespace

std::string to_string(Family f) {
  switch (f) {
    case Family::ffn: return "ffn";
    case Family::ffn_history: return "ffn_history";
    case Family::bilstm: return "bilstm";
    case Family::swnu: return "swnu";
    case Family::swattn: return "swattn";
    case Family::seq_sig_net: return "seq_sig_net";
    case Family::swattn_bilstm: return "swattn_bilstm";
    case Family::swattn_encoder: return "swattn_encoder";
  }
  return "?";
}

std::string to_string(Pooling p) { return p == Pooling::signature ? "signature" : "last_hidden"; }

std::string to_string(Recurrence r) {
  switch (r) {
    case Recurrence::lstm: return "lstm";
    case Recurrence::bilstm: return "bilstm";
    case Recurrence::attention: return "attention";
  }
  return "?";
}

std::string to_string(Augmentation a) { return a == Augmentation::conv1d ? "conv1d" : "cnn"; }

Family parse_family(const std::string& s) { return parse_enum(s, kFamilies, "model family"); }
Pooling parse_pooling(const std::string& s) { return parse_enum(s, kPoolings, "pooling"); }
Recurrence parse_recurrence(const std::string& s) {
  return parse_enum(s, kRecurrences, "recurrence");
}
Augmentation parse_augmentation(const std::string& s) {
  return parse_enum(s, kAugmentations, "augmentation");
}

bool uses_units(Family f) {
  return f == Family::swnu || f == Family::swattn || unit_mode(f);
}

bool unit_mode(Family f) {
  return f == Family::seq_sig_net || f == Family::swattn_bilstm || f == Family::swattn_encoder;
}

prep::PathSource path_source(Family f) {
  return uses_units(f) ? prep::PathSource::reduced : prep::PathSource::embedding;
}

std::size_t unit_signature_dim(const UnitConfig& u) {
  return sig::SignatureSpec{u.output_channels, u.depth, u.log_signature}.out_channels();
}

std::size_t unit_output_dim(const UnitConfig& u) {
  // attention keeps the stream width S either way; signature pooling
  // projects back to output_channels first, so the width matches again
  if (u.recurrence == Recurrence::attention) return unit_signature_dim(u);
  const std::size_t h = u.hidden_dim * (u.recurrence == Recurrence::bilstm ? 2 : 1);
  if (u.pooling == Pooling::last_hidden) return h;
  return sig::SignatureSpec{h, u.depth, u.log_signature}.out_channels();
}

void ModelConfig::validate() const {
  require(data.path_channels > 0 && data.embedding_dim > 0, "model needs positive data widths");
  require(data.num_classes >= 2, "model needs at least two classes");
  require(w >= 2, "window size w must be at least 2");
  require(!head.hidden.empty(), "the head needs at least one hidden layer");
  for (auto h : head.hidden) require(h > 0, "head hidden sizes must be positive");
  check_rate(head.dropout, "head");

  if (family == Family::bilstm) require(baseline_hidden > 0, "bilstm hidden size must be positive");

  if (!uses_units(family)) return;
  require(unit.output_channels > 0, "unit output_channels must be positive");
  require(unit.depth >= 1, "signature depth must be at least 1");
  require(unit.kernel % 2 == 1, "conv1d kernel must be odd");
  check_rate(unit.dropout, "unit");
  for (auto h : unit.cnn_hidden) require(h > 0, "cnn hidden sizes must be positive");
  const bool attention_family =
      family == Family::swattn || family == Family::swattn_bilstm || family == Family::swattn_encoder;
  if (attention_family) {
    require(unit.recurrence == Recurrence::attention,
            to_string(family) + " needs recurrence 'attention', got '" + to_string(unit.recurrence) + "'");
    require(unit.num_layers >= 1, "attention units need num_layers >= 1");
    nn::check_heads(unit_signature_dim(unit), unit.num_heads);
  } else {
    require(unit.recurrence != Recurrence::attention,
            to_string(family) + " needs recurrence 'lstm' or 'bilstm'");
    require(unit.hidden_dim > 0, "unit hidden_dim must be positive");
    if (unit.pooling == Pooling::signature) {
      require(unit.output_channels == unit.hidden_dim,
              "signature pooling needs conv output_channels (" + std::to_string(unit.output_channels) +
                  ") equal to the LSTM hidden_dim (" + std::to_string(unit.hidden_dim) + ")");
    }
  }
  if (unit_mode(family)) {
    require(k >= 1 && k <= w, "unit shift k must satisfy 1 <= k <= w");
    require(n >= 1, "unit count n must be at least 1");
    check_rate(aggregator.dropout, "aggregator");
    if (family == Family::swattn_encoder) {
      require(aggregator.num_layers >= 1, "encoder needs at least one layer");
      require(aggregator.ff_dim > 0 && aggregator.dim > 0, "encoder sizes must be positive");
      nn::check_heads(aggregator.dim, aggregator.num_heads);
    } else {
      require(aggregator.hidden_dim > 0, "aggregator hidden_dim must be positive");
    }
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"version", kVersion},
          {"family", to_string(family)},
          {"w", w},
          {"k", k},
          {"n", n},
          {"seed", seed},
          {"unit",
           {{"output_channels", unit.output_channels},
            {"depth", unit.depth},
            {"log_signature", unit.log_signature},
            {"pooling", to_string(unit.pooling)},
            {"reverse_path", unit.reverse_path},
            {"recurrence", to_string(unit.recurrence)},
            {"hidden_dim", unit.hidden_dim},
            {"num_heads", unit.num_heads},
            {"num_layers", unit.num_layers},
            {"dropout", unit.dropout},
            {"augmentation", to_string(unit.augmentation)},
            {"cnn_hidden", unit.cnn_hidden},
            {"kernel", unit.kernel}}},
          {"aggregator",
           {{"hidden_dim", aggregator.hidden_dim},
            {"dim", aggregator.dim},
            {"num_layers", aggregator.num_layers},
            {"num_heads", aggregator.num_heads},
            {"ff_dim", aggregator.ff_dim},
            {"dropout", aggregator.dropout}}},
          {"baseline_hidden", baseline_hidden},
          {"head",
           {{"hidden", head.hidden},
            {"dropout", head.dropout},
            {"include_external", head.include_external}}},
          {"data",
           {{"path_channels", data.path_channels},
            {"embedding_dim", data.embedding_dim},
            {"input_extra", data.input_extra},
            {"num_classes", data.num_classes}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    if (j.value("version", kVersion) != kVersion) {
      throw ConfigError("unsupported model config version " + j.at("version").dump());
    }
    c.family = parse_family(j.at("family").get<std::string>());
    c.w = j.value("w", c.w);
    c.k = j.value("k", c.k);
    c.n = j.value("n", c.n);
    c.seed = j.value("seed", c.seed);
    c.baseline_hidden = j.value("baseline_hidden", c.baseline_hidden);
    if (j.contains("unit")) {
      const auto& u = j["unit"];
      c.unit.output_channels = u.value("output_channels", c.unit.output_channels);
      c.unit.depth = u.value("depth", c.unit.depth);
      c.unit.log_signature = u.value("log_signature", c.unit.log_signature);
      c.unit.pooling = parse_pooling(u.value("pooling", to_string(c.unit.pooling)));
      c.unit.reverse_path = u.value("reverse_path", c.unit.reverse_path);
      c.unit.recurrence = parse_recurrence(u.value("recurrence", to_string(c.unit.recurrence)));
      c.unit.hidden_dim = u.value("hidden_dim", c.unit.hidden_dim);
      c.unit.num_heads = u.value("num_heads", c.unit.num_heads);
      c.unit.num_layers = u.value("num_layers", c.unit.num_layers);
      c.unit.dropout = u.value("dropout", c.unit.dropout);
      c.unit.augmentation = parse_augmentation(u.value("augmentation", to_string(c.unit.augmentation)));
      c.unit.cnn_hidden = u.value("cnn_hidden", c.unit.cnn_hidden);
      c.unit.kernel = u.value("kernel", c.unit.kernel);
    }
    if (j.contains("aggregator")) {
      const auto& a = j["aggregator"];
      c.aggregator.hidden_dim = a.value("hidden_dim", c.aggregator.hidden_dim);
      c.aggregator.dim = a.value("dim", c.aggregator.dim);
      c.aggregator.num_layers = a.value("num_layers", c.aggregator.num_layers);
      c.aggregator.num_heads = a.value("num_heads", c.aggregator.num_heads);
      c.aggregator.ff_dim = a.value("ff_dim", c.aggregator.ff_dim);
      c.aggregator.dropout = a.value("dropout", c.aggregator.dropout);
    }
    if (j.contains("head")) {
      const auto& h = j["head"];
      c.head.hidden = h.value("hidden", c.head.hidden);
      c.head.dropout = h.value("dropout", c.head.dropout);
      c.head.include_external = h.value("include_external", c.head.include_external);
    }
    if (j.contains("data")) {
      const auto& d = j["data"];
      c.data.path_channels = d.value("path_channels", c.data.path_channels);
      c.data.embedding_dim = d.value("embedding_dim", c.data.embedding_dim);
      c.data.input_extra = d.value("input_extra", c.data.input_extra);
      c.data.num_classes = d.value("num_classes", c.data.num_classes);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

}  // namespace signet::models
