#pragma once
// Signature network family and baselines.
//
// Every model maps a padded history (window [b, w, C] or units
// [b, n, w, C]) plus the current point's input vector [b, e + xi] to class
// logits. The head input is [stream representation | current input].

#include <json.hpp>
#include <random>
#include <string>
#include <vector>

#include "signet/nn.hpp"
#include "signet/prep/history.hpp"

namespace signet::models {

enum class Family {
  ffn,
  ffn_history,
  bilstm,
  swnu,
  swattn,
  seq_sig_net,
  swattn_bilstm,
  swattn_encoder
};
enum class Pooling { signature, last_hidden };
enum class Recurrence { lstm, bilstm, attention };
enum class Augmentation { conv1d, cnn };

std::string to_string(Family f);
std::string to_string(Pooling p);
std::string to_string(Recurrence r);
std::string to_string(Augmentation a);
Family parse_family(const std::string& s);
Pooling parse_pooling(const std::string& s);
Recurrence parse_recurrence(const std::string& s);
Augmentation parse_augmentation(const std::string& s);

/// True for families built on signature units.
bool uses_units(Family f);
/// True for families whose input is n shifted units rather than one window.
bool unit_mode(Family f);
/// Which per-point vector the family reads from the history.
prep::PathSource path_source(Family f);

struct UnitConfig {
  std::size_t output_channels = 10;  // conv-reduced width
  std::size_t depth = 3;
  bool log_signature = true;
  Pooling pooling = Pooling::signature;
  bool reverse_path = false;
  Recurrence recurrence = Recurrence::lstm;
  std::size_t hidden_dim = 10;  // lstm / bilstm
  std::size_t num_heads = 5;    // attention
  std::size_t num_layers = 1;   // attention blocks
  double dropout = 0.1;
  Augmentation augmentation = Augmentation::conv1d;
  std::vector<std::size_t> cnn_hidden;  // intermediate widths for cnn
  std::size_t kernel = 3;
};

struct AggregatorConfig {
  std::size_t hidden_dim = 300;  // BiLSTM aggregator
  std::size_t dim = 64;          // encoder width after projecting unit vectors
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ff_dim = 64;
  double dropout = 0.1;
};

struct HeadConfig {
  std::vector<std::size_t> hidden{32, 32};
  double dropout = 0.1;
  /// Whether the head sees the in-input time/external features.
  bool include_external = true;
};

/// Sizes read from the prepared data.
struct DataDims {
  std::size_t path_channels = 0;  // C of the history points
  std::size_t embedding_dim = 0;  // e
  std::size_t input_extra = 0;    // xi
  std::size_t num_classes = 0;
};

struct ModelConfig {
  static constexpr int kVersion = 1;

  Family family = Family::swnu;
  std::size_t w = 5;
  std::size_t k = 3;
  std::size_t n = 3;
  UnitConfig unit;
  AggregatorConfig aggregator;
  std::size_t baseline_hidden = 300;  // bilstm baseline
  HeadConfig head;
  DataDims data;
  std::uint64_t seed = 1;

  /// Throws ConfigError on any inconsistency, before parameters exist.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Output width of a unit with the given config over C input channels.
std::size_t unit_output_dim(const UnitConfig& u);
/// Width of the expanding-signature stream inside a unit.
std::size_t unit_signature_dim(const UnitConfig& u);

/// Signature window unit (SWNU, or SW-Attn when recurrence == attention).
class Unit {
 public:
  Unit() = default;
  Unit(nn::ParamStore& ps, const std::string& name, std::size_t input_channels,
       const UnitConfig& cfg, std::mt19937_64& rng);

  /// streams [N, w, C], mask [N, w] -> [N, output_dim()]. Rows with no real
  /// point raise DegenerateError unless `allow_empty`, in which case they
  /// produce zeros.
  Tensor operator()(const Tensor& streams, const Tensor& mask, bool train, std::mt19937_64& rng,
                    bool allow_empty = false) const;
  std::size_t output_dim() const { return unit_output_dim(cfg_); }
  const UnitConfig& config() const { return cfg_; }

 private:
  UnitConfig cfg_;
  std::size_t input_channels_ = 0;
  std::vector<nn::Conv1d> convs_;
  nn::Lstm lstm_;
  std::vector<nn::SwAttnBlock> blocks_;
  nn::Linear pool_proj_;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  /// Logits [b, K]. `train` enables dropout, drawn from `rng`. Windows may
  /// be longer than w when the extra slots are padding; only the encoder
  /// family requires exactly n units.
  Tensor forward(const Tensor& points, const Tensor& mask, const Tensor& current, bool train,
                 std::mt19937_64& rng) const;
  Tensor forward(const prep::HistoryBatch& batch, bool train, std::mt19937_64& rng) const;
  /// Inference without dropout or graph recording.
  Tensor predict_logits(const prep::HistoryBatch& batch) const;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  /// Unit applied to every unit stream, for families built on units.
  const Unit& unit() const { return unit_; }

 private:
  Tensor stream_representation(const Tensor& points, const Tensor& mask, bool train,
                               std::mt19937_64& rng) const;

  ModelConfig cfg_;
  nn::ParamStore params_;
  Unit unit_;
  nn::Lstm lstm_;  // bilstm baseline or BiLSTM aggregator
  nn::Linear enc_proj_;
  Tensor unit_embeddings_;
  nn::ClsToken cls_;
  std::vector<nn::EncoderLayer> encoder_;
  nn::FfnHead head_;
};

}  // namespace signet::models
