#pragma once
// Differentiable building blocks shared by the signature models.
//
// Layers register their parameters in a ParamStore under hierarchical names
// and draw initial values from the generator passed at construction, so a
// model's parameters are a pure function of (seed, construction order).
// Streams are [batch, time, channels]; masks are 0/1 tensors [batch, time].

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "signet/tensor.hpp"

namespace signet::nn {

class ParamStore {
 public:
  /// Registers a trainable leaf. Names must be unique.
  Tensor add(const std::string& name, Tensor init);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Copies of every parameter's values, in registration order.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

  /// Writes `file` (SGEM container, version 2: float64 values, one row of
  /// all parameters) and `file` + ".json" (name -> offset, shape).
  void save(const std::filesystem::path& file) const;
  /// Loads values saved by save(); names and shapes must match.
  void load(const std::filesystem::path& file);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

struct Linear {
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out,
         std::mt19937_64& rng);
  /// x [..., in] -> [..., out]
  Tensor operator()(const Tensor& x) const;

  std::size_t in = 0;
  std::size_t out = 0;
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

/// Inverted dropout: survivors scaled by 1/(1-rate) when `train`, identity
/// otherwise.
Tensor dropout(const Tensor& x, double rate, bool train, std::mt19937_64& rng);

/// Normalizes the last axis to zero mean and unit (population) variance.
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const;

  Tensor gamma;
  Tensor beta;
};

/// Multiplies a [b, m, c] stream by a [b, m] mask.
Tensor apply_mask(const Tensor& stream, const Tensor& mask);

/// Replaces every masked row by the closest earlier unmasked row of the same
/// sample, or by zeros when there is none. Leaves trailing padding constant.
Tensor fill_masked(const Tensor& stream, const Tensor& mask);

/// Length-preserving 1-D convolution along time with symmetric zero padding.
/// Masked input rows are treated as zero and masked output rows are zeroed.
struct Conv1d {
  Conv1d() = default;
  Conv1d(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x, const std::optional<Tensor>& mask = std::nullopt) const;

  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 3;
  Tensor weight;  // [kernel * in, out], row j*in + i = tap j, input channel i
  Tensor bias;    // [out]
};

struct LstmOutput {
  Tensor outputs;  // [b, m, hidden * directions]
  Tensor final;    // [b, hidden * directions]
};

/// Single-layer (Bi)LSTM with gate order (input, forget, cell, output).
/// A masked step keeps the state and emits zeros. `final` is the forward
/// state after the last step concatenated with the backward state after
/// the first step.
struct Lstm {
  Lstm() = default;
  Lstm(ParamStore& ps, const std::string& name, std::size_t in, std::size_t hidden,
       bool bidirectional, std::mt19937_64& rng);
  LstmOutput operator()(const Tensor& x, const std::optional<Tensor>& mask = std::nullopt) const;
  std::size_t output_dim() const { return hidden * (bidirectional ? 2 : 1); }

  struct Direction {
    Tensor w_ih;  // [in, 4h]
    Tensor w_hh;  // [h, 4h]
    Tensor bias;  // [4h]
  };
  std::size_t in = 0;
  std::size_t hidden = 0;
  bool bidirectional = false;
  Direction fwd;
  Direction bwd;
};

/// Softmax over the last axis of scores [b, ..., m] restricted to keys with
/// key_mask [b, m] == 1. Rows with no admissible key are all zero.
Tensor masked_softmax(const Tensor& scores, const Tensor& key_mask);

struct MultiHeadAttention {
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& ps, const std::string& name, std::size_t dim,
                     std::size_t heads, std::mt19937_64& rng);
  /// Self-attention over x [b, m, d]; padded keys are excluded.
  Tensor operator()(const Tensor& x, const Tensor& mask) const;
  /// Attention weights [b, heads, m, m] for x.
  Tensor weights(const Tensor& x, const Tensor& mask) const;

  std::size_t dim = 0;
  std::size_t heads = 1;
  Linear q, k, v, o;
};

/// Throws ConfigError naming both numbers when dim % heads != 0.
void check_heads(std::size_t dim, std::size_t heads);

/// Attention, residual add and layer norm, then a position-wise linear map.
struct SwAttnBlock {
  SwAttnBlock() = default;
  SwAttnBlock(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t heads,
              std::mt19937_64& rng);
  Tensor operator()(const Tensor& x, const Tensor& mask, double dropout_rate, bool train,
                    std::mt19937_64& rng) const;

  MultiHeadAttention attn;
  LayerNorm norm;
  Linear proj;
};

/// Post-norm transformer encoder layer: attention and a ReLU feed-forward
/// sublayer, each followed by residual add and layer norm.
struct EncoderLayer {
  EncoderLayer() = default;
  EncoderLayer(ParamStore& ps, const std::string& name, std::size_t dim, std::size_t heads,
               std::size_t ff_dim, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x, const Tensor& mask, double dropout_rate, bool train,
                    std::mt19937_64& rng) const;

  MultiHeadAttention attn;
  LayerNorm norm1;
  Linear ff1, ff2;
  LayerNorm norm2;
};

/// Prepends a learnable token to x [b, m, d] (and a 1 to the mask).
struct ClsToken {
  ClsToken() = default;
  ClsToken(ParamStore& ps, const std::string& name, std::size_t dim, std::mt19937_64& rng);
  Tensor prepend(const Tensor& x) const;
  static Tensor prepend_mask(const Tensor& mask);

  Tensor token;  // [d]
};

/// Feed-forward classifier: (Linear, ReLU, dropout) per hidden size, then a
/// linear map to the classes.
struct FfnHead {
  FfnHead() = default;
  FfnHead(ParamStore& ps, const std::string& name, std::size_t in,
          const std::vector<std::size_t>& hidden, std::size_t classes, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x, double dropout_rate, bool train, std::mt19937_64& rng) const;

  std::vector<Linear> layers;
  Linear out;
};

// ---------------------------------------------------------------------------
// Losses over logits [b, K] and labels in [0, K).

struct FocalLossSpec {
  double gamma = 2.0;
  std::vector<double> alpha;  // one weight per class
  std::size_t num_classes() const { return alpha.size(); }
};

/// alpha_t = sqrt(1 / freq_t).
std::vector<double> alpha_from_frequencies(const std::vector<double>& freqs);
/// Class frequencies of `labels`; classes absent from the labels count as
/// one occurrence so their weight stays finite.
std::vector<double> class_frequencies(const std::vector<std::int64_t>& labels,
                                      std::size_t num_classes);

/// Batch mean of -alpha_y (1 - p_y)^gamma log p_y.
Tensor focal_loss(const Tensor& logits, const std::vector<std::int64_t>& labels,
                  const FocalLossSpec& spec);
/// Batch mean of -log p_y.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels);

}  // namespace signet::nn
