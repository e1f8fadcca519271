#include "signet/models.hpp"

#include "signet/signature.hpp"

namespace signet::models {

namespace {

// Prepends a zero row to every stream of x [N, m, c].
Tensor with_basepoint(const Tensor& x) {
  return concat({Tensor::zeros({x.dim(0), 1, x.dim(2)}), x}, 1);
}

// Number of real slots per row of a [N, m] mask.
std::vector<std::size_t> real_counts(const Tensor& mask) {
  const std::size_t rows = mask.dim(0), m = mask.dim(1);
  auto v = mask.data();
  std::vector<std::size_t> out(rows, 0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i] += v[i * m + j] != 0.0;
  return out;
}

}  // namespace

Unit::Unit(nn::ParamStore& ps, const std::string& name, std::size_t input_channels,
           const UnitConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg), input_channels_(input_channels) {
  std::vector<std::size_t> widths{input_channels};
  if (cfg.augmentation == Augmentation::cnn)
    widths.insert(widths.end(), cfg.cnn_hidden.begin(), cfg.cnn_hidden.end());
  widths.push_back(cfg.output_channels);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    convs_.emplace_back(ps, name + ".conv" + std::to_string(i), widths[i], widths[i + 1],
                        cfg.kernel, rng);

  const std::size_t s = unit_signature_dim(cfg);
  if (cfg.recurrence == Recurrence::attention) {
    for (std::size_t i = 0; i < cfg.num_layers; ++i)
      blocks_.emplace_back(ps, name + ".attn" + std::to_string(i), s, cfg.num_heads, rng);
    if (cfg.pooling == Pooling::signature)
      pool_proj_ = nn::Linear(ps, name + ".pool_proj", s, cfg.output_channels, rng);
  } else {
    lstm_ = nn::Lstm(ps, name + ".lstm", s, cfg.hidden_dim,
                     cfg.recurrence == Recurrence::bilstm, rng);
  }
}

Tensor Unit::operator()(const Tensor& streams, const Tensor& mask, bool train,
                        std::mt19937_64& rng, bool allow_empty) const {
  if (streams.ndim() != 3 || streams.dim(2) != input_channels_ || mask.ndim() != 2 ||
      mask.dim(0) != streams.dim(0) || mask.dim(1) != streams.dim(1))
    throw ShapeError("unit expects streams [N, w, " + std::to_string(input_channels_) +
                     "] and mask [N, w], got " + signet::to_string(streams.shape()) + " and " +
                     signet::to_string(mask.shape()));
  const std::size_t rows = streams.dim(0), w = streams.dim(1);
  if (w < 2) throw ContractError("unit window must hold at least 2 points");
  const auto counts = real_counts(mask);
  if (!allow_empty) {
    for (std::size_t i = 0; i < rows; ++i)
      if (counts[i] == 0)
        throw DegenerateError("unit stream " + std::to_string(i) + " has no real point");
  }

  Tensor x = streams, m = mask;
  if (cfg_.reverse_path) {
    x = flip(x, 1);
    m = flip(m, 1);
  }
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = convs_[i](x, m);
    if (i + 1 < convs_.size()) x = relu(x);
  }

  const sig::SignatureSpec inner{cfg_.output_channels, cfg_.depth, cfg_.log_signature};
  Tensor seq = nn::apply_mask(sig::expanding_signatures(with_basepoint(x), inner), m);

  if (cfg_.recurrence != Recurrence::attention) {
    auto out = lstm_(seq, m);
    if (cfg_.pooling == Pooling::last_hidden) return out.final;
    const sig::SignatureSpec pool{lstm_.output_dim(), cfg_.depth, cfg_.log_signature};
    return sig::transform(with_basepoint(nn::fill_masked(out.outputs, m)), pool);
  }

  for (const auto& block : blocks_) seq = block(seq, m, cfg_.dropout, train, rng);
  if (cfg_.pooling == Pooling::last_hidden) return select(nn::fill_masked(seq, m), 1, w - 1);
  return sig::transform(with_basepoint(nn::fill_masked(pool_proj_(seq), m)), inner);
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const auto& d = cfg_.data;
  std::size_t rep = 0;
  switch (cfg_.family) {
    case Family::ffn:
      break;
    case Family::ffn_history:
      rep = d.path_channels;
      break;
    case Family::bilstm:
      lstm_ = nn::Lstm(params_, "baseline.lstm", d.path_channels, cfg_.baseline_hidden, true, rng);
      rep = lstm_.output_dim();
      break;
    case Family::swnu:
    case Family::swattn:
      unit_ = Unit(params_, "unit", d.path_channels, cfg_.unit, rng);
      rep = unit_.output_dim();
      break;
    case Family::seq_sig_net:
    case Family::swattn_bilstm:
      unit_ = Unit(params_, "unit", d.path_channels, cfg_.unit, rng);
      lstm_ = nn::Lstm(params_, "aggregator.lstm", unit_.output_dim(), cfg_.aggregator.hidden_dim,
                       true, rng);
      rep = lstm_.output_dim();
      break;
    case Family::swattn_encoder: {
      unit_ = Unit(params_, "unit", d.path_channels, cfg_.unit, rng);
      const auto& a = cfg_.aggregator;
      enc_proj_ = nn::Linear(params_, "aggregator.proj", unit_.output_dim(), a.dim, rng);
      unit_embeddings_ =
          params_.add("aggregator.unit_embeddings", Tensor::normal({cfg_.n, a.dim}, 0.0, 0.02, rng));
      cls_ = nn::ClsToken(params_, "aggregator.cls", a.dim, rng);
      for (std::size_t i = 0; i < a.num_layers; ++i)
        encoder_.emplace_back(params_, "aggregator.layer" + std::to_string(i), a.dim, a.num_heads,
                              a.ff_dim, rng);
      rep = a.dim;
      break;
    }
  }
  const std::size_t cur = d.embedding_dim + (cfg_.head.include_external ? d.input_extra : 0);
  head_ = nn::FfnHead(params_, "head", rep + cur, cfg_.head.hidden, d.num_classes, rng);
}

Tensor Model::stream_representation(const Tensor& points, const Tensor& mask, bool train,
                                    std::mt19937_64& rng) const {
  switch (cfg_.family) {
    case Family::ffn:
      return {};
    case Family::ffn_history: {
      const auto counts = real_counts(mask);
      std::vector<double> inv(counts.size());
      for (std::size_t i = 0; i < counts.size(); ++i)
        inv[i] = counts[i] ? 1.0 / static_cast<double>(counts[i]) : 0.0;
      return sum(nn::apply_mask(points, mask), 1) * Tensor::from({counts.size(), 1}, inv);
    }
    case Family::bilstm:
      return lstm_(points, mask).final;
    case Family::swnu:
    case Family::swattn:
      return unit_(points, mask, train, rng);
    default:
      break;
  }

  // unit families: every unit stream goes through the shared unit
  const std::size_t b = points.dim(0), n = points.dim(1), w = points.dim(2), c = points.dim(3);
  Tensor flat = unit_(reshape(points, {b * n, w, c}), reshape(mask, {b * n, w}), train, rng, true);
  Tensor units = reshape(flat, {b, n, flat.dim(1)});
  const auto counts = real_counts(reshape(mask, {b * n, w}));
  std::vector<double> um(b * n);
  for (std::size_t i = 0; i < um.size(); ++i) um[i] = counts[i] ? 1.0 : 0.0;
  Tensor unit_mask = Tensor::from({b, n}, um);
  const auto& a = cfg_.aggregator;
  units = nn::dropout(units, a.dropout, train, rng);

  if (cfg_.family != Family::swattn_encoder) return lstm_(units, unit_mask).final;

  Tensor z = nn::apply_mask(enc_proj_(units) + unit_embeddings_, unit_mask);
  z = cls_.prepend(z);
  Tensor zm = nn::ClsToken::prepend_mask(unit_mask);
  for (const auto& layer : encoder_) z = layer(z, zm, a.dropout, train, rng);
  return select(z, 1, 0);
}

Tensor Model::forward(const Tensor& points, const Tensor& mask, const Tensor& current, bool train,
                      std::mt19937_64& rng) const {
  const auto& d = cfg_.data;
  const bool units = unit_mode(cfg_.family);
  const std::size_t rank = units ? 4 : 3;
  if (points.ndim() != rank || mask.ndim() != rank - 1 || points.dim(-1) != d.path_channels)
    throw ShapeError(to_string(cfg_.family) + " expects points of rank " + std::to_string(rank) +
                     " with " + std::to_string(d.path_channels) + " channels, got " +
                     signet::to_string(points.shape()));
  // longer (padded) windows are fine; the encoder's unit positions fix n
  if (points.dim(-2) < 2 || (cfg_.family == Family::swattn_encoder && points.dim(1) != cfg_.n))
    throw ShapeError("history " + signet::to_string(points.shape()) + " does not fit w=" +
                     std::to_string(cfg_.w) + (units ? ", n=" + std::to_string(cfg_.n) : ""));
  if (mask.shape() != Shape(points.shape().begin(), points.shape().end() - 1))
    throw ShapeError("mask " + signet::to_string(mask.shape()) + " does not match history " +
                     signet::to_string(points.shape()));
  if (current.ndim() != 2 || current.dim(0) != points.dim(0) ||
      current.dim(1) != d.embedding_dim + d.input_extra)
    throw ShapeError("current input must be [" + std::to_string(points.dim(0)) + ", " +
                     std::to_string(d.embedding_dim + d.input_extra) + "], got " +
                     signet::to_string(current.shape()));

  Tensor cur = cfg_.head.include_external ? current : slice(current, 1, 0, d.embedding_dim);
  Tensor rep = stream_representation(points, mask, train, rng);
  Tensor x = rep.defined() ? concat({rep, cur}, 1) : cur;
  return head_(x, cfg_.head.dropout, train, rng);
}

Tensor Model::forward(const prep::HistoryBatch& batch, bool train, std::mt19937_64& rng) const {
  return forward(batch.points, batch.mask, batch.current, train, rng);
}

Tensor Model::predict_logits(const prep::HistoryBatch& batch) const {
  NoGradGuard guard;
  std::mt19937_64 rng(0);
  return forward(batch, false, rng);
}

}  // namespace signet::models
