#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "signet/train.hpp"

namespace signet::train {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

Tensor batch_loss(const Tensor& logits, const std::vector<std::int64_t>& labels,
                  const TrainSpec& spec, const nn::FocalLossSpec& focal) {
  return spec.loss == LossKind::focal ? nn::focal_loss(logits, labels, focal)
                                      : nn::cross_entropy(logits, labels);
}

// Generator for one purpose (`stream`) within one epoch of a run.
std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch, std::uint32_t stream) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(epoch), stream};
  return std::mt19937_64(seq);
}

}  // namespace

void TrainSpec::validate() const {
  require(lr >= 0.0 && std::isfinite(lr), "learning rate must be finite and >= 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must lie in [0, 1)");
  require(eps > 0.0, "Adam epsilon must be positive");
  require(weight_decay >= 0.0, "weight decay must be >= 0");
  require(max_epochs >= 1, "max_epochs must be at least 1");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(patience >= 1, "patience must be at least 1");
  require(gamma >= 0.0, "focal gamma must be >= 0");
  require(!seeds.empty(), "at least one seed is needed");
}

nlohmann::json TrainSpec::to_json() const {
  return {{"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"weight_decay", weight_decay},
          {"decoupled_weight_decay", decoupled_weight_decay},
          {"max_epochs", max_epochs},
          {"batch_size", batch_size},
          {"patience", patience},
          {"loss", loss == LossKind::focal ? "focal" : "cross_entropy"},
          {"gamma", gamma},
          {"seeds", seeds}};
}

TrainSpec TrainSpec::from_json(const nlohmann::json& j) {
  TrainSpec s;
  try {
    s.lr = j.value("lr", s.lr);
    s.beta1 = j.value("beta1", s.beta1);
    s.beta2 = j.value("beta2", s.beta2);
    s.eps = j.value("eps", s.eps);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    s.decoupled_weight_decay = j.value("decoupled_weight_decay", s.decoupled_weight_decay);
    s.max_epochs = j.value("max_epochs", s.max_epochs);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.patience = j.value("patience", s.patience);
    const std::string loss = j.value("loss", std::string("focal"));
    if (loss == "focal")
      s.loss = LossKind::focal;
    else if (loss == "cross_entropy")
      s.loss = LossKind::cross_entropy;
    else
      throw ConfigError("unknown loss '" + loss + "'");
    s.gamma = j.value("gamma", s.gamma);
    s.seeds = j.value("seeds", s.seeds);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train spec: ") + e.what());
  }
  return s;
}

Adam::Adam(std::vector<Tensor> params, const TrainSpec& spec)
    : params_(std::move(params)), spec_(spec) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(spec_.beta1, double(t_));
  const double c2 = 1.0 - std::pow(spec_.beta2, double(t_));
  const double lr = spec_.lr, wd = spec_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    auto x = p.mutable_data();
    const bool has = p.has_grad();
    auto g = has ? p.grad() : std::span<const double>{};
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      double gj = has ? g[j] : 0.0;
      if (!spec_.decoupled_weight_decay) gj += wd * x[j];
      m[j] = spec_.beta1 * m[j] + (1.0 - spec_.beta1) * gj;
      v[j] = spec_.beta2 * v[j] + (1.0 - spec_.beta2) * gj * gj;
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + spec_.eps);
      if (spec_.decoupled_weight_decay) x[j] -= lr * wd * x[j];
      x[j] -= lr * update;
    }
  }
}

bool EarlyStopping::update(double score) {
  ++epoch_;
  if (best_epoch_ == 0 || score > best_) {
    best_ = score;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json epochs_j = nlohmann::json::array();
  for (const auto& e : epochs)
    epochs_j.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"val_loss", e.val_loss},
                        {"val_macro_f1", e.val_macro_f1}});
  nlohmann::json j = {{"epochs", epochs_j},       {"best_epoch", best_epoch},
                      {"stopped_epoch", stopped_epoch}, {"seed", seed},
                      {"validation", validation.to_json()}, {"config", config}};
  j["test"] = test ? test->to_json() : nlohmann::json(nullptr);
  if (!checkpoint.empty()) j["checkpoint"] = checkpoint;
  return j;
}

std::vector<std::size_t> rows_for(const prep::HistoryBatch& batch,
                                  const std::vector<std::size_t>& records) {
  const std::unordered_set<std::size_t> wanted(records.begin(), records.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (batch.labels[i] >= 0 && wanted.count(batch.record_index[i])) rows.push_back(i);
  return rows;
}

TrainResult train(const models::ModelConfig& cfg, const prep::HistoryBatch& batch,
                  const prep::Fold& fold, const TrainSpec& spec, std::uint64_t seed) {
  const auto started = std::chrono::steady_clock::now();
  spec.validate();
  models::ModelConfig mc = cfg;
  mc.seed = seed;
  auto model = std::make_unique<models::Model>(mc);
  const std::size_t K = mc.data.num_classes;

  const auto train_rows = rows_for(batch, fold.train);
  const auto val_rows = rows_for(batch, fold.validation);
  const auto test_rows = rows_for(batch, fold.test);
  if (train_rows.empty()) throw ContractError("the training split has no labelled sample");
  if (val_rows.empty()) throw ContractError("the validation split has no labelled sample");
  const auto tr = batch.select(train_rows);
  const auto va = batch.select(val_rows);

  nn::FocalLossSpec focal;
  focal.gamma = spec.gamma;
  focal.alpha = nn::alpha_from_frequencies(nn::class_frequencies(tr.labels, K));

  TrainReport report;
  report.seed = seed;
  report.config = {{"model", mc.to_json()}, {"train", spec.to_json()}};

  auto& params = model->params();
  Adam opt(params.tensors(), spec);
  EarlyStopping stopper(spec.patience);
  auto best = params.snapshot();

  std::vector<std::size_t> order(tr.size());
  std::vector<std::size_t> rows;
  for (std::size_t epoch = 1; epoch <= spec.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = epoch_rng(seed, epoch, 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    auto dropout_rng = epoch_rng(seed, epoch, 1);

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += spec.batch_size) {
      ++batch_index;
      rows.assign(order.begin() + std::ptrdiff_t(start),
                  order.begin() + std::ptrdiff_t(std::min(order.size(), start + spec.batch_size)));
      const auto sub = tr.select(rows);
      params.zero_grad();
      Tensor loss;
      try {
        loss = batch_loss(model->forward(sub, true, dropout_rng), sub.labels, spec, focal);
      } catch (const DomainError&) {
        throw DivergenceError(epoch, batch_index);
      }
      if (!std::isfinite(loss.item())) throw DivergenceError(epoch, batch_index);
      loss.backward();
      opt.step();
      loss_sum += loss.item() * double(rows.size());
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / double(order.size());
    {
      std::vector<std::int64_t> predicted;
      double val_loss = 0.0;
      std::vector<std::size_t> all(va.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      for (std::size_t start = 0; start < va.size(); start += 256) {
        std::vector<std::size_t> r(all.begin() + std::ptrdiff_t(start),
                                   all.begin() + std::ptrdiff_t(std::min(va.size(), start + 256)));
        const auto sub = va.select(r);
        const Tensor logits = model->predict_logits(sub);
        NoGradGuard guard;
        val_loss += batch_loss(logits, sub.labels, spec, focal).item() * double(r.size());
        auto v = logits.data();
        for (std::size_t i = 0; i < r.size(); ++i) {
          auto first = v.begin() + std::ptrdiff_t(i * K);
          predicted.push_back(std::max_element(first, first + std::ptrdiff_t(K)) - first);
        }
      }
      log.val_loss = val_loss / double(va.size());
      log.val_macro_f1 = evaluate(va.labels, predicted, K).macro_f1;
    }
    report.epochs.push_back(log);
    if (stopper.update(log.val_macro_f1)) best = params.snapshot();
    report.stopped_epoch = epoch;
    if (stopper.should_stop()) break;
  }

  params.restore(best);
  report.best_epoch = stopper.best_epoch();
  report.validation = evaluate(*model, va);
  if (!test_rows.empty()) report.test = evaluate(*model, batch.select(test_rows));
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(report), std::move(model)};
}

}  // namespace signet::train
