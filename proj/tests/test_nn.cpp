#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "signet/nn.hpp"
#include "support/gradcheck.hpp"

using namespace signet;
using namespace signet::nn;
using signet::testing::gradcheck;
using signet::testing::gradcheck_leaves;
using signet::testing::random_tensor;
using signet::testing::weighted_sum;

namespace {

Tensor random_mask(std::size_t B, std::size_t m, std::mt19937_64& rng) {
  // Pre-padding: a random number of leading zeros, at least one real row.
  std::vector<double> v(B * m, 1.0);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t pads = rng() % m;
    for (std::size_t t = 0; t < pads; ++t) v[b * m + t] = 0.0;
  }
  return Tensor::from({B, m}, std::move(v));
}

// Reference LSTM step built from generic tensor ops.
LstmOutput reference_lstm(const Lstm& l, const Tensor& x, const Tensor& mask) {
  const std::size_t B = x.dim(0), m = x.dim(1), H = l.hidden;
  auto run = [&](const Lstm::Direction& d, bool reverse) {
    Tensor h = Tensor::zeros({B, H}), c = Tensor::zeros({B, H});
    std::vector<Tensor> outs(m);
    for (std::size_t s = 0; s < m; ++s) {
      const std::size_t t = reverse ? m - 1 - s : s;
      const Tensor z = matmul(select(x, 1, t), d.w_ih) + matmul(h, d.w_hh) + d.bias;
      const Tensor i = sigmoid(slice(z, 1, 0, H)), f = sigmoid(slice(z, 1, H, 2 * H));
      const Tensor g = tanh(slice(z, 1, 2 * H, 3 * H)), o = sigmoid(slice(z, 1, 3 * H, 4 * H));
      const Tensor mt = reshape(select(mask, 1, t), {B, 1});
      const Tensor cn = f * c + i * g;
      const Tensor hn = o * tanh(cn);
      c = mt * cn + (Tensor::ones({B, 1}) - mt) * c;
      h = mt * hn + (Tensor::ones({B, 1}) - mt) * h;
      outs[t] = mt * hn;
    }
    return std::make_pair(stack(outs, 1), h);
  };
  auto [fo, fh] = run(l.fwd, false);
  if (!l.bidirectional) return {fo, fh};
  auto [bo, bh] = run(l.bwd, true);
  return {concat({fo, bo}, 2), concat({fh, bh}, 1)};
}

}  // namespace

TEST_CASE("parameter store and initialization") {
  auto build = [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParamStore ps;
    Linear l(ps, "l", 4, 3, rng);
    Lstm r(ps, "r", 3, 2, true, rng);
    ClsToken cls(ps, "cls", 5, rng);
    return ps;
  };
  const auto a = build(3), b = build(3), c = build(4);
  CHECK(a.snapshot() == b.snapshot());
  CHECK(a.snapshot() != c.snapshot());
  CHECK(a.get("l.bias").to_vector() == std::vector<double>(3, 0.0));
  const auto fb = a.get("r.fwd.bias").to_vector();
  CHECK(fb == std::vector<double>{0, 0, 1, 1, 0, 0, 0, 0});
  for (double w : a.get("l.weight").data()) CHECK(std::abs(w) <= 0.5);
  for (double w : a.get("r.fwd.w_hh").data()) CHECK(std::abs(w) <= 1.0 / std::sqrt(2.0));
  CHECK(a.scalar_count() == 4 * 3 + 3 + 2 * (3 * 8 + 2 * 8 + 8) + 5);

  ParamStore dup;
  dup.add("x", Tensor::zeros({1}));
  CHECK_THROWS_AS(dup.add("x", Tensor::zeros({1})), ContractError);
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(1);
  ParamStore ps;
  Linear l(ps, "l", 3, 2, rng);
  const auto path = std::filesystem::temp_directory_path() / "signet_ckpt_test.sgem";
  ps.save(path);
  const auto before = ps.snapshot();
  for (auto& v : const_cast<Tensor&>(ps.get("l.weight")).mutable_data()) v = 0.0;
  ps.load(path);
  CHECK(ps.snapshot() == before);

  std::mt19937_64 rng2(1);
  ParamStore other;
  Linear l2(other, "l", 3, 3, rng2);
  CHECK_THROWS_AS(other.load(path), ShapeError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(ps.load(path), IoError);
  std::filesystem::remove(path.string() + ".json");
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({4, 50}, rng);
  CHECK(dropout(x, 0.1, false, rng).to_vector() == x.to_vector());
  const auto y = dropout(x, 0.5, true, rng).to_vector();
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) {
      ++zeros;
    } else {
      CHECK(y[i] == doctest::Approx(2.0 * x.data()[i]));
    }
  }
  CHECK(zeros > 60);
  CHECK(zeros < 140);
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ConfigError);
}

TEST_CASE("layer norm") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({5, 7}, rng, -3, 8);
  const auto y = layer_norm(x).to_vector();
  for (std::size_t r = 0; r < 5; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 7; ++j) mu += y[r * 7 + j] / 7.0;
    for (std::size_t j = 0; j < 7; ++j) var += (y[r * 7 + j] - mu) * (y[r * 7 + j] - mu) / 7.0;
    CHECK(std::abs(mu) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-4);  // eps = 1e-5 in the denominator
  }
  const auto exact = layer_norm(x, 0.0).to_vector();
  for (std::size_t r = 0; r < 5; ++r) {
    double var = 0.0;
    for (std::size_t j = 0; j < 7; ++j) var += exact[r * 7 + j] * exact[r * 7 + j] / 7.0;
    CHECK(std::abs(var - 1.0) < 1e-8);
  }
}

TEST_CASE("linear and conv1d shapes and values") {
  std::mt19937_64 rng(4);
  ParamStore ps;
  Linear lin(ps, "lin", 3, 2, rng);
  CHECK(lin(random_tensor({4, 5, 3}, rng)).shape() == Shape{4, 5, 2});
  CHECK_THROWS_AS(lin(random_tensor({4, 2}, rng)), ShapeError);

  Conv1d point(ps, "point", 3, 2, 1, rng);
  const Tensor x = random_tensor({2, 6, 3}, rng);
  const auto a = point(x).to_vector();
  const auto b = (matmul(x, point.weight) + point.bias).to_vector();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));

  CHECK_THROWS_AS(Conv1d(ps, "even", 3, 2, 2, rng), ContractError);

  // Every tap weight 1/(3 * in) on a constant stream gives that constant
  // wherever the kernel fits inside the stream.
  Conv1d avg(ps, "avg", 2, 1, 3, rng);
  for (auto& w : const_cast<Tensor&>(avg.weight).mutable_data()) w = 1.0 / 6.0;
  const auto y = avg(Tensor::full({1, 5, 2}, 4.0)).to_vector();
  for (std::size_t t = 1; t < 4; ++t) CHECK(y[t] == doctest::Approx(4.0));
  CHECK(y[0] == doctest::Approx(4.0 * 4.0 / 6.0));
}

TEST_CASE("conv1d ignores masked rows") {
  std::mt19937_64 rng(5);
  ParamStore ps;
  Conv1d conv(ps, "c", 3, 4, 3, rng);
  const Tensor mask = random_mask(3, 6, rng);
  const Tensor x = random_tensor({3, 6, 3}, rng);
  auto garbage = x.to_vector();
  for (std::size_t r = 0; r < 18; ++r)
    if (mask.data()[r] == 0.0)
      for (std::size_t j = 0; j < 3; ++j) garbage[r * 3 + j] = 1e3 * (j + 1);
  const auto a = conv(x, mask).to_vector();
  const auto b = conv(Tensor::from(x.shape(), garbage), mask).to_vector();
  CHECK(a == b);
  for (std::size_t r = 0; r < 18; ++r)
    if (mask.data()[r] == 0.0)
      for (std::size_t j = 0; j < 4; ++j) CHECK(a[r * 4 + j] == 0.0);
}

TEST_CASE("fill_masked") {
  const Tensor x = Tensor::from({1, 5, 1}, {9, 9, 2, 3, 9});
  const Tensor mask = Tensor::from({1, 5}, {0, 0, 1, 1, 0});
  CHECK(fill_masked(x, mask).to_vector() == std::vector<double>{0, 0, 2, 3, 3});
}

TEST_CASE("lstm") {
  std::mt19937_64 rng(6);
  ParamStore ps;
  Lstm zero(ps, "z", 3, 4, true, rng);
  for (const auto& name : ps.names())
    for (auto& v : const_cast<Tensor&>(ps.get(name)).mutable_data()) v = 0.0;
  const auto out = zero(random_tensor({2, 5, 3}, rng));
  for (double v : out.outputs.data()) CHECK(v == 0.0);
  CHECK(out.outputs.shape() == Shape{2, 5, 8});
  CHECK(out.final.shape() == Shape{2, 8});

  // One step: both directions see the same single input.
  Lstm bi(ps, "bi", 3, 2, true, rng);
  const Tensor one = random_tensor({2, 1, 3}, rng);
  const auto o = bi(one);
  const auto fin = o.final.to_vector();
  const auto seq = o.outputs.to_vector();
  CHECK(fin == seq);

  // Matches a reference built from generic ops, including masked steps.
  for (bool bidir : {false, true}) {
    Lstm l(ps, bidir ? "ref_bi" : "ref_uni", 3, 4, bidir, rng);
    const Tensor x = random_tensor({3, 5, 3}, rng);
    const Tensor mask = random_mask(3, 5, rng);
    const auto got = l(x, mask);
    const auto want = reference_lstm(l, x, mask);
    const auto g1 = got.outputs.to_vector(), w1 = want.outputs.to_vector();
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == doctest::Approx(w1[i]).epsilon(1e-13));
    const auto g2 = got.final.to_vector(), w2 = want.final.to_vector();
    for (std::size_t i = 0; i < g2.size(); ++i) CHECK(g2[i] == doctest::Approx(w2[i]).epsilon(1e-13));
  }
}

TEST_CASE("lstm state skips masked steps") {
  std::mt19937_64 rng(7);
  ParamStore ps;
  Lstm l(ps, "l", 2, 3, true, rng);
  const Tensor real = random_tensor({1, 3, 2}, rng);
  const Tensor padded = concat({random_tensor({1, 2, 2}, rng), real}, 1);
  const Tensor mask = Tensor::from({1, 5}, {0, 0, 1, 1, 1});
  const auto a = l(real);
  const auto b = l(padded, mask);
  const auto fa = a.final.to_vector(), fb = b.final.to_vector();
  for (std::size_t i = 0; i < fa.size(); ++i) CHECK(std::abs(fa[i] - fb[i]) < 1e-14);
  const auto ob = b.outputs.to_vector();
  for (std::size_t i = 0; i < 12; ++i) CHECK(ob[i] == 0.0);
}

TEST_CASE("attention") {
  std::mt19937_64 rng(8);
  ParamStore ps;
  CHECK_NOTHROW(MultiHeadAttention(ps, "a385", 385, 5, rng));
  try {
    MultiHeadAttention(ps, "a385b", 385, 4, rng);
    FAIL("expected a divisibility error");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("385") != std::string::npos);
    CHECK(msg.find("4") != std::string::npos);
  }
  CHECK_NOTHROW(check_heads(650, 10));
  CHECK_NOTHROW(check_heads(385, 7));  // 385 = 5 * 7 * 11
  CHECK_THROWS_AS(check_heads(385, 6), ConfigError);

  MultiHeadAttention mha(ps, "m", 6, 2, rng);
  const Tensor x = random_tensor({3, 5, 6}, rng);
  const Tensor mask = random_mask(3, 5, rng);
  const auto w = mha.weights(x, mask).to_vector();
  for (std::size_t r = 0; r < 3 * 2 * 5; ++r) {
    const std::size_t b = r / 10;
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      if (mask.data()[b * 5 + j] == 0.0) CHECK(w[r * 5 + j] == 0.0);
      s += w[r * 5 + j];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }

  // A single admissible key: every query returns that key's value projection.
  const Tensor single = Tensor::from({1, 3}, {0, 0, 1});
  const Tensor x1 = random_tensor({1, 3, 6}, rng);
  const auto out = mha(x1, single).to_vector();
  const auto vproj = mha.o(mha.v(select(x1, 1, 2))).to_vector();
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 6; ++j) CHECK(out[t * 6 + j] == doctest::Approx(vproj[j]).epsilon(1e-13));

  // Garbage in padded rows never reaches real positions.
  auto g = x.to_vector();
  for (std::size_t r = 0; r < 15; ++r)
    if (mask.data()[r] == 0.0)
      for (std::size_t j = 0; j < 6; ++j) g[r * 6 + j] = 100.0;
  const auto clean = mha(x, mask).to_vector();
  const auto dirty = mha(Tensor::from(x.shape(), g), mask).to_vector();
  for (std::size_t r = 0; r < 15; ++r)
    if (mask.data()[r] != 0.0)
      for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(clean[r * 6 + j] - dirty[r * 6 + j]) < 1e-12);

  // Rows with no admissible key are all zero.
  const auto none = masked_softmax(random_tensor({1, 2, 3}, rng), Tensor::zeros({1, 3})).to_vector();
  for (double v : none) CHECK(v == 0.0);
}

TEST_CASE("encoder layer and cls pooling") {
  std::mt19937_64 rng(9);
  ParamStore ps;
  EncoderLayer enc(ps, "enc", 4, 2, 8, rng);
  // Zero attention output and zero feed-forward reduce the layer to two
  // layer norms, the second of an already normalized input.
  for (auto* l : {&enc.attn.o, &enc.ff2}) {
    for (auto& v : const_cast<Tensor&>(l->weight).mutable_data()) v = 0.0;
  }
  const Tensor x = random_tensor({2, 3, 4}, rng);
  const Tensor ones = Tensor::ones({2, 3});
  const auto y = enc(x, ones, 0.0, false, rng).to_vector();
  const auto want = layer_norm(layer_norm(x)).to_vector();
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(want[i]).epsilon(1e-12));

  ParamStore ps2;
  EncoderLayer e2(ps2, "enc", 4, 2, 8, rng);
  ClsToken cls(ps2, "cls", 4, rng);
  const Tensor units = random_tensor({1, 4, 4}, rng);
  const Tensor m = Tensor::ones({1, 4});
  auto pooled = [&](const Tensor& u) {
    return select(e2(cls.prepend(u), ClsToken::prepend_mask(m), 0.0, false, rng), 1, 0).to_vector();
  };
  const auto base = pooled(units);
  CHECK(base.size() == 4);
  for (std::size_t q = 0; q < 4; ++q) {
    auto v = units.to_vector();
    v[q * 4 + 1] += 0.5;
    const auto moved = pooled(Tensor::from(units.shape(), v));
    double diff = 0.0;
    for (std::size_t j = 0; j < 4; ++j) diff += std::abs(moved[j] - base[j]);
    CHECK(diff > 1e-8);
  }
}

TEST_CASE("gradient checks over 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(100 + seed);
    ParamStore ps;
    Linear lin(ps, "lin", 3, 4, rng);
    Conv1d conv(ps, "conv", 3, 2, 3, rng);
    Lstm lstm(ps, "lstm", 3, 2, true, rng);
    MultiHeadAttention mha(ps, "mha", 4, 2, rng);
    SwAttnBlock block(ps, "block", 4, 2, rng);
    EncoderLayer enc(ps, "enc", 4, 2, 6, rng);
    LayerNorm ln(ps, "ln", 4);
    FfnHead head(ps, "head", 4, {5, 3}, 3, rng);
    ClsToken cls(ps, "cls", 4, rng);

    const Tensor x3 = random_tensor({2, 4, 3}, rng);
    const Tensor x4 = random_tensor({2, 4, 4}, rng);
    const Tensor mask = random_mask(2, 4, rng);
    const std::vector<std::int64_t> labels{0, 2, 1, 2};
    FocalLossSpec spec{2.0, {0.7, 1.3, 2.1}};

    CHECK(gradcheck([&](const auto& in) { return weighted_sum(lin(in[0])); }, {x3}) <= 1e-6);
    CHECK(gradcheck_leaves([&] { return weighted_sum(lin(x3)); }, {lin.weight, lin.bias}) <= 1e-6);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(conv(in[0], mask)); }, {x3}) <= 1e-6);
    CHECK(gradcheck_leaves([&] { return weighted_sum(conv(x3, mask)); }, {conv.weight, conv.bias}) <= 1e-6);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(layer_norm(in[0])); }, {x4}) <= 1e-5);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(ln(in[0])); }, {x4}) <= 1e-5);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(fill_masked(in[0], mask)); }, {x3}) <= 1e-6);

    auto lstm_loss = [&](const Tensor& x) {
      const auto o = lstm(x, mask);
      return weighted_sum(o.outputs, 1) + weighted_sum(o.final, 2);
    };
    CHECK(gradcheck([&](const auto& in) { return lstm_loss(in[0]); }, {x3}) <= 1e-5);
    CHECK(gradcheck_leaves([&] { return lstm_loss(x3); },
                           {lstm.fwd.w_ih, lstm.fwd.w_hh, lstm.fwd.bias, lstm.bwd.w_ih,
                            lstm.bwd.w_hh, lstm.bwd.bias}) <= 1e-5);

    CHECK(gradcheck([&](const auto& in) { return weighted_sum(mha(in[0], mask)); }, {x4}) <= 1e-5);
    CHECK(gradcheck_leaves([&] { return weighted_sum(mha(x4, mask)); },
                           {mha.q.weight, mha.k.weight, mha.v.weight, mha.o.bias}) <= 1e-5);
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(block(in[0], mask, 0.0, false, rng)); },
                    {x4}) <= 1e-5);
    auto enc_loss = [&](const Tensor& x) {
      return weighted_sum(select(enc(cls.prepend(x), ClsToken::prepend_mask(mask), 0.0, false, rng), 1, 0));
    };
    CHECK(gradcheck([&](const auto& in) { return enc_loss(in[0]); }, {x4}) <= 1e-5);
    CHECK(gradcheck_leaves([&] { return enc_loss(x4); },
                           {cls.token, enc.ff1.weight, enc.norm1.gamma, enc.norm2.beta}) <= 1e-5);

    const Tensor logits = random_tensor({4, 3}, rng, -3, 3);
    CHECK(gradcheck([&](const auto& in) { return focal_loss(in[0], labels, spec); }, {logits}) <= 1e-6);
    CHECK(gradcheck([&](const auto& in) { return cross_entropy(in[0], labels); }, {logits}) <= 1e-6);
    const std::vector<std::int64_t> two{1, 0};
    CHECK(gradcheck([&](const auto& in) { return cross_entropy(head(in[0], 0.0, false, rng), two); },
                    {random_tensor({2, 4}, rng)}) <= 1e-6);
  }
}

TEST_CASE("losses") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor logits = random_tensor({6, 4}, rng, -5, 5);
    std::vector<std::int64_t> labels(6);
    for (auto& y : labels) y = static_cast<std::int64_t>(rng() % 4);
    const double ce = cross_entropy(logits, labels).item();
    const double fl = focal_loss(logits, labels, {0.0, {1, 1, 1, 1}}).item();
    CHECK(std::abs(ce - fl) <= 1e-12);
    // Independent value: mean of -log_softmax at the labels.
    const auto lp = log_softmax(logits).to_vector();
    double want = 0.0;
    for (std::size_t b = 0; b < 6; ++b) want -= lp[b * 4 + static_cast<std::size_t>(labels[b])] / 6.0;
    CHECK(std::abs(ce - want) <= 1e-12);
  }

  const Tensor half = Tensor::from({1, 2}, {0.0, 0.0});
  CHECK(focal_loss(half, {0}, {2.0, {1.0, 1.0}}).item() == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
  CHECK(focal_loss(half, {0}, {2.0, {1.0, 1.0}}).item() == doctest::Approx(0.173287).epsilon(1e-6));

  const auto alpha = alpha_from_frequencies({0.8, 0.2});
  CHECK(alpha[0] == doctest::Approx(1.118034).epsilon(1e-6));
  CHECK(alpha[1] == doctest::Approx(2.236068).epsilon(1e-6));
  const auto freq = class_frequencies({0, 0, 0, 0, 1, -1}, 3);
  CHECK(freq[0] == doctest::Approx(0.8));
  CHECK(freq[1] == doctest::Approx(0.2));
  CHECK(freq[2] == doctest::Approx(0.2));

  // Non-negative and decreasing in the true-class logit.
  double prev = INFINITY;
  for (double z = -4.0; z <= 4.0; z += 0.5) {
    const double v = focal_loss(Tensor::from({1, 3}, {z, 0.3, -0.2}), {0}, {2.0, {1, 1, 1}}).item();
    CHECK(v >= 0.0);
    CHECK(v < prev);
    prev = v;
  }

  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({0, 2}), {}), ContractError);
  CHECK_THROWS_AS(cross_entropy(half, {2}), IndexError);
  CHECK_THROWS_AS(focal_loss(half, {0}, {2.0, {1.0}}), ShapeError);
}
