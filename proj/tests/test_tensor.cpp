#include <doctest.h>

#include <cmath>
#include <random>

#include "signet/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace signet;
using signet::testing::gradcheck;
using signet::testing::random_tensor;
using signet::testing::weighted_sum;

namespace {

void check_values(const Tensor& t, const std::vector<double>& expected) {
  REQUIRE(t.numel() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(t.data()[i] == doctest::Approx(expected[i]));
}

}  // namespace

TEST_CASE("elementwise examples") {
  check_values(add(Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 4})), {4, 6});

  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor y = mul(x, Tensor::ones(x.shape()));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("tanh derivative matches central difference") {
  Tensor x = Tensor::scalar(0.3).set_requires_grad(true);
  tanh(x).backward();
  const double h = 1e-5;
  const double fd = (std::tanh(0.3 + h) - std::tanh(0.3 - h)) / (2 * h);
  CHECK(std::abs(x.grad()[0] - fd) / std::abs(fd) < 1e-8);
}

TEST_CASE("elementwise errors") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4});
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(4)") != std::string::npos);
  }
  CHECK_THROWS_AS(log(Tensor::from({2}, {1.0, -1.0})), DomainError);
  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), DomainError);
  CHECK_THROWS_AS(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), DomainError);
  CHECK_THROWS_AS(pow(Tensor::scalar(-2.0), 0.5), DomainError);
}

TEST_CASE("matmul examples") {
  std::mt19937_64 rng(11);
  const Tensor a = random_tensor({3, 3}, rng);
  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor ia = matmul(eye, a);
  for (std::size_t i = 0; i < 9; ++i) CHECK(ia.data()[i] == a.data()[i]);

  const Tensor p = matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {0, 1}));
  CHECK(p.shape() == Shape{2, 1});
  check_values(p, {2, 4});

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("gradient of sum(A B) with respect to A is the row sums of B broadcast") {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor({2, 3}, rng).set_requires_grad(true);
  const Tensor b = random_tensor({3, 4}, rng);
  sum(matmul(a, b)).backward();
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      double row = 0.0;
      for (std::size_t j = 0; j < 4; ++j) row += b.at({k, j});
      CHECK(a.grad()[i * 3 + k] == doctest::Approx(row).epsilon(1e-12));
    }
  }
  CHECK(gradcheck([&](const auto& in) { return sum(matmul(in[0], b)); }, {a}) < 1e-8);
}

TEST_CASE("reductions and shape ops") {
  CHECK(sum(Tensor::from({3}, {1, 2, 3})).item() == 6.0);
  const Tensor c = concat({Tensor::zeros({2, 3}), Tensor::zeros({2, 2})}, 1);
  CHECK(c.shape() == Shape{2, 5});

  Tensor x = Tensor::from({4}, {1, 2, 3, 4}).set_requires_grad(true);
  mean(x).backward();
  for (double g : x.grad()) CHECK(g == doctest::Approx(0.25));

  CHECK_THROWS_AS(sum(Tensor::zeros({2, 2}), 2), IndexError);
  CHECK_THROWS_AS(slice(Tensor::zeros({2, 2}), 0, 1, 3), IndexError);
  CHECK_THROWS_AS(concat({Tensor::zeros({2, 3}), Tensor::zeros({3, 3})}, 1), ShapeError);
}

TEST_CASE("backward contracts") {
  Tensor x = Tensor::from({4}, {0.5, -1, 2, 3}).set_requires_grad(true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor y = Tensor::from({3}, {0.5, -1, 2}).set_requires_grad(true);
  Tensor loss = sum(y * y);
  loss.backward();
  for (std::size_t i = 0; i < 3; ++i) CHECK(y.grad()[i] == doctest::Approx(2 * y.data()[i]));
  loss.backward();
  for (std::size_t i = 0; i < 3; ++i) CHECK(y.grad()[i] == doctest::Approx(4 * y.data()[i]));

  y.zero_grad();
  for (double g : y.grad()) CHECK(g == 0.0);

  CHECK_THROWS_AS((y * 2.0).backward(), ContractError);
}

TEST_CASE("interior nodes hold gradients after backward") {
  Tensor x = Tensor::from({2}, {1, 2}).set_requires_grad(true);
  Tensor h = x * 3.0;
  sum(h).backward();
  REQUIRE(h.has_grad());
  CHECK(h.grad()[0] == 1.0);
}

TEST_CASE("no-grad guard records nothing") {
  Tensor x = Tensor::from({2}, {1, 2}).set_requires_grad(true);
  NoGradGuard guard;
  CHECK_FALSE((x * x).requires_grad());
}

TEST_CASE("every differentiable op passes finite differences over 20 seeds") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({4}, rng);
    const Tensor pos = random_tensor({3, 4}, rng, 0.5, 1.5);
    const Tensor m = random_tensor({2, 4, 3}, rng);
    const Tensor w = random_tensor({3, 2}, rng);
    const double tol = 1e-6;
    CAPTURE(seed);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(in[0] + in[1]); }, {a, b}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(in[0] - in[1]); }, {a, b}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(in[0] * in[1]); }, {a, b}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(in[0] / in[1]); }, {a, pos}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(-in[0]); }, {a}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(exp(in[0])); }, {a}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(log(in[0])); }, {pos}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(tanh(in[0])); }, {a}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(sigmoid(in[0])); }, {a}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(relu(in[0])); }, {a}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(pow(in[0], 2.5)); }, {pos}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(matmul(in[0], in[1])); }, {m, w}) <
          tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(sum(in[0], 1)); }, {m}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(mean(in[0], -1, true)); }, {m}) <
          tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(softmax(in[0])); }, {a}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(log_softmax(in[0])); }, {a}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(transpose(in[0], 0, 2)); }, {m}) <
          tol);
    CHECK(gradcheck(
              [](const auto& in) { return weighted_sum(concat({in[0], in[1]}, 1)); },
              {a, pos}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(slice(in[0], 1, 1, 3)); }, {m}) <
          tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(select(in[0], 0, 1)); }, {m}) < tol);
    CHECK(gradcheck([](const auto& in) { return weighted_sum(flip(in[0], 1)); }, {m}) < tol);
    const std::vector<std::size_t> rows{2, 0, 2};
    CHECK(gradcheck([&](const auto& in) { return weighted_sum(index_select(in[0], rows)); },
                    {a}) < tol);
  }
}

TEST_CASE("broadcasting equals explicit tiling bit for bit") {
  std::mt19937_64 rng(9);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor row = random_tensor({4}, rng);
  const Tensor col = random_tensor({3, 1}, rng);
  const Tensor tiled_row = concat({reshape(row, {1, 4}), reshape(row, {1, 4}),
                                   reshape(row, {1, 4})}, 0);
  const Tensor tiled_col = concat({col, col, col, col}, 1);
  for (auto op : {BinaryOp::add, BinaryOp::sub, BinaryOp::mul, BinaryOp::div}) {
    const auto x = elementwise(op, a, row);
    const auto y = elementwise(op, a, tiled_row);
    const auto u = elementwise(op, a, col);
    const auto v = elementwise(op, a, tiled_col);
    for (std::size_t i = 0; i < a.numel(); ++i) {
      CHECK(x.data()[i] == y.data()[i]);
      CHECK(u.data()[i] == v.data()[i]);
    }
  }
}

TEST_CASE("graph replay is deterministic") {
  std::mt19937_64 rng(21);
  const Tensor a = random_tensor({4, 5}, rng);
  const Tensor w = random_tensor({5, 3}, rng);
  auto run = [&] {
    Tensor x = a.detach().set_requires_grad(true);
    Tensor out = softmax(tanh(matmul(x, w)) * 2.0);
    weighted_sum(out).backward();
    return std::pair{out.to_vector(), std::vector<double>(x.grad().begin(), x.grad().end())};
  };
  const auto first = run();
  const auto second = run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
}
