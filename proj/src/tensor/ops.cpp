#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "node.hpp"
#include "signet/tensor.hpp"

namespace signet {

namespace {

// Maps every flat output position onto the flat position of an operand that
// was broadcast into the output shape.
std::vector<std::size_t> broadcast_map(const Shape& operand, const Shape& out) {
  const std::size_t nd = out.size();
  std::vector<std::size_t> stride(nd, 0);
  {
    std::size_t s = 1;
    for (std::size_t i = 0; i < operand.size(); ++i) {
      const std::size_t axis = operand.size() - 1 - i;
      const std::size_t oaxis = nd - 1 - i;
      stride[oaxis] = operand[axis] == 1 ? 0 : s;
      s *= operand[axis];
    }
  }
  const std::size_t total = numel(out);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(nd, 0);
  std::size_t pos = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    map[flat] = pos;
    for (std::size_t a = nd; a-- > 0;) {
      ++idx[a];
      pos += stride[a];
      if (idx[a] < out[a]) break;
      pos -= stride[a] * idx[a];
      idx[a] = 0;
    }
  }
  return map;
}

struct Operand {
  bool identity;
  std::vector<std::size_t> map;
  std::size_t operator()(std::size_t i) const { return identity ? i : map[i]; }
};

Operand make_operand(const Shape& s, const Shape& out) {
  if (s == out) return {true, {}};
  return {false, broadcast_map(s, out)};
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    const std::size_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
    out[nd - 1 - i] = ea == 1 ? eb : ea;
  }
  return out;
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  auto ma = std::make_shared<Operand>(make_operand(a.shape(), out_shape));
  auto mb = std::make_shared<Operand>(make_operand(b.shape(), out_shape));
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(n);
  switch (op) {
    case BinaryOp::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[(*ma)(i)] + bv[(*mb)(i)];
      break;
    case BinaryOp::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[(*ma)(i)] - bv[(*mb)(i)];
      break;
    case BinaryOp::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[(*ma)(i)] * bv[(*mb)(i)];
      break;
    case BinaryOp::div:
      for (std::size_t i = 0; i < n; ++i) {
        const double d = bv[(*mb)(i)];
        if (d == 0.0) throw DomainError("division by zero");
        out[i] = av[(*ma)(i)] / d;
      }
      break;
  }
  static constexpr const char* names[] = {"add", "sub", "mul", "div"};
  return custom_op(
      out_shape, std::move(out), {a, b},
      [op, ma, mb, a_node = a.node(), b_node = b.node()](
          std::span<const double>, std::span<const double> g,
          std::span<const std::span<double>> gin) {
        const auto& av = a_node->value;
        const auto& bv = b_node->value;
        auto ga = gin[0];
        auto gb = gin[1];
        const std::size_t n = g.size();
        switch (op) {
          case BinaryOp::add:
            if (!ga.empty()) for (std::size_t i = 0; i < n; ++i) ga[(*ma)(i)] += g[i];
            if (!gb.empty()) for (std::size_t i = 0; i < n; ++i) gb[(*mb)(i)] += g[i];
            break;
          case BinaryOp::sub:
            if (!ga.empty()) for (std::size_t i = 0; i < n; ++i) ga[(*ma)(i)] += g[i];
            if (!gb.empty()) for (std::size_t i = 0; i < n; ++i) gb[(*mb)(i)] -= g[i];
            break;
          case BinaryOp::mul:
            if (!ga.empty())
              for (std::size_t i = 0; i < n; ++i) ga[(*ma)(i)] += g[i] * bv[(*mb)(i)];
            if (!gb.empty())
              for (std::size_t i = 0; i < n; ++i) gb[(*mb)(i)] += g[i] * av[(*ma)(i)];
            break;
          case BinaryOp::div:
            if (!ga.empty())
              for (std::size_t i = 0; i < n; ++i) ga[(*ma)(i)] += g[i] / bv[(*mb)(i)];
            if (!gb.empty())
              for (std::size_t i = 0; i < n; ++i) {
                const double d = bv[(*mb)(i)];
                gb[(*mb)(i)] -= g[i] * av[(*ma)(i)] / (d * d);
              }
            break;
        }
      },
      names[static_cast<int>(op)]);
}

Tensor elementwise(UnaryOp op, const Tensor& a) {
  const auto av = a.data();
  const std::size_t n = av.size();
  std::vector<double> out(n);
  switch (op) {
    case UnaryOp::neg:
      for (std::size_t i = 0; i < n; ++i) out[i] = -av[i];
      break;
    case UnaryOp::exp:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(av[i]);
      break;
    case UnaryOp::log:
      for (std::size_t i = 0; i < n; ++i) {
        if (av[i] <= 0.0) throw DomainError("log of non-positive value " + std::to_string(av[i]));
        out[i] = std::log(av[i]);
      }
      break;
    case UnaryOp::tanh:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(av[i]);
      break;
    case UnaryOp::sigmoid:
      for (std::size_t i = 0; i < n; ++i) {
        const double x = av[i];
        if (x >= 0) {
          out[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
          const double e = std::exp(x);
          out[i] = e / (1.0 + e);
        }
      }
      break;
    case UnaryOp::relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
      break;
  }
  static constexpr const char* names[] = {"neg", "exp", "log", "tanh", "sigmoid", "relu"};
  return custom_op(
      a.shape(), std::move(out), {a},
      [op, a_node = a.node()](std::span<const double> y, std::span<const double> g,
                              std::span<const std::span<double>> gin) {
        auto ga = gin[0];
        const auto& x = a_node->value;
        const std::size_t n = g.size();
        switch (op) {
          case UnaryOp::neg:
            for (std::size_t i = 0; i < n; ++i) ga[i] -= g[i];
            break;
          case UnaryOp::exp:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i];
            break;
          case UnaryOp::log:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / x[i];
            break;
          case UnaryOp::tanh:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
            break;
          case UnaryOp::sigmoid:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
            break;
          case UnaryOp::relu:
            for (std::size_t i = 0; i < n; ++i) ga[i] += x[i] > 0.0 ? g[i] : 0.0;
            break;
        }
      },
      names[static_cast<int>(op)]);
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::div, a, b); }
Tensor neg(const Tensor& a) { return elementwise(UnaryOp::neg, a); }
Tensor exp(const Tensor& a) { return elementwise(UnaryOp::exp, a); }
Tensor log(const Tensor& a) { return elementwise(UnaryOp::log, a); }
Tensor tanh(const Tensor& a) { return elementwise(UnaryOp::tanh, a); }
Tensor sigmoid(const Tensor& a) { return elementwise(UnaryOp::sigmoid, a); }
Tensor relu(const Tensor& a) { return elementwise(UnaryOp::relu, a); }

Tensor pow(const Tensor& a, double exponent) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::pow(av[i], exponent);
  return custom_op(
      a.shape(), std::move(out), {a},
      [exponent, a_node = a.node()](std::span<const double>, std::span<const double> g,
                                    std::span<const std::span<double>> gin) {
        const auto& x = a_node->value;
        for (std::size_t i = 0; i < g.size(); ++i) {
          gin[0][i] += g[i] * exponent * std::pow(x[i], exponent - 1.0);
        }
      },
      "pow");
}

Tensor scale(const Tensor& a, double factor) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  return custom_op(
      a.shape(), std::move(out), {a},
      [factor](std::span<const double>, std::span<const double> g,
               std::span<const std::span<double>> gin) {
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * factor;
      },
      "scale");
}

Tensor add_scalar(const Tensor& a, double value) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + value;
  return custom_op(
      a.shape(), std::move(out), {a},
      [](std::span<const double>, std::span<const double> g,
         std::span<const std::span<double>> gin) {
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
      },
      "add_scalar");
}

// ---------------------------------------------------------------------------

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError("matmul needs operands of rank >= 2, got " + to_string(sa) + " and " +
                     to_string(sb));
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t kb = sb[sb.size() - 2];
  const std::size_t n = sb.back();
  if (k != kb) {
    throw ShapeError("matmul inner extents differ: " + to_string(sa) + " x " + to_string(sb));
  }
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  const Shape batch = broadcast_shape(batch_a, batch_b);
  const std::size_t nb = numel(batch);
  auto map_a = std::make_shared<std::vector<std::size_t>>(
      batch_a == batch ? std::vector<std::size_t>() : broadcast_map(batch_a, batch));
  auto map_b = std::make_shared<std::vector<std::size_t>>(
      batch_b == batch ? std::vector<std::size_t>() : broadcast_map(batch_b, batch));
  auto ia = [map_a](std::size_t i) { return map_a->empty() ? i : (*map_a)[i]; };
  auto ib = [map_b](std::size_t i) { return map_b->empty() ? i : (*map_b)[i]; };

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(nb * m * n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ki = static_cast<Eigen::Index>(k);
  const auto ni = static_cast<Eigen::Index>(n);
  for (std::size_t t = 0; t < nb; ++t) {
    MutMap(out.data() + t * m * n, mi, ni).noalias() =
        ConstMap(pa + ia(t) * m * k, mi, ki) * ConstMap(pb + ib(t) * k * n, ki, ni);
  }
  return custom_op(
      std::move(out_shape), std::move(out), {a, b},
      [=, a_node = a.node(), b_node = b.node()](std::span<const double>,
                                                std::span<const double> g,
                                                std::span<const std::span<double>> gin) {
        const double* pa = a_node->value.data();
        const double* pb = b_node->value.data();
        for (std::size_t t = 0; t < nb; ++t) {
          ConstMap gc(g.data() + t * m * n, mi, ni);
          if (!gin[0].empty()) {
            MutMap(gin[0].data() + ia(t) * m * k, mi, ki).noalias() +=
                gc * ConstMap(pb + ib(t) * k * n, ki, ni).transpose();
          }
          if (!gin[1].empty()) {
            MutMap(gin[1].data() + ib(t) * k * n, ki, ni).noalias() +=
                ConstMap(pa + ia(t) * m * k, mi, ki).transpose() * gc;
          }
        }
      },
      "matmul");
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  const auto av = a.data();
  double s = 0.0;
  for (double x : av) s += x;
  return custom_op(
      {}, {s}, {a},
      [](std::span<const double>, std::span<const double> g,
         std::span<const std::span<double>> gin) {
        for (auto& x : gin[0]) x += g[0];
      },
      "sum");
}

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  const Shape& s = a.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  Shape out_shape = s;
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  const auto av = a.data();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * len + l) * inner + i];
  return custom_op(
      std::move(out_shape), std::move(out), {a},
      [outer, inner, len](std::span<const double>, std::span<const double> g,
                          std::span<const std::span<double>> gin) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i)
              gin[0][(o * len + l) * inner + i] += g[o * inner + i];
      },
      "sum_axis");
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  const std::size_t len = a.dim(axis);
  if (len == 0) throw ContractError("mean over an empty axis");
  return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(len));
}

Tensor softmax(const Tensor& a) {
  if (a.ndim() == 0) throw ShapeError("softmax of a 0-d tensor");
  const std::size_t len = a.shape().back();
  const std::size_t rows = len == 0 ? 0 : a.numel() / len;
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * len;
    double* y = out.data() + r * len;
    const double mx = *std::max_element(x, x + len);
    double z = 0.0;
    for (std::size_t j = 0; j < len; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < len; ++j) y[j] /= z;
  }
  return custom_op(
      a.shape(), std::move(out), {a},
      [rows, len](std::span<const double> y, std::span<const double> g,
                  std::span<const std::span<double>> gin) {
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j) dot += g[r * len + j] * y[r * len + j];
          for (std::size_t j = 0; j < len; ++j)
            gin[0][r * len + j] += y[r * len + j] * (g[r * len + j] - dot);
        }
      },
      "softmax");
}

Tensor log_softmax(const Tensor& a) {
  if (a.ndim() == 0) throw ShapeError("log_softmax of a 0-d tensor");
  const std::size_t len = a.shape().back();
  const std::size_t rows = len == 0 ? 0 : a.numel() / len;
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * len;
    double* y = out.data() + r * len;
    const double mx = *std::max_element(x, x + len);
    double z = 0.0;
    for (std::size_t j = 0; j < len; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < len; ++j) y[j] = x[j] - lse;
  }
  return custom_op(
      a.shape(), std::move(out), {a},
      [rows, len](std::span<const double> y, std::span<const double> g,
                  std::span<const std::span<double>> gin) {
        for (std::size_t r = 0; r < rows; ++r) {
          double gs = 0.0;
          for (std::size_t j = 0; j < len; ++j) gs += g[r * len + j];
          for (std::size_t j = 0; j < len; ++j)
            gin[0][r * len + j] += g[r * len + j] - std::exp(y[r * len + j]) * gs;
        }
      },
      "log_softmax");
}

// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + to_string(a.shape()) + " into " + to_string(shape));
  }
  auto v = a.to_vector();
  return custom_op(
      std::move(shape), std::move(v), {a},
      [](std::span<const double>, std::span<const double> g,
         std::span<const std::span<double>> gin) {
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
      },
      "reshape");
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& order) {
  const Shape& s = a.shape();
  const std::size_t nd = s.size();
  if (order.size() != nd) throw ShapeError("permute order rank mismatch for " + to_string(s));
  std::vector<bool> used(nd, false);
  for (auto o : order) {
    if (o >= nd || used[o]) throw IndexError("invalid permutation for " + to_string(s));
    used[o] = true;
  }
  std::vector<std::size_t> in_stride(nd, 1);
  for (std::size_t i = nd; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
  Shape out_shape(nd);
  std::vector<std::size_t> stride(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    out_shape[i] = s[order[i]];
    stride[i] = in_stride[order[i]];
  }
  const std::size_t total = a.numel();
  auto map = std::make_shared<std::vector<std::size_t>>(total);
  {
    std::vector<std::size_t> idx(nd, 0);
    std::size_t pos = 0;
    for (std::size_t flat = 0; flat < total; ++flat) {
      (*map)[flat] = pos;
      for (std::size_t d = nd; d-- > 0;) {
        ++idx[d];
        pos += stride[d];
        if (idx[d] < out_shape[d]) break;
        pos -= stride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  const auto av = a.data();
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = av[(*map)[i]];
  return custom_op(
      std::move(out_shape), std::move(out), {a},
      [map](std::span<const double>, std::span<const double> g,
            std::span<const std::span<double>> gin) {
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][(*map)[i]] += g[i];
      },
      "permute");
}

Tensor transpose(const Tensor& a, int axis0, int axis1) {
  const std::size_t nd = a.ndim();
  std::vector<std::size_t> order(nd);
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[normalize_axis(axis0, nd)], order[normalize_axis(axis1, nd)]);
  return permute(a, order);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& s0 = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, s0.size());
  std::size_t total_len = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == s0[i];
    if (!ok) {
      throw ShapeError("concat along axis " + std::to_string(axis) + ": " + to_string(s0) +
                       " vs " + to_string(s));
    }
    total_len += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s0[i];
  for (std::size_t i = ax + 1; i < s0.size(); ++i) inner *= s0[i];
  Shape out_shape = s0;
  out_shape[ax] = total_len;
  std::vector<double> out(outer * total_len * inner);
  auto lens = std::make_shared<std::vector<std::size_t>>();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[ax];
    const auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * len * inner, len * inner,
                  out.data() + (o * total_len + offset) * inner);
    }
    lens->push_back(len);
    offset += len;
  }
  return custom_op(
      std::move(out_shape), std::move(out), parts,
      [lens, outer, inner, total_len](std::span<const double>, std::span<const double> g,
                                      std::span<const std::span<double>> gin) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < lens->size(); ++p) {
          const std::size_t len = (*lens)[p];
          if (!gin[p].empty()) {
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t j = 0; j < len * inner; ++j)
                gin[p][o * len * inner + j] += g[(o * total_len + offset) * inner + j];
          }
          offset += len;
        }
      },
      "concat");
}

Tensor stack(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("stack of zero tensors");
  const std::size_t nd = parts.front().ndim() + 1;
  const std::size_t ax = normalize_axis(axis, nd);
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(ax), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, static_cast<int>(ax));
}

Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  if (begin > end || end > s[ax]) {
    throw IndexError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for axis of extent " + std::to_string(s[ax]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  const std::size_t span_len = end - begin;
  Shape out_shape = s;
  out_shape[ax] = span_len;
  const auto av = a.data();
  std::vector<double> out(outer * span_len * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(av.data() + (o * len + begin) * inner, span_len * inner,
                out.data() + o * span_len * inner);
  }
  return custom_op(
      std::move(out_shape), std::move(out), {a},
      [outer, inner, len, begin, span_len](std::span<const double>, std::span<const double> g,
                                           std::span<const std::span<double>> gin) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < span_len * inner; ++j)
            gin[0][(o * len + begin) * inner + j] += g[o * span_len * inner + j];
      },
      "slice");
}

Tensor select(const Tensor& a, int axis, std::size_t index) {
  const std::size_t ax = normalize_axis(axis, a.ndim());
  Tensor s = slice(a, static_cast<int>(ax), index, index + 1);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  return reshape(s, std::move(shape));
}

Tensor index_select(const Tensor& a, std::span<const std::size_t> rows) {
  const Shape& s = a.shape();
  if (s.empty()) throw ShapeError("index_select on a 0-d tensor");
  const std::size_t inner = s[0] == 0 ? 0 : a.numel() / s[0];
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  for (auto r : *idx) {
    if (r >= s[0]) {
      throw IndexError("row " + std::to_string(r) + " out of range for " + to_string(s));
    }
  }
  Shape out_shape = s;
  out_shape[0] = idx->size();
  const auto av = a.data();
  std::vector<double> out(idx->size() * inner);
  for (std::size_t i = 0; i < idx->size(); ++i) {
    std::copy_n(av.data() + (*idx)[i] * inner, inner, out.data() + i * inner);
  }
  return custom_op(
      std::move(out_shape), std::move(out), {a},
      [idx, inner](std::span<const double>, std::span<const double> g,
                   std::span<const std::span<double>> gin) {
        for (std::size_t i = 0; i < idx->size(); ++i)
          for (std::size_t j = 0; j < inner; ++j) gin[0][(*idx)[i] * inner + j] += g[i * inner + j];
      },
      "index_select");
}

Tensor flip(const Tensor& a, int axis) {
  const Shape& s = a.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      std::copy_n(av.data() + (o * len + l) * inner, inner,
                  out.data() + (o * len + (len - 1 - l)) * inner);
  return custom_op(
      s, std::move(out), {a},
      [outer, inner, len](std::span<const double>, std::span<const double> g,
                          std::span<const std::span<double>> gin) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t l = 0; l < len; ++l)
            for (std::size_t j = 0; j < inner; ++j)
              gin[0][(o * len + l) * inner + j] += g[(o * len + (len - 1 - l)) * inner + j];
      },
      "flip");
}

}  // namespace signet
