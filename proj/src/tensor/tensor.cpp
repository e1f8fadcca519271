#include "signet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "node.hpp"

namespace signet {

namespace detail {

std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> leaf(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + to_string(shape) + " holds " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->seq = detail::next_seq();
  return node;
}

const detail::Node& deref(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw ContractError("use of an undefined tensor");
  return *node;
}

}  // namespace

Tensor make_tensor(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t normalize_axis(int axis, std::size_t ndim) {
  const auto n = static_cast<int>(ndim);
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for " +
                     std::to_string(ndim) + "-d tensor");
  }
  return static_cast<std::size_t>(a);
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw DomainError("non-finite value in tensor construction");
  }
  return Tensor(leaf(std::move(shape), std::move(values)));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = signet::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::normal(Shape shape, double mean, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> v(signet::numel(shape));
  for (auto& x : v) x = dist(rng);
  return from(std::move(shape), std::move(v));
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(signet::numel(shape));
  for (auto& x : v) x = dist(rng);
  return from(std::move(shape), std::move(v));
}

const Shape& Tensor::shape() const { return deref(node_).shape; }

std::size_t Tensor::dim(int axis) const { return shape()[normalize_axis(axis, ndim())]; }

std::size_t Tensor::numel() const { return deref(node_).value.size(); }

std::span<const double> Tensor::data() const { return deref(node_).value; }

std::vector<double> Tensor::to_vector() const { return deref(node_).value; }

double Tensor::item() const {
  const auto& n = deref(node_);
  if (n.value.size() != 1) {
    throw ContractError("item() on tensor of shape " + to_string(n.shape));
  }
  return n.value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& n = deref(node_);
  if (index.size() != n.shape.size()) {
    throw IndexError("index rank " + std::to_string(index.size()) + " for tensor of shape " +
                     to_string(n.shape));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= n.shape[axis]) throw IndexError("index out of range in " + to_string(n.shape));
    flat = flat * n.shape[axis] + i;
    ++axis;
  }
  return n.value[flat];
}

bool Tensor::requires_grad() const { return deref(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  auto& n = const_cast<detail::Node&>(deref(node_));
  if (!n.is_leaf()) throw ContractError("set_requires_grad on a non-leaf tensor");
  n.requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return !deref(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return deref(node_).grad; }

void Tensor::zero_grad() {
  auto& n = const_cast<detail::Node&>(deref(node_));
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

std::span<double> Tensor::mutable_data() {
  auto& n = const_cast<detail::Node&>(deref(node_));
  if (!n.is_leaf()) throw ContractError("mutable_data on a non-leaf tensor");
  return n.value;
}

Tensor Tensor::detach() const {
  const auto& n = deref(node_);
  return Tensor(leaf(n.shape, n.value));
}

void Tensor::backward() const {
  const auto& root = deref(node_);
  if (root.value.size() != 1) {
    throw ContractError("backward() needs a single-element loss, got shape " +
                        to_string(root.shape));
  }
  if (!root.requires_grad) {
    throw ContractError("backward() on a tensor that does not require grad");
  }

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  for (auto* n : order) {
    if (!n->is_leaf()) {
      n->grad.assign(n->value.size(), 0.0);
    } else if (n->grad.size() != n->value.size()) {
      n->grad.assign(n->value.size(), 0.0);
    }
  }
  node_->grad[0] += 1.0;

  std::vector<std::span<double>> slots;
  for (auto* n : order) {
    if (n->is_leaf() || !n->backward) continue;
    slots.clear();
    for (const auto& in : n->inputs) {
      slots.emplace_back(in->requires_grad ? std::span<double>(in->grad) : std::span<double>());
    }
    n->backward(n->value, n->grad, slots);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor custom_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                 BackwardFn backward, const char* name) {
  for (double v : values) {
    if (!std::isfinite(v)) throw DomainError(std::string(name) + " produced a non-finite value");
  }
  auto node = leaf(std::move(shape), std::move(values));
  node->name = name;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return make_tensor(std::move(node));
}

}  // namespace signet
