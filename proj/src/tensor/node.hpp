#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "signet/tensor.hpp"

namespace signet::detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  std::uint64_t seq = 0;
  const char* name = "leaf";

  bool is_leaf() const { return inputs.empty(); }
};

std::uint64_t next_seq();

}  // namespace signet::detail

namespace signet {
Tensor make_tensor(std::shared_ptr<detail::Node> node);
std::size_t normalize_axis(int axis, std::size_t ndim);
}  // namespace signet
