#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "labnn/tensor.hpp"

namespace labnn {

// Eager tape for reverse-mode autodiff. Nodes are appended in execution
// order, so parents always precede children and the tape order is already
// topological; backward() walks it once in reverse. Values are immutable
// after their producing op writes them.
template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int)>;

  struct Node {
    Tensor<T> value;
    std::vector<int> parents;
    BackFn backward;  // null for leaves
    std::string tag;
  };

  int leaf(Tensor<T> value, std::string tag = {}) {
    return push({std::move(value), {}, nullptr, std::move(tag)});
  }

  int make(Tensor<T> value, std::vector<int> parents, BackFn backward, std::string tag = {}) {
    for (int p : parents) {
      LABNN_CHECK(p >= 0 && p < static_cast<int>(nodes_.size()), "tape parent out of range");
    }
    return push({std::move(value), std::move(parents), std::move(backward), std::move(tag)});
  }

  Tensor<T>& val(int id) { return nodes_[static_cast<size_t>(id)].value; }
  const Tensor<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Gradient buffer of a node, allocated (zeroed) on first use.
  T* grad(int id) {
    Tensor<T>& t = nodes_[static_cast<size_t>(id)].value;
    t.alloc_grad();
    return t.grad();
  }

  // Reverse accumulation from a scalar loss. Every node gets a zeroed
  // gradient slot, so leaves off the loss path report zero gradients.
  void backward(int loss) {
    LABNN_CHECK(loss >= 0 && loss < size(), "backward: bad loss node");
    LABNN_CHECK(val(loss).count() == 1, "backward: loss must be scalar");

    std::vector<char> reachable(nodes_.size(), 0);
    reachable[static_cast<size_t>(loss)] = 1;
    for (int id = loss; id >= 0; --id) {
      if (!reachable[static_cast<size_t>(id)]) continue;
      for (int p : nodes_[static_cast<size_t>(id)].parents) reachable[static_cast<size_t>(p)] = 1;
    }
    for (Node& n : nodes_) n.value.alloc_grad();

    grad(loss)[0] = T(1);
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (reachable[static_cast<size_t>(id)] && n.backward) n.backward(*this, id);
    }
  }

 private:
  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

}  // namespace labnn
