#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "hqsvc/common.hpp"

namespace hqsvc {

// Reverse-mode node. All tensors are row-major [rows, cols]; scalars are
// [1, 1]. Nodes carry a closure that scatters the output gradient into the
// parent gradients, and a creation index that doubles as topological order
// because every op creates its output after its inputs.
template <typename S>
struct TensorNode {
  std::vector<S> value;
  std::vector<S> grad;
  int rows = 0;
  int cols = 0;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
  std::uint64_t order = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(rows) * cols;
  }
  void ensure_grad() {
    if (grad.size() != numel()) grad.assign(numel(), S(0));
  }
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->rows = rows;
    t.node_->cols = cols;
    t.node_->value.assign(static_cast<std::size_t>(rows) * cols, S(0));
    t.node_->requires_grad = requires_grad;
    t.node_->order = next_order();
    return t;
  }

  static Tensor from_vector(const std::vector<S>& data, int rows, int cols,
                            bool requires_grad = false) {
    check(data.size() == static_cast<std::size_t>(rows) * cols,
          "Tensor::from_vector: size mismatch");
    Tensor t = zeros(rows, cols, requires_grad);
    t.node_->value = data;
    return t;
  }

  static Tensor scalar(S v) { return from_vector({v}, 1, 1); }

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t numel() const { return node_->numel(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::vector<S>& value() { return node_->value; }
  const std::vector<S>& value() const { return node_->value; }
  std::vector<S>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<S>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  S item() const {
    check(numel() == 1, "Tensor::item: not a scalar");
    return node_->value[0];
  }

  void clear_grad() { node_->grad.clear(); }

  std::shared_ptr<TensorNode<S>> node() const { return node_; }

  // Builds an op output. The closure receives the finished output node and
  // must add into each parent's grad buffer.
  static Tensor make_op(int rows, int cols,
                        std::vector<Tensor> inputs,
                        std::function<void(TensorNode<S>&)> backward_fn) {
    Tensor t = zeros(rows, cols, false);
    for (const Tensor& in : inputs) {
      if (in.node_->requires_grad) t.node_->requires_grad = true;
      t.node_->parents.push_back(in.node_);
    }
    if (t.node_->requires_grad) t.node_->backward_fn = std::move(backward_fn);
    return t;
  }

  // Reverse pass from a scalar output. Nodes fire in descending creation
  // order, which is a valid reverse topological order of the tape.
  void backward() {
    check(numel() == 1, "Tensor::backward: output must be scalar");
    node_->ensure_grad();
    node_->grad[0] = S(1);

    std::vector<TensorNode<S>*> nodes;
    std::unordered_set<TensorNode<S>*> seen;
    std::vector<TensorNode<S>*> stack{node_.get()};
    seen.insert(node_.get());
    while (!stack.empty()) {
      TensorNode<S>* cur = stack.back();
      stack.pop_back();
      nodes.push_back(cur);
      for (auto& p : cur->parents)
        if (p->requires_grad && seen.insert(p.get()).second)
          stack.push_back(p.get());
    }
    std::sort(nodes.begin(), nodes.end(),
              [](const TensorNode<S>* a, const TensorNode<S>* b) {
                return a->order > b->order;
              });
    for (TensorNode<S>* nd : nodes) {
      if (!nd->backward_fn) continue;
      for (auto& p : nd->parents)
        if (p->requires_grad) p->ensure_grad();
      nd->ensure_grad();
      nd->backward_fn(*nd);
    }
  }

 private:
  static std::uint64_t next_order() {
    static std::uint64_t counter = 0;
    return ++counter;
  }

  std::shared_ptr<TensorNode<S>> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace hqsvc
