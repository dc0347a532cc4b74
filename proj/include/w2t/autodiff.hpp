#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "w2t/text.hpp"

// Dense 2-D tensors with define-by-run reverse-mode differentiation.
// Each op records its parents and a closure that pushes the output
// gradient back to them; backward() replays the closures in reverse
// topological order. Instantiated for float (training) and double
// (gradient checking).
namespace w2t::ad {

template <typename T>
struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first use
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<T> data,
                     bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false) { return from(1, 1, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::vector<std::size_t> shape() const { return {node_->rows, node_->cols}; }

  std::span<const T> data() const { return node_->value; }
  // Direct mutation is for parameters between steps, never mid-graph.
  std::span<T> mutable_data() { return node_->value; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  // Empty span until a backward pass reaches this tensor.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

// Disables graph recording on this thread while alive (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& x);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
// x (r x c) plus a 1 x c row broadcast over all rows.
template <typename T> Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& row);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T s);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x);

// Row softmax with max subtraction. With causal = true, entry (i, j) for
// j > i is excluded and left at exactly zero (square inputs only).
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x, bool causal = false);

// gamma, beta: 1 x c.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const TokenId> ids);

template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

// Mean over non-ignored rows of -log softmax(logits)[t, target_t].
// All-ignored input yields 0 with zero gradient.
template <typename T>
Tensor<T> nll_loss(const Tensor<T>& logits, std::span<const TokenId> targets, TokenId ignore_id = kPad);

template <typename T> void backward(const Tensor<T>& loss);

}  // namespace w2t::ad
