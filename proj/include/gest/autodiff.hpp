#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Graphs are built eagerly by the op functions below; backward()
// walks them in reverse topological order and accumulates into every node
// that requires a gradient. Parameters are leaf nodes that outlive a graph.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "gest/types.hpp"

namespace gest::ad {

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void add_grad(const Mat& g);
  void zero_grad() { grad.resize(0, 0); }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  // Zero-filled when no gradient has been accumulated yet.
  Mat grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Mat value);
Var parameter(Mat value);

// Seeds d(loss)/d(loss) = 1 and propagates. loss must be 1x1.
void backward(const Var& loss);

Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// Adds a 1xC row to every row of a.
Var add_row(const Var& a, const Var& row);
Var gelu(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Row-wise softmax; with causal=true entry (i, j) for j > i is masked out.
Var softmax_rows(const Var& x, bool causal);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var embedding(const Var& table, std::span<const int> ids);
// x: T x Cin; weight: (kernel*Cin) x Cout laid out tap-major; bias: 1 x Cout.
Var conv1d(const Var& x, const Var& weight, const Var& bias, int kernel, int stride, int pad);
// Repeats every row `factor` times.
Var upsample_rows(const Var& x, int factor);
// Forward value is `replacement`; the gradient passes to x unchanged.
Var straight_through(const Var& x, const Mat& replacement);
// Mean of squared differences over all elements; 1x1.
Var mse(const Var& a, const Var& b);
// Mean over positions with mask=1 of -log softmax(logits[i])[targets[i]].
Var cross_entropy(const Var& logits, std::span<const int> targets, std::span<const unsigned char> mask);

}  // namespace gest::ad
