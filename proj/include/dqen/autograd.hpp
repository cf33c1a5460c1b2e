#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value in the network is a 2-D matrix; vectors are 1xC rows
// and scalars are 1x1.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace dqen::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
  [[nodiscard]] const Matrix& value() const { return node_->value; }
  // Direct write access; only meaningful for leaves (parameters, inputs).
  Matrix& mutable_value() { return node_->value; }
  // Gradient accumulated by the last backward pass; zeros if none reached it.
  [[nodiscard]] Matrix grad() const;
  [[nodiscard]] bool has_grad() const { return node_->grad.size() != 0; }
  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  [[nodiscard]] Index rows() const { return node_->value.rows(); }
  [[nodiscard]] Index cols() const { return node_->value.cols(); }
  [[nodiscard]] double item() const;
  void zero_grad() { node_->grad.resize(0, 0); }
  [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var parameter(Matrix value);

// Seeds the root with ones (root must be 1x1) and propagates to every node
// that requires grad. Intermediate graph state is released afterwards.
void backward(const Var& root);
void backward(const Var& root, const Matrix& seed);

[[nodiscard]] bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// --- linear algebra -------------------------------------------------------
Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
// x * w + b, b broadcast over rows (b may be undefined)
Var linear(const Var& x, const Var& w, const Var& b);

// --- elementwise ----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);
Var mul_row(const Var& a, const Var& row);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);
Var clamp_min(const Var& a, double lo);
Var abs(const Var& a);
Var square(const Var& a);
Var gelu(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);

// --- row-wise -------------------------------------------------------------
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// --- structural -----------------------------------------------------------
Var detach(const Var& a);
Var gather_rows(const Var& a, std::span<const int> rows);
Var repeat_rows(const Var& row, Index n);
Var sum_rows(const Var& a);
Var mean_rows(const Var& a);
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Index start, Index count);
Var slice_rows(const Var& a, Index start, Index count);
Var col(const Var& a, Index c);
// (n, 1) with out[i] = a(i, cols[i]).
Var pick(const Var& a, std::span<const int> cols);
// Scales row i of a by column vector c(i, 0).
Var mul_col(const Var& a, const Var& c);

// --- fused losses ---------------------------------------------------------
// Weighted mean of softmax cross-entropy: sum_i w_i * CE_i / sum_i w_i.
Var cross_entropy(const Var& logits, std::span<const int> targets,
                  std::span<const double> weights = {});

// Sum over all entries of the sigmoid focal loss. alpha < 0 disables class
// balancing; gamma = 0 with alpha < 0 is plain binary cross-entropy.
Var focal_loss_sum(const Var& logits, const Matrix& targets, double alpha, double gamma);

// Scalar helpers shared with non-differentiable code paths.
double sigmoid_scalar(double x);
double softplus_scalar(double x);
double focal_element(double x, double target, double alpha, double gamma);

}  // namespace dqen::ag
