#include "dqen/autograd.hpp"

#include "dqen/errors.hpp"

#include <cmath>
#include <numbers>
#include <unordered_set>

namespace dqen::ag {

namespace {

thread_local bool g_grad_enabled = true;

using Parents = std::vector<Var>;

Var make_result(Matrix value, const Parents& parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (!g_grad_enabled) {
    return Var(std::move(node));
  }
  bool needs = false;
  for (const auto& p : parents) {
    needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) {
      node->parents.push_back(p.node());
    }
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

void check_row(const Var& a, const Var& row, const char* op) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError(std::string(op) + ": expected 1x" + std::to_string(a.cols()) + " row");
  }
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace

void Node::accumulate(const Matrix& g) { accumulate_expr(g); }

Matrix Var::grad() const {
  if (node_->grad.size() == 0) {
    return Matrix::Zero(node_->value.rows(), node_->value.cols());
  }
  return node_->grad;
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) {
    throw ShapeError("item() requires a 1x1 value");
  }
  return node_->value(0, 0);
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw ShapeError("backward() without seed requires a scalar root");
  }
  backward(root, Matrix::Ones(1, 1));
}

void backward(const Var& root, const Matrix& seed) {
  if (!root.requires_grad()) {
    return;
  }
  // Iterative post-order DFS gives a topological order. Owning pointers keep
  // every node alive while parents are released below.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      std::shared_ptr<Node> p = node->parents[next++];
      if (p->requires_grad && !visited.contains(p.get())) {
        visited.insert(p.get());
        stack.emplace_back(std::move(p), 0);
      }
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }
  root.node()->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = it->get();
    if (node->is_leaf) {
      continue;
    }
    if (node->grad.size() != 0 && node->backward_fn) {
      node->backward_fn(*node);
    }
    node->backward_fn = nullptr;
    node->parents.clear();
    node->grad.resize(0, 0);
  }
}

// --- linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  return make_result(a.value() * b.value(), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.accumulate_expr(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate_expr(pa.value.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: column counts differ");
  }
  return make_result(a.value() * b.value().transpose(), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.accumulate_expr(self.grad * pb.value);
    if (pb.requires_grad) pb.accumulate_expr(self.grad.transpose() * pa.value);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.cols() != w.rows()) {
    throw ShapeError("linear: input width " + std::to_string(x.cols()) + " does not match weight rows " +
                     std::to_string(w.rows()));
  }
  Matrix y = x.value() * w.value();
  if (b.defined()) {
    check_row(constant(Matrix(1, w.cols())), b, "linear bias");
    y.rowwise() += b.value().row(0);
    return make_result(std::move(y), {x, w, b}, [](Node& self) {
      Node& px = parent(self, 0);
      Node& pw = parent(self, 1);
      Node& pb = parent(self, 2);
      if (px.requires_grad) px.accumulate_expr(self.grad * pw.value.transpose());
      if (pw.requires_grad) pw.accumulate_expr(px.value.transpose() * self.grad);
      if (pb.requires_grad) pb.accumulate_expr(self.grad.colwise().sum());
    });
  }
  return make_result(std::move(y), {x, w}, [](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    if (px.requires_grad) px.accumulate_expr(self.grad * pw.value.transpose());
    if (pw.requires_grad) pw.accumulate_expr(px.value.transpose() * self.grad);
  });
}

// --- elementwise ----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (parent(self, i).requires_grad) parent(self, i).accumulate(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad);
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate_expr(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.accumulate_expr(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate_expr(self.grad.cwiseProduct(pa.value));
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  return make_result(a.value().cwiseQuotient(b.value()), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) pa.accumulate_expr(self.grad.cwiseQuotient(pb.value));
    if (pb.requires_grad) {
      pb.accumulate_expr(
          -self.grad.cwiseProduct(self.value).cwiseQuotient(pb.value));
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  check_row(a, row, "add_row");
  Matrix y = a.value();
  y.rowwise() += row.value().row(0);
  return make_result(std::move(y), {a, row}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad);
    if (parent(self, 1).requires_grad) parent(self, 1).accumulate_expr(self.grad.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  check_row(a, row, "mul_row");
  Matrix y = a.value().array().rowwise() * row.value().row(0).array();
  return make_result(std::move(y), {a, row}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pr = parent(self, 1);
    if (pa.requires_grad) {
      Matrix g = self.grad.array().rowwise() * pr.value.row(0).array();
      pa.accumulate(g);
    }
    if (pr.requires_grad) pr.accumulate_expr(self.grad.cwiseProduct(pa.value).colwise().sum());
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate_expr(self.grad * s);
  });
}

Var add_scalar(const Var& a, double s) {
  return make_result(a.value().array() + s, {a}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad);
  });
}

Var minimum(const Var& a, const Var& b) {
  check_same_shape(a, b, "minimum");
  return make_result(a.value().cwiseMin(b.value()), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const auto take_a = (pa.value.array() <= pb.value.array()).cast<double>();
    if (pa.requires_grad) pa.accumulate_expr((self.grad.array() * take_a).matrix());
    if (pb.requires_grad) pb.accumulate_expr((self.grad.array() * (1.0 - take_a)).matrix());
  });
}

Var maximum(const Var& a, const Var& b) {
  check_same_shape(a, b, "maximum");
  return make_result(a.value().cwiseMax(b.value()), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const auto take_a = (pa.value.array() >= pb.value.array()).cast<double>();
    if (pa.requires_grad) pa.accumulate_expr((self.grad.array() * take_a).matrix());
    if (pb.requires_grad) pb.accumulate_expr((self.grad.array() * (1.0 - take_a)).matrix());
  });
}

Var clamp_min(const Var& a, double lo) {
  return make_result(a.value().cwiseMax(lo), {a}, [lo](Node& self) {
    Node& pa = parent(self, 0);
    if (pa.requires_grad) {
      pa.accumulate_expr((self.grad.array() * (pa.value.array() > lo).cast<double>()).matrix());
    }
  });
}

Var abs(const Var& a) {
  return make_result(a.value().cwiseAbs(), {a}, [](Node& self) {
    Node& pa = parent(self, 0);
    if (pa.requires_grad) {
      pa.accumulate_expr((self.grad.array() * pa.value.array().sign()).matrix());
    }
  });
}

Var square(const Var& a) {
  return make_result(a.value().array().square(), {a}, [](Node& self) {
    Node& pa = parent(self, 0);
    if (pa.requires_grad) pa.accumulate_expr((2.0 * self.grad.array() * pa.value.array()).matrix());
  });
}

Var gelu(const Var& a) {
  Matrix y = a.value().unaryExpr([](double x) { return x * normal_cdf(x); });
  return make_result(std::move(y), {a}, [](Node& self) {
    Node& pa = parent(self, 0);
    if (pa.requires_grad) {
      Matrix d = pa.value.unaryExpr([](double x) { return normal_cdf(x) + x * normal_pdf(x); });
      pa.accumulate_expr(self.grad.cwiseProduct(d));
    }
  });
}

Var relu(const Var& a) { return clamp_min(a, 0.0); }

double sigmoid_scalar(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

Var sigmoid(const Var& a) {
  return make_result(a.value().unaryExpr(&sigmoid_scalar), {a}, [](Node& self) {
    Node& pa = parent(self, 0);
    if (pa.requires_grad) {
      pa.accumulate_expr(
          (self.grad.array() * self.value.array() * (1.0 - self.value.array())).matrix());
    }
  });
}

// --- row-wise -------------------------------------------------------------

Var softmax_rows(const Var& a) {
  Matrix y = a.value();
  for (Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return make_result(std::move(y), {a}, [](Node& self) {
    Node& pa = parent(self, 0);
    if (!pa.requires_grad) return;
    Matrix g = self.grad.cwiseProduct(self.value);
    const Eigen::VectorXd dots = g.rowwise().sum();
    g -= (self.value.array().colwise() * dots.array()).matrix();
    pa.accumulate(g);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  check_row(x, gamma, "layer_norm gamma");
  check_row(x, beta, "layer_norm beta");
  const Index n = x.rows();
  const Index c = x.cols();
  auto xhat = std::make_shared<Matrix>(n, c);
  auto inv_std = std::make_shared<Eigen::VectorXd>(n);
  for (Index r = 0; r < n; ++r) {
    const double mean = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mean).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (x.value().row(r).array() - mean) * (*inv_std)(r);
  }
  Matrix y = xhat->array().rowwise() * gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  return make_result(std::move(y), {x, gamma, beta}, [xhat, inv_std](Node& self) {
    Node& px = parent(self, 0);
    Node& pg = parent(self, 1);
    Node& pb = parent(self, 2);
    const Matrix& g = self.grad;
    if (pg.requires_grad) pg.accumulate_expr(g.cwiseProduct(*xhat).colwise().sum());
    if (pb.requires_grad) pb.accumulate_expr(g.colwise().sum());
    if (px.requires_grad) {
      const Index cols = g.cols();
      Matrix dxhat = g.array().rowwise() * pg.value.row(0).array();
      Matrix dx(g.rows(), cols);
      for (Index r = 0; r < g.rows(); ++r) {
        const double mean_d = dxhat.row(r).mean();
        const double mean_dx = dxhat.row(r).dot(xhat->row(r)) / static_cast<double>(cols);
        dx.row(r) = (dxhat.row(r).array() - mean_d - xhat->row(r).array() * mean_dx) * (*inv_std)(r);
      }
      px.accumulate(dx);
    }
  });
}

// --- structural -----------------------------------------------------------

Var detach(const Var& a) { return constant(a.value()); }

Var gather_rows(const Var& a, std::span<const int> rows) {
  Matrix y(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[i]) + " out of range");
    }
    y.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return make_result(std::move(y), {a}, [idx = std::move(idx)](Node& self) {
    Node& pa = parent(self, 0);
    if (!pa.requires_grad) return;
    Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    }
    pa.accumulate(g);
  });
}

Var repeat_rows(const Var& row, Index n) {
  if (row.rows() != 1) {
    throw ShapeError("repeat_rows expects a single row");
  }
  Matrix y = row.value().replicate(n, 1);
  return make_result(std::move(y), {row}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate_expr(self.grad.colwise().sum());
  });
}

Var sum_rows(const Var& a) {
  return make_result(a.value().colwise().sum(), {a}, [](Node& self) {
    Node& pa = parent(self, 0);
    if (pa.requires_grad) pa.accumulate_expr(self.grad.replicate(pa.value.rows(), 1));
  });
}

Var mean_rows(const Var& a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows())); }

Var sum_all(const Var& a) {
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  return make_result(std::move(y), {a}, [](Node& self) {
    Node& pa = parent(self, 0);
    if (pa.requires_grad) {
      pa.accumulate_expr(Matrix::Constant(pa.value.rows(), pa.value.cols(), self.grad(0, 0)));
    }
  });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) {
    throw ShapeError("concat_cols: no inputs");
  }
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
  }
  Matrix y(parts.front().rows(), total);
  Index off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return make_result(std::move(y), parts, [](Node& self) {
    Index offset = 0;
    for (auto& p : self.parents) {
      const Index w = p->value.cols();
      if (p->requires_grad) p->accumulate_expr(self.grad.middleCols(offset, w));
      offset += w;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) {
    throw ShapeError("concat_rows: no inputs");
  }
  Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) throw ShapeError("concat_rows: column counts differ");
    total += p.rows();
  }
  Matrix y(total, parts.front().cols());
  Index off = 0;
  for (const auto& p : parts) {
    y.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return make_result(std::move(y), parts, [](Node& self) {
    Index offset = 0;
    for (auto& p : self.parents) {
      const Index h = p->value.rows();
      if (p->requires_grad) p->accumulate_expr(self.grad.middleRows(offset, h));
      offset += h;
    }
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: range out of bounds");
  }
  return make_result(a.value().middleCols(start, count), {a}, [start, count](Node& self) {
    Node& pa = parent(self, 0);
    if (!pa.requires_grad) return;
    if (pa.grad.size() == 0) pa.grad = Matrix::Zero(pa.value.rows(), pa.value.cols());
    pa.grad.middleCols(start, count) += self.grad;
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows: range out of bounds");
  }
  return make_result(a.value().middleRows(start, count), {a}, [start, count](Node& self) {
    Node& pa = parent(self, 0);
    if (!pa.requires_grad) return;
    if (pa.grad.size() == 0) pa.grad = Matrix::Zero(pa.value.rows(), pa.value.cols());
    pa.grad.middleRows(start, count) += self.grad;
  });
}

Var col(const Var& a, Index c) { return slice_cols(a, c, 1); }

Var pick(const Var& a, std::span<const int> cols) {
  if (static_cast<Index>(cols.size()) != a.rows()) throw ShapeError("pick: need one column per row");
  Matrix y(a.rows(), 1);
  for (Index r = 0; r < a.rows(); ++r) {
    const int c = cols[static_cast<std::size_t>(r)];
    if (c < 0 || c >= a.cols()) throw ShapeError("pick: column out of range");
    y(r, 0) = a.value()(r, c);
  }
  std::vector<int> idx(cols.begin(), cols.end());
  return make_result(std::move(y), {a}, [idx = std::move(idx)](Node& self) {
    Node& pa = parent(self, 0);
    if (!pa.requires_grad) return;
    Matrix g = Matrix::Zero(pa.value.rows(), pa.value.cols());
    for (Index r = 0; r < g.rows(); ++r) g(r, idx[static_cast<std::size_t>(r)]) = self.grad(r, 0);
    pa.accumulate(g);
  });
}

Var mul_col(const Var& a, const Var& c) {
  if (c.cols() != 1 || c.rows() != a.rows()) throw ShapeError("mul_col: expected an (n, 1) column");
  Matrix y = a.value().array().colwise() * c.value().col(0).array();
  return make_result(std::move(y), {a, c}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pc = parent(self, 1);
    if (pa.requires_grad) {
      Matrix g = self.grad.array().colwise() * pc.value.col(0).array();
      pa.accumulate(g);
    }
    if (pc.requires_grad) pc.accumulate_expr(self.grad.cwiseProduct(pa.value).rowwise().sum());
  });
}

// --- fused losses ---------------------------------------------------------

Var cross_entropy(const Var& logits, std::span<const int> targets, std::span<const double> weights) {
  const Index n = logits.rows();
  const Index k = logits.cols();
  if (static_cast<Index>(targets.size()) != n) {
    throw ShapeError("cross_entropy: target count does not match logit rows");
  }
  if (!weights.empty() && static_cast<Index>(weights.size()) != n) {
    throw ShapeError("cross_entropy: weight count does not match logit rows");
  }
  auto probs = std::make_shared<Matrix>(n, k);
  std::vector<double> w(static_cast<std::size_t>(n), 1.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  double wsum = 0.0;
  double total = 0.0;
  for (Index r = 0; r < n; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= k) throw ShapeError("cross_entropy: target class out of range");
    const double m = logits.value().row(r).maxCoeff();
    const auto e = (logits.value().row(r).array() - m).exp();
    const double z = e.sum();
    probs->row(r) = e / z;
    const double wr = w[static_cast<std::size_t>(r)];
    total += wr * (std::log(z) + m - logits.value()(r, t));
    wsum += wr;
  }
  if (wsum <= 0.0) wsum = 1.0;
  Matrix y(1, 1);
  y(0, 0) = total / wsum;
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result(std::move(y), {logits},
                     [probs, tgt = std::move(tgt), w = std::move(w), wsum](Node& self) {
                       Node& pl = parent(self, 0);
                       if (!pl.requires_grad) return;
                       Matrix g = *probs;
                       for (Index r = 0; r < g.rows(); ++r) {
                         g(r, tgt[static_cast<std::size_t>(r)]) -= 1.0;
                         g.row(r) *= w[static_cast<std::size_t>(r)] / wsum;
                       }
                       pl.accumulate_expr(g * self.grad(0, 0));
                     });
}

double focal_element(double x, double target, double alpha, double gamma) {
  const double p = sigmoid_scalar(x);
  const double log_p = -softplus_scalar(-x);
  const double log_1mp = -softplus_scalar(x);
  const double a_pos = alpha < 0 ? 1.0 : alpha;
  const double a_neg = alpha < 0 ? 1.0 : 1.0 - alpha;
  const double pos = -a_pos * std::pow(1.0 - p, gamma) * log_p;
  const double neg = -a_neg * std::pow(p, gamma) * log_1mp;
  return target * pos + (1.0 - target) * neg;
}

namespace {

double focal_element_grad(double x, double target, double alpha, double gamma) {
  const double p = sigmoid_scalar(x);
  const double log_p = -softplus_scalar(-x);
  const double log_1mp = -softplus_scalar(x);
  const double a_pos = alpha < 0 ? 1.0 : alpha;
  const double a_neg = alpha < 0 ? 1.0 : 1.0 - alpha;
  const double d_pos = a_pos * std::pow(1.0 - p, gamma) * (gamma * p * log_p - (1.0 - p));
  const double d_neg = a_neg * std::pow(p, gamma) * (-gamma * (1.0 - p) * log_1mp + p);
  return target * d_pos + (1.0 - target) * d_neg;
}

}  // namespace

Var focal_loss_sum(const Var& logits, const Matrix& targets, double alpha, double gamma) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
    throw ShapeError("focal_loss_sum: target shape mismatch");
  }
  double total = 0.0;
  for (Index r = 0; r < targets.rows(); ++r) {
    for (Index c = 0; c < targets.cols(); ++c) {
      total += focal_element(logits.value()(r, c), targets(r, c), alpha, gamma);
    }
  }
  Matrix y(1, 1);
  y(0, 0) = total;
  return make_result(std::move(y), {logits}, [targets, alpha, gamma](Node& self) {
    Node& pl = parent(self, 0);
    if (!pl.requires_grad) return;
    Matrix g(pl.value.rows(), pl.value.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      for (Index c = 0; c < g.cols(); ++c) {
        g(r, c) = focal_element_grad(pl.value(r, c), targets(r, c), alpha, gamma);
      }
    }
    pl.accumulate_expr(g * self.grad(0, 0));
  });
}

}  // namespace dqen::ag
