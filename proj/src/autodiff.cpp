#include "gest/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <unordered_set>

#include "gest/error.hpp"

namespace gest::ad {

namespace {

thread_local bool g_grad_enabled = true;

Var make_result(Mat value, std::initializer_list<Var> inputs, std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs) node->parents.push_back(in.shared());
      node->backprop = std::move(backprop);
    }
  }
  return Var(std::move(node));
}

void push(Node& parent, const Mat& g) {
  if (parent.requires_grad) parent.add_grad(g);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error("shape", std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                             std::to_string(b.cols()));
  }
}

}  // namespace

void Node::add_grad(const Mat& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Mat Var::grad() const {
  if (node_->grad.size() == 0) return Mat::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Mat value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Mat value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void backward(const Var& loss) {
  require(loss.rows() == 1 && loss.cols() == 1, "shape", "backward expects a scalar loss");
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !p->parents.empty() && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->add_grad(Mat::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() != 0) n->backprop(*n);
  }
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "shape", "matmul: inner dimensions differ");
  return make_result(a.value() * b.value(), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.add_grad(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.add_grad(pa.value.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), "shape", "matmul_nt: inner dimensions differ");
  return make_result(a.value() * b.value().transpose(), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.add_grad(self.grad * pb.value);
    if (pb.requires_grad) pb.add_grad(self.grad.transpose() * pa.value);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    push(*self.parents[0], self.grad);
    push(*self.parents[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    push(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->add_grad(-self.grad);
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) { push(*self.parents[0], self.grad * s); });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "shape", "add_row: row width mismatch");
  Mat v = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(v), {a, row}, [](Node& self) {
    push(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->add_grad(self.grad.colwise().sum());
  });
}

namespace {
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;
}  // namespace

Var gelu(const Var& a) {
  constexpr double k = kGeluK;
  constexpr double c = kGeluC;
  const Mat& x = a.value();
  Mat t = (k * (x.array() + c * x.array().cube())).tanh().matrix();
  Mat y = (0.5 * x.array() * (1.0 + t.array())).matrix();
  return make_result(std::move(y), {a}, [t = std::move(t)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const auto x = p.value.array();
    const auto tt = t.array();
    Mat d = (0.5 * (1.0 + tt) + 0.5 * x * (1.0 - tt.square()) * kGeluK * (1.0 + 3.0 * kGeluC * x.square())).matrix();
    p.add_grad((self.grad.array() * d.array()).matrix());
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index c = x.cols();
  require(gamma.cols() == c && beta.cols() == c, "shape", "layer_norm: parameter width mismatch");
  Mat xhat(n, c);
  Vec inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mean).square().mean();
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mean) * inv_std[i];
  }
  Mat y = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  y.rowwise() += beta.value().row(0);
  return make_result(std::move(y), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       const Mat& g = self.grad;
                       if (pg.requires_grad) pg.add_grad((g.array() * xhat.array()).colwise().sum().matrix());
                       if (pb.requires_grad) pb.add_grad(g.colwise().sum());
                       if (px.requires_grad) {
                         Mat dxhat = (g.array().rowwise() * pg.value.row(0).array()).matrix();
                         Mat dx(g.rows(), g.cols());
                         for (Eigen::Index i = 0; i < g.rows(); ++i) {
                           const double m1 = dxhat.row(i).mean();
                           const double m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
                           dx.row(i) = inv_std[i] * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
                         }
                         px.add_grad(dx);
                       }
                     });
}

Var softmax_rows(const Var& x, bool causal) {
  const Eigen::Index n = x.rows();
  const Eigen::Index c = x.cols();
  Mat y = Mat::Zero(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index valid = causal ? std::min<Eigen::Index>(i + 1, c) : c;
    auto row = x.value().row(i).head(valid);
    const double m = row.maxCoeff();
    auto e = (row.array() - m).exp();
    y.row(i).head(valid) = e / e.sum();
  }
  Mat y_copy = y;
  return make_result(std::move(y), {x}, [y = std::move(y_copy)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Mat gy = (self.grad.array() * y.array()).matrix();
    Vec dots = gy.rowwise().sum();
    Mat gx = gy - (y.array().colwise() * dots.array()).matrix();
    p.add_grad(gx);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "shape", "slice_cols out of range");
  Mat v = a.value().middleCols(start, count);
  return make_result(std::move(v), {a}, [start, count](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    g.middleCols(start, count) = self.grad;
    p.add_grad(g);
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "shape", "slice_rows out of range");
  Mat v = a.value().middleRows(start, count);
  return make_result(std::move(v), {a}, [start, count](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    g.middleRows(start, count) = self.grad;
    p.add_grad(g);
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "shape", "concat_cols of nothing");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "shape", "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(v);
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && g_grad_enabled) {
    node->requires_grad = true;
    for (const auto& p : parts) node->parents.push_back(p.shared());
    node->backprop = [](Node& self) {
      Eigen::Index off = 0;
      for (auto& p : self.parents) {
        const Eigen::Index w = p->value.cols();
        if (p->requires_grad) p->add_grad(self.grad.middleCols(off, w));
        off += w;
      }
    };
  }
  return Var(std::move(node));
}

Var embedding(const Var& table, std::span<const int> ids) {
  const auto n = static_cast<Eigen::Index>(ids.size());
  Mat v(n, table.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    require(ids[i] >= 0 && ids[i] < table.rows(), "shape", "embedding id out of range");
    v.row(i) = table.value().row(ids[i]);
  }
  std::vector<int> copy(ids.begin(), ids.end());
  return make_result(std::move(v), {table}, [copy = std::move(copy)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    for (std::size_t i = 0; i < copy.size(); ++i) g.row(copy[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    p.add_grad(g);
  });
}

Var conv1d(const Var& x, const Var& weight, const Var& bias, int kernel, int stride, int pad) {
  const Eigen::Index t_in = x.rows();
  const Eigen::Index c_in = x.cols();
  require(weight.rows() == kernel * c_in, "shape", "conv1d: weight rows must equal kernel * in_channels");
  require(bias.rows() == 1 && bias.cols() == weight.cols(), "shape", "conv1d: bias width mismatch");
  const Eigen::Index t_out = (t_in + 2 * pad - kernel) / stride + 1;
  require(t_out >= 1, "shape", "conv1d: input too short");

  auto cols = std::make_shared<Mat>(Mat::Zero(t_out, kernel * c_in));
  for (Eigen::Index o = 0; o < t_out; ++o) {
    for (int k = 0; k < kernel; ++k) {
      const Eigen::Index src = o * stride - pad + k;
      if (src >= 0 && src < t_in) cols->block(o, k * c_in, 1, c_in) = x.value().row(src);
    }
  }
  Mat y = (*cols) * weight.value();
  y.rowwise() += bias.value().row(0);
  return make_result(std::move(y), {x, weight, bias}, [cols, kernel, stride, pad](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    const Mat& g = self.grad;
    if (pw.requires_grad) pw.add_grad(cols->transpose() * g);
    if (pb.requires_grad) pb.add_grad(g.colwise().sum());
    if (px.requires_grad) {
      const Eigen::Index c_in = px.value.cols();
      const Eigen::Index t_in = px.value.rows();
      Mat gcols = g * pw.value.transpose();
      Mat gx = Mat::Zero(t_in, c_in);
      for (Eigen::Index o = 0; o < gcols.rows(); ++o) {
        for (int k = 0; k < kernel; ++k) {
          const Eigen::Index src = o * stride - pad + k;
          if (src >= 0 && src < t_in) gx.row(src) += gcols.block(o, k * c_in, 1, c_in);
        }
      }
      px.add_grad(gx);
    }
  });
}

Var upsample_rows(const Var& x, int factor) {
  require(factor >= 1, "invalid_argument", "upsample factor must be >= 1");
  Mat v(x.rows() * factor, x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (int f = 0; f < factor; ++f) v.row(i * factor + f) = x.value().row(i);
  }
  return make_result(std::move(v), {x}, [factor](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      for (int f = 0; f < factor; ++f) g.row(i) += self.grad.row(i * factor + f);
    }
    p.add_grad(g);
  });
}

Var straight_through(const Var& x, const Mat& replacement) {
  require(replacement.rows() == x.rows() && replacement.cols() == x.cols(), "shape",
          "straight_through: shape mismatch");
  return make_result(replacement, {x}, [](Node& self) { push(*self.parents[0], self.grad); });
}

Var mse(const Var& a, const Var& b) {
  check_same_shape(a, b, "mse");
  Mat diff = a.value() - b.value();
  const double n = static_cast<double>(diff.size());
  Mat v(1, 1);
  v(0, 0) = diff.squaredNorm() / n;
  return make_result(std::move(v), {a, b}, [diff = std::move(diff), n](Node& self) {
    const double g = self.grad(0, 0) * 2.0 / n;
    if (self.parents[0]->requires_grad) self.parents[0]->add_grad(diff * g);
    if (self.parents[1]->requires_grad) self.parents[1]->add_grad(diff * -g);
  });
}

Var cross_entropy(const Var& logits, std::span<const int> targets, std::span<const unsigned char> mask) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index v = logits.cols();
  require(static_cast<Eigen::Index>(targets.size()) == n && static_cast<Eigen::Index>(mask.size()) == n, "shape",
          "cross_entropy: targets/mask length must equal logits rows");
  double count = 0;
  for (auto m : mask) count += m ? 1.0 : 0.0;
  require(count > 0, "invalid_argument", "cross_entropy: empty loss mask");

  auto probs = std::make_shared<Mat>(Mat::Zero(n, v));
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    require(targets[i] >= 0 && targets[i] < v, "shape", "cross_entropy: target out of range");
    auto row = logits.value().row(i);
    const double m = row.maxCoeff();
    Eigen::RowVectorXd e = (row.array() - m).exp();
    const double z = e.sum();
    total += std::log(z) + m - row(targets[i]);
    probs->row(i) = e / z;
  }
  Mat out(1, 1);
  out(0, 0) = total / count;
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<unsigned char> mk(mask.begin(), mask.end());
  return make_result(std::move(out), {logits}, [probs, tg = std::move(tg), mk = std::move(mk), count](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Mat g = *probs;
    for (std::size_t i = 0; i < tg.size(); ++i) {
      if (mk[i]) g(static_cast<Eigen::Index>(i), tg[i]) -= 1.0;
    }
    p.add_grad(g * (self.grad(0, 0) / count));
  });
}

}  // namespace gest::ad
