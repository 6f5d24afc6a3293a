#include "mmgt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include <Eigen/Dense>

namespace mmgt::ad {
namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::shared_ptr<Node> make_node(std::vector<std::size_t> shape,
                                const std::vector<Value>& parents) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val.assign(shape_size(n->shape), 0.0);
  n->grad.assign(n->val.size(), 0.0);
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    n->requires_grad = n->requires_grad || p.node()->requires_grad;
  }
  return n;
}

void check_same_shape(const Value& a, const Value& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// Row/column counts treating rank-1 tensors as a single row.
std::pair<std::size_t, std::size_t> as_matrix(const Value& v) {
  const auto& s = v.shape();
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw std::invalid_argument("expected rank-1/2 tensor");
}

}  // namespace

Value Value::param(std::vector<std::size_t> shape, std::vector<double> data) {
  auto n = std::make_shared<Node>();
  if (data.size() != shape_size(shape))
    throw std::invalid_argument("param: data/shape mismatch");
  n->shape = std::move(shape);
  n->val = std::move(data);
  n->grad.assign(n->val.size(), 0.0);
  n->requires_grad = true;
  return Value(n);
}

Value Value::constant(std::vector<std::size_t> shape,
                      std::vector<double> data) {
  auto n = std::make_shared<Node>();
  if (data.size() != shape_size(shape))
    throw std::invalid_argument("constant: data/shape mismatch");
  n->shape = std::move(shape);
  n->val = std::move(data);
  n->grad.assign(n->val.size(), 0.0);
  n->requires_grad = false;
  return Value(n);
}

double Value::item() const {
  if (node_->val.size() != 1)
    throw std::invalid_argument("item() on non-scalar tensor");
  return node_->val[0];
}

void backward(const Value& root) {
  if (root.size() != 1)
    throw std::invalid_argument("backward: root must be a single element");
  // Iterative DFS post-order for the topological sort.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.push_back({root.node().get(), 0});
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (!visited.count(parent)) {
        visited.insert(parent);
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn && (*it)->requires_grad) (*it)->backward_fn();
}

// ---------------------------------------------------------------- elementwise

namespace {
template <typename Fwd, typename Bwd>
Value elementwise_unary(const Value& a, Fwd fwd, Bwd bwd) {
  auto n = make_node(a.shape(), {a});
  for (std::size_t i = 0; i < n->val.size(); ++i) fwd(i, a.data()[i], n->val[i]);
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward_fn = [self, pa, bwd]() {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->val.size(); ++i)
      bwd(i, pa->val[i], self->val[i], self->grad[i], pa->grad[i]);
  };
  return Value(n);
}
}  // namespace

Value add(const Value& a, const Value& b) {
  check_same_shape(a, b, "add");
  auto n = make_node(a.shape(), {a, b});
  for (std::size_t i = 0; i < n->val.size(); ++i)
    n->val[i] = a.data()[i] + b.data()[i];
  Node* self = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backward_fn = [self, pa, pb]() {
    for (std::size_t i = 0; i < self->val.size(); ++i) {
      if (pa->requires_grad) pa->grad[i] += self->grad[i];
      if (pb->requires_grad) pb->grad[i] += self->grad[i];
    }
  };
  return Value(n);
}

Value sub(const Value& a, const Value& b) {
  check_same_shape(a, b, "sub");
  auto n = make_node(a.shape(), {a, b});
  for (std::size_t i = 0; i < n->val.size(); ++i)
    n->val[i] = a.data()[i] - b.data()[i];
  Node* self = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backward_fn = [self, pa, pb]() {
    for (std::size_t i = 0; i < self->val.size(); ++i) {
      if (pa->requires_grad) pa->grad[i] += self->grad[i];
      if (pb->requires_grad) pb->grad[i] -= self->grad[i];
    }
  };
  return Value(n);
}

Value mul(const Value& a, const Value& b) {
  check_same_shape(a, b, "mul");
  auto n = make_node(a.shape(), {a, b});
  for (std::size_t i = 0; i < n->val.size(); ++i)
    n->val[i] = a.data()[i] * b.data()[i];
  Node* self = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backward_fn = [self, pa, pb]() {
    for (std::size_t i = 0; i < self->val.size(); ++i) {
      if (pa->requires_grad) pa->grad[i] += self->grad[i] * pb->val[i];
      if (pb->requires_grad) pb->grad[i] += self->grad[i] * pa->val[i];
    }
  };
  return Value(n);
}

Value div(const Value& a, const Value& b) {
  check_same_shape(a, b, "div");
  auto n = make_node(a.shape(), {a, b});
  for (std::size_t i = 0; i < n->val.size(); ++i)
    n->val[i] = a.data()[i] / b.data()[i];
  Node* self = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backward_fn = [self, pa, pb]() {
    for (std::size_t i = 0; i < self->val.size(); ++i) {
      double inv = 1.0 / pb->val[i];
      if (pa->requires_grad) pa->grad[i] += self->grad[i] * inv;
      if (pb->requires_grad)
        pb->grad[i] -= self->grad[i] * pa->val[i] * inv * inv;
    }
  };
  return Value(n);
}

Value neg(const Value& a) {
  return elementwise_unary(
      a, [](std::size_t, double x, double& y) { y = -x; },
      [](std::size_t, double, double, double g, double& gx) { gx -= g; });
}

Value scale(const Value& a, double s) {
  return elementwise_unary(
      a, [s](std::size_t, double x, double& y) { y = s * x; },
      [s](std::size_t, double, double, double g, double& gx) { gx += s * g; });
}

Value add_scalar(const Value& a, double s) {
  return elementwise_unary(
      a, [s](std::size_t, double x, double& y) { y = x + s; },
      [](std::size_t, double, double, double g, double& gx) { gx += g; });
}

Value relu(const Value& a) {
  return elementwise_unary(
      a, [](std::size_t, double x, double& y) { y = x > 0.0 ? x : 0.0; },
      [](std::size_t, double x, double, double g, double& gx) {
        if (x > 0.0) gx += g;
      });
}

Value leaky_relu(const Value& a, double slope) {
  return elementwise_unary(
      a,
      [slope](std::size_t, double x, double& y) {
        y = x > 0.0 ? x : slope * x;
      },
      [slope](std::size_t, double x, double, double g, double& gx) {
        gx += (x > 0.0 ? 1.0 : slope) * g;
      });
}

Value sigmoid(const Value& a) {
  return elementwise_unary(
      a,
      [](std::size_t, double x, double& y) {
        y = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                     : std::exp(x) / (1.0 + std::exp(x));
      },
      [](std::size_t, double, double y, double g, double& gx) {
        gx += g * y * (1.0 - y);
      });
}

Value exp(const Value& a) {
  return elementwise_unary(
      a, [](std::size_t, double x, double& y) { y = std::exp(x); },
      [](std::size_t, double, double y, double g, double& gx) {
        gx += g * y;
      });
}

Value log(const Value& a) {
  return elementwise_unary(
      a, [](std::size_t, double x, double& y) { y = std::log(x); },
      [](std::size_t, double x, double, double g, double& gx) {
        gx += g / x;
      });
}

// ------------------------------------------------------------ shape/assembly

Value reshape(const Value& a, std::vector<std::size_t> shape) {
  if (shape_size(shape) != a.size())
    throw std::invalid_argument("reshape: element count mismatch");
  auto n = make_node(shape, {a});
  n->val = a.data();
  Node* self = n.get();
  Node* pa = a.node().get();
  n->backward_fn = [self, pa]() {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      pa->grad[i] += self->grad[i];
  };
  return Value(n);
}

Value stack_rows(const std::vector<Value>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
  std::size_t d = rows[0].size();
  auto n = make_node({rows.size(), d}, rows);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != d)
      throw std::invalid_argument("stack_rows: ragged rows");
    std::copy(rows[r].data().begin(), rows[r].data().end(),
              n->val.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  Node* self = n.get();
  std::vector<Node*> parents;
  for (const auto& r : rows) parents.push_back(r.node().get());
  n->backward_fn = [self, parents, d]() {
    for (std::size_t r = 0; r < parents.size(); ++r) {
      if (!parents[r]->requires_grad) continue;
      for (std::size_t j = 0; j < d; ++j)
        parents[r]->grad[j] += self->grad[r * d + j];
    }
  };
  return Value(n);
}

Value concat_cols(const Value& a, const Value& b) {
  auto [ra, ca] = as_matrix(a);
  auto [rb, cb] = as_matrix(b);
  if (ra != rb) throw std::invalid_argument("concat_cols: row mismatch");
  auto n = make_node({ra, ca + cb}, {a, b});
  for (std::size_t r = 0; r < ra; ++r) {
    for (std::size_t j = 0; j < ca; ++j)
      n->val[r * (ca + cb) + j] = a.data()[r * ca + j];
    for (std::size_t j = 0; j < cb; ++j)
      n->val[r * (ca + cb) + ca + j] = b.data()[r * cb + j];
  }
  Node* self = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backward_fn = [self, pa, pb, ra, ca, cb]() {
    for (std::size_t r = 0; r < ra; ++r) {
      if (pa->requires_grad)
        for (std::size_t j = 0; j < ca; ++j)
          pa->grad[r * ca + j] += self->grad[r * (ca + cb) + j];
      if (pb->requires_grad)
        for (std::size_t j = 0; j < cb; ++j)
          pb->grad[r * cb + j] += self->grad[r * (ca + cb) + ca + j];
    }
  };
  return Value(n);
}

Value concat_rows(const Value& a, const Value& b) {
  auto [ra, ca] = as_matrix(a);
  auto [rb, cb] = as_matrix(b);
  if (ca != cb) throw std::invalid_argument("concat_rows: column mismatch");
  auto n = make_node({ra + rb, ca}, {a, b});
  std::copy(a.data().begin(), a.data().end(), n->val.begin());
  std::copy(b.data().begin(), b.data().end(),
            n->val.begin() + static_cast<std::ptrdiff_t>(ra * ca));
  Node* self = n.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  n->backward_fn = [self, pa, pb, ra, ca]() {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < ra * ca; ++i) pa->grad[i] += self->grad[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < pb->grad.size(); ++i)
        pb->grad[i] += self->grad[ra * ca + i];
  };
  return Value(n);
}

// ------------------------------------------------------------------- matrix

Value matmul(const Value& a, const Value& b) {
  auto [n_, k] = as_matrix(a);
  auto [k2, m] = as_matrix(b);
  if (k != k2) throw std::invalid_argument("matmul: inner dim mismatch");
  auto out = make_node({n_, m}, {a, b});
  ConstMatMap A(a.data().data(), static_cast<Eigen::Index>(n_),
                static_cast<Eigen::Index>(k));
  ConstMatMap B(b.data().data(), static_cast<Eigen::Index>(k),
                static_cast<Eigen::Index>(m));
  MatMap O(out->val.data(), static_cast<Eigen::Index>(n_),
           static_cast<Eigen::Index>(m));
  O.noalias() = A * B;
  Node* self = out.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  out->backward_fn = [self, pa, pb, n_, k, m]() {
    ConstMatMap G(self->grad.data(), static_cast<Eigen::Index>(n_),
                  static_cast<Eigen::Index>(m));
    ConstMatMap A(pa->val.data(), static_cast<Eigen::Index>(n_),
                  static_cast<Eigen::Index>(k));
    ConstMatMap B(pb->val.data(), static_cast<Eigen::Index>(k),
                  static_cast<Eigen::Index>(m));
    if (pa->requires_grad) {
      MatMap GA(pa->grad.data(), static_cast<Eigen::Index>(n_),
                static_cast<Eigen::Index>(k));
      GA.noalias() += G * B.transpose();
    }
    if (pb->requires_grad) {
      MatMap GB(pb->grad.data(), static_cast<Eigen::Index>(k),
                static_cast<Eigen::Index>(m));
      GB.noalias() += A.transpose() * G;
    }
  };
  return Value(out);
}

Value matmul_nt(const Value& a, const Value& b) {
  auto [n_, k] = as_matrix(a);
  auto [m, k2] = as_matrix(b);
  if (k != k2) throw std::invalid_argument("matmul_nt: inner dim mismatch");
  auto out = make_node({n_, m}, {a, b});
  ConstMatMap A(a.data().data(), static_cast<Eigen::Index>(n_),
                static_cast<Eigen::Index>(k));
  ConstMatMap B(b.data().data(), static_cast<Eigen::Index>(m),
                static_cast<Eigen::Index>(k));
  MatMap O(out->val.data(), static_cast<Eigen::Index>(n_),
           static_cast<Eigen::Index>(m));
  O.noalias() = A * B.transpose();
  Node* self = out.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  out->backward_fn = [self, pa, pb, n_, k, m]() {
    ConstMatMap G(self->grad.data(), static_cast<Eigen::Index>(n_),
                  static_cast<Eigen::Index>(m));
    ConstMatMap A(pa->val.data(), static_cast<Eigen::Index>(n_),
                  static_cast<Eigen::Index>(k));
    ConstMatMap B(pb->val.data(), static_cast<Eigen::Index>(m),
                  static_cast<Eigen::Index>(k));
    if (pa->requires_grad) {
      MatMap GA(pa->grad.data(), static_cast<Eigen::Index>(n_),
                static_cast<Eigen::Index>(k));
      GA.noalias() += G * B;
    }
    if (pb->requires_grad) {
      MatMap GB(pb->grad.data(), static_cast<Eigen::Index>(m),
                static_cast<Eigen::Index>(k));
      GB.noalias() += G.transpose() * A;
    }
  };
  return Value(out);
}

Value add_rowvec(const Value& a, const Value& b) {
  auto [n_, d] = as_matrix(a);
  if (b.size() != d) throw std::invalid_argument("add_rowvec: dim mismatch");
  auto out = make_node({n_, d}, {a, b});
  for (std::size_t r = 0; r < n_; ++r)
    for (std::size_t j = 0; j < d; ++j)
      out->val[r * d + j] = a.data()[r * d + j] + b.data()[j];
  Node* self = out.get();
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  out->backward_fn = [self, pa, pb, n_, d]() {
    for (std::size_t r = 0; r < n_; ++r)
      for (std::size_t j = 0; j < d; ++j) {
        if (pa->requires_grad) pa->grad[r * d + j] += self->grad[r * d + j];
        if (pb->requires_grad) pb->grad[j] += self->grad[r * d + j];
      }
  };
  return Value(out);
}

Value mean_rows(const Value& a) {
  auto [n_, d] = as_matrix(a);
  auto out = make_node({1, d}, {a});
  for (std::size_t r = 0; r < n_; ++r)
    for (std::size_t j = 0; j < d; ++j) out->val[j] += a.data()[r * d + j];
  for (std::size_t j = 0; j < d; ++j) out->val[j] /= static_cast<double>(n_);
  Node* self = out.get();
  Node* pa = a.node().get();
  out->backward_fn = [self, pa, n_, d]() {
    if (!pa->requires_grad) return;
    double inv = 1.0 / static_cast<double>(n_);
    for (std::size_t r = 0; r < n_; ++r)
      for (std::size_t j = 0; j < d; ++j)
        pa->grad[r * d + j] += self->grad[j] * inv;
  };
  return Value(out);
}

Value sum(const Value& a) {
  auto out = make_node({1}, {a});
  double s = 0.0;
  for (double v : a.data()) s += v;
  out->val[0] = s;
  Node* self = out.get();
  Node* pa = a.node().get();
  out->backward_fn = [self, pa]() {
    if (!pa->requires_grad) return;
    for (auto& g : pa->grad) g += self->grad[0];
  };
  return Value(out);
}

Value mean(const Value& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// ------------------------------------------------------------ indexed/graph

Value gather_rows(const Value& a, const std::vector<int>& idx) {
  auto [n_, d] = as_matrix(a);
  auto out = make_node({idx.size(), d}, {a});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= n_)
      throw std::out_of_range("gather_rows: index out of range");
    std::copy_n(a.data().begin() + idx[r] * static_cast<std::ptrdiff_t>(d), d,
                out->val.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  Node* self = out.get();
  Node* pa = a.node().get();
  out->backward_fn = [self, pa, idx, d]() {
    if (!pa->requires_grad) return;
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j)
        pa->grad[static_cast<std::size_t>(idx[r]) * d + j] +=
            self->grad[r * d + j];
  };
  return Value(out);
}

Value segment_sum(const Value& a, const std::vector<int>& seg,
                  std::size_t n_segments) {
  auto [n_, d] = as_matrix(a);
  if (seg.size() != n_)
    throw std::invalid_argument("segment_sum: segment ids length mismatch");
  auto out = make_node({n_segments, d}, {a});
  for (std::size_t r = 0; r < n_; ++r) {
    if (seg[r] < 0 || static_cast<std::size_t>(seg[r]) >= n_segments)
      throw std::out_of_range("segment_sum: segment id out of range");
    for (std::size_t j = 0; j < d; ++j)
      out->val[static_cast<std::size_t>(seg[r]) * d + j] +=
          a.data()[r * d + j];
  }
  Node* self = out.get();
  Node* pa = a.node().get();
  out->backward_fn = [self, pa, seg, d]() {
    if (!pa->requires_grad) return;
    for (std::size_t r = 0; r < seg.size(); ++r)
      for (std::size_t j = 0; j < d; ++j)
        pa->grad[r * d + j] +=
            self->grad[static_cast<std::size_t>(seg[r]) * d + j];
  };
  return Value(out);
}

Value segment_softmax(const Value& logits, const std::vector<int>& seg,
                      std::size_t n_segments) {
  auto [m, one] = as_matrix(logits);
  if (one != 1)
    throw std::invalid_argument("segment_softmax: expected M×1 logits");
  if (seg.size() != m)
    throw std::invalid_argument("segment_softmax: segment ids length mismatch");
  auto out = make_node({m, 1}, {logits});
  std::vector<double> seg_max(n_segments,
                              -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < m; ++r)
    seg_max[static_cast<std::size_t>(seg[r])] =
        std::max(seg_max[static_cast<std::size_t>(seg[r])], logits.data()[r]);
  std::vector<double> seg_sum(n_segments, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    double e = std::exp(logits.data()[r] -
                        seg_max[static_cast<std::size_t>(seg[r])]);
    out->val[r] = e;
    seg_sum[static_cast<std::size_t>(seg[r])] += e;
  }
  for (std::size_t r = 0; r < m; ++r)
    out->val[r] /= seg_sum[static_cast<std::size_t>(seg[r])];
  Node* self = out.get();
  Node* pl = logits.node().get();
  out->backward_fn = [self, pl, seg, n_segments]() {
    if (!pl->requires_grad) return;
    // d/dx_e = alpha_e * (g_e - sum_{e' in same segment} g_{e'} alpha_{e'})
    std::vector<double> seg_dot(n_segments, 0.0);
    for (std::size_t r = 0; r < seg.size(); ++r)
      seg_dot[static_cast<std::size_t>(seg[r])] +=
          self->grad[r] * self->val[r];
    for (std::size_t r = 0; r < seg.size(); ++r)
      pl->grad[r] += self->val[r] * (self->grad[r] -
                                     seg_dot[static_cast<std::size_t>(seg[r])]);
  };
  return Value(out);
}

Value row_scale(const Value& a, const Value& s) {
  auto [n_, d] = as_matrix(a);
  if (s.size() != n_) throw std::invalid_argument("row_scale: length mismatch");
  auto out = make_node({n_, d}, {a, s});
  for (std::size_t r = 0; r < n_; ++r)
    for (std::size_t j = 0; j < d; ++j)
      out->val[r * d + j] = a.data()[r * d + j] * s.data()[r];
  Node* self = out.get();
  Node* pa = a.node().get();
  Node* ps = s.node().get();
  out->backward_fn = [self, pa, ps, n_, d]() {
    for (std::size_t r = 0; r < n_; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double g = self->grad[r * d + j];
        if (pa->requires_grad) pa->grad[r * d + j] += g * ps->val[r];
        acc += g * pa->val[r * d + j];
      }
      if (ps->requires_grad) ps->grad[r] += acc;
    }
  };
  return Value(out);
}

Value scale_rows_const(const Value& a, const std::vector<double>& s) {
  auto [n_, d] = as_matrix(a);
  if (s.size() != n_)
    throw std::invalid_argument("scale_rows_const: length mismatch");
  auto out = make_node({n_, d}, {a});
  for (std::size_t r = 0; r < n_; ++r)
    for (std::size_t j = 0; j < d; ++j)
      out->val[r * d + j] = a.data()[r * d + j] * s[r];
  Node* self = out.get();
  Node* pa = a.node().get();
  out->backward_fn = [self, pa, s, n_, d]() {
    if (!pa->requires_grad) return;
    for (std::size_t r = 0; r < n_; ++r)
      for (std::size_t j = 0; j < d; ++j)
        pa->grad[r * d + j] += self->grad[r * d + j] * s[r];
  };
  return Value(out);
}

// ------------------------------------------------------ norms / similarities

Value l2_normalize_rows(const Value& a) {
  auto [n_, d] = as_matrix(a);
  auto out = make_node({n_, d}, {a});
  std::vector<double> norms(n_);
  for (std::size_t r = 0; r < n_; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double v = a.data()[r * d + j];
      sq += v * v;
    }
    if (sq == 0.0)
      throw std::domain_error("l2_normalize_rows: zero-norm row");
    norms[r] = std::sqrt(sq);
    for (std::size_t j = 0; j < d; ++j)
      out->val[r * d + j] = a.data()[r * d + j] / norms[r];
  }
  Node* self = out.get();
  Node* pa = a.node().get();
  out->backward_fn = [self, pa, norms, n_, d]() {
    if (!pa->requires_grad) return;
    for (std::size_t r = 0; r < n_; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j)
        dot += self->grad[r * d + j] * self->val[r * d + j];
      for (std::size_t j = 0; j < d; ++j)
        pa->grad[r * d + j] +=
            (self->grad[r * d + j] - self->val[r * d + j] * dot) / norms[r];
    }
  };
  return Value(out);
}

Value group_mean(const Value& x, const std::vector<std::vector<int>>& groups,
                 double fallback) {
  auto [n_, one] = as_matrix(x);
  if (one != 1) throw std::invalid_argument("group_mean: expected N×1 input");
  auto out = make_node({groups.size(), 1}, {x});
  for (std::size_t e = 0; e < groups.size(); ++e) {
    if (groups[e].empty()) {
      out->val[e] = fallback;
      continue;
    }
    double s = 0.0;
    for (int k : groups[e]) {
      if (k < 0 || static_cast<std::size_t>(k) >= n_)
        throw std::out_of_range("group_mean: index out of range");
      s += x.data()[static_cast<std::size_t>(k)];
    }
    out->val[e] = s / static_cast<double>(groups[e].size());
  }
  Node* self = out.get();
  Node* px = x.node().get();
  out->backward_fn = [self, px, groups]() {
    if (!px->requires_grad) return;
    for (std::size_t e = 0; e < groups.size(); ++e) {
      if (groups[e].empty()) continue;
      double share = self->grad[e] / static_cast<double>(groups[e].size());
      for (int k : groups[e]) px->grad[static_cast<std::size_t>(k)] += share;
    }
  };
  return Value(out);
}

// ------------------------------------------------------------------- losses

Value info_nce_rows(const Value& scores, double tau,
                    bool include_positive_in_denominator) {
  auto [n_, m] = as_matrix(scores);
  if (n_ != m || n_ < 2)
    throw std::invalid_argument("info_nce_rows: need square N×N scores, N>=2");
  if (tau <= 0.0) throw std::invalid_argument("info_nce_rows: tau must be > 0");
  auto out = make_node({n_, 1}, {scores});
  // Softmax weights over each row's denominator set, kept for the backward.
  auto probs = std::make_shared<std::vector<double>>(n_ * n_, 0.0);
  for (std::size_t i = 0; i < n_; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n_; ++j) {
      if (!include_positive_in_denominator && j == i) continue;
      mx = std::max(mx, scores.data()[i * n_ + j] / tau);
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      if (!include_positive_in_denominator && j == i) continue;
      denom += std::exp(scores.data()[i * n_ + j] / tau - mx);
    }
    double lse = mx + std::log(denom);
    out->val[i] = -scores.data()[i * n_ + i] / tau + lse;
    for (std::size_t j = 0; j < n_; ++j) {
      if (!include_positive_in_denominator && j == i) continue;
      (*probs)[i * n_ + j] = std::exp(scores.data()[i * n_ + j] / tau - lse);
    }
  }
  Node* self = out.get();
  Node* ps = scores.node().get();
  out->backward_fn = [self, ps, probs, n_, tau]() {
    if (!ps->requires_grad) return;
    for (std::size_t i = 0; i < n_; ++i) {
      double g = self->grad[i];
      ps->grad[i * n_ + i] -= g / tau;
      for (std::size_t j = 0; j < n_; ++j)
        ps->grad[i * n_ + j] += g * (*probs)[i * n_ + j] / tau;
    }
  };
  return Value(out);
}

Value mse(const Value& pred, const std::vector<double>& target) {
  if (pred.size() != target.size())
    throw std::invalid_argument("mse: size mismatch");
  auto out = make_node({1}, {pred});
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    double diff = pred.data()[i] - target[i];
    s += diff * diff;
  }
  out->val[0] = s / static_cast<double>(target.size());
  Node* self = out.get();
  Node* pp = pred.node().get();
  out->backward_fn = [self, pp, target]() {
    if (!pp->requires_grad) return;
    double c = 2.0 * self->grad[0] / static_cast<double>(target.size());
    for (std::size_t i = 0; i < target.size(); ++i)
      pp->grad[i] += c * (pp->val[i] - target[i]);
  };
  return Value(out);
}

Value bce_with_logits(const Value& logits, const std::vector<double>& targets,
                      const std::vector<std::uint8_t>& mask) {
  auto [n_, one] = as_matrix(logits);
  if (one != 1)
    throw std::invalid_argument("bce_with_logits: expected N×1 logits");
  if (targets.size() != n_ || mask.size() != n_)
    throw std::invalid_argument("bce_with_logits: size mismatch");
  std::size_t count = 0;
  for (auto m : mask) count += (m != 0);
  if (count == 0)
    throw std::invalid_argument("bce_with_logits: empty mask");
  auto out = make_node({1}, {logits});
  double s = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    if (!mask[i]) continue;
    double x = logits.data()[i];
    // softplus(x) - y*x, computed stably
    double sp = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    s += sp - targets[i] * x;
  }
  out->val[0] = s / static_cast<double>(count);
  Node* self = out.get();
  Node* pl = logits.node().get();
  out->backward_fn = [self, pl, targets, mask, count]() {
    if (!pl->requires_grad) return;
    double c = self->grad[0] / static_cast<double>(count);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      double x = pl->val[i];
      double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
      pl->grad[i] += c * (sig - targets[i]);
    }
  };
  return Value(out);
}

// --------------------------------------------------------------- volumetric

namespace {
struct ConvDims {
  std::size_t c, x, y, z;    // input
  std::size_t ox, oy, oz;    // output spatial
  std::size_t k, pad;
};

// Lowered patch matrix: rows C*k^3, cols ox*oy*oz.
void im2col(const std::vector<double>& src, const ConvDims& d,
            std::vector<double>& cols) {
  std::size_t ncols = d.ox * d.oy * d.oz;
  std::size_t k3 = d.k * d.k * d.k;
  cols.assign(d.c * k3 * ncols, 0.0);
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t kx = 0; kx < d.k; ++kx)
      for (std::size_t ky = 0; ky < d.k; ++ky)
        for (std::size_t kz = 0; kz < d.k; ++kz) {
          std::size_t row = ((c * d.k + kx) * d.k + ky) * d.k + kz;
          for (std::size_t oxp = 0; oxp < d.ox; ++oxp) {
            long long ix = static_cast<long long>(oxp + kx) -
                           static_cast<long long>(d.pad);
            if (ix < 0 || ix >= static_cast<long long>(d.x)) continue;
            for (std::size_t oyp = 0; oyp < d.oy; ++oyp) {
              long long iy = static_cast<long long>(oyp + ky) -
                             static_cast<long long>(d.pad);
              if (iy < 0 || iy >= static_cast<long long>(d.y)) continue;
              for (std::size_t ozp = 0; ozp < d.oz; ++ozp) {
                long long iz = static_cast<long long>(ozp + kz) -
                               static_cast<long long>(d.pad);
                if (iz < 0 || iz >= static_cast<long long>(d.z)) continue;
                std::size_t col = (oxp * d.oy + oyp) * d.oz + ozp;
                cols[row * ncols + col] =
                    src[((c * d.x + static_cast<std::size_t>(ix)) * d.y +
                         static_cast<std::size_t>(iy)) *
                            d.z +
                        static_cast<std::size_t>(iz)];
              }
            }
          }
        }
}

// Adjoint of im2col: scatter-add patch grads back onto the input grid.
void col2im_add(const std::vector<double>& cols, const ConvDims& d,
                std::vector<double>& dst) {
  std::size_t ncols = d.ox * d.oy * d.oz;
  for (std::size_t c = 0; c < d.c; ++c)
    for (std::size_t kx = 0; kx < d.k; ++kx)
      for (std::size_t ky = 0; ky < d.k; ++ky)
        for (std::size_t kz = 0; kz < d.k; ++kz) {
          std::size_t row = ((c * d.k + kx) * d.k + ky) * d.k + kz;
          for (std::size_t oxp = 0; oxp < d.ox; ++oxp) {
            long long ix = static_cast<long long>(oxp + kx) -
                           static_cast<long long>(d.pad);
            if (ix < 0 || ix >= static_cast<long long>(d.x)) continue;
            for (std::size_t oyp = 0; oyp < d.oy; ++oyp) {
              long long iy = static_cast<long long>(oyp + ky) -
                             static_cast<long long>(d.pad);
              if (iy < 0 || iy >= static_cast<long long>(d.y)) continue;
              for (std::size_t ozp = 0; ozp < d.oz; ++ozp) {
                long long iz = static_cast<long long>(ozp + kz) -
                               static_cast<long long>(d.pad);
                if (iz < 0 || iz >= static_cast<long long>(d.z)) continue;
                std::size_t col = (oxp * d.oy + oyp) * d.oz + ozp;
                dst[((c * d.x + static_cast<std::size_t>(ix)) * d.y +
                     static_cast<std::size_t>(iy)) *
                        d.z +
                    static_cast<std::size_t>(iz)] += cols[row * ncols + col];
              }
            }
          }
        }
}
}  // namespace

Value conv3d(const Value& x, const Value& w, std::size_t kernel,
             std::size_t pad) {
  if (x.shape().size() != 4)
    throw std::invalid_argument("conv3d: input must be {C,X,Y,Z}");
  ConvDims d;
  d.c = x.shape()[0];
  d.x = x.shape()[1];
  d.y = x.shape()[2];
  d.z = x.shape()[3];
  d.k = kernel;
  d.pad = pad;
  if (d.x + 2 * pad < kernel || d.y + 2 * pad < kernel ||
      d.z + 2 * pad < kernel)
    throw std::invalid_argument("conv3d: kernel larger than padded input");
  d.ox = d.x + 2 * pad - kernel + 1;
  d.oy = d.y + 2 * pad - kernel + 1;
  d.oz = d.z + 2 * pad - kernel + 1;
  std::size_t k3 = kernel * kernel * kernel;
  auto [o, ck3] = as_matrix(w);
  if (ck3 != d.c * k3)
    throw std::invalid_argument("conv3d: weight columns must equal C*k^3");
  auto cols = std::make_shared<std::vector<double>>();
  im2col(x.data(), d, *cols);
  std::size_t ncols = d.ox * d.oy * d.oz;
  auto out = make_node({o, d.ox, d.oy, d.oz}, {x, w});
  ConstMatMap W(w.data().data(), static_cast<Eigen::Index>(o),
                static_cast<Eigen::Index>(ck3));
  ConstMatMap C(cols->data(), static_cast<Eigen::Index>(ck3),
                static_cast<Eigen::Index>(ncols));
  MatMap O(out->val.data(), static_cast<Eigen::Index>(o),
           static_cast<Eigen::Index>(ncols));
  O.noalias() = W * C;
  Node* self = out.get();
  Node* px = x.node().get();
  Node* pw = w.node().get();
  out->backward_fn = [self, px, pw, cols, d, o, ck3, ncols]() {
    ConstMatMap G(self->grad.data(), static_cast<Eigen::Index>(o),
                  static_cast<Eigen::Index>(ncols));
    if (pw->requires_grad) {
      ConstMatMap C(cols->data(), static_cast<Eigen::Index>(ck3),
                    static_cast<Eigen::Index>(ncols));
      MatMap GW(pw->grad.data(), static_cast<Eigen::Index>(o),
                static_cast<Eigen::Index>(ck3));
      GW.noalias() += G * C.transpose();
    }
    if (px->requires_grad) {
      ConstMatMap W(pw->val.data(), static_cast<Eigen::Index>(o),
                    static_cast<Eigen::Index>(ck3));
      std::vector<double> dcols(ck3 * ncols);
      MatMap DC(dcols.data(), static_cast<Eigen::Index>(ck3),
                static_cast<Eigen::Index>(ncols));
      DC.noalias() = W.transpose() * G;
      col2im_add(dcols, d, px->grad);
    }
  };
  return Value(out);
}

Value maxpool3d(const Value& x) {
  if (x.shape().size() != 4)
    throw std::invalid_argument("maxpool3d: input must be {C,X,Y,Z}");
  std::size_t c = x.shape()[0], nx = x.shape()[1], ny = x.shape()[2],
              nz = x.shape()[3];
  std::size_t ox = (nx + 1) / 2, oy = (ny + 1) / 2, oz = (nz + 1) / 2;
  auto out = make_node({c, ox, oy, oz}, {x});
  auto argmax = std::make_shared<std::vector<std::size_t>>(c * ox * oy * oz);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < ox; ++i)
      for (std::size_t j = 0; j < oy; ++j)
        for (std::size_t k = 0; k < oz; ++k) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t dx = 0; dx < 2 && 2 * i + dx < nx; ++dx)
            for (std::size_t dy = 0; dy < 2 && 2 * j + dy < ny; ++dy)
              for (std::size_t dz = 0; dz < 2 && 2 * k + dz < nz; ++dz) {
                std::size_t idx =
                    ((ci * nx + 2 * i + dx) * ny + 2 * j + dy) * nz + 2 * k +
                    dz;
                if (x.data()[idx] > best) {
                  best = x.data()[idx];
                  best_idx = idx;
                }
              }
          std::size_t oidx = ((ci * ox + i) * oy + j) * oz + k;
          out->val[oidx] = best;
          (*argmax)[oidx] = best_idx;
        }
  Node* self = out.get();
  Node* px = x.node().get();
  out->backward_fn = [self, px, argmax]() {
    if (!px->requires_grad) return;
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      px->grad[(*argmax)[i]] += self->grad[i];
  };
  return Value(out);
}

double finite_difference(const std::function<double()>& f, Value leaf,
                         std::size_t index, double eps) {
  double original = leaf.data()[index];
  leaf.data()[index] = original + eps;
  double hi = f();
  leaf.data()[index] = original - eps;
  double lo = f();
  leaf.data()[index] = original;
  return (hi - lo) / (2.0 * eps);
}

}  // namespace mmgt::ad
