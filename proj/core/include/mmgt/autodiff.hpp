#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mmgt::ad {

/// One node of the computation graph. Values and gradients are dense
/// row-major double buffers; `backward_fn` pulls this node's grad into the
/// parents' grads. Nodes are built per forward pass and freed with the graph;
/// parameters are long-lived leaves.
struct Node {
  std::vector<std::size_t> shape;
  std::vector<double> val;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  std::size_t size() const { return val.size(); }
};

/// Cheap handle to a graph node.
class Value {
 public:
  Value() = default;
  explicit Value(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  /// Leaf that participates in gradients (a trainable parameter).
  static Value param(std::vector<std::size_t> shape, std::vector<double> data);
  /// Leaf without gradient (input data / frozen tensor).
  static Value constant(std::vector<std::size_t> shape,
                        std::vector<double> data);
  static Value scalar(double v) { return constant({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->val.size(); }
  std::vector<double>& data() { return node_->val; }
  const std::vector<double>& data() const { return node_->val; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  /// Value of a single-element tensor.
  double item() const;
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }

  std::shared_ptr<Node> node() const { return node_; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

 private:
  std::shared_ptr<Node> node_;
};

/// Reverse-mode sweep from a single-element root (seed gradient 1).
void backward(const Value& root);

// ---- elementwise / scalar ----
Value add(const Value& a, const Value& b);           // same shape
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value neg(const Value& a);
Value scale(const Value& a, double s);
Value add_scalar(const Value& a, double s);
Value relu(const Value& a);                          // relu'(0) = 0
Value leaky_relu(const Value& a, double slope);
Value sigmoid(const Value& a);
Value exp(const Value& a);
Value log(const Value& a);

// ---- shape / assembly ----
Value reshape(const Value& a, std::vector<std::size_t> shape);
Value stack_rows(const std::vector<Value>& rows);    // k × (1×d) -> k×d
Value concat_cols(const Value& a, const Value& b);   // N×d1, N×d2 -> N×(d1+d2)
Value concat_rows(const Value& a, const Value& b);   // N1×d, N2×d -> (N1+N2)×d

// ---- matrix ----
Value matmul(const Value& a, const Value& b);        // n×k · k×m
Value matmul_nt(const Value& a, const Value& b);     // n×k · (m×k)^T -> n×m
Value add_rowvec(const Value& a, const Value& b);    // N×d + (1×d broadcast)
Value mean_rows(const Value& a);                     // N×d -> 1×d
Value sum(const Value& a);                           // any -> {1}
Value mean(const Value& a);                          // any -> {1}

// ---- indexed / graph ----
Value gather_rows(const Value& a, const std::vector<int>& idx);
Value segment_sum(const Value& a, const std::vector<int>& seg,
                  std::size_t n_segments);
/// Numerically stable softmax of an M×1 column within each segment.
Value segment_softmax(const Value& logits, const std::vector<int>& seg,
                      std::size_t n_segments);
/// Scale row i of `a` by entry i of column vector `s` (N×1 or flat N).
Value row_scale(const Value& a, const Value& s);
Value scale_rows_const(const Value& a, const std::vector<double>& s);

// ---- norms / similarities ----
/// Row-wise x / ||x||2. Throws std::domain_error on a zero-norm row.
Value l2_normalize_rows(const Value& a);

/// Sparse row means with fallback: out[e] = mean of x entries listed in
/// groups[e], or `fallback` if groups[e] is empty. x is N×1; out is E×1.
Value group_mean(const Value& x, const std::vector<std::vector<int>>& groups,
                 double fallback);

// ---- losses ----
/// Per-row InfoNCE-style loss from an N×N score matrix: row i equals
/// -s_ii/tau + logsumexp_{j in D_i}(s_ij/tau), with D_i = {j != i} by
/// default or all j when include_positive is set. Returns N×1.
Value info_nce_rows(const Value& scores, double tau,
                    bool include_positive_in_denominator = false);
/// Mean squared error against a constant target.
Value mse(const Value& pred, const std::vector<double>& target);
/// Mean of softplus(x) - y*x over rows where mask is true (stable BCE on
/// logits). targets/mask are constants.
Value bce_with_logits(const Value& logits, const std::vector<double>& targets,
                      const std::vector<std::uint8_t>& mask);

// ---- volumetric ----
/// 3D convolution via im2col + GEMM. x: {C,X,Y,Z}; w: {O, C*k^3}; zero
/// padding `pad`, stride 1. Output {O, X', Y', Z'}.
Value conv3d(const Value& x, const Value& w, std::size_t kernel,
             std::size_t pad);
/// 2x2x2 max pooling, stride 2, ceil mode (size-1 dims pass through).
Value maxpool3d(const Value& x);

/// Central-difference derivative of f with respect to leaf.data()[index].
double finite_difference(const std::function<double()>& f, Value leaf,
                         std::size_t index, double eps = 1e-5);

}  // namespace mmgt::ad
