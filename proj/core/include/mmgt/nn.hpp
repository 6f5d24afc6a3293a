#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mmgt/autodiff.hpp"
#include "mmgt/rng.hpp"

namespace mmgt::nn {

using ad::Value;

/// Named trainable tensors; the registry order is the optimizer order, so it
/// must be deterministic.
struct ParamMap {
  std::vector<std::pair<std::string, Value>> entries;

  void add(const std::string& name, const Value& v) {
    entries.emplace_back(name, v);
  }
  void merge(const std::string& prefix, const ParamMap& other) {
    for (const auto& [name, v] : other.entries)
      entries.emplace_back(prefix + "." + name, v);
  }
  std::vector<Value> values() const {
    std::vector<Value> out;
    for (const auto& [_, v] : entries) out.push_back(v);
    return out;
  }
};

/// Kaiming-style uniform init: U(-limit, limit), limit = sqrt(6 / fan_in).
std::vector<double> init_uniform(Rng& rng, std::size_t count,
                                 std::size_t fan_in);

/// Dense layer, y = x·W (+ b). W is stored (in × out).
struct Linear {
  Value W;
  Value b;  // undefined when bias-free
  bool has_bias = true;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);
  Value forward(const Value& x) const;
  void collect(const std::string& name, ParamMap& params) const;
};

/// Stack of Linear layers with ReLU between them; no activation after the
/// last layer unless `final_relu`.
struct Mlp {
  std::vector<Linear> layers;
  bool final_relu = false;

  Mlp() = default;
  Mlp(std::size_t in, const std::vector<std::size_t>& widths, Rng& rng,
      bool bias = true, bool final_relu_ = false);
  Value forward(const Value& x) const;
  void collect(const std::string& name, ParamMap& params) const;
};

/// 3D conv block stack: [conv(k=3, pad=1) -> ReLU -> maxpool(2)] per width.
/// Bias-free so an all-zero input produces exactly zero activations and
/// gradients (the saliency export relies on this).
struct ConvStack3d {
  std::vector<Value> kernels;  // each {out, in*27}
  std::vector<std::size_t> widths;
  std::size_t in_channels = 0;

  ConvStack3d() = default;
  ConvStack3d(std::size_t in_ch, const std::vector<std::size_t>& widths_,
              Rng& rng);
  /// x: {C,X,Y,Z} -> flattened {1, out}.
  Value forward(const Value& x) const;
  void collect(const std::string& name, ParamMap& params) const;
};

/// Directed-edge message passing with additive edge conditioning:
/// h'_i = W_self·h_i + mean_{j->i} ReLU(W_nbr·h_j + W_edge·e_ij + b).
/// Nodes with no incoming edges keep only the self term.
struct EdgeCondConv {
  Value w_self, w_nbr, w_edge, bias;

  EdgeCondConv() = default;
  EdgeCondConv(std::size_t node_in, std::size_t edge_in, std::size_t out,
               Rng& rng);
  Value forward(const Value& h, const std::vector<int>& src,
                const std::vector<int>& dst, const Value& edge_attr,
                std::size_t n_nodes) const;
  void collect(const std::string& name, ParamMap& params) const;
};

/// Graph attention layer with edge features. Internally appends self-loops
/// (zero edge attributes) so every node attends to itself; attention logits
/// LeakyReLU(0.2), softmax per destination node.
struct GatLayer {
  Value w_h, w_e, att_dst, att_msg, bias;
  std::size_t out_dim = 0;

  GatLayer() = default;
  GatLayer(std::size_t node_in, std::size_t edge_in, std::size_t out,
           Rng& rng);
  /// src/dst are directed edges WITHOUT self-loops; edge_attr rows align.
  Value forward(const Value& h, const std::vector<int>& src,
                const std::vector<int>& dst, const Value& edge_attr,
                std::size_t n_nodes) const;
  void collect(const std::string& name, ParamMap& params) const;
};

/// Gated global pooling: a = softmax(h·w_gate), pooled = Σ a_i h_i.
/// Returns {pooled {1,d}, attention {P,1}}.
struct GlobalAttentionPool {
  Value w_gate;  // {d, 1}

  GlobalAttentionPool() = default;
  GlobalAttentionPool(std::size_t dim, Rng& rng);
  std::pair<Value, Value> forward(const Value& h) const;
  void collect(const std::string& name, ParamMap& params) const;
};

// ----------------------------------------------------------------- training

/// Learning-rate schedule: lr(epoch) = base · decay^(epoch / step_every).
struct StepDecay {
  double base_lr = 1e-3;
  double decay = 0.9;
  std::size_t step_every = 50;
  double at(std::size_t epoch) const;
};

class Sgd {
 public:
  Sgd(std::vector<Value> params, double lr, double weight_decay = 0.0)
      : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay) {}
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void zero_grad();
  void step();

 private:
  std::vector<Value> params_;
  double lr_, weight_decay_;
};

class Adam {
 public:
  Adam(std::vector<Value> params, double lr, double weight_decay = 0.0,
       double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void zero_grad();
  void step();

 private:
  std::vector<Value> params_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// -------------------------------------------------------------- checkpoints

/// Save named parameters as f32 container tensors in `dir` plus an index
/// JSON (`descriptor` is merged into it, for architecture metadata).
void save_checkpoint(const std::filesystem::path& dir, const ParamMap& params,
                     const std::map<std::string, std::string>& descriptor);
/// Load tensors back into the (already constructed) parameters; shapes must
/// match. Returns the descriptor map.
std::map<std::string, std::string> load_checkpoint(
    const std::filesystem::path& dir, ParamMap& params);
bool checkpoint_exists(const std::filesystem::path& dir);

}  // namespace mmgt::nn
