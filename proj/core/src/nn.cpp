#include "mmgt/nn.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmgt/tensor.hpp"

namespace mmgt::nn {

std::vector<double> init_uniform(Rng& rng, std::size_t count,
                                 std::size_t fan_in) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in == 0 ? 1 : fan_in));
  std::vector<double> out(count);
  for (auto& v : out) v = rng.uniform(-limit, limit);
  return out;
}

// -------------------------------------------------------------------- Linear

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias)
    : has_bias(bias) {
  W = Value::param({in, out}, init_uniform(rng, in * out, in));
  if (bias) b = Value::param({out}, std::vector<double>(out, 0.0));
}

Value Linear::forward(const Value& x) const {
  Value y = ad::matmul(x, W);
  if (has_bias) y = ad::add_rowvec(y, b);
  return y;
}

void Linear::collect(const std::string& name, ParamMap& params) const {
  params.add(name + ".W", W);
  if (has_bias) params.add(name + ".b", b);
}

// ----------------------------------------------------------------------- Mlp

Mlp::Mlp(std::size_t in, const std::vector<std::size_t>& widths, Rng& rng,
         bool bias, bool final_relu_)
    : final_relu(final_relu_) {
  std::size_t prev = in;
  for (std::size_t w : widths) {
    layers.emplace_back(prev, w, rng, bias);
    prev = w;
  }
}

Value Mlp::forward(const Value& x) const {
  Value h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    if (i + 1 < layers.size() || final_relu) h = ad::relu(h);
  }
  return h;
}

void Mlp::collect(const std::string& name, ParamMap& params) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(name + ".fc" + std::to_string(i), params);
}

// --------------------------------------------------------------- ConvStack3d

ConvStack3d::ConvStack3d(std::size_t in_ch,
                         const std::vector<std::size_t>& widths_, Rng& rng)
    : widths(widths_), in_channels(in_ch) {
  std::size_t prev = in_ch;
  for (std::size_t w : widths) {
    std::size_t fan_in = prev * 27;
    kernels.push_back(
        Value::param({w, prev * 27}, init_uniform(rng, w * prev * 27, fan_in)));
    prev = w;
  }
}

Value ConvStack3d::forward(const Value& x) const {
  Value h = x;
  for (const auto& k : kernels) {
    h = ad::conv3d(h, k, 3, 1);
    h = ad::relu(h);
    h = ad::maxpool3d(h);
  }
  return ad::reshape(h, {1, h.size()});
}

void ConvStack3d::collect(const std::string& name, ParamMap& params) const {
  for (std::size_t i = 0; i < kernels.size(); ++i)
    params.add(name + ".conv" + std::to_string(i), kernels[i]);
}

// -------------------------------------------------------------- EdgeCondConv

EdgeCondConv::EdgeCondConv(std::size_t node_in, std::size_t edge_in,
                           std::size_t out, Rng& rng) {
  w_self = Value::param({node_in, out},
                        init_uniform(rng, node_in * out, node_in));
  w_nbr =
      Value::param({node_in, out}, init_uniform(rng, node_in * out, node_in));
  w_edge =
      Value::param({edge_in, out}, init_uniform(rng, edge_in * out, edge_in));
  bias = Value::param({out}, std::vector<double>(out, 0.0));
}

Value EdgeCondConv::forward(const Value& h, const std::vector<int>& src,
                            const std::vector<int>& dst,
                            const Value& edge_attr,
                            std::size_t n_nodes) const {
  Value self_term = ad::matmul(h, w_self);
  if (src.empty()) return self_term;
  Value nbr = ad::matmul(ad::gather_rows(h, src), w_nbr);
  Value msg = ad::relu(
      ad::add_rowvec(ad::add(nbr, ad::matmul(edge_attr, w_edge)), bias));
  Value summed = ad::segment_sum(msg, dst, n_nodes);
  std::vector<double> inv_deg(n_nodes, 0.0);
  for (int d : dst) inv_deg[static_cast<std::size_t>(d)] += 1.0;
  for (auto& v : inv_deg) v = v > 0.0 ? 1.0 / v : 0.0;
  return ad::add(self_term, ad::scale_rows_const(summed, inv_deg));
}

void EdgeCondConv::collect(const std::string& name, ParamMap& params) const {
  params.add(name + ".w_self", w_self);
  params.add(name + ".w_nbr", w_nbr);
  params.add(name + ".w_edge", w_edge);
  params.add(name + ".bias", bias);
}

// ------------------------------------------------------------------ GatLayer

GatLayer::GatLayer(std::size_t node_in, std::size_t edge_in, std::size_t out,
                   Rng& rng)
    : out_dim(out) {
  w_h = Value::param({node_in, out}, init_uniform(rng, node_in * out, node_in));
  w_e =
      Value::param({edge_in, out}, init_uniform(rng, edge_in * out, edge_in));
  att_dst = Value::param({out, 1}, init_uniform(rng, out, out));
  att_msg = Value::param({out, 1}, init_uniform(rng, out, out));
  bias = Value::param({out}, std::vector<double>(out, 0.0));
}

Value GatLayer::forward(const Value& h, const std::vector<int>& src,
                        const std::vector<int>& dst, const Value& edge_attr,
                        std::size_t n_nodes) const {
  // Self-loops guarantee every destination segment is non-empty.
  std::vector<int> full_src = src, full_dst = dst;
  for (std::size_t i = 0; i < n_nodes; ++i) {
    full_src.push_back(static_cast<int>(i));
    full_dst.push_back(static_cast<int>(i));
  }
  Value hw = ad::matmul(h, w_h);  // n × out
  Value msg_real;
  if (!src.empty()) {
    Value gathered = ad::gather_rows(hw, src);
    msg_real = edge_attr.defined()
                   ? ad::add(gathered, ad::matmul(edge_attr, w_e))
                   : gathered;
  }
  // Self-loop messages carry zero edge attributes, i.e. just hw rows.
  std::vector<int> self_idx(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) self_idx[i] = static_cast<int>(i);
  Value msg_self = ad::gather_rows(hw, self_idx);
  // Real messages first, then self-loop messages, matching full_src order.
  Value msg =
      msg_real.defined() ? ad::concat_rows(msg_real, msg_self) : msg_self;
  Value logit = ad::add(ad::gather_rows(ad::matmul(hw, att_dst), full_dst),
                        ad::matmul(msg, att_msg));
  logit = ad::leaky_relu(logit, 0.2);
  Value alpha = ad::segment_softmax(logit, full_dst, n_nodes);
  Value weighted = ad::row_scale(msg, alpha);
  Value out = ad::segment_sum(weighted, full_dst, n_nodes);
  return ad::add_rowvec(out, bias);
}

void GatLayer::collect(const std::string& name, ParamMap& params) const {
  params.add(name + ".w_h", w_h);
  params.add(name + ".w_e", w_e);
  params.add(name + ".att_dst", att_dst);
  params.add(name + ".att_msg", att_msg);
  params.add(name + ".bias", bias);
}

// ------------------------------------------------------- GlobalAttentionPool

GlobalAttentionPool::GlobalAttentionPool(std::size_t dim, Rng& rng) {
  w_gate = Value::param({dim, 1}, init_uniform(rng, dim, dim));
}

std::pair<Value, Value> GlobalAttentionPool::forward(const Value& h) const {
  std::size_t p = h.rows();
  std::vector<int> seg(p, 0);
  Value logits = ad::matmul(h, w_gate);
  Value a = ad::segment_softmax(logits, seg, 1);
  Value pooled = ad::segment_sum(ad::row_scale(h, a), seg, 1);
  return {pooled, a};
}

void GlobalAttentionPool::collect(const std::string& name,
                                  ParamMap& params) const {
  params.add(name + ".w_gate", w_gate);
}

// ------------------------------------------------------------------ training

double StepDecay::at(std::size_t epoch) const {
  return base_lr * std::pow(decay, static_cast<double>(epoch / step_every));
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Sgd::step() {
  for (auto& p : params_) {
    auto& x = p.data();
    auto& g = p.grad();
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] -= lr_ * (g[i] + weight_decay_ * x[i]);
  }
}

Adam::Adam(std::vector<Value> params, double lr, double weight_decay,
           double beta1, double beta2, double eps)
    : params_(std::move(params)),
      lr_(lr),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& x = params_[k].data();
    auto& g = params_[k].grad();
    for (std::size_t i = 0; i < x.size(); ++i) {
      double grad = g[i] + weight_decay_ * x[i];
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * grad;
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * grad * grad;
      double mhat = m_[k][i] / bc1;
      double vhat = v_[k][i] / bc2;
      x[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

// --------------------------------------------------------------- checkpoints

namespace {
std::string tensor_filename(std::size_t index) {
  return "param_" + std::to_string(index) + ".mmgt";
}
}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const ParamMap& params,
                     const std::map<std::string, std::string>& descriptor) {
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  index["descriptor"] = descriptor;
  index["params"] = nlohmann::json::array();
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    const auto& [name, v] = params.entries[i];
    std::vector<std::uint64_t> dims(v.shape().begin(), v.shape().end());
    save_tensor(dir / tensor_filename(i), to_f32(dims, v.data()));
    nlohmann::json entry;
    entry["name"] = name;
    entry["file"] = tensor_filename(i);
    index["params"].push_back(std::move(entry));
  }
  std::ofstream out(dir / "checkpoint.json");
  if (!out)
    throw std::runtime_error("cannot write checkpoint index in " +
                             dir.string());
  out << index.dump(2) << "\n";
}

std::map<std::string, std::string> load_checkpoint(
    const std::filesystem::path& dir, ParamMap& params) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in)
    throw std::runtime_error("missing checkpoint index in " + dir.string());
  nlohmann::json index;
  in >> index;
  const auto& list = index.at("params");
  if (list.size() != params.entries.size())
    throw std::runtime_error("checkpoint parameter count mismatch in " +
                             dir.string());
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    auto& [name, v] = params.entries[i];
    if (list[i].at("name").get<std::string>() != name)
      throw std::runtime_error("checkpoint parameter name mismatch: " + name);
    F32Tensor t =
        load_f32_tensor(dir / list[i].at("file").get<std::string>());
    if (t.size() != v.size())
      throw std::runtime_error("checkpoint parameter size mismatch: " + name);
    auto restored = to_f64(t);
    std::copy(restored.begin(), restored.end(), v.data().begin());
  }
  return index.at("descriptor").get<std::map<std::string, std::string>>();
}

bool checkpoint_exists(const std::filesystem::path& dir) {
  return std::filesystem::exists(dir / "checkpoint.json");
}

}  // namespace mmgt::nn
