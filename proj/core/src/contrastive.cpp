#include "mmgt/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mmgt {

using ad::Value;

ProjectionHeads::ProjectionHeads(std::size_t feature_dim, Rng& rng) {
  std::vector<std::size_t> single = {feature_dim, 2 * feature_dim,
                                     4 * feature_dim, 4 * feature_dim};
  std::vector<std::size_t> fused = {2 * feature_dim, 2 * feature_dim,
                                    4 * feature_dim, 4 * feature_dim};
  g_image = nn::Mlp(feature_dim, single, rng);
  g_points = nn::Mlp(feature_dim, single, rng);
  g_network = nn::Mlp(feature_dim, single, rng);
  g_tumor = nn::Mlp(2 * feature_dim, fused, rng);
}

nn::ParamMap ProjectionHeads::params() const {
  nn::ParamMap out;
  g_image.collect("g_image", out);
  g_points.collect("g_points", out);
  g_network.collect("g_network", out);
  g_tumor.collect("g_tumor", out);
  return out;
}

std::size_t ProjectionHeads::latent_dim() const {
  return g_image.layers.back().W.cols();
}

std::vector<std::string> validate_contrastive_config(
    const ContrastiveConfig& cfg) {
  std::vector<std::string> out;
  if (!(cfg.tau > 0.0)) out.push_back("contrastive config: tau must be > 0");
  if (cfg.lambda < 0.0 || cfg.lambda > 1.0)
    out.push_back("contrastive config: lambda must be in [0, 1]");
  if (cfg.batch_size < 2)
    out.push_back("contrastive config: batch size must be >= 2");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr))
    out.push_back("contrastive config: learning rate must be positive");
  return out;
}

// ------------------------------------------------------------------- losses

namespace {

Value pairwise_nce(const Value& anchors, const Value& others, double tau,
                   bool include_positive) {
  if (anchors.rows() != others.rows() || anchors.cols() != others.cols())
    throw std::invalid_argument("contrastive loss: batch shape mismatch");
  if (anchors.rows() < 2)
    throw std::invalid_argument("contrastive loss: batch must have >= 2 rows");
  Value scores = ad::matmul_nt(ad::l2_normalize_rows(anchors),
                               ad::l2_normalize_rows(others));
  return ad::mean(ad::info_nce_rows(scores, tau, include_positive));
}

}  // namespace

Value loss_image_to_points(const Value& z_image, const Value& z_points,
                           double tau, bool include_positive) {
  return pairwise_nce(z_image, z_points, tau, include_positive);
}

Value loss_points_to_image(const Value& z_points, const Value& z_image,
                           double tau, bool include_positive) {
  return pairwise_nce(z_points, z_image, tau, include_positive);
}

Value loss_network_to_tumor(const Value& z_network, const Value& z_tumor,
                            double tau, bool include_positive) {
  return pairwise_nce(z_network, z_tumor, tau, include_positive);
}

Value loss_multi(const Value& z_image, const Value& z_points,
                 const Value& z_network, const Value& z_tumor, double tau,
                 double lambda, bool include_positive) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("combined loss: lambda must be in [0, 1]");
  Value tumor_level =
      ad::add(loss_image_to_points(z_image, z_points, tau, include_positive),
              loss_points_to_image(z_points, z_image, tau, include_positive));
  Value brain_level =
      loss_network_to_tumor(z_network, z_tumor, tau, include_positive);
  return ad::add(ad::scale(tumor_level, lambda * 0.5),
                 ad::scale(brain_level, 1.0 - lambda));
}

// ------------------------------------------------------------- augmentation

namespace {

/// One quarter turn about `axis`: cyclic (a, b) -> (side-1-b, a) on the two
/// rotated axes.
std::array<std::size_t, 3> rotate_index(const std::array<std::size_t, 3>& p,
                                        int axis,
                                        const std::array<std::size_t, 3>& dims) {
  std::array<std::size_t, 3> q = p;
  int a = (axis + 1) % 3, b = (axis + 2) % 3;
  q[static_cast<std::size_t>(a)] =
      dims[static_cast<std::size_t>(b)] - 1 - p[static_cast<std::size_t>(b)];
  q[static_cast<std::size_t>(b)] = p[static_cast<std::size_t>(a)];
  return q;
}

std::array<double, 3> rotate_point(const std::array<double, 3>& p, int axis,
                                   const std::array<double, 3>& center) {
  std::array<double, 3> d = {p[0] - center[0], p[1] - center[1],
                             p[2] - center[2]};
  std::array<double, 3> r = d;
  std::size_t a = static_cast<std::size_t>((axis + 1) % 3);
  std::size_t b = static_cast<std::size_t>((axis + 2) % 3);
  r[a] = -d[b];
  r[b] = d[a];
  return {r[0] + center[0], r[1] + center[1], r[2] + center[2]};
}

}  // namespace

TumorImage rotate_image(const TumorImage& img, const Rotation90& rot) {
  if (img.nx != img.ny || img.ny != img.nz)
    throw std::invalid_argument("image rotation requires a cubic crop");
  TumorImage out = img;
  std::array<std::size_t, 3> dims = {img.nx, img.ny, img.nz};
  int turns = ((rot.quarter_turns % 4) + 4) % 4;
  for (int t = 0; t < turns; ++t) {
    TumorImage next = out;
    for (std::size_t c = 0; c < out.channels; ++c)
      for (std::size_t x = 0; x < out.nx; ++x)
        for (std::size_t y = 0; y < out.ny; ++y)
          for (std::size_t z = 0; z < out.nz; ++z) {
            auto q = rotate_index({x, y, z}, rot.axis, dims);
            next.data[next.index(c, q[0], q[1], q[2])] = out.at(c, x, y, z);
          }
    out = std::move(next);
  }
  return out;
}

PointGraph rotate_graph(const PointGraph& graph, const Rotation90& rot,
                        const std::array<double, 3>& center) {
  PointGraph out = graph;  // connectivity and distances are rotation-invariant
  int turns = ((rot.quarter_turns % 4) + 4) % 4;
  for (auto& p : out.points)
    for (int t = 0; t < turns; ++t) p = rotate_point(p, rot.axis, center);
  return out;
}

// ----------------------------------------------------------------- training

LatentBatch project_batch(const MultiModalEncoders& enc,
                          const ProjectionHeads& heads,
                          const std::vector<const PatientInputs*>& patients,
                          const EncoderConfig& enc_cfg) {
  std::vector<Value> zi, zp, zb, zt;
  zi.reserve(patients.size());
  zp.reserve(patients.size());
  zb.reserve(patients.size());
  zt.reserve(patients.size());
  for (const PatientInputs* inputs : patients) {
    PatientForward f = encode_patient(enc, heads.g_tumor, *inputs, enc_cfg);
    zi.push_back(heads.g_image.forward(f.u_image));
    zp.push_back(heads.g_points.forward(f.u_points));
    zb.push_back(heads.g_network.forward(f.u_network));
    zt.push_back(
        heads.g_tumor.forward(ad::concat_cols(f.u_image, f.u_points)));
  }
  return LatentBatch{ad::stack_rows(zi), ad::stack_rows(zp),
                     ad::stack_rows(zb), ad::stack_rows(zt)};
}

TrainHistory train_contrastive(MultiModalEncoders& enc, ProjectionHeads& heads,
                               const std::vector<PatientInputs>& patients,
                               const EncoderConfig& enc_cfg,
                               const ContrastiveConfig& cfg) {
  auto violations = validate_contrastive_config(cfg);
  if (!violations.empty()) throw std::invalid_argument(violations.front());
  if (patients.size() < 2)
    throw std::invalid_argument(
        "contrastive training: need at least two patients");

  nn::ParamMap params;
  params.merge("encoders", enc.params());
  params.merge("heads", heads.params());
  std::vector<Value> values = params.values();
  nn::Sgd opt(values, cfg.lr, cfg.weight_decay);
  nn::StepDecay schedule{cfg.lr, cfg.lr_decay, cfg.lr_step_every};
  Rng rng(derive_seed(cfg.seed, "contrastive"));
  TrainHistory history;

  auto snapshot = [&values]() {
    std::vector<std::vector<double>> s;
    s.reserve(values.size());
    for (const auto& v : values) s.push_back(v.data());
    return s;
  };
  auto restore = [&values](const std::vector<std::vector<double>>& s) {
    for (std::size_t i = 0; i < values.size(); ++i) values[i].data() = s[i];
  };
  std::vector<std::vector<double>> last_good = snapshot();

  std::vector<std::size_t> order(patients.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::array<double, 3> volume_center = {0.0, 0.0, 0.0};
  // Cloud coordinates live on the source volume grid; rotate about the grid
  // center inferred from the largest coordinate extent seen in the cohort.
  double max_coord = 0.0;
  for (const auto& p : patients)
    for (const auto& pt : p.graph.points)
      max_coord = std::max({max_coord, pt[0], pt[1], pt[2]});
  double grid_half = std::ceil(max_coord) / 2.0;
  volume_center = {grid_half, grid_half, grid_half};

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(schedule.at(epoch));
    rng.shuffle(order);
    double epoch_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start + 1 < order.size();
         start += cfg.batch_size) {
      std::size_t stop = std::min(start + cfg.batch_size, order.size());
      if (stop - start < 2) break;

      std::vector<PatientInputs> augmented;  // storage for rotated copies
      std::vector<const PatientInputs*> batch;
      batch.reserve(stop - start);
      if (cfg.augment) augmented.reserve(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        const PatientInputs& base = patients[order[k]];
        if (cfg.augment) {
          Rotation90 rot{static_cast<int>(rng.uniform_index(3)),
                         static_cast<int>(1 + rng.uniform_index(3))};
          PatientInputs copy;
          copy.image = rotate_image(base.image, rot);
          copy.graph = rotate_graph(base.graph, rot, volume_center);
          copy.network = base.network;
          augmented.push_back(std::move(copy));
          batch.push_back(&augmented.back());
        } else {
          batch.push_back(&base);
        }
      }

      LatentBatch z = project_batch(enc, heads, batch, enc_cfg);
      Value loss =
          loss_multi(z.z_image, z.z_points, z.z_network, z.z_tumor, cfg.tau,
                     cfg.lambda, cfg.include_positive_in_denominator);
      double value = loss.item();
      if (!std::isfinite(value)) {
        restore(last_good);
        std::ostringstream msg;
        msg << "contrastive training: non-finite loss " << value
            << " at epoch " << epoch
            << "; parameters restored to the last finite epoch";
        throw TrainingDivergence(msg.str());
      }
      opt.zero_grad();
      ad::backward(loss);
      opt.step();
      epoch_sum += value;
      ++n_batches;
    }
    if (n_batches == 0)
      throw std::invalid_argument(
          "contrastive training: no full minibatch of size >= 2");
    history.epoch_loss.push_back(epoch_sum / static_cast<double>(n_batches));
    history.epoch_lr.push_back(opt.lr());
    last_good = snapshot();
  }
  return history;
}

}  // namespace mmgt
