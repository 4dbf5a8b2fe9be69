#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "coins/cluster.hpp"
#include "coins/data.hpp"
#include "coins/errors.hpp"
#include "coins/losses.hpp"
#include "coins/model.hpp"
#include "coins/rng.hpp"

namespace coins {

/// Training objectives.
///   ins       instance classification only
///   cos       coarse classification only
///   coins     coarse + λ_I · instance over all n instances
///   coins_imp coarse + λ_I · instance within each coarse class
///   coinsP    coins_imp, then + λ_P · instance-proxy loss from epoch M on
///   opt       classification on the fine labels (upper bound; needs fine labels)
enum class Objective { ins, cos, coins, coins_imp, coinsP, opt };

inline const char* to_string(Objective o) {
  switch (o) {
    case Objective::ins: return "ins";
    case Objective::cos: return "cos";
    case Objective::coins: return "coins";
    case Objective::coins_imp: return "coins-imp";
    case Objective::coinsP: return "coinsP";
    case Objective::opt: return "opt";
  }
  return "?";
}

inline Objective parse_objective(const std::string& s) {
  for (auto o : {Objective::ins, Objective::cos, Objective::coins, Objective::coins_imp, Objective::coinsP,
                 Objective::opt}) {
    if (s == to_string(o)) return o;
  }
  throw InvalidArgument("unknown objective '" + s + "' (expected ins|cos|coins|coins-imp|coinsP|opt)");
}

struct TrainConfig {
  Objective objective = Objective::coins_imp;
  std::size_t epochs = 30;
  std::optional<std::size_t> ip_start_epoch;  // M; defaults to epochs / 2
  double lambda_instance = 1.0;
  double lambda_proxy = 1.0;
  std::optional<std::size_t> num_clusters;  // P; defaults to n / 5, at least C
  bool cluster_within_coarse = true;
  std::size_t kmeans_restarts = 4;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::size_t> lr_decay_epochs;
  double lr_decay_factor = 5.0;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  bool cosine = false;
  bool mlp_head = false;
  double temperature = 0.05;
  std::vector<std::size_t> layers = {256, 128};
  bool augment = true;  // only applies to image datasets
  std::size_t augment_pad = 4;
};

inline std::size_t ip_start(const TrainConfig& c) { return c.ip_start_epoch.value_or(c.epochs / 2); }

inline std::size_t default_clusters(std::size_t n, std::size_t num_coarse) {
  return std::min(n, std::max(n / 5, num_coarse));
}

inline void validate(const TrainConfig& c) {
  if (ip_start(c) > c.epochs) throw InvalidArgument("train: M must satisfy 0 <= M <= T");
  if (!(c.lr > 0.0)) throw InvalidArgument("train: lr must be > 0");
  if (c.momentum < 0.0 || c.momentum >= 1.0) throw InvalidArgument("train: momentum must be in [0, 1)");
  if (c.weight_decay < 0.0) throw InvalidArgument("train: weight decay must be >= 0");
  if (c.lambda_instance < 0.0 || c.lambda_proxy < 0.0) throw InvalidArgument("train: lambdas must be >= 0");
  if (!(c.lr_decay_factor > 0.0)) throw InvalidArgument("train: decay factor must be > 0");
  for (std::size_t k = 1; k < c.lr_decay_epochs.size(); ++k)
    if (c.lr_decay_epochs[k] <= c.lr_decay_epochs[k - 1])
      throw InvalidArgument("train: decay epochs must be strictly increasing");
  if (c.batch_size == 0) throw InvalidArgument("train: batch size must be >= 1");
  if (c.cosine && !(c.temperature > 0.0)) throw InvalidArgument("train: temperature must be > 0");
}

/// Base lr divided by the decay factor once per decay epoch already reached.
inline double lr_at(const TrainConfig& c, std::size_t epoch) {
  const auto passed = std::count_if(c.lr_decay_epochs.begin(), c.lr_decay_epochs.end(),
                                    [&](std::size_t e) { return e <= epoch; });
  return c.lr * std::pow(c.lr_decay_factor, -static_cast<double>(passed));
}

/// g' = grad + wd·param; v ← momentum·v + g'; param ← param − lr·v
inline void sgd_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
                     double momentum, double weight_decay) {
  if (param.size() != grad.size() || param.size() != velocity.size()) throw InvalidArgument("sgd_step: shape mismatch");
  for (std::size_t k = 0; k < param.size(); ++k) {
    const double g = grad[k] + weight_decay * param[k];
    velocity[k] = momentum * velocity[k] + g;
    param[k] -= lr * velocity[k];
  }
}

inline void sgd_step(Matrix& param, const Matrix& grad, Matrix& velocity, double lr, double momentum,
                     double weight_decay) {
  require_same_shape(param, grad, "sgd_step");
  require_same_shape(param, velocity, "sgd_step");
  sgd_step(param.flat(), grad.flat(), velocity.flat(), lr, momentum, weight_decay);
}

struct EpochMetrics {
  std::size_t epoch = 0;  // 0 = before training
  double lr = 0.0;
  std::optional<double> loss_coarse;
  std::optional<double> loss_instance;
  std::optional<double> loss_proxy;
  double loss_total = 0.0;
  double w_gap = 0.0;  // mean ‖g(f(x_i)) − w_i‖² over the training set
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> log;
  std::optional<Membership> membership;
  std::vector<std::string> warnings;
};

using EpochCallback = std::function<void(const EpochMetrics&, const ModelParams&, const Membership*)>;

namespace detail {

/// Optimizer state mirrors the trainable parameters; the proxy head is never trained.
struct Velocity {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Matrix coarse, instance;
  std::optional<MlpHead> mlp;

  explicit Velocity(const ModelParams& p) {
    for (const auto& l : p.encoder) {
      weights.emplace_back(l.weight.rows(), l.weight.cols());
      biases.emplace_back(l.bias.size(), 0.0);
    }
    coarse = Matrix(p.coarse_head.rows(), p.coarse_head.cols());
    instance = Matrix(p.instance_head.rows(), p.instance_head.cols());
    if (p.mlp_head) {
      mlp = MlpHead{Matrix(p.mlp_head->hidden.rows(), p.mlp_head->hidden.cols()),
                    Matrix(p.mlp_head->out.rows(), p.mlp_head->out.cols())};
    }
  }
};

inline Matrix dense_head_grad(const Matrix& head, const ColumnGrads& g) {
  Matrix out(head.rows(), head.cols());
  for (const auto& [j, v] : g) std::copy(v.begin(), v.end(), out.row(j).begin());
  return out;
}

/// Head weight parameters of the objective for one phase.
inline ObjectiveWeights phase_weights(const TrainConfig& c, bool proxy_active) {
  ObjectiveWeights w;
  w.lambda_proxy = 0.0;
  switch (c.objective) {
    case Objective::ins:
      w.lambda_coarse = 0.0;
      w.lambda_instance = 1.0;
      w.mode = InstanceMode::full;
      break;
    case Objective::cos:
    case Objective::opt:
      w.lambda_instance = 0.0;
      break;
    case Objective::coins:
      w.lambda_instance = c.lambda_instance;
      w.mode = InstanceMode::full;
      break;
    case Objective::coins_imp:
      w.lambda_instance = c.lambda_instance;
      w.mode = InstanceMode::within_coarse;
      break;
    case Objective::coinsP:
      w.lambda_instance = c.lambda_instance;
      w.mode = InstanceMode::within_coarse;
      if (proxy_active) w.lambda_proxy = c.lambda_proxy;
      break;
  }
  return w;
}

/// One optimizer step on every trained parameter. Biases get no weight decay; the
/// proxy head is rebuilt from the instance head, so its gradient is discarded.
inline void apply_update(ModelParams& p, Velocity& vel, const std::vector<LayerGrad>& enc_grads, const LossValue& loss,
                         const ObjectiveWeights& w, double lr, const TrainConfig& c) {
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    sgd_step(p.encoder[l].weight, enc_grads[l].weight, vel.weights[l], lr, c.momentum, c.weight_decay);
    sgd_step(p.encoder[l].bias, enc_grads[l].bias, vel.biases[l], lr, c.momentum, 0.0);
  }
  if (w.lambda_coarse > 0.0) {
    sgd_step(p.coarse_head, dense_head_grad(p.coarse_head, loss.grad_heads.at(HeadKind::coarse)), vel.coarse, lr,
             c.momentum, c.weight_decay);
  }
  if (w.lambda_instance > 0.0) {
    sgd_step(p.instance_head, dense_head_grad(p.instance_head, loss.grad_heads.at(HeadKind::instance)), vel.instance,
             lr, c.momentum, c.weight_decay);
  }
  if (p.mlp_head && loss.grad_mlp) {
    sgd_step(p.mlp_head->hidden, loss.grad_mlp->hidden, vel.mlp->hidden, lr, c.momentum, c.weight_decay);
    sgd_step(p.mlp_head->out, loss.grad_mlp->out, vel.mlp->out, lr, c.momentum, c.weight_decay);
  }
  if (p.cosine) {
    if (p.coarse_head.rows() > 0) normalize_rows(p.coarse_head);
    if (p.instance_head.rows() > 0) normalize_rows(p.instance_head);
  }
}

}  // namespace detail

/// Everything the per-epoch log needs, evaluated on the whole (un-augmented) training set.
inline EpochMetrics evaluate_epoch(const ModelParams& p, const Dataset& data, const TrainConfig& c,
                                   const Membership* membership, std::size_t epoch, double lr) {
  const bool proxy_active = membership != nullptr && p.proxy_head.has_value();
  const ObjectiveWeights w = detail::phase_weights(c, proxy_active);
  std::vector<std::uint32_t> ids(data.size());
  std::iota(ids.begin(), ids.end(), 0u);
  const auto& head_labels = c.objective == Objective::opt ? data.fine_labels : data.coarse_labels;
  const auto members = coarse_index(data.coarse_labels, data.num_coarse);
  const Matrix emb = embed(p, data.examples);
  const LossValue v =
      combined_objective(p, emb, {ids, head_labels}, w, &members, proxy_active ? membership : nullptr);
  EpochMetrics m;
  m.epoch = epoch;
  m.lr = lr;
  m.loss_total = v.value;
  if (w.lambda_coarse > 0.0) m.loss_coarse = v.coarse;
  if (w.lambda_instance > 0.0) m.loss_instance = v.instance;
  if (w.lambda_proxy > 0.0) m.loss_proxy = v.proxy;
  const Matrix feats = instance_branch(p, emb).features;
  double gap = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) gap += squared_distance(feats.row(i), p.instance_head.row(i));
  m.w_gap = data.size() > 0 ? gap / static_cast<double>(data.size()) : 0.0;
  return m;
}

/// Cluster the instance head and rebuild the proxy head from the cluster means.
inline Membership refresh_proxies(ModelParams& p, const Dataset& data, const TrainConfig& c, std::uint64_t seed) {
  const std::size_t num_p = c.num_clusters.value_or(default_clusters(data.size(), data.num_coarse));
  KMeansOptions opt;
  opt.restarts = c.kmeans_restarts;
  opt.seed = seed;
  std::optional<std::span<const std::uint32_t>> labels;
  if (c.cluster_within_coarse) labels = std::span<const std::uint32_t>(data.coarse_labels);
  KMeansResult r = kmeans(p.instance_head, num_p, opt, labels);
  p.proxy_head = update_proxies(p.instance_head, r.membership, p.cosine);
  return r.membership;
}

/// Two-phase training: epochs [0, M) optimize the objective without the proxy term;
/// for coinsP the instance head is then clustered, the proxy head initialized from the
/// cluster means, and epochs [M, T) add the proxy loss, re-clustering after every epoch.
inline TrainResult train(const TrainConfig& c, const Dataset& data, const EpochCallback& on_epoch = {}) {
  validate(c);
  validate(data);
  if (c.objective == Objective::opt && !data.has_fine()) {
    throw InvalidArgument("train: objective opt needs fine labels, dataset has none");
  }
  TrainResult result;
  const std::size_t m_epoch = ip_start(c);
  const bool with_proxy = c.objective == Objective::coinsP && m_epoch < c.epochs;
  if (c.objective == Objective::coinsP && !with_proxy) {
    result.warnings.push_back("coinsP with M >= T: the instance-proxy phase never runs");
  }

  ModelConfig mc;
  mc.input_dim = data.dim();
  mc.layers = c.layers;
  mc.num_coarse = c.objective == Objective::opt ? data.num_fine : data.num_coarse;
  mc.num_instances = data.size();
  mc.cosine = c.cosine;
  mc.mlp_head = c.mlp_head;
  mc.temperature = c.temperature;
  ModelParams& p = result.params;
  p = init_params(mc, derive_seed(c.seed, 1));
  p.coarse_head_on_fine = c.objective == Objective::opt;

  Rng order_rng(derive_seed(c.seed, 2));
  Rng augment_rng(derive_seed(c.seed, 3));
  const auto& head_labels = c.objective == Objective::opt ? data.fine_labels : data.coarse_labels;
  const auto members = coarse_index(data.coarse_labels, data.num_coarse);
  const bool do_augment = c.augment && data.is_image();
  detail::Velocity vel(p);

  auto log_epoch = [&](std::size_t epoch, double lr) {
    const Membership* mem = result.membership ? &*result.membership : nullptr;
    result.log.push_back(evaluate_epoch(p, data, c, mem, epoch, lr));
    if (on_epoch) on_epoch(result.log.back(), p, mem);
  };
  log_epoch(0, lr_at(c, 0));

  std::vector<std::uint32_t> order(data.size());
  std::iota(order.begin(), order.end(), 0u);
  for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
    if (with_proxy && epoch == m_epoch) {
      result.membership = refresh_proxies(p, data, c, derive_seed(c.seed, 100000 + epoch));
    }
    const bool proxy_active = with_proxy && epoch >= m_epoch;
    const ObjectiveWeights w = detail::phase_weights(c, proxy_active);
    const double lr = lr_at(c, epoch);
    order_rng.shuffle(std::span<std::uint32_t>(order));

    for (std::size_t start = 0; start < order.size(); start += c.batch_size) {
      const std::size_t b = std::min(c.batch_size, order.size() - start);
      std::span<const std::uint32_t> ids(order.data() + start, b);
      Matrix x(b, data.dim());
      std::vector<std::uint32_t> y(b);
      for (std::size_t i = 0; i < b; ++i) {
        const auto src = data.examples.row(ids[i]);
        if (do_augment) {
          const Vector a = augment(src, data.image_h, data.image_w, c.augment_pad, augment_rng);
          std::copy(a.begin(), a.end(), x.row(i).begin());
        } else {
          std::copy(src.begin(), src.end(), x.row(i).begin());
        }
        y[i] = head_labels[ids[i]];
      }
      const Encoded enc = encode(p, x);
      const LossValue loss = combined_objective(p, enc.embeddings, BatchLabels{ids, y}, w, &members,
                                                proxy_active ? &*result.membership : nullptr);
      const auto enc_grads = encode_backward(p, enc.cache, loss.grad_embeddings);
      detail::apply_update(p, vel, enc_grads, loss, w, lr, c);
    }
    if (proxy_active) {
      result.membership = refresh_proxies(p, data, c, derive_seed(c.seed, 100000 + epoch + 1));
    }
    log_epoch(epoch + 1, lr);
    if (!std::isfinite(result.log.back().loss_total)) {
      throw DegenerateInput("train: loss became non-finite at epoch " + std::to_string(epoch + 1) +
                            " (lr " + std::to_string(lr) + " too large?)");
    }
  }
  return result;
}

}  // namespace coins
