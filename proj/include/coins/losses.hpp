#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coins/errors.hpp"
#include "coins/matrix.hpp"
#include "coins/membership.hpp"
#include "coins/model.hpp"
#include "coins/numerics.hpp"

namespace coins {

/// Gradient for the head columns a loss touched, keyed by column index.
using ColumnGrads = std::map<std::size_t, Vector>;

struct LossValue {
  double value = 0.0;
  Matrix grad_embeddings;                     // batch × d
  std::map<HeadKind, ColumnGrads> grad_heads;  // only columns that entered a softmax
  std::optional<MlpHead> grad_mlp;             // present when the model has an MLP head
  // Individual terms, unweighted (filled by every loss; the combined objective fills all three).
  double coarse = 0.0;
  double instance = 0.0;
  double proxy = 0.0;
};

enum class InstanceMode { full, within_coarse };

namespace detail {

struct HeadTerm {
  double value = 0.0;
  Matrix grad_features;
  ColumnGrads grad_columns;
};

/// Mean softmax cross-entropy of feature rows against per-row column sets of a head.
///
/// `columns_of(i)` returns the columns entering row i's softmax and the position of
/// the target within them. Gradients go to the features and to each touched column.
template <typename ColumnsOf>
HeadTerm softmax_head_term(const Matrix& features, const Matrix& head, double scale, ColumnsOf&& columns_of,
                           ColumnAccessCounter* counter) {
  const std::size_t b = features.rows();
  const std::size_t d = features.cols();
  if (head.cols() != d) throw InvalidArgument("loss: feature dim " + std::to_string(d) + " != head dim");
  HeadTerm term;
  term.grad_features = Matrix(b, d);
  if (b == 0) return term;
  Matrix scratch(head.rows(), d);
  std::vector<char> touched(head.rows(), 0);
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto [cols, target] = columns_of(i);
    const auto f = features.row(i);
    const Vector logits = row_logits(f, head, cols, scale, counter);
    term.value += cross_entropy(logits, target);
    const Vector g = ce_gradient(logits, target);
    auto gf = term.grad_features.row(i);
    for (std::size_t t = 0; t < cols.size(); ++t) {
      const double coef = g[t] * scale * inv_b;
      axpy(coef, head.row(cols[t]), gf);
      axpy(coef, f, scratch.row(cols[t]));
      touched[cols[t]] = 1;
    }
  }
  term.value *= inv_b;
  for (std::size_t j = 0; j < head.rows(); ++j) {
    if (touched[j]) {
      auto r = scratch.row(j);
      term.grad_columns.emplace(j, Vector(r.begin(), r.end()));
    }
  }
  return term;
}

inline std::vector<std::size_t> iota_columns(std::size_t k) {
  std::vector<std::size_t> all(k);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

inline void check_batch(const Matrix& embeddings, std::size_t labels, const char* what) {
  if (embeddings.rows() != labels) {
    throw InvalidArgument(std::string(what) + ": " + std::to_string(labels) + " labels for " +
                          std::to_string(embeddings.rows()) + " examples");
  }
}

inline HeadTerm full_head_term(const ModelParams& p, const Matrix& features, HeadKind kind,
                               std::span<const std::uint32_t> labels, const char* what,
                               ColumnAccessCounter* counter = nullptr) {
  const Matrix& head = p.head(kind);
  const auto all = iota_columns(head.rows());
  for (auto y : labels) {
    if (y >= head.rows()) {
      throw InvalidArgument(std::string(what) + ": label " + std::to_string(y) + " out of range [0, " +
                            std::to_string(head.rows()) + ")");
    }
  }
  return softmax_head_term(
      features, head, p.logit_scale(),
      [&](std::size_t i) { return std::pair{std::span<const std::size_t>(all), std::size_t{labels[i]}}; }, counter);
}

inline HeadTerm within_coarse_term(const ModelParams& p, const Matrix& features,
                                   std::span<const std::uint32_t> instance_ids,
                                   std::span<const std::uint32_t> coarse_labels,
                                   const std::vector<std::vector<std::size_t>>& coarse_members,
                                   ColumnAccessCounter* counter) {
  const Matrix& head = p.instance_head;
  std::vector<std::size_t> target(instance_ids.size());
  for (std::size_t i = 0; i < instance_ids.size(); ++i) {
    const auto k = coarse_labels[i];
    if (k >= coarse_members.size()) throw InvalidArgument("within-coarse loss: coarse label out of range");
    const auto& m = coarse_members[k];
    const auto it = std::lower_bound(m.begin(), m.end(), std::size_t{instance_ids[i]});
    if (it == m.end() || *it != instance_ids[i]) {
      throw InvalidArgument("within-coarse loss: instance " + std::to_string(instance_ids[i]) +
                            " is not listed in coarse class " + std::to_string(k));
    }
    if (m.back() >= head.rows()) throw InvalidArgument("within-coarse loss: member id out of range");
    target[i] = static_cast<std::size_t>(it - m.begin());
  }
  return softmax_head_term(
      features, head, p.logit_scale(),
      [&](std::size_t i) {
        return std::pair{std::span<const std::size_t>(coarse_members[coarse_labels[i]]), target[i]};
      },
      counter);
}

inline std::vector<std::uint32_t> proxy_labels(const Membership& membership, std::span<const std::uint32_t> ids) {
  std::vector<std::uint32_t> labels(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= membership.assignment.size()) throw InvalidArgument("proxy loss: instance id not in membership");
    labels[i] = membership.assignment[ids[i]];
  }
  return labels;
}

inline void require_proxy(const ModelParams& p, const Membership& membership) {
  if (!p.proxy_head) throw StateError("instance-proxy loss requested before the proxy head exists (IP loss before epoch M)");
  if (p.proxy_head->rows() != membership.num_clusters) {
    throw InvalidArgument("proxy head has " + std::to_string(p.proxy_head->rows()) + " columns but membership has " +
                          std::to_string(membership.num_clusters) + " clusters");
  }
}

/// Pull branch-feature gradients back to the embeddings (through the MLP head when present).
inline void finish_branch(const ModelParams& p, const Matrix& embeddings, const Branch& branch,
                          const Matrix& grad_features, LossValue& out) {
  BranchGrad bg = instance_branch_backward(p, embeddings, branch.cache, grad_features);
  if (out.grad_embeddings.empty()) {
    out.grad_embeddings = std::move(bg.embeddings);
  } else {
    axpy(1.0, bg.embeddings.flat(), out.grad_embeddings.flat());
  }
  out.grad_mlp = std::move(bg.mlp);
}

inline void scale_columns(ColumnGrads& g, double w) {
  for (auto& [j, v] : g)
    for (double& x : v) x *= w;
}

}  // namespace detail

/// Mean cross-entropy of the coarse head against `labels`.
inline LossValue coarse_loss(const ModelParams& p, const Matrix& embeddings, std::span<const std::uint32_t> labels) {
  detail::check_batch(embeddings, labels.size(), "coarse_loss");
  auto term = detail::full_head_term(p, embeddings, HeadKind::coarse, labels, "coarse_loss");
  LossValue out;
  out.value = out.coarse = term.value;
  out.grad_embeddings = std::move(term.grad_features);
  out.grad_heads[HeadKind::coarse] = std::move(term.grad_columns);
  return out;
}

/// Instance classification over all n columns: example i is class i.
inline LossValue instance_loss_full(const ModelParams& p, const Matrix& embeddings,
                                    std::span<const std::uint32_t> instance_ids,
                                    ColumnAccessCounter* counter = nullptr) {
  detail::check_batch(embeddings, instance_ids.size(), "instance_loss_full");
  const Branch branch = instance_branch(p, embeddings);
  auto term = detail::full_head_term(p, branch.features, HeadKind::instance, instance_ids, "instance_loss_full", counter);
  LossValue out;
  out.value = out.instance = term.value;
  out.grad_heads[HeadKind::instance] = std::move(term.grad_columns);
  detail::finish_branch(p, embeddings, branch, term.grad_features, out);
  return out;
}

/// Instance classification restricted to the members of each example's coarse class.
///
/// `coarse_members[k]` lists, ascending, the global ids of coarse class k. Only those
/// columns of the instance head are read for an example of class k.
inline LossValue instance_loss_within_coarse(const ModelParams& p, const Matrix& embeddings,
                                             std::span<const std::uint32_t> instance_ids,
                                             std::span<const std::uint32_t> coarse_labels,
                                             const std::vector<std::vector<std::size_t>>& coarse_members,
                                             ColumnAccessCounter* counter = nullptr) {
  detail::check_batch(embeddings, instance_ids.size(), "instance_loss_within_coarse");
  detail::check_batch(embeddings, coarse_labels.size(), "instance_loss_within_coarse");
  const Branch branch = instance_branch(p, embeddings);
  auto term = detail::within_coarse_term(p, branch.features, instance_ids, coarse_labels, coarse_members, counter);
  LossValue out;
  out.value = out.instance = term.value;
  out.grad_heads[HeadKind::instance] = std::move(term.grad_columns);
  detail::finish_branch(p, embeddings, branch, term.grad_features, out);
  return out;
}

/// Cross-entropy of the proxy head against each example's assigned cluster.
inline LossValue instance_proxy_loss(const ModelParams& p, const Matrix& embeddings,
                                     std::span<const std::uint32_t> instance_ids, const Membership& membership) {
  detail::require_proxy(p, membership);
  detail::check_batch(embeddings, instance_ids.size(), "instance_proxy_loss");
  const auto labels = detail::proxy_labels(membership, instance_ids);
  const Branch branch = instance_branch(p, embeddings);
  auto term = detail::full_head_term(p, branch.features, HeadKind::proxy, labels, "instance_proxy_loss");
  LossValue out;
  out.value = out.proxy = term.value;
  out.grad_heads[HeadKind::proxy] = std::move(term.grad_columns);
  detail::finish_branch(p, embeddings, branch, term.grad_features, out);
  return out;
}

struct ObjectiveWeights {
  double lambda_coarse = 1.0;  // 0 gives the instance-only objective
  double lambda_instance = 1.0;
  double lambda_proxy = 0.0;
  InstanceMode mode = InstanceMode::within_coarse;
};

struct BatchLabels {
  std::span<const std::uint32_t> instance_ids;
  std::span<const std::uint32_t> coarse_labels;  // labels for the coarse head
};

/// λ_C · coarse + λ_I · instance + λ_P · proxy, with gradients weighted the same way (λ_C defaults to 1).
///
/// Terms with a zero weight are skipped entirely (their value is reported as 0).
/// `coarse_members` is required in within-coarse mode; `membership` when λ_P > 0.
inline LossValue combined_objective(const ModelParams& p, const Matrix& embeddings, const BatchLabels& labels,
                                    const ObjectiveWeights& w,
                                    const std::vector<std::vector<std::size_t>>* coarse_members = nullptr,
                                    const Membership* membership = nullptr, ColumnAccessCounter* counter = nullptr) {
  if (w.lambda_coarse < 0.0 || w.lambda_instance < 0.0 || w.lambda_proxy < 0.0) {
    throw InvalidArgument("combined_objective: negative weight");
  }
  LossValue out;
  if (w.lambda_coarse > 0.0) {
    out = coarse_loss(p, embeddings, labels.coarse_labels);
    out.value = w.lambda_coarse * out.coarse;
    if (w.lambda_coarse != 1.0) {
      for (double& g : out.grad_embeddings.flat()) g *= w.lambda_coarse;
      detail::scale_columns(out.grad_heads[HeadKind::coarse], w.lambda_coarse);
    }
  }
  const bool use_instance = w.lambda_instance > 0.0;
  const bool use_proxy = w.lambda_proxy > 0.0;
  if (!use_instance && !use_proxy) {
    if (out.grad_embeddings.empty()) out.grad_embeddings = Matrix(embeddings.rows(), embeddings.cols());
    return out;
  }
  if (use_proxy) {
    if (!membership) throw StateError("combined_objective: lambda_P > 0 needs a membership");
    detail::require_proxy(p, *membership);
  }
  detail::check_batch(embeddings, labels.instance_ids.size(), "combined_objective");

  const Branch branch = instance_branch(p, embeddings);
  Matrix grad_features(embeddings.rows(), branch.features.cols());
  if (use_instance) {
    detail::HeadTerm term;
    if (w.mode == InstanceMode::full) {
      term = detail::full_head_term(p, branch.features, HeadKind::instance, labels.instance_ids, "combined_objective",
                                    counter);
    } else {
      if (!coarse_members) throw InvalidArgument("combined_objective: within-coarse mode needs the coarse index");
      detail::check_batch(embeddings, labels.coarse_labels.size(), "combined_objective");
      term = detail::within_coarse_term(p, branch.features, labels.instance_ids, labels.coarse_labels, *coarse_members,
                                        counter);
    }
    out.instance = term.value;
    out.value += w.lambda_instance * term.value;
    axpy(w.lambda_instance, term.grad_features.flat(), grad_features.flat());
    detail::scale_columns(term.grad_columns, w.lambda_instance);
    out.grad_heads[HeadKind::instance] = std::move(term.grad_columns);
  }
  if (use_proxy) {
    const auto proxy_y = detail::proxy_labels(*membership, labels.instance_ids);
    auto term = detail::full_head_term(p, branch.features, HeadKind::proxy, proxy_y, "combined_objective");
    out.proxy = term.value;
    out.value += w.lambda_proxy * term.value;
    axpy(w.lambda_proxy, term.grad_features.flat(), grad_features.flat());
    detail::scale_columns(term.grad_columns, w.lambda_proxy);
    out.grad_heads[HeadKind::proxy] = std::move(term.grad_columns);
  }
  detail::finish_branch(p, embeddings, branch, grad_features, out);
  return out;
}

/// Report-only margin surrogate:
///   Σ_i ( ‖x_i − w_{μ(i)}‖² − Σ_{p≠μ(i)} ‖x_i − w_p‖² / (P−1) )
/// over the proxy-branch features. With P = 1 the second sum is empty.
inline double margin_diagnostic(const ModelParams& p, const Matrix& embeddings,
                                std::span<const std::uint32_t> instance_ids, const Membership& membership) {
  detail::require_proxy(p, membership);
  detail::check_batch(embeddings, instance_ids.size(), "margin_diagnostic");
  const auto labels = detail::proxy_labels(membership, instance_ids);
  const Matrix features = instance_branch(p, embeddings).features;
  const Matrix& proxies = *p.proxy_head;
  const std::size_t num_p = proxies.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto x = features.row(i);
    double own = 0.0, others = 0.0;
    for (std::size_t q = 0; q < num_p; ++q) {
      const double dist = squared_distance(x, proxies.row(q));
      if (q == labels[i]) {
        own = dist;
      } else {
        others += dist;
      }
    }
    total += own - (num_p > 1 ? others / static_cast<double>(num_p - 1) : 0.0);
  }
  return total;
}

}  // namespace coins
