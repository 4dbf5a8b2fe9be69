#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "coins/errors.hpp"
#include "coins/eval.hpp"
#include "coins/matrix.hpp"
#include "coins/numerics.hpp"

// Numerical verification of the fine-class guarantees for instance classification
// trained with (or without) coarse supervision. All constants are measured as exact
// minima/maxima over the data, which makes every inequality checkable as stated.
// Quantities that can overflow (residual sums, c′) are carried in log space.

namespace coins {

enum class BoundMode { theorem1, theorem2 };

/// Constants measured from embeddings and heads.
///
/// log_alpha_odds = log(α / (1 − α)) and log_a = log a are the quantities that enter
/// the bound; alpha and a are derived from them for reporting.
struct BoundConstants {
  double alpha = 0.0;
  double beta = 0.0;
  double log_alpha_odds = 0.0;
  double log_beta_odds = 0.0;
  double log_a = 0.0;
  double log_b = 0.0;
  double c = 0.0;
  std::size_t z = 0;
  std::size_t num_fine = 0;
  std::size_t M = 0;
};

inline double log1m_exp(double log_p) { return std::log1p(-std::exp(log_p)); }

namespace detail {

inline double neg_inf() { return -std::numeric_limits<double>::infinity(); }

/// log Σ_t exp(v_t) for possibly empty input (empty → −∞).
inline double log_sum_exp_or_neg_inf(std::span<const double> v) { return v.empty() ? neg_inf() : log_sum_exp(v); }

/// z such that every fine class has exactly z members, and F = n / z.
inline std::pair<std::size_t, std::size_t> uniform_class_size(std::span<const std::uint32_t> fine_labels) {
  if (fine_labels.empty()) throw UnsupportedData("bound verification needs fine labels");
  std::size_t num_fine = 0;
  for (auto f : fine_labels) num_fine = std::max<std::size_t>(num_fine, f + 1);
  std::vector<std::size_t> count(num_fine, 0);
  for (auto f : fine_labels) ++count[f];
  const std::size_t z = count[0];
  for (std::size_t s = 0; s < num_fine; ++s) {
    if (count[s] != z) {
      throw UnsupportedData("fine classes must all have the same size z with zF = n (class 0 has " +
                            std::to_string(z) + " examples, class " + std::to_string(s) + " has " +
                            std::to_string(count[s]) + ")");
    }
  }
  return {z, num_fine};
}

}  // namespace detail

/// α, β, a, b, c, z, M from the data.
///
/// theorem1: α and a use the softmax over all n instance columns.
/// theorem2: α and a use only the columns of the example's own coarse class.
inline BoundConstants measure_constants(const Matrix& embeddings, const Matrix& coarse_head,
                                        const Matrix& instance_head, std::span<const std::uint32_t> coarse_labels,
                                        std::span<const std::uint32_t> fine_labels, BoundMode mode) {
  const std::size_t n = embeddings.rows();
  if (instance_head.rows() != n) throw InvalidArgument("measure_constants: instance head must have n columns");
  if (coarse_labels.size() != n || fine_labels.size() != n) throw InvalidArgument("measure_constants: label count != n");
  if (embeddings.cols() != instance_head.cols() || embeddings.cols() != coarse_head.cols()) {
    throw InvalidArgument("measure_constants: dimension mismatch");
  }
  BoundConstants k;
  std::tie(k.z, k.num_fine) = detail::uniform_class_size(fine_labels);
  for (auto y : coarse_labels)
    if (y >= coarse_head.rows()) throw InvalidArgument("measure_constants: coarse label out of range");

  k.log_alpha_odds = k.log_beta_odds = std::numeric_limits<double>::infinity();
  k.log_a = k.log_b = std::numeric_limits<double>::infinity();
  double c2 = 0.0;
  std::vector<double> rest;
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = embeddings.row(i);
    c2 = std::max(c2, squared_norm(f));
    // Instance softmax residual: all other columns, or other columns of the same coarse class.
    rest.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (mode == BoundMode::theorem2 && coarse_labels[j] != coarse_labels[i]) continue;
      rest.push_back(dot(f, instance_head.row(j)));
    }
    const double log_rest_i = detail::log_sum_exp_or_neg_inf(rest);
    k.log_a = std::min(k.log_a, log_rest_i);
    k.log_alpha_odds = std::min(k.log_alpha_odds, dot(f, instance_head.row(i)) - log_rest_i);

    rest.clear();
    for (std::size_t j = 0; j < coarse_head.rows(); ++j)
      if (j != coarse_labels[i]) rest.push_back(dot(f, coarse_head.row(j)));
    const double log_rest_c = detail::log_sum_exp_or_neg_inf(rest);
    k.log_b = std::min(k.log_b, log_rest_c);
    k.log_beta_odds = std::min(k.log_beta_odds, dot(f, coarse_head.row(coarse_labels[i])) - log_rest_c);
  }
  for (std::size_t j = 0; j < n; ++j) c2 = std::max(c2, squared_norm(instance_head.row(j)));
  for (std::size_t j = 0; j < coarse_head.rows(); ++j) c2 = std::max(c2, squared_norm(coarse_head.row(j)));
  k.c = std::sqrt(c2);
  // α = odds / (1 + odds)
  k.alpha = 1.0 / (1.0 + std::exp(-k.log_alpha_odds));
  k.beta = 1.0 / (1.0 + std::exp(-k.log_beta_odds));

  std::vector<std::size_t> coarse_count(coarse_head.rows(), 0);
  for (auto y : coarse_labels) ++coarse_count[y];
  for (auto y : coarse_labels) k.M = std::max(k.M, n - coarse_count[y]);
  return k;
}

/// √(2c² − 2 log(aα/(1−α))) + √(2c² − 2 log(bβ/(1−β))), taking log(aα/(1−α)) and
/// log(bβ/(1−β)) directly. Arguments within −1e-12·max(1, c²) of zero are clamped; below
/// that the constants are inconsistent.
inline double root_sum(double c, double log_a_alpha, double log_b_beta) {
  if (std::isnan(log_a_alpha) || std::isnan(log_b_beta)) throw DomainError("h_factor: NaN constants");
  const double tol = 1e-12 * std::max(1.0, c * c);
  auto root = [&](double log_term, const char* which) {
    const double arg = 2.0 * c * c - 2.0 * log_term;
    if (arg < -tol) {
      throw DomainError(std::string("h_factor: square-root argument for ") + which + " is " + std::to_string(arg) +
                        " < 0 (inconsistent constants)");
    }
    return std::sqrt(std::max(0.0, arg));
  };
  return root(log_a_alpha, "alpha") + root(log_b_beta, "beta");
}

/// log h = −(2c(z−1)/z) · root_sum.
inline double log_h_factor(double c, double log_a_alpha, double log_b_beta, std::size_t z) {
  if (z == 0) throw DomainError("h_factor: z must be >= 1");
  const double sum = root_sum(c, log_a_alpha, log_b_beta);
  if (z == 1) return 0.0;
  const double zz = static_cast<double>(z);
  if (std::isinf(sum)) return c > 0.0 ? detail::neg_inf() : 0.0;
  return -(2.0 * c * (zz - 1.0) / zz) * sum;
}

inline void check_probability(double p, const char* name) {
  if (!(p > 0.0) || !(p < 1.0)) {
    throw DomainError(std::string(name) + " = " + std::to_string(p) + " outside (0, 1); the 1/(1 − " + name +
                      ") factor is undefined");
  }
}

/// h(c, α, β) in (0, 1].
inline double h_factor(double c, double alpha, double beta, double a, double b, std::size_t z) {
  check_probability(alpha, "alpha");
  check_probability(beta, "beta");
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("h_factor: a and b must be > 0");
  const double la = std::log(a) + std::log(alpha) - std::log1p(-alpha);
  const double lb = std::log(b) + std::log(beta) - std::log1p(-beta);
  return std::exp(log_h_factor(c, la, lb, z));
}

/// Relaxed constants when instance classification only runs within coarse classes.
struct RelaxedConstants {
  double log_c_prime = 0.0;        // 2c(√(2c² − 2 log(aα/(1−α))) + √(2c² − 2 log(bβ/(1−β))))
  double log_c_doubleprime = 0.0;  // log c′ + log M
  double alpha_prime = 0.0;        // 1 / (1/α + (1−β)c″/β)
  double log_alpha_prime = 0.0;
};

inline RelaxedConstants relax_constants(const BoundConstants& k) {
  RelaxedConstants r;
  const double sum = root_sum(k.c, k.log_a + k.log_alpha_odds, k.log_b + k.log_beta_odds);
  r.log_c_prime = k.c > 0.0 ? 2.0 * k.c * sum : 0.0;
  r.log_c_doubleprime = k.M > 0 ? r.log_c_prime + std::log(static_cast<double>(k.M)) : detail::neg_inf();
  // log(1/α) and log((1−β)c″/β), combined with log-add-exp.
  const double log_inv_alpha = std::log1p(std::exp(-k.log_alpha_odds));
  const double log_relax = -k.log_beta_odds + r.log_c_doubleprime;
  const double hi = std::max(log_inv_alpha, log_relax);
  const double log_inv_alpha_prime =
      std::isinf(log_relax) && log_relax < 0 ? log_inv_alpha
                                             : hi + std::log(std::exp(log_inv_alpha - hi) + std::exp(log_relax - hi));
  r.log_alpha_prime = -log_inv_alpha_prime;
  r.alpha_prime = std::exp(r.log_alpha_prime);
  return r;
}

/// α′/α as β varies with every other measured constant fixed (b's log enters via β).
inline std::vector<double> alpha_prime_ratio_sweep(const BoundConstants& k, std::span<const double> betas) {
  std::vector<double> out;
  for (double beta : betas) {
    check_probability(beta, "beta");
    BoundConstants kb = k;
    kb.beta = beta;
    kb.log_beta_odds = std::log(beta) - std::log1p(-beta);
    out.push_back(std::exp(relax_constants(kb).log_alpha_prime) / k.alpha);
  }
  return out;
}

struct ExampleBound {
  double log_lhs = 0.0;
  double log_rhs = 0.0;
};

inline constexpr double kBoundRelTol = 1e-9;

inline bool holds(const ExampleBound& e) {
  if (e.log_rhs == detail::neg_inf()) return true;
  return e.log_lhs >= e.log_rhs + std::log1p(-kBoundRelTol);
}

struct Lemma1Report {
  double alpha = 0.0;
  std::size_t z = 0;
  std::vector<double> jensen_min_slack;  // per example: min over fine classes of log rhs − log lhs
  std::vector<ExampleBound> lemma;       // per example: log Pr{y^F} vs log(zα·exp(f·(w̄ − w_i)))
  bool jensen_hold = true;
  bool lemma_hold = true;
};

/// Jensen step and the fine-class lower bound for plain instance classification.
inline Lemma1Report verify_lemma1(const Matrix& embeddings, const Matrix& instance_head,
                                  std::span<const std::uint32_t> fine_labels) {
  const std::size_t n = embeddings.rows();
  if (instance_head.rows() != n || fine_labels.size() != n) throw InvalidArgument("verify_lemma1: size mismatch");
  if (embeddings.cols() != instance_head.cols()) throw InvalidArgument("verify_lemma1: dimension mismatch");
  const auto [z, num_fine] = detail::uniform_class_size(fine_labels);
  const Matrix means = fine_class_means(instance_head, fine_labels, num_fine);
  const Vector log_pf = fine_class_log_prob(embeddings, instance_head, fine_labels, num_fine);

  Lemma1Report rep;
  rep.z = z;
  double log_alpha = std::numeric_limits<double>::infinity();
  Vector logits(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) logits[j] = dot(embeddings.row(i), instance_head.row(j));
    log_alpha = std::min(log_alpha, logits[i] - log_sum_exp(logits));
  }
  rep.alpha = std::exp(log_alpha);
  const double log_z = std::log(static_cast<double>(z));
  const double tol = std::log1p(-kBoundRelTol);
  std::vector<std::vector<double>> by_class(num_fine);
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = embeddings.row(i);
    for (auto& v : by_class) v.clear();
    for (std::size_t j = 0; j < n; ++j) by_class[fine_labels[j]].push_back(dot(f, instance_head.row(j)));
    double min_slack = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < num_fine; ++s) {
      const double lhs = dot(f, means.row(s));
      const double rhs = log_sum_exp(by_class[s]) - log_z;
      min_slack = std::min(min_slack, rhs - lhs);
    }
    rep.jensen_min_slack.push_back(min_slack);
    // The exact form exp(rhs) ≥ exp(lhs)(1 − tol) in log space.
    if (min_slack < tol) rep.jensen_hold = false;

    ExampleBound e;
    e.log_lhs = log_pf[i];
    e.log_rhs = log_z + log_alpha + dot(f, means.row(fine_labels[i])) - dot(f, instance_head.row(i));
    if (!holds(e)) rep.lemma_hold = false;
    rep.lemma.push_back(e);
  }
  return rep;
}

struct BoundReport {
  int theorem = 1;
  BoundConstants constants;
  double log_h = 0.0;
  double h = 0.0;
  std::optional<RelaxedConstants> relaxed;  // theorem 2 only
  std::vector<ExampleBound> per_example;
  bool all_hold = true;
  bool vacuous = false;  // rhs underflowed below 1e-300 for every example
  double slack_min = 0.0;
  double log_slack_min = 0.0;  // min over examples of log lhs − log rhs
};

/// Per-example check of Pr{y_i^F | f_i, W^I} ≥ α z h(c, α, β) (theorem 1) or
/// ≥ α′ z h(c, α′, β) (theorem 2), with all constants measured from the data.
inline BoundReport verify_theorem(const Matrix& embeddings, const Matrix& coarse_head, const Matrix& instance_head,
                                  std::span<const std::uint32_t> coarse_labels,
                                  std::span<const std::uint32_t> fine_labels, int which) {
  if (which != 1 && which != 2) throw InvalidArgument("verify_theorem: theorem must be 1 or 2");
  const BoundMode mode = which == 1 ? BoundMode::theorem1 : BoundMode::theorem2;
  BoundReport rep;
  rep.theorem = which;
  rep.constants = measure_constants(embeddings, coarse_head, instance_head, coarse_labels, fine_labels, mode);
  const BoundConstants& k = rep.constants;
  if (std::isinf(k.log_alpha_odds) && k.log_alpha_odds > 0) {
    throw DomainError("alpha = 1: the instance softmax has no competing columns");
  }
  if (std::isinf(k.log_beta_odds) && k.log_beta_odds > 0) {
    throw DomainError("beta = 1: the coarse softmax has no competing columns");
  }
  double log_alpha_used = std::log(k.alpha);
  double log_alpha_odds_used = k.log_alpha_odds;
  if (which == 2) {
    rep.relaxed = relax_constants(k);
    log_alpha_used = rep.relaxed->log_alpha_prime;
    log_alpha_odds_used = log_alpha_used - log1m_exp(log_alpha_used);
  }
  rep.log_h = log_h_factor(k.c, k.log_a + log_alpha_odds_used, k.log_b + k.log_beta_odds, k.z);
  rep.h = std::exp(rep.log_h);
  const double log_rhs = log_alpha_used + std::log(static_cast<double>(k.z)) + rep.log_h;
  rep.vacuous = log_rhs < std::log(1e-300);

  const Vector log_pf = fine_class_log_prob(embeddings, instance_head, fine_labels, k.num_fine);
  rep.slack_min = std::numeric_limits<double>::infinity();
  rep.log_slack_min = std::numeric_limits<double>::infinity();
  for (double lp : log_pf) {
    ExampleBound e{lp, log_rhs};
    if (!holds(e)) rep.all_hold = false;
    rep.slack_min = std::min(rep.slack_min, std::exp(lp) - std::exp(log_rhs));
    rep.log_slack_min = std::min(rep.log_slack_min, lp - log_rhs);
    rep.per_example.push_back(e);
  }
  return rep;
}

}  // namespace coins
