#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "coins/errors.hpp"
#include "coins/matrix.hpp"

namespace coins {

/// log Σ exp(v), shifted by the maximum so large logits never overflow.
inline double log_sum_exp(std::span<const double> logits) {
  if (logits.empty()) throw InvalidArgument("log_sum_exp: empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - m);
  return m + std::log(s);
}

inline Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidArgument("softmax: empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double s = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - m);
    s += p[k];
  }
  for (double& v : p) v /= s;
  return p;
}

inline void check_label(std::span<const double> logits, std::size_t label, const char* what) {
  if (logits.empty()) throw InvalidArgument(std::string(what) + ": empty logits");
  if (label >= logits.size()) {
    throw InvalidArgument(std::string(what) + ": label " + std::to_string(label) + " out of range [0, " +
                          std::to_string(logits.size()) + ")");
  }
}

/// −log softmax(logits)[label]
inline double cross_entropy(std::span<const double> logits, std::size_t label) {
  check_label(logits, label, "cross_entropy");
  const double v = log_sum_exp(logits) - logits[label];
  return v < 0.0 ? 0.0 : v;  // rounding can give −0-ish values; NaN passes through
}

/// ∂CE/∂logits = softmax(logits) − onehot(label)
inline Vector ce_gradient(std::span<const double> logits, std::size_t label) {
  check_label(logits, label, "ce_gradient");
  Vector g = softmax(logits);
  g[label] -= 1.0;
  return g;
}

inline constexpr double kNormEpsilon = 1e-12;

inline Vector l2_normalize(std::span<const double> v) {
  const double norm = std::sqrt(squared_norm(v));
  if (!(norm > kNormEpsilon)) {
    throw DegenerateInput("l2_normalize: norm " + std::to_string(norm) + " below epsilon");
  }
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= norm;
  return out;
}

/// Jacobian-vector product of v ↦ v/‖v‖ at v, applied to the upstream gradient.
/// With u = v/‖v‖: ∂L/∂v = (g − u·(uᵀg)) / ‖v‖.
inline Vector l2_normalize_backward(std::span<const double> v, std::span<const double> grad_out) {
  const double norm = std::sqrt(squared_norm(v));
  if (!(norm > kNormEpsilon)) throw DegenerateInput("l2_normalize_backward: norm below epsilon");
  double ug = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) ug += v[k] * grad_out[k];
  ug /= norm;
  Vector g(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) g[k] = (grad_out[k] - (v[k] / norm) * ug) / norm;
  return g;
}

/// Normalize every row of `m` in place; returns the pre-normalization norms.
inline Vector normalize_rows(Matrix& m) {
  Vector norms(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    const double n = std::sqrt(squared_norm(r));
    if (!(n > kNormEpsilon)) throw DegenerateInput("normalize_rows: row " + std::to_string(i) + " has zero norm");
    for (double& x : r) x /= n;
    norms[i] = n;
  }
  return norms;
}

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t worst_index = 0;
};

/// Compare an analytic gradient against central differences.
///
/// Relative error per coordinate is |a − n| / max(1, |a|, |n|); the maximum is returned.
/// Throws DegenerateInput naming the coordinate if fn is non-finite near the point.
inline GradCheckResult grad_check(const std::function<double(std::span<const double>)>& fn,
                                  std::span<const double> point, std::span<const double> analytic,
                                  double step = 1e-5) {
  if (point.size() != analytic.size()) throw InvalidArgument("grad_check: gradient length mismatch");
  std::vector<double> x(point.begin(), point.end());
  GradCheckResult result;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = x[k];
    x[k] = orig + step;
    const double fp = fn(x);
    x[k] = orig - step;
    const double fm = fn(x);
    x[k] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw DegenerateInput("grad_check: non-finite evaluation at coordinate " + std::to_string(k));
    }
    const double numeric = (fp - fm) / (2.0 * step);
    const double denom = std::max({1.0, std::abs(analytic[k]), std::abs(numeric)});
    const double err = std::abs(analytic[k] - numeric) / denom;
    if (err > result.max_error) {
      result.max_error = err;
      result.worst_index = k;
    }
  }
  return result;
}

}  // namespace coins
