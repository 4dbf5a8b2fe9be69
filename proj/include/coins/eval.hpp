#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coins/errors.hpp"
#include "coins/matrix.hpp"
#include "coins/numerics.hpp"

namespace coins {

struct EvalReport {
  std::map<std::size_t, double> recall_at;
  std::map<std::size_t, double> topk_acc;
  std::optional<double> fine_prob_min;
  std::optional<double> fine_prob_mean;
  std::size_t n_queries = 0;
};

struct RecallResult {
  std::map<std::size_t, double> recall_at;
  std::size_t n_queries = 0;
};

/// Recall@k by cosine similarity, each example querying all others.
///
/// A query hits at k if one of its k most similar neighbors shares its label; ties in
/// similarity rank the lower example index first. Queries whose label occurs only once
/// are left out of the denominator. Zero vectors have similarity 0 to everything.
inline RecallResult recall_at_k(const Matrix& embeddings, std::span<const std::uint32_t> labels,
                                std::span<const std::size_t> ks) {
  const std::size_t n = embeddings.rows();
  if (n < 2) throw InvalidArgument("recall_at_k: need at least 2 examples");
  if (labels.size() != n) throw InvalidArgument("recall_at_k: label count != n");
  for (std::size_t k : ks)
    if (k == 0) throw InvalidArgument("recall_at_k: k must be >= 1");

  Matrix unit = embeddings;
  for (std::size_t i = 0; i < n; ++i) {
    auto r = unit.row(i);
    const double norm = std::sqrt(squared_norm(r));
    if (norm > kNormEpsilon) {
      for (double& v : r) v /= norm;
    } else {
      std::fill(r.begin(), r.end(), 0.0);
    }
  }
  std::map<std::uint32_t, std::size_t> count;
  for (auto y : labels) ++count[y];

  RecallResult out;
  std::vector<std::size_t> hits(ks.size(), 0);
  std::vector<double> sim(n);
  for (std::size_t q = 0; q < n; ++q) {
    if (count[labels[q]] < 2) continue;
    ++out.n_queries;
    for (std::size_t j = 0; j < n; ++j) sim[j] = j == q ? 0.0 : dot(unit.row(q), unit.row(j));
    // Best-ranked neighbor with the same label: highest similarity, then lowest index.
    std::size_t best = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == q || labels[j] != labels[q]) continue;
      if (best == n || sim[j] > sim[best]) best = j;
    }
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == q || j == best) continue;
      if (sim[j] > sim[best] || (sim[j] == sim[best] && j < best)) ++rank;
    }
    for (std::size_t t = 0; t < ks.size(); ++t)
      if (rank < ks[t]) ++hits[t];
  }
  if (out.n_queries == 0) throw InvalidArgument("recall_at_k: no valid queries (every label is a singleton)");
  for (std::size_t t = 0; t < ks.size(); ++t)
    out.recall_at[ks[t]] = static_cast<double>(hits[t]) / static_cast<double>(out.n_queries);
  return out;
}

/// Fraction of rows whose label is among the k largest logits (ties: lower class index ranks first).
inline std::map<std::size_t, double> topk_accuracy(const Matrix& logits, std::span<const std::uint32_t> labels,
                                                   std::span<const std::size_t> ks) {
  if (labels.size() != logits.rows()) throw InvalidArgument("topk_accuracy: label count != rows");
  for (std::size_t k : ks) {
    if (k == 0 || k > logits.cols()) {
      throw InvalidArgument("topk_accuracy: k = " + std::to_string(k) + " outside [1, " +
                            std::to_string(logits.cols()) + "]");
    }
  }
  std::vector<std::size_t> hits(ks.size(), 0);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const std::size_t y = labels[i];
    if (y >= row.size()) throw InvalidArgument("topk_accuracy: label out of range");
    std::size_t rank = 0;
    for (std::size_t j = 0; j < row.size(); ++j)
      if (row[j] > row[y] || (row[j] == row[y] && j < y)) ++rank;
    for (std::size_t t = 0; t < ks.size(); ++t)
      if (rank < ks[t]) ++hits[t];
  }
  std::map<std::size_t, double> out;
  for (std::size_t t = 0; t < ks.size(); ++t)
    out[ks[t]] = logits.rows() ? static_cast<double>(hits[t]) / static_cast<double>(logits.rows()) : 0.0;
  return out;
}

/// Mean instance vector of each fine class: row s = (1/|s|) Σ_{y_j = s} w_j.
inline Matrix fine_class_means(const Matrix& instance_head, std::span<const std::uint32_t> fine_labels,
                               std::size_t num_fine) {
  if (fine_labels.size() != instance_head.rows()) throw InvalidArgument("fine_class_means: label count != n");
  Matrix means(num_fine, instance_head.cols());
  std::vector<std::size_t> count(num_fine, 0);
  for (std::size_t j = 0; j < fine_labels.size(); ++j) {
    if (fine_labels[j] >= num_fine) throw InvalidArgument("fine_class_means: label out of range");
    axpy(1.0, instance_head.row(j), means.row(fine_labels[j]));
    ++count[fine_labels[j]];
  }
  for (std::size_t s = 0; s < num_fine; ++s) {
    if (count[s] == 0) throw InvalidArgument("fine_class_means: fine class " + std::to_string(s) + " is empty");
    for (double& v : means.row(s)) v /= static_cast<double>(count[s]);
  }
  return means;
}

/// Row i is the log-softmax over fine classes of scale · f_i · w̄_s, with w̄_s the mean
/// instance vector of class s.
inline Matrix fine_class_log_prob_matrix(const Matrix& embeddings, const Matrix& instance_head,
                                         std::span<const std::uint32_t> fine_labels, std::size_t num_fine,
                                         double scale = 1.0) {
  if (embeddings.cols() != instance_head.cols()) throw InvalidArgument("fine_class_prob: dim mismatch");
  const Matrix means = fine_class_means(instance_head, fine_labels, num_fine);
  Matrix out(embeddings.rows(), num_fine);
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    auto row = out.row(i);
    for (std::size_t s = 0; s < num_fine; ++s) row[s] = scale * dot(embeddings.row(i), means.row(s));
    const double lse = log_sum_exp(row);
    for (double& v : row) v -= lse;
  }
  return out;
}

/// Log of Pr{y_i^F | f_i, W^I} for each example's own fine class.
inline Vector fine_class_log_prob(const Matrix& embeddings, const Matrix& instance_head,
                                  std::span<const std::uint32_t> fine_labels, std::size_t num_fine,
                                  double scale = 1.0) {
  if (embeddings.rows() != fine_labels.size()) throw InvalidArgument("fine_class_prob: label count != n");
  const Matrix lp = fine_class_log_prob_matrix(embeddings, instance_head, fine_labels, num_fine, scale);
  Vector out(embeddings.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lp(i, fine_labels[i]);
  return out;
}

inline Vector fine_class_prob(const Matrix& embeddings, const Matrix& instance_head,
                              std::span<const std::uint32_t> fine_labels, std::size_t num_fine, double scale = 1.0) {
  Vector p = fine_class_log_prob(embeddings, instance_head, fine_labels, num_fine, scale);
  for (double& v : p) v = std::exp(v);
  return p;
}

}  // namespace coins
