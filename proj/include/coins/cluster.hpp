#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "coins/errors.hpp"
#include "coins/matrix.hpp"
#include "coins/membership.hpp"
#include "coins/numerics.hpp"
#include "coins/rng.hpp"

namespace coins {

/// Proxy p = mean of the instance vectors assigned to p (rows of `instance_head`),
/// unit-normalized afterwards when `normalize` is set.
inline Matrix update_proxies(const Matrix& instance_head, const Membership& membership, bool normalize = false) {
  if (membership.assignment.size() != instance_head.rows()) {
    throw InvalidArgument("update_proxies: membership covers " + std::to_string(membership.assignment.size()) +
                          " instances, head has " + std::to_string(instance_head.rows()));
  }
  Matrix proxies(membership.num_clusters, instance_head.cols());
  std::vector<std::size_t> count(membership.num_clusters, 0);
  for (std::size_t i = 0; i < instance_head.rows(); ++i) {
    const auto c = membership.assignment[i];
    if (c >= membership.num_clusters) throw InvalidArgument("update_proxies: cluster id out of range");
    axpy(1.0, instance_head.row(i), proxies.row(c));
    ++count[c];
  }
  for (std::size_t c = 0; c < count.size(); ++c) {
    if (count[c] == 0) throw InvalidArgument("update_proxies: cluster " + std::to_string(c) + " is empty");
    for (double& v : proxies.row(c)) v /= static_cast<double>(count[c]);
  }
  if (normalize) normalize_rows(proxies);
  return proxies;
}

struct KMeansOptions {
  std::size_t max_iters = 100;
  double tol = 1e-6;  // stop when the relative objective decrease falls below this
  std::size_t restarts = 4;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  Membership membership;
  Matrix centroids;             // P × d cluster means
  std::vector<double> history;  // objective after each Lloyd iteration (first entry: at the initial centroids)
};

/// Σ_i ‖x_i − centroid_{μ(i)}‖²
inline double kmeans_objective(const Matrix& points, std::span<const std::uint32_t> assignment,
                               const Matrix& centroids) {
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) total += squared_distance(points.row(i), centroids.row(assignment[i]));
  return total;
}

namespace detail {

inline void assign_nearest(const Matrix& points, const Matrix& centroids, std::vector<std::uint32_t>& assignment) {
  for (std::size_t i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t arg = 0;
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
      const double dist = squared_distance(points.row(i), centroids.row(c));
      if (dist < best) {
        best = dist;
        arg = static_cast<std::uint32_t>(c);
      }
    }
    assignment[i] = arg;
  }
}

/// Fill each empty cluster with the point farthest from its current centroid,
/// taken from a cluster that keeps at least one member.
inline void repair_empty(const Matrix& points, const Matrix& centroids, std::vector<std::uint32_t>& assignment) {
  std::vector<std::size_t> count(centroids.rows(), 0);
  for (auto c : assignment) ++count[c];
  for (std::size_t empty = 0; empty < count.size(); ++empty) {
    if (count[empty] != 0) continue;
    double worst = -1.0;
    std::size_t pick = points.rows();
    for (std::size_t i = 0; i < points.rows(); ++i) {
      if (count[assignment[i]] < 2) continue;
      const double dist = squared_distance(points.row(i), centroids.row(assignment[i]));
      if (dist > worst) {
        worst = dist;
        pick = i;
      }
    }
    if (pick == points.rows()) throw std::logic_error("kmeans: no donor cluster for empty-cluster repair");
    --count[assignment[pick]];
    assignment[pick] = static_cast<std::uint32_t>(empty);
    ++count[empty];
  }
}

inline Matrix cluster_means(const Matrix& points, std::span<const std::uint32_t> assignment, std::size_t k) {
  Membership m;
  m.assignment.assign(assignment.begin(), assignment.end());
  m.num_clusters = k;
  return update_proxies(points, m);
}

inline Matrix kmeans_plus_plus(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  Matrix centroids(k, points.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t chosen = rng.index(n);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += d2[i];
          if (acc > target && d2[i] > 0.0) {
            chosen = i;
            break;
          }
        }
      } else {
        chosen = rng.index(n);
      }
    }
    std::copy_n(points.row(chosen).begin(), points.cols(), centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(points.row(i), centroids.row(c)));
  }
  return centroids;
}

}  // namespace detail

/// Lloyd iterations from given initial centroids (rows).
///
/// Throws std::logic_error if the objective ever increases, which would indicate a bug.
inline KMeansResult lloyd(const Matrix& points, Matrix centroids, std::size_t max_iters = 100, double tol = 1e-6) {
  const std::size_t k = centroids.rows();
  if (k == 0 || k > points.rows()) throw InvalidArgument("lloyd: need 1 <= P <= n");
  if (centroids.cols() != points.cols()) throw InvalidArgument("lloyd: centroid dim mismatch");
  KMeansResult r;
  std::vector<std::uint32_t> assignment(points.rows(), 0);
  detail::assign_nearest(points, centroids, assignment);
  r.history.push_back(kmeans_objective(points, assignment, centroids));
  for (std::size_t it = 0; it < max_iters; ++it) {
    detail::repair_empty(points, centroids, assignment);
    centroids = detail::cluster_means(points, assignment, k);
    const double prev = r.history.back();
    const double obj = kmeans_objective(points, assignment, centroids);
    if (obj > prev + 1e-12 * std::max(1.0, prev)) {
      throw std::logic_error("lloyd: objective increased from " + std::to_string(prev) + " to " + std::to_string(obj));
    }
    r.history.push_back(obj);
    std::vector<std::uint32_t> next(assignment.size());
    detail::assign_nearest(points, centroids, next);
    const bool stable = next == assignment;
    assignment = std::move(next);
    if (stable || prev - obj <= tol * std::max(prev, std::numeric_limits<double>::min())) break;
  }
  // The final assignment step can only lower the objective; make the means consistent with it.
  detail::repair_empty(points, centroids, assignment);
  centroids = detail::cluster_means(points, assignment, k);
  const double final_obj = kmeans_objective(points, assignment, centroids);
  if (final_obj > r.history.back() + 1e-12 * std::max(1.0, r.history.back())) {
    throw std::logic_error("lloyd: objective increased in the final step");
  }
  r.history.push_back(final_obj);
  r.membership.assignment = std::move(assignment);
  r.membership.num_clusters = k;
  r.membership.objective = final_obj;
  r.centroids = std::move(centroids);
  return r;
}

/// Split a global cluster budget across classes proportionally to their sizes
/// (largest remainder), with 1 <= P_k <= n_k for every non-empty class.
inline std::vector<std::size_t> apportion_clusters(std::span<const std::size_t> class_sizes, std::size_t total) {
  const std::size_t n = std::accumulate(class_sizes.begin(), class_sizes.end(), std::size_t{0});
  const auto nonempty = static_cast<std::size_t>(
      std::count_if(class_sizes.begin(), class_sizes.end(), [](std::size_t s) { return s > 0; }));
  if (total > n) throw InvalidArgument("apportion_clusters: P exceeds the number of points");
  if (total < nonempty) throw InvalidArgument("apportion_clusters: P smaller than the number of non-empty classes");
  const std::size_t k = class_sizes.size();
  std::vector<std::size_t> budget(k), remainder(k);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    budget[c] = total * class_sizes[c] / n;
    remainder[c] = total * class_sizes[c] % n;
    assigned += budget[c];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t t = 0; assigned < total; ++t, ++assigned) ++budget[order[t % k]];

  // Every non-empty class needs one cluster; take from the largest budgets.
  for (std::size_t c = 0; c < k; ++c) {
    if (class_sizes[c] == 0 || budget[c] > 0) continue;
    std::size_t donor = k;
    for (std::size_t t = 0; t < k; ++t)
      if (budget[t] > 1 && (donor == k || budget[t] > budget[donor])) donor = t;
    --budget[donor];
    ++budget[c];
  }
  return budget;
}

namespace detail {

inline KMeansResult kmeans_global(const Matrix& points, std::size_t k, const KMeansOptions& opt) {
  if (k == 0 || k > points.rows()) {
    throw InvalidArgument("kmeans: need 1 <= P <= n (P = " + std::to_string(k) + ", n = " +
                          std::to_string(points.rows()) + ")");
  }
  std::optional<KMeansResult> best;
  const std::size_t restarts = std::max<std::size_t>(opt.restarts, 1);
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(opt.seed, r));
    KMeansResult run = lloyd(points, kmeans_plus_plus(points, k, rng), opt.max_iters, opt.tol);
    if (!best || run.membership.objective < best->membership.objective) best = std::move(run);
  }
  return std::move(*best);
}

}  // namespace detail

/// k-means over the rows of `points` (k-means++ seeding, Lloyd, best of `restarts`).
///
/// With `coarse_labels`, clustering runs independently inside each coarse class with
/// budgets from apportion_clusters; cluster ids are offset by class in ascending order.
/// The returned history is that of the global run (or the concatenation over classes).
inline KMeansResult kmeans(const Matrix& points, std::size_t num_clusters, const KMeansOptions& opt = {},
                           std::optional<std::span<const std::uint32_t>> coarse_labels = std::nullopt) {
  if (num_clusters > points.rows()) {
    throw InvalidArgument("kmeans: P = " + std::to_string(num_clusters) + " exceeds n = " +
                          std::to_string(points.rows()));
  }
  if (!coarse_labels) return detail::kmeans_global(points, num_clusters, opt);

  if (coarse_labels->size() != points.rows()) throw InvalidArgument("kmeans: coarse label count != n");
  std::size_t num_classes = 0;
  for (auto y : *coarse_labels) num_classes = std::max<std::size_t>(num_classes, y + 1);
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < coarse_labels->size(); ++i) members[(*coarse_labels)[i]].push_back(i);
  std::vector<std::size_t> sizes(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) sizes[c] = members[c].size();
  const auto budget = apportion_clusters(sizes, num_clusters);

  KMeansResult out;
  out.membership.assignment.assign(points.rows(), 0);
  out.membership.num_clusters = num_clusters;
  out.membership.within_coarse = true;
  out.centroids = Matrix(num_clusters, points.cols());
  std::size_t offset = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (budget[c] == 0) continue;
    const Matrix sub = gather_rows(points, members[c]);
    KMeansOptions local = opt;
    local.seed = derive_seed(opt.seed, 1000003 + c);
    KMeansResult r = detail::kmeans_global(sub, budget[c], local);
    for (std::size_t t = 0; t < members[c].size(); ++t) {
      out.membership.assignment[members[c][t]] = static_cast<std::uint32_t>(offset + r.membership.assignment[t]);
    }
    for (std::size_t q = 0; q < budget[c]; ++q)
      std::copy_n(r.centroids.row(q).begin(), points.cols(), out.centroids.row(offset + q).begin());
    out.history.insert(out.history.end(), r.history.begin(), r.history.end());
    offset += budget[c];
  }
  out.membership.objective = kmeans_objective(points, out.membership.assignment, out.centroids);
  return out;
}

}  // namespace coins
