#include <gtest/gtest.h>

#include <cmath>

#include "coins/eval.hpp"
#include "oracles.hpp"

using namespace coins;

namespace {

const std::vector<std::size_t> kKs = {1, 2, 4, 8};

// Sort all other examples by cosine, then look for a label match in the first k.
std::map<std::size_t, double> oracle_recall(const Matrix& x, const std::vector<std::uint32_t>& y,
                                            const std::vector<std::size_t>& ks) {
  std::map<std::size_t, double> hits;
  std::size_t queries = 0;
  for (std::size_t q = 0; q < x.rows(); ++q) {
    if (std::count(y.begin(), y.end(), y[q]) < 2) continue;
    ++queries;
    std::vector<double> sim;
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < x.rows(); ++j) {
      if (j == q) continue;
      const long double c = oracle::ldot(x.row(q), x.row(j)) /
                            std::sqrt(oracle::ldot(x.row(q), x.row(q)) * oracle::ldot(x.row(j), x.row(j)));
      sim.push_back(static_cast<double>(c));
      idx.push_back(j);
    }
    const auto order = oracle::order_desc(sim);
    for (std::size_t k : ks) {
      bool hit = false;
      for (std::size_t t = 0; t < std::min(k, order.size()); ++t) hit = hit || y[idx[order[t]]] == y[q];
      hits[k] += hit ? 1.0 : 0.0;
    }
  }
  for (auto& [k, v] : hits) v /= static_cast<double>(queries);
  return hits;
}

}  // namespace

TEST(Recall, DuplicatedPairsGiveOne) {
  Rng rng(1);
  Matrix x(10, 4);
  std::vector<std::uint32_t> y(10);
  for (std::size_t c = 0; c < 5; ++c) {
    const Vector v = oracle::random_vector(rng, 4);
    std::copy(v.begin(), v.end(), x.row(2 * c).begin());
    std::copy(v.begin(), v.end(), x.row(2 * c + 1).begin());
    y[2 * c] = y[2 * c + 1] = static_cast<std::uint32_t>(c);
  }
  EXPECT_EQ(recall_at_k(x, y, kKs).recall_at.at(1), 1.0);
}

TEST(Recall, OrthogonalClassesGiveOneForAllK) {
  Matrix x(6, 2, std::vector<double>{1, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 1});
  const std::vector<std::uint32_t> y = {0, 0, 0, 1, 1, 1};
  const std::vector<std::size_t> ks = {1, 2, 3, 5};
  for (const auto& [k, r] : recall_at_k(x, y, ks).recall_at) EXPECT_EQ(r, 1.0) << k;
}

TEST(Recall, MatchesExhaustiveSortOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = oracle::random_matrix(rng, 20, 3);
    std::vector<std::uint32_t> y(20);
    for (auto& v : y) v = static_cast<std::uint32_t>(rng.index(4));
    const auto got = recall_at_k(x, y, kKs);
    EXPECT_EQ(got.recall_at, oracle_recall(x, y, kKs));
  }
}

TEST(Recall, SingletonQueriesExcludedAndTiesByIndex) {
  // Query 0 sees 1 and 2 at equal similarity; index 1 (wrong label) ranks first.
  Matrix x(4, 2, std::vector<double>{1, 0, 1, 0, 1, 0, 0, 1});
  const std::vector<std::uint32_t> y = {0, 1, 0, 2};
  const std::vector<std::size_t> ks = {1, 2};
  const auto r = recall_at_k(x, y, ks);
  EXPECT_EQ(r.n_queries, 2u);
  EXPECT_EQ(r.recall_at.at(1), 0.5);  // query 2 hits 0 first; query 0 hits 1 first
  EXPECT_EQ(r.recall_at.at(2), 1.0);
}

TEST(Recall, ErrorsAndFullDepth) {
  EXPECT_THROW(recall_at_k(Matrix(1, 2, 1.0), std::vector<std::uint32_t>{0}, kKs), InvalidArgument);
  EXPECT_THROW(recall_at_k(Matrix(3, 2, 1.0), std::vector<std::uint32_t>{0, 1, 2}, kKs), InvalidArgument);
  Rng rng(3);
  const Matrix x = oracle::random_matrix(rng, 12, 3);
  std::vector<std::uint32_t> y(12);
  for (std::size_t i = 0; i < 12; ++i) y[i] = static_cast<std::uint32_t>(i % 3);
  const std::vector<std::size_t> deep = {11};
  EXPECT_EQ(recall_at_k(x, y, deep).recall_at.at(11), 1.0);
}

TEST(Recall, MonotoneAndScaleInvariant) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    Matrix x = oracle::random_matrix(rng, 30, 5);
    std::vector<std::uint32_t> y(30);
    for (auto& v : y) v = static_cast<std::uint32_t>(rng.index(6));
    const auto a = recall_at_k(x, y, kKs).recall_at;
    double prev = 0.0;
    for (std::size_t k : kKs) {
      EXPECT_GE(a.at(k), prev);
      EXPECT_LE(a.at(k), 1.0);
      prev = a.at(k);
    }
    for (double& v : x.flat()) v *= 4.0;  // exact in binary
    EXPECT_EQ(recall_at_k(x, y, kKs).recall_at, a);
  }
}

TEST(TopK, OneHotAndFullDepth) {
  Matrix logits(3, 4);
  const std::vector<std::uint32_t> y = {2, 0, 3};
  for (std::size_t i = 0; i < 3; ++i) logits(i, y[i]) = 1.0;
  const std::vector<std::size_t> ks = {1, 4};
  const auto a = topk_accuracy(logits, y, ks);
  EXPECT_EQ(a.at(1), 1.0);
  EXPECT_EQ(a.at(4), 1.0);
  const std::vector<std::size_t> too_big = {5};
  EXPECT_THROW(topk_accuracy(logits, y, too_big), InvalidArgument);
}

TEST(TopK, MatchesBruteForce) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix logits = oracle::random_matrix(rng, 15, 6);
    for (double& v : logits.flat()) v = std::round(v);  // force ties
    std::vector<std::uint32_t> y(15);
    for (auto& v : y) v = static_cast<std::uint32_t>(rng.index(6));
    const std::vector<std::size_t> ks = {1, 2, 5};
    const auto got = topk_accuracy(logits, y, ks);
    for (std::size_t k : ks) {
      double hits = 0;
      for (std::size_t i = 0; i < 15; ++i) {
        const auto order = oracle::order_desc(logits.row(i));
        hits += std::find(order.begin(), order.begin() + static_cast<long>(k), y[i]) != order.begin() + static_cast<long>(k);
      }
      EXPECT_EQ(got.at(k), hits / 15.0) << k;
    }
  }
}

TEST(FineProb, SingleInstancePerClassIsRestrictedInstanceSoftmax) {
  Rng rng(6);
  const Matrix emb = oracle::random_matrix(rng, 5, 3);
  const Matrix w = oracle::random_matrix(rng, 5, 3);
  const std::vector<std::uint32_t> fine = {0, 1, 2, 3, 4};
  const Vector p = fine_class_prob(emb, w, fine, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    Vector logits(5);
    for (std::size_t j = 0; j < 5; ++j) logits[j] = dot(emb.row(i), w.row(j));
    EXPECT_NEAR(p[i], softmax(logits)[i], 1e-14);
  }
}

TEST(FineProb, IdenticalColumnsGiveUniform) {
  Rng rng(7);
  const Matrix emb = oracle::random_matrix(rng, 6, 3);
  const Matrix w(6, 3, 0.7);
  const std::vector<std::uint32_t> fine = {0, 0, 1, 1, 2, 2};
  for (double v : fine_class_prob(emb, w, fine, 3)) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(FineProb, MatchesOracleAndRowsSumToOne) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix emb = oracle::random_matrix(rng, 12, 4);
    const Matrix w = oracle::random_matrix(rng, 12, 4);
    std::vector<std::uint32_t> fine(12);
    for (std::size_t i = 0; i < 12; ++i) fine[i] = static_cast<std::uint32_t>(i % 4);
    const double scale = 2.5;
    const Vector p = fine_class_prob(emb, w, fine, 4, scale);
    const Matrix lp = fine_class_log_prob_matrix(emb, w, fine, 4, scale);
    for (std::size_t i = 0; i < 12; ++i) {
      std::vector<double> logits(4);
      for (std::size_t s = 0; s < 4; ++s) {
        long double m[4] = {0, 0, 0, 0};
        for (std::size_t j = s; j < 12; j += 4)
          for (std::size_t k = 0; k < 4; ++k) m[k] += w(j, k) / 3.0L;
        long double d = 0;
        for (std::size_t k = 0; k < 4; ++k) d += emb(i, k) * m[k];
        logits[s] = static_cast<double>(scale * d);
      }
      EXPECT_NEAR(p[i], std::exp(static_cast<double>(oracle::naive_log_softmax(logits, fine[i]))), 1e-12);
      double total = 0;
      for (std::size_t s = 0; s < 4; ++s) total += std::exp(lp(i, s));
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(FineProb, EmptyClassThrows) {
  const std::vector<std::uint32_t> fine = {0, 0, 2};
  EXPECT_THROW(fine_class_prob(Matrix(3, 2, 1.0), Matrix(3, 2, 1.0), fine, 3), InvalidArgument);
}
