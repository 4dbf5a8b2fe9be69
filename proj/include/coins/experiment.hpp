#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "coins/data.hpp"
#include "coins/eval.hpp"
#include "coins/report.hpp"
#include "coins/trainer.hpp"

// The patch-image comparison: one dataset per seed, every objective trained on it, and
// fine-class Recall@k of the backbone embeddings on the same images.

namespace coins {

inline const std::vector<Objective>& all_objectives() {
  static const std::vector<Objective> v = {Objective::ins,    Objective::cos,    Objective::coins,
                                           Objective::coins_imp, Objective::coinsP, Objective::opt};
  return v;
}

/// Training settings shared by every objective in the comparison.
inline TrainConfig synthetic_train_config() {
  TrainConfig c;
  c.epochs = 60;
  c.lr = 0.05;
  c.batch_size = 64;
  c.cosine = true;
  c.temperature = 0.1;
  c.augment = true;
  c.augment_pad = 8;
  return c;
}

struct SyntheticOptions {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  PatchConfig data;  // seed is overwritten per run
  TrainConfig train = synthetic_train_config();
  std::vector<Objective> objectives = all_objectives();
  std::vector<std::size_t> ks = {1, 2, 4, 8};
};

struct SyntheticRow {
  Objective objective = Objective::ins;
  std::uint64_t seed = 0;
  std::map<std::size_t, double> recall_at;
};

struct SyntheticTable {
  std::vector<std::size_t> ks;
  std::vector<SyntheticRow> rows;
  std::map<Objective, std::map<std::size_t, double>> median;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

using SyntheticProgress = std::function<void(const SyntheticRow&)>;

inline SyntheticTable run_synthetic(const SyntheticOptions& opt, const SyntheticProgress& progress = {}) {
  if (opt.seeds.empty()) throw InvalidArgument("reproduce-synthetic: at least one seed is required");
  SyntheticTable table;
  table.ks = opt.ks;
  for (std::uint64_t seed : opt.seeds) {
    PatchConfig pc = opt.data;
    pc.seed = seed;
    const Dataset data = gen_patch_dataset(pc);
    for (Objective o : opt.objectives) {
      TrainConfig c = opt.train;
      c.objective = o;
      c.seed = seed;
      const TrainResult r = train(c, data);
      SyntheticRow row;
      row.objective = o;
      row.seed = seed;
      row.recall_at = recall_at_k(embed(r.params, data.examples), data.fine_labels, opt.ks).recall_at;
      table.rows.push_back(row);
      if (progress) progress(row);
    }
  }
  for (Objective o : opt.objectives) {
    for (std::size_t k : opt.ks) {
      std::vector<double> v;
      for (const auto& row : table.rows)
        if (row.objective == o) v.push_back(row.recall_at.at(k));
      table.median[o][k] = median_of(v);
    }
  }
  return table;
}

/// `objective,seed,R@1,...` with one row per run, then one `median` row per objective.
inline std::string to_csv(const SyntheticTable& t) {
  std::ostringstream out;
  out.precision(17);
  out << "objective,seed";
  for (std::size_t k : t.ks) out << ",R@" << k;
  out << '\n';
  for (const auto& row : t.rows) {
    out << to_string(row.objective) << ',' << row.seed;
    for (std::size_t k : t.ks) out << ',' << row.recall_at.at(k);
    out << '\n';
  }
  for (const auto& [o, m] : t.median) {
    out << to_string(o) << ",median";
    for (std::size_t k : t.ks) out << ',' << m.at(k);
    out << '\n';
  }
  return out.str();
}

inline Json to_json(const SyntheticTable& t) {
  auto recall = [&](const std::map<std::size_t, double>& m) {
    Json j = Json::object();
    for (std::size_t k : t.ks) j[std::to_string(k)] = m.at(k);
    return j;
  };
  Json runs = Json::array();
  for (const auto& row : t.rows)
    runs.push_back({{"objective", to_string(row.objective)}, {"seed", row.seed}, {"recall_at", recall(row.recall_at)}});
  Json median = Json::object();
  for (const auto& [o, m] : t.median) median[to_string(o)] = recall(m);
  return Json{{"ks", t.ks}, {"runs", runs}, {"median", median}};
}

}  // namespace coins
