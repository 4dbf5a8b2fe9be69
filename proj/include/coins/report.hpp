#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "json.hpp"

#include "coins/errors.hpp"
#include "coins/eval.hpp"
#include "coins/theory.hpp"
#include "coins/trainer.hpp"

// JSON views of reports and per-epoch metrics. Non-finite numbers become null; the
// log-space companion fields stay finite wherever the linear ones overflow.

namespace coins {

using Json = nlohmann::json;

inline Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json optional_or_null(const std::optional<double>& v) { return v ? finite_or_null(*v) : Json(nullptr); }

inline Json to_json(const EvalReport& r) {
  Json recall = Json::object();
  for (const auto& [k, v] : r.recall_at) recall[std::to_string(k)] = v;
  Json topk = Json::object();
  for (const auto& [k, v] : r.topk_acc) topk[std::to_string(k)] = v;
  return Json{{"recall_at", recall},
              {"topk_acc", topk},
              {"fine_prob_min", optional_or_null(r.fine_prob_min)},
              {"fine_prob_mean", optional_or_null(r.fine_prob_mean)},
              {"n_queries", r.n_queries}};
}

inline Json to_json(const EpochMetrics& m) {
  return Json{{"epoch", m.epoch},
              {"lr", m.lr},
              {"loss_coarse", optional_or_null(m.loss_coarse)},
              {"loss_instance", optional_or_null(m.loss_instance)},
              {"loss_proxy", optional_or_null(m.loss_proxy)},
              {"loss_total", finite_or_null(m.loss_total)},
              {"w_gap", finite_or_null(m.w_gap)}};
}

inline Json to_json(const BoundReport& r) {
  const BoundConstants& k = r.constants;
  Json j{{"theorem", r.theorem},
         {"alpha", k.alpha},
         {"beta", k.beta},
         {"a", finite_or_null(std::exp(k.log_a))},
         {"b", finite_or_null(std::exp(k.log_b))},
         {"log_a", finite_or_null(k.log_a)},
         {"log_b", finite_or_null(k.log_b)},
         {"log_alpha_odds", finite_or_null(k.log_alpha_odds)},
         {"log_beta_odds", finite_or_null(k.log_beta_odds)},
         {"c", k.c},
         {"z", k.z},
         {"num_fine", k.num_fine},
         {"M", k.M},
         {"M_reduction", "max"},
         {"h", r.h},
         {"log_h", finite_or_null(r.log_h)},
         {"all_hold", r.all_hold},
         {"vacuous", r.vacuous},
         {"slack_min", finite_or_null(r.slack_min)},
         {"log_slack_min", finite_or_null(r.log_slack_min)}};
  if (r.relaxed) {
    j["c_prime"] = finite_or_null(std::exp(r.relaxed->log_c_prime));
    j["c_doubleprime"] = finite_or_null(std::exp(r.relaxed->log_c_doubleprime));
    j["alpha_prime"] = r.relaxed->alpha_prime;
    j["log_c_prime"] = finite_or_null(r.relaxed->log_c_prime);
    j["log_c_doubleprime"] = finite_or_null(r.relaxed->log_c_doubleprime);
    j["log_alpha_prime"] = finite_or_null(r.relaxed->log_alpha_prime);
  }
  Json lhs = Json::array(), rhs = Json::array(), log_lhs = Json::array(), log_rhs = Json::array();
  for (const auto& e : r.per_example) {
    lhs.push_back(std::exp(e.log_lhs));
    rhs.push_back(std::exp(e.log_rhs));
    log_lhs.push_back(finite_or_null(e.log_lhs));
    log_rhs.push_back(finite_or_null(e.log_rhs));
  }
  j["per_example"] = Json{{"lhs", lhs}, {"rhs", rhs}, {"log_lhs", log_lhs}, {"log_rhs", log_rhs}};
  return j;
}

inline Json to_json(const Lemma1Report& r) {
  Json jensen = Json::array(), log_lhs = Json::array(), log_rhs = Json::array();
  for (double v : r.jensen_min_slack) jensen.push_back(finite_or_null(v));
  for (const auto& e : r.lemma) {
    log_lhs.push_back(finite_or_null(e.log_lhs));
    log_rhs.push_back(finite_or_null(e.log_rhs));
  }
  return Json{{"alpha", r.alpha},
              {"z", r.z},
              {"jensen_hold", r.jensen_hold},
              {"lemma_hold", r.lemma_hold},
              {"jensen_log_slack_min", jensen},
              {"lemma", Json{{"log_lhs", log_lhs}, {"log_rhs", log_rhs}}}};
}

}  // namespace coins
