// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "coins/coins.hpp"
#include "coins/experiment.hpp"
#include "oracles.hpp"
#include "schema_check.hpp"

#ifndef COINS_CLI_PATH
#define COINS_CLI_PATH "coins_cli"
#endif
#ifndef COINS_SCHEMA_DIR
#define COINS_SCHEMA_DIR "docs/schemas"
#endif

using namespace coins;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// 1. gradients

constexpr double kFdStep = 1e-5;
constexpr double kRelTol = 1e-4;
// Relative error |a − n| / max(|a|, |n|); the floor only matters for entries that are
// zero up to finite-difference noise.
constexpr double kRelFloor = 1e-5;

double max_rel_error(const std::function<double(std::span<const double>)>& fn, std::span<const double> point,
                     std::span<const double> analytic) {
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = x[k];
    x[k] = orig + kFdStep;
    const double fp = fn(x);
    x[k] = orig - kFdStep;
    const double fm = fn(x);
    x[k] = orig;
    const double numeric = (fp - fm) / (2.0 * kFdStep);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), kRelFloor});
    worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
  }
  return worst;
}

struct GradCase {
  ModelParams p;
  Matrix x;
  std::vector<std::uint32_t> ids, batch_coarse;
  std::vector<std::vector<std::size_t>> members;
  Membership membership;
};

// Finite differences are meaningless across a ReLU kink or through a near-zero
// normalization, so draws that come within 1e-3 of either are rejected.
bool smooth_enough(const GradCase& g) {
  const Encoded enc = encode(g.p, g.x);
  for (std::size_t l = 0; l + 1 < enc.cache.pre.size(); ++l)
    for (double v : enc.cache.pre[l].flat())
      if (std::abs(v) < 1e-3) return false;
  if (g.p.cosine)
    for (std::size_t i = 0; i < g.x.rows(); ++i)
      if (std::sqrt(squared_norm(enc.cache.pre.back().row(i))) < 1e-3) return false;
  if (g.p.mlp_head) {
    const Branch br = instance_branch(g.p, enc.embeddings);
    for (double v : br.cache.hidden_pre.flat())
      if (std::abs(v) < 1e-3) return false;
    for (std::size_t i = 0; i < g.x.rows(); ++i)
      if (std::sqrt(squared_norm(br.cache.raw.row(i))) < 1e-3) return false;
  }
  return true;
}

GradCase draw_grad_case(Rng& rng, std::size_t cfg) {
  GradCase g;
  const std::size_t num_coarse = 1 + rng.index(3);
  const std::size_t n = num_coarse * (2 + rng.index(3));
  const std::size_t in = 3 + rng.index(3);
  const std::size_t d = 2 + rng.index(3);
  ModelConfig mc;
  mc.input_dim = in;
  mc.layers = rng.index(2) ? std::vector<std::size_t>{4 + rng.index(3), d} : std::vector<std::size_t>{d};
  mc.num_coarse = num_coarse;
  mc.num_instances = n;
  mc.cosine = cfg % 2 == 1;
  mc.mlp_head = cfg % 4 >= 2;
  mc.temperature = 0.25;
  g.p = init_params(mc, rng.next_u64());
  for (auto& layer : g.p.encoder)
    for (double& b : layer.bias) b = rng.uniform(-0.3, 0.5);
  const std::size_t b = 2 + rng.index(4);
  g.x = oracle::random_matrix(rng, b, in);
  std::vector<std::uint32_t> coarse(n);
  g.members.resize(num_coarse);
  for (std::size_t i = 0; i < n; ++i) {
    coarse[i] = static_cast<std::uint32_t>(i % num_coarse);
    g.members[coarse[i]].push_back(i);
  }
  for (std::size_t i = 0; i < b; ++i) {
    g.ids.push_back(static_cast<std::uint32_t>(rng.index(n)));
    g.batch_coarse.push_back(coarse[g.ids.back()]);
  }
  const std::size_t clusters = 1 + rng.index(n);
  g.membership.num_clusters = clusters;
  for (std::size_t i = 0; i < n; ++i)
    g.membership.assignment.push_back(static_cast<std::uint32_t>(i < clusters ? i : rng.index(clusters)));
  g.p.proxy_head = update_proxies(g.p.instance_head, g.membership, g.p.cosine);
  return g;
}

GradCase make_grad_case(Rng& rng, std::size_t cfg) {
  for (;;) {
    GradCase g = draw_grad_case(rng, cfg);
    try {
      if (smooth_enough(g)) return g;
    } catch (const DegenerateInput&) {
      // a row normalized to zero
    }
  }
}

using LossFn = std::function<LossValue(const ModelParams&, const Matrix&)>;

// Worst relative error over the embedding, head-column, MLP and encoder gradients.
double check_loss(const GradCase& g, const LossFn& loss) {
  const Encoded enc = encode(g.p, g.x);
  const LossValue lv = loss(g.p, enc.embeddings);
  double worst = 0.0;

  auto on_emb = [&](std::span<const double> e) {
    return loss(g.p, Matrix(enc.embeddings.rows(), enc.embeddings.cols(), Vector(e.begin(), e.end()))).value;
  };
  worst = std::max(worst, max_rel_error(on_emb, enc.embeddings.flat(), lv.grad_embeddings.flat()));

  auto through_params = [&](const std::function<void(ModelParams&, std::span<const double>)>& set) {
    return [&, set](std::span<const double> v) {
      ModelParams q = g.p;
      set(q, v);
      return loss(q, embed(q, g.x)).value;
    };
  };
  for (const auto& [kind, cols] : lv.grad_heads) {
    for (const auto& [j, grad] : cols) {
      const HeadKind k = kind;
      const std::size_t col = j;
      auto fn = through_params([k, col](ModelParams& q, std::span<const double> v) {
        Matrix& h = k == HeadKind::coarse ? q.coarse_head : k == HeadKind::instance ? q.instance_head : *q.proxy_head;
        std::copy(v.begin(), v.end(), h.row(col).begin());
      });
      worst = std::max(worst, max_rel_error(fn, g.p.head(kind).row(j), grad));
    }
  }
  if (lv.grad_mlp) {
    auto hid = through_params([](ModelParams& q, std::span<const double> v) {
      std::copy(v.begin(), v.end(), q.mlp_head->hidden.flat().begin());
    });
    auto out = through_params([](ModelParams& q, std::span<const double> v) {
      std::copy(v.begin(), v.end(), q.mlp_head->out.flat().begin());
    });
    worst = std::max(worst, max_rel_error(hid, g.p.mlp_head->hidden.flat(), lv.grad_mlp->hidden.flat()));
    worst = std::max(worst, max_rel_error(out, g.p.mlp_head->out.flat(), lv.grad_mlp->out.flat()));
  }
  const auto enc_grads = encode_backward(g.p, enc.cache, lv.grad_embeddings);
  for (std::size_t l = 0; l < g.p.encoder.size(); ++l) {
    auto w = through_params([l](ModelParams& q, std::span<const double> v) {
      std::copy(v.begin(), v.end(), q.encoder[l].weight.flat().begin());
    });
    auto b = through_params([l](ModelParams& q, std::span<const double> v) {
      std::copy(v.begin(), v.end(), q.encoder[l].bias.begin());
    });
    worst = std::max(worst, max_rel_error(w, g.p.encoder[l].weight.flat(), enc_grads[l].weight.flat()));
    worst = std::max(worst, max_rel_error(b, g.p.encoder[l].bias, enc_grads[l].bias));
  }
  return worst;
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  Rng rng(101);
  constexpr std::size_t kConfigs = 120;
  double worst = 0.0;
  std::string worst_where;
  std::size_t checks = 0;
  for (std::size_t cfg = 0; cfg < kConfigs; ++cfg) {
    const GradCase g = make_grad_case(rng, cfg);
    const double lam_i = 0.5 + rng.uniform(), lam_p = 0.5 + rng.uniform();
    const std::vector<std::pair<std::string, LossFn>> losses = {
        {"instance", [&](const ModelParams& p, const Matrix& e) { return instance_loss_full(p, e, g.ids); }},
        {"coarse", [&](const ModelParams& p, const Matrix& e) { return coarse_loss(p, e, g.batch_coarse); }},
        {"coins",
         [&](const ModelParams& p, const Matrix& e) {
           return combined_objective(p, e, {g.ids, g.batch_coarse}, {1.0, lam_i, 0.0, InstanceMode::full});
         }},
        {"within-coarse",
         [&](const ModelParams& p, const Matrix& e) {
           return instance_loss_within_coarse(p, e, g.ids, g.batch_coarse, g.members);
         }},
        {"proxy", [&](const ModelParams& p, const Matrix& e) { return instance_proxy_loss(p, e, g.ids, g.membership); }},
        {"coinsP",
         [&](const ModelParams& p, const Matrix& e) {
           return combined_objective(p, e, {g.ids, g.batch_coarse}, {1.0, lam_i, lam_p, InstanceMode::within_coarse},
                                     &g.members, &g.membership);
         }},
    };
    for (const auto& [name, fn] : losses) {
      const double err = check_loss(g, fn);
      ++checks;
      if (err > worst) {
        worst = err;
        worst_where = name + " config " + std::to_string(cfg);
      }
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream s;
  s << kConfigs << " configurations, " << checks << " loss checks, max rel err " << worst << " (" << worst_where
    << "), " << secs << " s";
  return {worst < kRelTol && secs < 30.0, s.str()};
}

// ---------------------------------------------------------------------------
// 2. reductions

Outcome criterion_reductions() {
  Rng rng(202);
  double worst_c1 = 0.0, worst_single = 0.0;
  bool exact_zero_lambda = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 4 + rng.index(12), d = 3, b = 1 + rng.index(6);
    ModelParams p;
    p.encoder.push_back({Matrix(1, d), Vector(d, 0.0)});
    p.cosine = trial % 2 == 0;
    p.temperature = 0.1;
    p.instance_head = oracle::random_matrix(rng, n, d, 0.5);
    const std::size_t num_coarse = 1 + rng.index(4);
    p.coarse_head = oracle::random_matrix(rng, num_coarse, d, 0.5);
    if (p.cosine) {
      normalize_rows(p.instance_head);
      normalize_rows(p.coarse_head);
    }
    Matrix emb = oracle::random_matrix(rng, b, d);
    if (p.cosine) normalize_rows(emb);
    std::vector<std::uint32_t> ids(b), zeros(b, 0), coarse(b);
    for (std::size_t i = 0; i < b; ++i) {
      ids[i] = static_cast<std::uint32_t>(rng.index(n));
      coarse[i] = static_cast<std::uint32_t>(ids[i] % num_coarse);
    }
    std::vector<std::vector<std::size_t>> one(1);
    for (std::size_t i = 0; i < n; ++i) one[0].push_back(i);
    const double full = instance_loss_full(p, emb, ids).value;
    worst_c1 = std::max(worst_c1, std::abs(instance_loss_within_coarse(p, emb, ids, zeros, one).value - full));

    Membership m;
    m.num_clusters = n;
    for (std::size_t i = 0; i < n; ++i) m.assignment.push_back(static_cast<std::uint32_t>(i));
    p.proxy_head = update_proxies(p.instance_head, m, false);
    worst_single = std::max(worst_single, std::abs(instance_proxy_loss(p, emb, ids, m).value - full));

    const LossValue c = coarse_loss(p, emb, coarse);
    const LossValue z = combined_objective(p, emb, {ids, coarse}, {1.0, 0.0, 0.0, InstanceMode::full});
    exact_zero_lambda = exact_zero_lambda && z.value == c.value && z.grad_embeddings == c.grad_embeddings;
  }
  std::ostringstream s;
  s << "C=1 gap " << worst_c1 << ", singleton-proxy gap " << worst_single << ", zero-lambda exact "
    << (exact_zero_lambda ? "yes" : "no");
  return {worst_c1 <= 1e-12 && worst_single <= 1e-12 && exact_zero_lambda, s.str()};
}

// ---------------------------------------------------------------------------
// 3. k-means against the exhaustive oracle

bool non_increasing(const std::vector<double>& h) {
  for (std::size_t t = 1; t < h.size(); ++t)
    if (h[t] > h[t - 1] * (1.0 + 1e-12) + 1e-15) return false;
  return true;
}

Outcome criterion_kmeans() {
  Rng rng(303);
  int below = 0, mismatched = 0, increasing = 0;
  double worst_gap = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.index(3);
    const std::size_t n = k + rng.index(8 - k + 1);
    const Matrix x = oracle::random_matrix(rng, n, 2);
    const auto best = oracle::best_partition(x, k);

    KMeansOptions opt;
    opt.seed = static_cast<std::uint64_t>(trial);
    const KMeansResult r = kmeans(x, k, opt);
    if (r.membership.objective < best.cost - 1e-9) ++below;
    if (!non_increasing(r.history)) ++increasing;
    for (std::uint64_t s = 0; s < 3; ++s) {
      Rng init_rng(1000 * static_cast<std::uint64_t>(trial) + s);
      const KMeansResult run = lloyd(x, detail::kmeans_plus_plus(x, k, init_rng));
      if (!non_increasing(run.history)) ++increasing;
      if (run.membership.objective < best.cost - 1e-9) ++below;
    }

    Matrix init(k, 2);
    std::vector<double> cnt(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      cnt[best.assign[i]] += 1.0;
      for (std::size_t c = 0; c < 2; ++c) init(best.assign[i], c) += x(i, c);
    }
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < 2; ++c) init(j, c) /= cnt[j];
    const KMeansResult at_oracle = lloyd(x, init);
    if (!non_increasing(at_oracle.history)) ++increasing;
    const double gap = std::abs(at_oracle.membership.objective - best.cost);
    worst_gap = std::max(worst_gap, gap);
    if (gap > 1e-9) ++mismatched;
  }
  std::ostringstream s;
  s << "50 trials: below-oracle " << below << ", oracle-init gap max " << worst_gap << " (" << mismatched
    << " over 1e-9), increasing histories " << increasing;
  return {below == 0 && mismatched == 0 && increasing == 0, s.str()};
}

// ---------------------------------------------------------------------------
// CLI helpers

struct Workdir {
  fs::path dir;
  explicit Workdir(const std::string& name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workdir() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

int run_cli(const std::string& args, const std::string& log) {
  const std::string cmd = std::string(COINS_CLI_PATH) + " " + args + " >> " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> schema_errors(const Json& v, const std::string& schema_name) {
  return schema::validate(v, schema::load(std::string(COINS_SCHEMA_DIR) + "/" + schema_name));
}

// ---------------------------------------------------------------------------
// 4. bounds on a trained blob model, plus Jensen / lemma on random matrices

Outcome criterion_theory() {
  const auto t0 = Clock::now();
  Workdir w("coins_acceptance_theory");
  const std::string log = w / "log.txt";
  std::string detail;
  bool ok = run_cli("gen-data --kind blob --coarse 4 --fine-per-coarse 5 --z 10 --dim 16 --seed 4 --out " +
                        (w / "blob.cfds"),
                    log) == 0;
  if (!ok) return {false, "gen-data failed: " + slurp(log)};
  // The default dot-product model, and a cosine model whose bounds are far from vacuous.
  const std::vector<std::pair<std::string, std::string>> models = {
      {"dot", ""}, {"cosine", " --cosine --temp 1 --lr 0.05"}};
  for (const auto& [name, flags] : models) {
    const std::string ckpt = w / (name + ".ckpt");
    if (run_cli("train --data " + (w / "blob.cfds") + " --objective coins-imp --epochs 30 --seed 4" + flags +
                    " --out " + ckpt,
                log) != 0)
      return {false, "train failed: " + slurp(log)};
    for (int t : {1, 2}) {
      const std::string out = w / (name + std::to_string(t) + ".json");
      const int code = run_cli("verify-bounds --data " + (w / "blob.cfds") + " --checkpoint " + ckpt +
                                   " --theorem " + std::to_string(t) + " --out " + out,
                               log);
      if (code != 0 && code != 1) return {false, "verify-bounds exit " + std::to_string(code) + ": " + slurp(log)};
      const Json j = Json::parse(slurp(out));
      const bool hold = j["all_hold"].get<bool>() && j["lemma1"]["jensen_hold"].get<bool>() &&
                        j["lemma1"]["lemma_hold"].get<bool>();
      ok = ok && hold && code == 0;
      std::ostringstream s;
      s << name << " theorem " << t << " all_hold=" << j["all_hold"] << (j["vacuous"].get<bool>() ? " (vacuous)" : "")
        << " log slack " << j["log_slack_min"] << "; ";
      detail += s.str();
    }
  }

  Rng rng(404);
  int jensen_fail = 0, lemma_fail = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t num_fine = 1 + rng.index(5), z = 1 + rng.index(4), d = 2 + rng.index(4);
    const std::size_t n = num_fine * z;
    const double scale = 0.2 + 3.0 * rng.uniform();
    const Matrix emb = oracle::random_matrix(rng, n, d, scale);
    const Matrix head = oracle::random_matrix(rng, n, d, scale);
    std::vector<std::uint32_t> fine(n);
    for (std::size_t i = 0; i < n; ++i) fine[i] = static_cast<std::uint32_t>(i % num_fine);
    const Lemma1Report r = verify_lemma1(emb, head, fine);
    jensen_fail += r.jensen_hold ? 0 : 1;
    lemma_fail += r.lemma_hold ? 0 : 1;
  }
  const double secs = seconds_since(t0);
  std::ostringstream s;
  s << "500 random: jensen failures " << jensen_fail << ", lemma failures " << lemma_fail << "; " << secs << " s";
  detail += s.str();
  return {ok && jensen_fail == 0 && lemma_fail == 0 && secs < 120.0, detail};
}

// ---------------------------------------------------------------------------
// 5. synthetic ordering

Outcome criterion_synthetic() {
  const auto t0 = Clock::now();
  SyntheticOptions opt;
  opt.ks = {1};
  const SyntheticTable t = run_synthetic(opt, [](const SyntheticRow& row) {
    std::cerr << "  synthetic " << to_string(row.objective) << " seed " << row.seed << ": R@1 "
              << row.recall_at.at(1) << "\n";
  });
  const double secs = seconds_since(t0);
  auto r1 = [&](Objective o) { return 100.0 * t.median.at(o).at(1); };
  bool opt_best = true;
  for (Objective o : all_objectives()) opt_best = opt_best && r1(Objective::opt) >= r1(o);
  const bool over_cos = r1(Objective::coins) >= r1(Objective::cos) + 5.0;
  const bool over_ins = r1(Objective::coins) >= r1(Objective::ins) + 5.0;
  const bool imp_close = std::abs(r1(Objective::coins_imp) - r1(Objective::coins)) <= 3.0;
  std::ostringstream s;
  s.precision(4);
  s << "median R@1:";
  for (Objective o : all_objectives()) s << " " << to_string(o) << "=" << r1(o);
  s << "; opt>=all " << opt_best << ", coins>=cos+5 " << over_cos << ", coins>=ins+5 " << over_ins
    << ", |imp-coins|<=3 " << imp_close << "; " << secs << " s";
  return {opt_best && over_cos && over_ins && imp_close && secs < 600.0, s.str()};
}

// ---------------------------------------------------------------------------
// 6. column access cost

Outcome criterion_cost() {
  const std::size_t num_coarse = 20, per = 10, n = num_coarse * per, d = 4, batch = 32;
  Rng rng(606);
  ModelParams p;
  p.encoder.push_back({Matrix(1, d), Vector(d, 0.0)});
  p.instance_head = oracle::random_matrix(rng, n, d, 0.5);
  p.coarse_head = oracle::random_matrix(rng, num_coarse, d, 0.5);
  std::vector<std::uint32_t> coarse(n);
  std::vector<std::vector<std::size_t>> members(num_coarse);
  for (std::size_t i = 0; i < n; ++i) {
    coarse[i] = static_cast<std::uint32_t>(i % num_coarse);
    members[coarse[i]].push_back(i);
  }
  const Matrix emb_all = oracle::random_matrix(rng, n, d);
  ColumnAccessCounter full(n), within(n);
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t b = std::min(batch, n - start);
    std::vector<std::uint32_t> ids(b), yc(b);
    Matrix emb(b, d);
    for (std::size_t i = 0; i < b; ++i) {
      ids[i] = static_cast<std::uint32_t>(start + i);
      yc[i] = coarse[start + i];
      std::copy(emb_all.row(start + i).begin(), emb_all.row(start + i).end(), emb.row(i).begin());
    }
    combined_objective(p, emb, {ids, yc}, {1.0, 1.0, 0.0, InstanceMode::full}, nullptr, nullptr, &full);
    combined_objective(p, emb, {ids, yc}, {1.0, 1.0, 0.0, InstanceMode::within_coarse}, &members, nullptr, &within);
  }
  std::ostringstream s;
  s << "within " << within.total << " / full " << full.total << " column reads per epoch";
  return {within.total * 20 == full.total, s.str()};
}

// ---------------------------------------------------------------------------
// 7. determinism, 8. end-to-end

Outcome criterion_determinism() {
  Workdir w("coins_acceptance_determinism");
  const std::string log = w / "log.txt";
  if (run_cli("gen-data --kind blob --seed 7 --out " + (w / "blob.cfds"), log) != 0) return {false, slurp(log)};
  const std::string common = "train --data " + (w / "blob.cfds") + " --objective coinsP --epochs 6 --seed 7 ";
  const bool ran = run_cli(common + "--out " + (w / "a.ckpt"), log) == 0 &&
                   run_cli(common + "--out " + (w / "b.ckpt"), log) == 0;
  if (!ran) return {false, "train failed: " + slurp(log)};
  const std::string a = slurp(w / "a.ckpt"), b = slurp(w / "b.ckpt");
  const std::string ma = slurp(w / "a.ckpt.metrics.jsonl"), mb = slurp(w / "b.ckpt.metrics.jsonl");
  std::ostringstream s;
  s << "checkpoint " << a.size() << " bytes " << (a == b ? "identical" : "DIFFERENT") << ", metrics " << ma.size()
    << " bytes " << (ma == mb ? "identical" : "DIFFERENT");
  return {!a.empty() && !ma.empty() && a == b && ma == mb, s.str()};
}

Outcome criterion_end_to_end() {
  Workdir w("coins_acceptance_e2e");
  const std::string log = w / "log.txt";
  std::vector<std::string> problems;
  auto step = [&](const std::string& args) {
    const int code = run_cli(args, log);
    if (code != 0) problems.push_back("exit " + std::to_string(code) + " for: " + args.substr(0, args.find(' ')));
  };
  step("gen-data --kind blob --coarse 4 --fine-per-coarse 5 --z 10 --dim 16 --seed 8 --out " + (w / "blob.cfds"));
  step("train --data " + (w / "blob.cfds") + " --objective coins-imp --epochs 30 --seed 8 --out " + (w / "m.ckpt"));
  step("eval --data " + (w / "blob.cfds") + " --checkpoint " + (w / "m.ckpt") + " --out " + (w / "eval.json"));
  step("verify-bounds --data " + (w / "blob.cfds") + " --checkpoint " + (w / "m.ckpt") + " --theorem 1 --out " +
       (w / "b1.json"));
  step("verify-bounds --data " + (w / "blob.cfds") + " --checkpoint " + (w / "m.ckpt") + " --theorem 2 --out " +
       (w / "b2.json"));
  if (!problems.empty()) return {false, problems.front() + "\n" + slurp(log)};

  std::size_t validated = 0;
  auto check = [&](const Json& j, const std::string& schema_name) {
    for (const auto& e : schema_errors(j, schema_name)) problems.push_back(schema_name + " " + e);
    ++validated;
  };
  std::istringstream lines(slurp(w / "m.ckpt.metrics.jsonl"));
  std::string line;
  while (std::getline(lines, line)) check(Json::parse(line), "metrics_line.schema.json");
  check(Json::parse(slurp(w / "eval.json")), "eval_report.schema.json");
  check(Json::parse(slurp(w / "b1.json")), "bound_report.schema.json");
  check(Json::parse(slurp(w / "b2.json")), "bound_report.schema.json");
  std::ostringstream s;
  s << "all steps exit 0; " << validated << " JSON documents, " << problems.size() << " schema errors";
  if (!problems.empty()) s << " (first: " << problems.front() << ")";
  return {problems.empty(), s.str()};
}

}  // namespace

// Optional arguments select criteria by number, e.g. `acceptance 1 3`.
int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 gradient suite", criterion_gradients},
      {"2 reduction equivalences", criterion_reductions},
      {"3 k-means oracle", criterion_kmeans},
      {"4 theory verification", criterion_theory},
      {"5 synthetic ordering", criterion_synthetic},
      {"6 within-coarse cost", criterion_cost},
      {"7 determinism", criterion_determinism},
      {"8 end-to-end CLI", criterion_end_to_end},
  };
  std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name.substr(0, 1)) == only.end()) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
