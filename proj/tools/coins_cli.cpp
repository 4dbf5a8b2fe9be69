// coins_cli: generate data, train, evaluate, check the fine-class bounds, and run the
// patch-image comparison.
//
// Exit codes: 0 success (bounds hold), 1 internal error, 2 usage, 3 IO, 4 unsupported data.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coins/coins.hpp"
#include "coins/experiment.hpp"

namespace fs = std::filesystem;
using namespace coins;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitUnsupported = 4;

struct BoundsFailed {};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path + "' failed");
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError("'" + path + "' is not valid JSON: " + e.what(), e.byte);
  }
}

// Dataset file format from --format: "cfds", "csv", or "auto" (by extension).
std::string data_format = "auto";

bool is_csv(const std::string& path) {
  if (data_format == "auto") return fs::path(path).extension() == ".csv";
  return data_format == "csv";
}

Dataset read_dataset(const std::string& path) { return is_csv(path) ? load_dataset_csv(path) : load_dataset(path); }

std::vector<std::size_t> parse_index_list(const std::string& s, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item[0] == '-') throw InvalidArgument(std::string(what) + ": '" + item + "' is not a count");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::pair<std::size_t, std::size_t> parse_image_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw InvalidArgument("--image expects HxW, got '" + s + "'");
  const auto h = parse_index_list(s.substr(0, x), "--image");
  const auto w = parse_index_list(s.substr(x + 1), "--image");
  if (h.size() != 1 || w.size() != 1 || h[0] == 0 || w[0] == 0) throw InvalidArgument("--image expects HxW, got '" + s + "'");
  return {h[0], w[0]};
}

// ---------------------------------------------------------------------------
// gen-data

struct GenArgs {
  std::string kind = "patch";
  std::string out;
  std::uint64_t seed = 0;
  PatchConfig patch;
  BlobConfig blob;
};

int run_gen(const GenArgs& a) {
  Dataset d;
  if (a.kind == "patch") {
    PatchConfig pc = a.patch;
    pc.seed = a.seed;
    d = gen_patch_dataset(pc);
  } else if (a.kind == "blob") {
    BlobConfig bc = a.blob;
    bc.seed = a.seed;
    d = gen_blob_dataset(bc);
  } else {
    throw InvalidArgument("--kind must be patch or blob");
  }
  if (is_csv(a.out)) {
    save_dataset_csv(d, a.out);
  } else {
    save_dataset(d, a.out);
  }
  std::cout << "wrote " << a.out << ": n=" << d.size() << " dim=" << d.dim() << " C=" << d.num_coarse
            << " F=" << d.num_fine << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainFlags {
  std::string data, out, metrics, config, image;
  std::optional<std::string> objective, decay_epochs, layers;
  std::optional<std::size_t> epochs, m_epoch, clusters, batch, restarts, augment_pad;
  std::optional<double> lambda_i, lambda_p, lr, momentum, wd, decay_factor, temp;
  std::optional<std::uint64_t> seed;
  bool cosine = false, mlp_head = false, no_augment = false, cluster_global = false;
};

void apply_config_file(TrainConfig& c, const Json& j) {
  if (!j.is_object()) throw InvalidArgument("--config: top level must be an object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "objective") c.objective = parse_objective(v.get<std::string>());
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "m_epoch") c.ip_start_epoch = v.get<std::size_t>();
      else if (key == "clusters") c.num_clusters = v.get<std::size_t>();
      else if (key == "lambda_i") c.lambda_instance = v.get<double>();
      else if (key == "lambda_p") c.lambda_proxy = v.get<double>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "momentum") c.momentum = v.get<double>();
      else if (key == "wd") c.weight_decay = v.get<double>();
      else if (key == "decay_epochs") c.lr_decay_epochs = v.get<std::vector<std::size_t>>();
      else if (key == "decay_factor") c.lr_decay_factor = v.get<double>();
      else if (key == "batch") c.batch_size = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "cosine") c.cosine = v.get<bool>();
      else if (key == "mlp_head") c.mlp_head = v.get<bool>();
      else if (key == "temp") c.temperature = v.get<double>();
      else if (key == "layers") c.layers = v.get<std::vector<std::size_t>>();
      else if (key == "augment") c.augment = v.get<bool>();
      else if (key == "augment_pad") c.augment_pad = v.get<std::size_t>();
      else if (key == "restarts") c.kmeans_restarts = v.get<std::size_t>();
      else if (key == "cluster_within_coarse") c.cluster_within_coarse = v.get<bool>();
      else throw InvalidArgument("--config: unknown key '" + key + "'");
    } catch (const Json::type_error& e) {
      throw InvalidArgument("--config: key '" + key + "' has the wrong type (" + e.what() + ")");
    }
  }
}

TrainConfig resolve_train_config(const TrainFlags& f) {
  TrainConfig c;
  if (!f.config.empty()) apply_config_file(c, read_json(f.config));
  if (f.objective) c.objective = parse_objective(*f.objective);
  if (f.epochs) c.epochs = *f.epochs;
  if (f.m_epoch) c.ip_start_epoch = *f.m_epoch;
  if (f.clusters) c.num_clusters = *f.clusters;
  if (f.lambda_i) c.lambda_instance = *f.lambda_i;
  if (f.lambda_p) c.lambda_proxy = *f.lambda_p;
  if (f.lr) c.lr = *f.lr;
  if (f.momentum) c.momentum = *f.momentum;
  if (f.wd) c.weight_decay = *f.wd;
  if (f.decay_epochs) c.lr_decay_epochs = parse_index_list(*f.decay_epochs, "--decay-epochs");
  if (f.decay_factor) c.lr_decay_factor = *f.decay_factor;
  if (f.batch) c.batch_size = *f.batch;
  if (f.seed) c.seed = *f.seed;
  if (f.cosine) c.cosine = true;
  if (f.mlp_head) c.mlp_head = true;
  if (f.temp) c.temperature = *f.temp;
  if (f.layers) c.layers = parse_index_list(*f.layers, "--layers");
  if (f.no_augment) c.augment = false;
  if (f.augment_pad) c.augment_pad = *f.augment_pad;
  if (f.restarts) c.kmeans_restarts = *f.restarts;
  if (f.cluster_global) c.cluster_within_coarse = false;
  validate(c);
  return c;
}

int run_train(const TrainFlags& f) {
  const TrainConfig c = resolve_train_config(f);
  Dataset data = read_dataset(f.data);
  if (!f.image.empty()) {
    const auto [h, w] = parse_image_size(f.image);
    if (h * w * 3 != data.dim()) {
      throw InvalidArgument("--image " + f.image + " does not match dataset dim " + std::to_string(data.dim()));
    }
    data.image_h = h;
    data.image_w = w;
  }
  const std::string metrics_path = f.metrics.empty() ? f.out + ".metrics.jsonl" : f.metrics;
  std::string lines;
  const TrainResult r = train(c, data, [&](const EpochMetrics& m, const ModelParams&, const Membership*) {
    lines += to_json(m).dump() + "\n";
  });
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  save_checkpoint(r.params, f.out);
  write_text(metrics_path, lines);
  const EpochMetrics& last = r.log.back();
  std::cout << "trained " << to_string(c.objective) << " for " << c.epochs << " epochs: loss " << r.log.front().loss_total
            << " -> " << last.loss_total << "; wrote " << f.out << " and " << metrics_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

void require_compatible(const ModelParams& p, const Dataset& d) {
  if (p.input_dim() != d.dim()) {
    throw InvalidArgument("checkpoint input dim " + std::to_string(p.input_dim()) + " != dataset dim " +
                          std::to_string(d.dim()));
  }
}

int run_eval(const std::string& data_path, const std::string& ckpt_path, const std::string& ks_text,
             const std::string& out_path) {
  const std::vector<std::size_t> ks = parse_index_list(ks_text, "--recall-at");
  if (ks.empty()) throw InvalidArgument("--recall-at needs at least one k");
  const Dataset d = read_dataset(data_path);
  const ModelParams p = load_checkpoint(ckpt_path);
  require_compatible(p, d);

  const Matrix emb = embed(p, d.examples);
  EvalReport rep;
  const auto& retrieval_labels = d.has_fine() ? d.fine_labels : d.coarse_labels;
  const RecallResult rr = recall_at_k(emb, retrieval_labels, ks);
  rep.recall_at = rr.recall_at;
  rep.n_queries = rr.n_queries;

  const auto& head_labels = p.coarse_head_on_fine ? d.fine_labels : d.coarse_labels;
  const std::size_t head_classes = p.coarse_head_on_fine ? d.num_fine : d.num_coarse;
  if (!head_labels.empty() && p.coarse_head.rows() == head_classes) {
    std::vector<std::size_t> topk_ks;
    for (std::size_t k : ks)
      if (k <= p.coarse_head.rows()) topk_ks.push_back(k);
    rep.topk_acc = topk_accuracy(head_logits(p, emb, HeadKind::coarse), head_labels, topk_ks);
  }
  if (d.has_fine() && p.instance_head.rows() == d.size()) {
    const Matrix feats = instance_branch(p, emb).features;
    const Vector prob = fine_class_prob(feats, p.instance_head, d.fine_labels, d.num_fine, p.logit_scale());
    rep.fine_prob_min = *std::min_element(prob.begin(), prob.end());
    double sum = 0.0;
    for (double v : prob) sum += v;
    rep.fine_prob_mean = sum / static_cast<double>(prob.size());
  }
  const Json j = to_json(rep);
  write_text(out_path, j.dump(2) + "\n");
  std::cout << "R@" << ks.front() << " = " << rep.recall_at.at(ks.front()) << " over " << rep.n_queries
            << " queries; wrote " << out_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify-bounds

int run_verify(const std::string& data_path, const std::string& ckpt_path, int theorem, const std::string& out_path) {
  const Dataset d = read_dataset(data_path);
  const ModelParams p = load_checkpoint(ckpt_path);
  require_compatible(p, d);
  if (!d.has_fine()) throw UnsupportedData("bound verification needs fine labels; the dataset has none");
  if (p.mlp_head) {
    throw UnsupportedData("the bounds assume the instance head reads the backbone features; this checkpoint has an MLP head");
  }
  if (p.instance_head.rows() != d.size()) {
    throw InvalidArgument("checkpoint instance head has " + std::to_string(p.instance_head.rows()) +
                          " columns but the dataset has " + std::to_string(d.size()) + " examples");
  }
  if (p.coarse_head_on_fine || p.coarse_head.rows() != d.num_coarse) {
    throw InvalidArgument("checkpoint coarse head does not match the dataset's coarse classes");
  }
  // The softmax the heads were trained with: logits scaled by 1/T under cosine.
  Matrix emb = embed(p, d.examples);
  for (double& v : emb.flat()) v *= p.logit_scale();

  const BoundReport rep = verify_theorem(emb, p.coarse_head, p.instance_head, d.coarse_labels, d.fine_labels, theorem);
  const Lemma1Report lemma = verify_lemma1(emb, p.instance_head, d.fine_labels);
  Json j = to_json(rep);
  j["lemma1"] = to_json(lemma);
  write_text(out_path, j.dump(2) + "\n");
  std::cout << "theorem " << theorem << ": all_hold=" << (rep.all_hold ? "true" : "false")
            << (rep.vacuous ? " (rhs below 1e-300)" : "") << " log slack min " << rep.log_slack_min << "; wrote "
            << out_path << "\n";
  if (!rep.all_hold) throw BoundsFailed{};
  return kExitOk;
}

// ---------------------------------------------------------------------------
// reproduce-synthetic

int run_reproduce(const std::string& seeds_text, const std::string& out_dir, std::optional<std::size_t> epochs) {
  SyntheticOptions opt;
  opt.seeds.clear();
  for (std::size_t s : parse_index_list(seeds_text, "--seeds")) opt.seeds.push_back(s);
  if (epochs) opt.train.epochs = *epochs;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());

  const SyntheticTable t = run_synthetic(opt, [](const SyntheticRow& row) {
    std::cerr << to_string(row.objective) << " seed " << row.seed << ": R@1 " << row.recall_at.begin()->second << "\n";
  });
  const std::string csv_path = (fs::path(out_dir) / "table.csv").string();
  const std::string json_path = (fs::path(out_dir) / "table.json").string();
  write_text(csv_path, to_csv(t));
  write_text(json_path, to_json(t).dump(2) + "\n");
  std::cout << "median R@" << t.ks.front() << ":";
  for (const auto& [o, m] : t.median) std::cout << " " << to_string(o) << "=" << m.at(t.ks.front());
  std::cout << "\nwrote " << csv_path << " and " << json_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coarse-label representation learning toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen_cmd->add_option("--kind", gen.kind, "patch or blob")->check(CLI::IsMember({"patch", "blob"}));
  gen_cmd->add_option("--out", gen.out, "output path (.csv for CSV, anything else CFDS1)")->required();
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--n", gen.patch.n, "patch: number of images");
  gen_cmd->add_option("--big", gen.patch.n_big, "patch: number of big patches (coarse classes)");
  gen_cmd->add_option("--small", gen.patch.n_small, "patch: number of small patches (fine classes)");
  gen_cmd->add_option("--height", gen.patch.img_h);
  gen_cmd->add_option("--width", gen.patch.img_w);
  gen_cmd->add_option("--big-size", gen.patch.big_size);
  gen_cmd->add_option("--small-size", gen.patch.small_size);
  gen_cmd->add_option("--coarse", gen.blob.num_coarse, "blob: coarse classes");
  gen_cmd->add_option("--fine-per-coarse", gen.blob.fine_per_coarse, "blob: fine classes per coarse class");
  gen_cmd->add_option("--z", gen.blob.z, "blob: examples per fine class");
  gen_cmd->add_option("--dim", gen.blob.dim, "blob: feature dimension");
  gen_cmd->add_option("--coarse-spread", gen.blob.coarse_spread);
  gen_cmd->add_option("--fine-spread", gen.blob.fine_spread);
  gen_cmd->add_option("--noise", gen.blob.noise);

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint plus JSONL metrics");
  train_cmd->add_option("--data", tf.data)->required();
  train_cmd->add_option("--out", tf.out, "checkpoint path")->required();
  train_cmd->add_option("--metrics", tf.metrics, "metrics path (default <out>.metrics.jsonl)");
  train_cmd->add_option("--config", tf.config, "JSON file with defaults; flags override it");
  train_cmd->add_option("--objective", tf.objective, "ins|cos|coins|coins-imp|coinsP|opt");
  train_cmd->add_option("--epochs", tf.epochs);
  train_cmd->add_option("--m-epoch", tf.m_epoch, "epoch at which the proxy loss starts (coinsP)");
  train_cmd->add_option("--clusters", tf.clusters, "number of proxies P");
  train_cmd->add_option("--lambda-i", tf.lambda_i);
  train_cmd->add_option("--lambda-p", tf.lambda_p);
  train_cmd->add_option("--lr", tf.lr);
  train_cmd->add_option("--momentum", tf.momentum);
  train_cmd->add_option("--wd", tf.wd);
  train_cmd->add_option("--decay-epochs", tf.decay_epochs, "comma-separated epochs");
  train_cmd->add_option("--decay-factor", tf.decay_factor);
  train_cmd->add_option("--batch", tf.batch);
  train_cmd->add_option("--seed", tf.seed);
  train_cmd->add_flag("--cosine", tf.cosine);
  train_cmd->add_flag("--mlp-head", tf.mlp_head);
  train_cmd->add_option("--temp", tf.temp);
  train_cmd->add_option("--layers", tf.layers, "comma-separated hidden widths, last is the embedding dim");
  train_cmd->add_option("--image", tf.image, "HxW of image data; enables augmentation");
  train_cmd->add_flag("--no-augment", tf.no_augment);
  train_cmd->add_option("--augment-pad", tf.augment_pad);
  train_cmd->add_option("--restarts", tf.restarts, "k-means restarts");
  train_cmd->add_flag("--cluster-global", tf.cluster_global, "cluster all instances together instead of per coarse class");

  std::string eval_data, eval_ckpt, eval_ks = "1,2,4,8", eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "Recall@k, top-k accuracy and fine-class probability");
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--recall-at", eval_ks);
  eval_cmd->add_option("--out", eval_out)->required();

  std::string vb_data, vb_ckpt, vb_out;
  int vb_theorem = 1;
  auto* vb_cmd = app.add_subcommand("verify-bounds", "check the fine-class lower bounds with measured constants");
  vb_cmd->add_option("--data", vb_data)->required();
  vb_cmd->add_option("--checkpoint", vb_ckpt)->required();
  vb_cmd->add_option("--theorem", vb_theorem)->check(CLI::IsMember({1, 2}));
  vb_cmd->add_option("--out", vb_out)->required();

  std::string rs_seeds = "1,2,3", rs_out;
  std::optional<std::size_t> rs_epochs;
  auto* rs_cmd = app.add_subcommand("reproduce-synthetic", "compare all objectives on the patch images");
  rs_cmd->add_option("--seeds", rs_seeds);
  rs_cmd->add_option("--out", rs_out)->required();
  rs_cmd->add_option("--epochs", rs_epochs);

  for (auto* cmd : {gen_cmd, train_cmd, eval_cmd, vb_cmd}) {
    cmd->add_option("--format", data_format, "dataset file format: auto (by extension), cfds or csv")
        ->check(CLI::IsMember({"auto", "cfds", "csv"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen(gen);
    if (*train_cmd) return run_train(tf);
    if (*eval_cmd) return run_eval(eval_data, eval_ckpt, eval_ks, eval_out);
    if (*vb_cmd) return run_verify(vb_data, vb_ckpt, vb_theorem, vb_out);
    if (*rs_cmd) return run_reproduce(rs_seeds, rs_out, rs_epochs);
  } catch (const BoundsFailed&) {
    return kExitInternal;
  } catch (const UnsupportedData& e) {
    std::cerr << "unsupported data: " << e.what() << "\n";
    return kExitUnsupported;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const PlacementError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
