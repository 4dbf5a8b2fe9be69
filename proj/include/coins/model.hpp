#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coins/data.hpp"
#include "coins/errors.hpp"
#include "coins/matrix.hpp"
#include "coins/numerics.hpp"
#include "coins/rng.hpp"

namespace coins {

/// y = x·weight + bias, weight is in × out.
struct DenseLayer {
  Matrix weight;
  Vector bias;

  bool operator==(const DenseLayer&) const = default;
};

/// Two-layer projection applied on the instance/proxy branch only: relu(f·hidden)·out.
struct MlpHead {
  Matrix hidden;  // d × d_h
  Matrix out;     // d_h × d

  bool operator==(const MlpHead&) const = default;
};

enum class HeadKind { coarse, instance, proxy };

inline const char* to_string(HeadKind h) {
  switch (h) {
    case HeadKind::coarse: return "coarse";
    case HeadKind::instance: return "instance";
    case HeadKind::proxy: return "proxy";
  }
  return "?";
}

/// Encoder f(·) plus linear heads without bias.
///
/// Heads are stored class-major: row j of a head matrix is the column w_j of the
/// d × K weight, so each class vector is contiguous.
struct ModelParams {
  std::vector<DenseLayer> encoder;  // ReLU between layers, none after the last
  Matrix coarse_head;               // C × d
  Matrix instance_head;             // n × d, row i owned by training example i
  std::optional<Matrix> proxy_head;  // P × d, absent until clustering
  std::optional<MlpHead> mlp_head;
  bool cosine = false;
  double temperature = 0.05;
  bool coarse_head_on_fine = false;  // the coarse head was trained against fine labels

  std::size_t input_dim() const { return encoder.empty() ? 0 : encoder.front().weight.rows(); }
  std::size_t embedding_dim() const { return encoder.empty() ? 0 : encoder.back().weight.cols(); }
  double logit_scale() const { return cosine ? 1.0 / temperature : 1.0; }

  const Matrix& head(HeadKind kind) const {
    switch (kind) {
      case HeadKind::coarse: return coarse_head;
      case HeadKind::instance: return instance_head;
      case HeadKind::proxy:
        if (!proxy_head) throw StateError("proxy head requested before it was built by clustering");
        return *proxy_head;
    }
    throw InvalidArgument("unknown head");
  }

  bool operator==(const ModelParams&) const = default;
};

struct ModelConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> layers = {256, 128};  // last entry is the embedding dim d
  std::size_t num_coarse = 0;
  std::size_t num_instances = 0;
  bool cosine = false;
  bool mlp_head = false;
  double temperature = 0.05;
};

/// He-uniform encoder weights (zero biases); head columns uniform in ±1/√d,
/// unit-normalized when cosine softmax is on.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.input_dim == 0 || cfg.layers.empty()) throw InvalidArgument("init_params: empty architecture");
  if (cfg.cosine && !(cfg.temperature > 0.0)) throw InvalidArgument("init_params: temperature must be > 0");
  Rng rng(seed);
  ModelParams p;
  p.cosine = cfg.cosine;
  p.temperature = cfg.temperature;

  auto he_uniform = [&](std::size_t fan_in, std::size_t fan_out) {
    Matrix w(fan_in, fan_out);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : w.flat()) v = rng.uniform(-limit, limit);
    return w;
  };
  std::size_t in = cfg.input_dim;
  for (std::size_t out : cfg.layers) {
    if (out == 0) throw InvalidArgument("init_params: zero-width layer");
    p.encoder.push_back({he_uniform(in, out), Vector(out, 0.0)});
    in = out;
  }
  const std::size_t d = in;
  auto head = [&](std::size_t k) {
    Matrix w(k, d);
    const double limit = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& v : w.flat()) v = rng.uniform(-limit, limit);
    if (cfg.cosine && k > 0) normalize_rows(w);
    return w;
  };
  p.coarse_head = head(cfg.num_coarse);
  p.instance_head = head(cfg.num_instances);
  if (cfg.mlp_head) p.mlp_head = MlpHead{he_uniform(d, d), he_uniform(d, d)};
  return p;
}

// ---------------------------------------------------------------------------
// Encoder

struct EncoderCache {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation output of each layer
  Matrix output;               // embeddings, L2-normalized when cosine
};

struct Encoded {
  Matrix embeddings;
  EncoderCache cache;
};

inline Encoded encode(const ModelParams& p, const Matrix& batch) {
  if (p.encoder.empty()) throw InvalidArgument("encode: model has no layers");
  if (batch.cols() != p.input_dim()) {
    throw InvalidArgument("encode: input dim " + std::to_string(batch.cols()) + " != model input dim " +
                          std::to_string(p.input_dim()));
  }
  Encoded e;
  Matrix x = batch;
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const auto& layer = p.encoder[l];
    // Image inputs are mostly a constant background; the first layer skips it.
    const auto base = l == 0 ? dominant_value(x) : std::nullopt;
    Matrix z = base && *base != 0.0 ? matmul_offset(x, layer.weight, *base) : matmul(x, layer.weight);
    for (std::size_t i = 0; i < z.rows(); ++i) axpy(1.0, layer.bias, z.row(i));
    e.cache.inputs.push_back(std::move(x));
    e.cache.pre.push_back(z);
    if (l + 1 < p.encoder.size()) {
      for (double& v : z.flat()) v = v > 0.0 ? v : 0.0;
    }
    x = std::move(z);
  }
  if (p.cosine) normalize_rows(x);
  e.cache.output = x;
  e.embeddings = std::move(x);
  return e;
}

inline Matrix embed(const ModelParams& p, const Matrix& batch) { return encode(p, batch).embeddings; }

struct LayerGrad {
  Matrix weight;
  Vector bias;
};

/// Backward pass through the encoder given ∂L/∂embeddings.
inline std::vector<LayerGrad> encode_backward(const ModelParams& p, const EncoderCache& cache,
                                              const Matrix& grad_embeddings) {
  require_same_shape(cache.output, grad_embeddings, "encode_backward");
  Matrix g = grad_embeddings;
  if (p.cosine) {
    const Matrix& raw = cache.pre.back();
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const Vector gi = l2_normalize_backward(raw.row(i), g.row(i));
      std::copy(gi.begin(), gi.end(), g.row(i).begin());
    }
  }
  std::vector<LayerGrad> grads(p.encoder.size());
  for (std::size_t l = p.encoder.size(); l-- > 0;) {
    if (l + 1 < p.encoder.size()) {
      const Matrix& pre = cache.pre[l];
      auto gf = g.flat();
      auto pf = pre.flat();
      for (std::size_t k = 0; k < gf.size(); ++k)
        if (pf[k] <= 0.0) gf[k] = 0.0;
    }
    const auto base = l == 0 ? dominant_value(cache.inputs[l]) : std::nullopt;
    grads[l].weight = base && *base != 0.0 ? matmul_tn_offset(cache.inputs[l], g, *base) : matmul_tn(cache.inputs[l], g);
    grads[l].bias.assign(g.cols(), 0.0);
    for (std::size_t i = 0; i < g.rows(); ++i) axpy(1.0, g.row(i), grads[l].bias);
    if (l > 0) g = matmul_nt(g, p.encoder[l].weight);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Instance/proxy branch (optional MLP head)

struct BranchCache {
  Matrix hidden_pre;
  Matrix hidden;
  Matrix raw;  // MLP output before normalization
};

struct Branch {
  Matrix features;
  BranchCache cache;
};

/// Features fed to the instance and proxy heads. Identity without an MLP head.
inline Branch instance_branch(const ModelParams& p, const Matrix& embeddings) {
  Branch b;
  if (!p.mlp_head) {
    b.features = embeddings;
    return b;
  }
  if (embeddings.cols() != p.mlp_head->hidden.rows()) throw InvalidArgument("instance_branch: dim mismatch");
  b.cache.hidden_pre = matmul(embeddings, p.mlp_head->hidden);
  b.cache.hidden = b.cache.hidden_pre;
  for (double& v : b.cache.hidden.flat()) v = v > 0.0 ? v : 0.0;
  b.cache.raw = matmul(b.cache.hidden, p.mlp_head->out);
  b.features = b.cache.raw;
  if (p.cosine) normalize_rows(b.features);
  return b;
}

struct BranchGrad {
  Matrix embeddings;
  std::optional<MlpHead> mlp;
};

inline BranchGrad instance_branch_backward(const ModelParams& p, const Matrix& embeddings, const BranchCache& cache,
                                           const Matrix& grad_features) {
  BranchGrad out;
  if (!p.mlp_head) {
    out.embeddings = grad_features;
    return out;
  }
  Matrix g = grad_features;
  if (p.cosine) {
    for (std::size_t i = 0; i < g.rows(); ++i) {
      const Vector gi = l2_normalize_backward(cache.raw.row(i), g.row(i));
      std::copy(gi.begin(), gi.end(), g.row(i).begin());
    }
  }
  MlpHead grad;
  grad.out = matmul_tn(cache.hidden, g);
  Matrix gh = matmul_nt(g, p.mlp_head->out);
  auto ghf = gh.flat();
  auto pre = cache.hidden_pre.flat();
  for (std::size_t k = 0; k < ghf.size(); ++k)
    if (pre[k] <= 0.0) ghf[k] = 0.0;
  grad.hidden = matmul_tn(embeddings, gh);
  out.embeddings = matmul_nt(gh, p.mlp_head->hidden);
  out.mlp = std::move(grad);
  return out;
}

// ---------------------------------------------------------------------------
// Heads

/// Instrumentation: how many times each head column was read by a logit computation.
struct ColumnAccessCounter {
  std::vector<std::uint64_t> per_column;
  std::uint64_t total = 0;

  explicit ColumnAccessCounter(std::size_t columns = 0) : per_column(columns, 0) {}

  void hit(std::size_t column) {
    if (column >= per_column.size()) per_column.resize(column + 1, 0);
    ++per_column[column];
    ++total;
  }
};

/// Logits of one feature row against the selected head columns, scaled by 1/temperature under cosine.
inline Vector row_logits(std::span<const double> features, const Matrix& head, std::span<const std::size_t> columns,
                         double scale, ColumnAccessCounter* counter = nullptr) {
  Vector logits(columns.size());
  for (std::size_t t = 0; t < columns.size(); ++t) {
    logits[t] = scale * dot(features, head.row(columns[t]));
    if (counter) counter->hit(columns[t]);
  }
  return logits;
}

/// Batch logits for a head; the instance/proxy heads read the MLP-projected features.
/// `columns`, when given, restricts and orders the output columns.
inline Matrix head_logits(const ModelParams& p, const Matrix& embeddings, HeadKind kind,
                          std::optional<std::span<const std::size_t>> columns = std::nullopt) {
  const Matrix& head = p.head(kind);
  const Matrix features = kind == HeadKind::coarse ? embeddings : instance_branch(p, embeddings).features;
  if (features.cols() != head.cols()) throw InvalidArgument("head_logits: embedding dim != head dim");
  std::vector<std::size_t> all;
  std::span<const std::size_t> cols;
  if (columns) {
    for (std::size_t c : *columns)
      if (c >= head.rows()) throw InvalidArgument("head_logits: column " + std::to_string(c) + " out of range");
    cols = *columns;
  } else {
    all.resize(head.rows());
    for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
    cols = all;
  }
  Matrix out(features.rows(), cols.size());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const Vector l = row_logits(features.row(i), head, cols, p.logit_scale());
    std::copy(l.begin(), l.end(), out.row(i).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// CFCK1 checkpoint (little-endian):
//   "CFCK1\0"
//   u32 layer_count, then (u32 in, u32 out) per layer
//   u32 d, u32 C, u32 n, u32 P (0 = no proxy head), u32 d_h (0 = no MLP head)
//   u8 cosine, u8 coarse_head_on_fine, f64 temperature
//   f64 payload in declaration order: per layer weight (in×out) then bias (out);
//   coarse head (C×d), instance head (n×d), proxy head (P×d), MLP hidden (d×d_h), MLP out (d_h×d)

inline constexpr std::array<char, 6> kCheckpointMagic = {'C', 'F', 'C', 'K', '1', '\0'};

inline std::vector<std::uint8_t> encode_checkpoint(const ModelParams& p) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(p.encoder.size()));
  for (const auto& l : p.encoder) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(l.weight.rows()));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(l.weight.cols()));
  }
  const std::size_t d = p.embedding_dim();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(p.coarse_head.rows()));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(p.instance_head.rows()));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(p.proxy_head ? p.proxy_head->rows() : 0));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(p.mlp_head ? p.mlp_head->hidden.cols() : 0));
  w.le<std::uint8_t>(p.cosine ? 1 : 0);
  w.le<std::uint8_t>(p.coarse_head_on_fine ? 1 : 0);
  w.le<double>(p.temperature);
  auto put = [&](std::span<const double> values) {
    for (double v : values) w.le<double>(v);
  };
  for (const auto& l : p.encoder) {
    put(l.weight.flat());
    put(l.bias);
  }
  put(p.coarse_head.flat());
  put(p.instance_head.flat());
  if (p.proxy_head) put(p.proxy_head->flat());
  if (p.mlp_head) {
    put(p.mlp_head->hidden.flat());
    put(p.mlp_head->out.flat());
  }
  return w.take();
}

inline ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.expect(kCheckpointMagic, "CFCK1");
  const auto layers = r.le<std::uint32_t>("layer count");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::size_t at = r.offset();
    const auto in = r.le<std::uint32_t>("layer in");
    const auto out = r.le<std::uint32_t>("layer out");
    if (!shapes.empty() && shapes.back().second != in) throw FormatError("layer shapes do not chain", at);
    shapes.emplace_back(in, out);
  }
  const std::size_t d_at = r.offset();
  const auto d = r.le<std::uint32_t>("d");
  if (shapes.empty() || shapes.back().second != d) throw FormatError("embedding dim does not match last layer", d_at);
  const auto num_c = r.le<std::uint32_t>("C");
  const auto num_i = r.le<std::uint32_t>("n");
  const auto num_p = r.le<std::uint32_t>("P");
  const auto d_h = r.le<std::uint32_t>("d_h");
  ModelParams p;
  p.cosine = r.le<std::uint8_t>("cosine") != 0;
  p.coarse_head_on_fine = r.le<std::uint8_t>("head labels") != 0;
  p.temperature = r.le<double>("temperature");

  std::size_t expected = 0;
  for (auto [in, out] : shapes) expected += static_cast<std::size_t>(in) * out + out;
  expected += static_cast<std::size_t>(num_c + num_i + num_p) * d + 2ull * d * d_h;
  r.need(expected * 8, "parameters");

  auto take = [&](std::size_t rows, std::size_t cols) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = r.le<double>("parameter");
    return Matrix(rows, cols, std::move(v));
  };
  for (auto [in, out] : shapes) {
    DenseLayer l;
    l.weight = take(in, out);
    l.bias = take(1, out).data();
    p.encoder.push_back(std::move(l));
  }
  p.coarse_head = take(num_c, d);
  p.instance_head = take(num_i, d);
  if (num_p > 0) p.proxy_head = take(num_p, d);
  if (d_h > 0) p.mlp_head = MlpHead{take(d, d_h), take(d_h, d)};
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint payload", r.offset());
  return p;
}

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  detail::write_file(path, encode_checkpoint(p));
}

inline ModelParams load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

}  // namespace coins
