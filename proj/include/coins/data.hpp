#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "coins/errors.hpp"
#include "coins/matrix.hpp"
#include "coins/rng.hpp"

namespace coins {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

/// Examples plus coarse labels, and optionally the fine (target) labels used only for
/// evaluation and the fine-label upper bound.
struct Dataset {
  Matrix examples;                          // n × dim
  std::vector<std::uint32_t> coarse_labels;  // n entries in [0, num_coarse)
  std::vector<std::uint32_t> fine_labels;    // empty, or n entries in [0, num_fine)
  std::uint32_t num_coarse = 0;
  std::uint32_t num_fine = 0;  // 0 when fine labels are absent
  DType dtype = DType::f64;    // on-disk precision

  // Image geometry (H×W×3, HWC order). Zero for non-image data; not serialized.
  std::uint32_t image_h = 0;
  std::uint32_t image_w = 0;

  std::size_t size() const noexcept { return examples.rows(); }
  std::size_t dim() const noexcept { return examples.cols(); }
  bool has_fine() const noexcept { return num_fine > 0; }
  bool is_image() const noexcept { return image_h > 0 && image_w > 0; }

  bool operator==(const Dataset& o) const {
    return examples == o.examples && coarse_labels == o.coarse_labels && fine_labels == o.fine_labels &&
           num_coarse == o.num_coarse && num_fine == o.num_fine && dtype == o.dtype;
  }
};

/// Checks label ranges and that fine → coarse is a function.
inline void validate(const Dataset& d) {
  if (d.coarse_labels.size() != d.size()) throw InvalidArgument("dataset: coarse label count != n");
  for (auto y : d.coarse_labels)
    if (y >= d.num_coarse) throw InvalidArgument("dataset: coarse label " + std::to_string(y) + " >= C");
  if (d.has_fine()) {
    if (d.fine_labels.size() != d.size()) throw InvalidArgument("dataset: fine label count != n");
    std::vector<std::int64_t> parent(d.num_fine, -1);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto f = d.fine_labels[i];
      if (f >= d.num_fine) throw InvalidArgument("dataset: fine label " + std::to_string(f) + " >= F");
      if (parent[f] < 0) {
        parent[f] = d.coarse_labels[i];
      } else if (parent[f] != static_cast<std::int64_t>(d.coarse_labels[i])) {
        throw InvalidArgument("dataset: fine class " + std::to_string(f) + " spans two coarse classes");
      }
    }
  } else if (!d.fine_labels.empty()) {
    throw InvalidArgument("dataset: fine labels present but F = 0");
  }
}

/// Member indices of each coarse class, ascending.
inline std::vector<std::vector<std::size_t>> coarse_index(std::span<const std::uint32_t> coarse_labels,
                                                          std::size_t num_coarse) {
  std::vector<std::vector<std::size_t>> members(num_coarse);
  for (std::size_t i = 0; i < coarse_labels.size(); ++i) {
    if (coarse_labels[i] >= num_coarse) throw InvalidArgument("coarse_index: label out of range");
    members[coarse_labels[i]].push_back(i);
  }
  return members;
}

// ---------------------------------------------------------------------------
// Generators

struct PatchConfig {
  std::size_t n = 512;
  std::size_t n_big = 32;
  std::size_t n_small = 128;
  std::size_t img_h = 32;
  std::size_t img_w = 32;
  std::size_t big_size = 12;
  std::size_t small_size = 4;
  std::uint64_t seed = 0;
};

inline constexpr double kPatchBackground = 0.5;
inline constexpr int kMaxPlacementAttempts = 1000;

/// Images of a mid-gray canvas carrying one big and one small solid patch.
///
/// The small patch defines the fine class; fine class s belongs to coarse class
/// s mod n_big, whose big patch is drawn on the image. Both patches are sampled
/// uniformly in position and never overlap.
inline Dataset gen_patch_dataset(const PatchConfig& cfg) {
  if (cfg.n_big == 0 || cfg.n_small == 0) throw InvalidArgument("gen_patch_dataset: pool sizes must be >= 1");
  if (cfg.big_size == 0 || cfg.small_size == 0) throw InvalidArgument("gen_patch_dataset: patch size must be >= 1");
  if (cfg.big_size > cfg.img_h || cfg.big_size > cfg.img_w || cfg.small_size > cfg.img_h ||
      cfg.small_size > cfg.img_w) {
    throw InvalidArgument("gen_patch_dataset: patches do not fit inside the image");
  }
  Rng rng(cfg.seed);
  auto draw_pool = [&](std::size_t count) {
    std::vector<std::array<double, 3>> pool(count);
    for (auto& c : pool)
      for (double& ch : c) ch = rng.uniform();
    return pool;
  };
  const auto big_pool = draw_pool(cfg.n_big);
  const auto small_pool = draw_pool(cfg.n_small);

  const std::size_t h = cfg.img_h, w = cfg.img_w;
  Dataset d;
  d.examples = Matrix(cfg.n, h * w * 3, kPatchBackground);
  d.coarse_labels.resize(cfg.n);
  d.fine_labels.resize(cfg.n);
  d.num_coarse = static_cast<std::uint32_t>(cfg.n_big);
  d.num_fine = static_cast<std::uint32_t>(cfg.n_small);
  d.image_h = static_cast<std::uint32_t>(h);
  d.image_w = static_cast<std::uint32_t>(w);

  auto paint = [&](std::span<double> img, std::size_t top, std::size_t left, std::size_t size,
                   const std::array<double, 3>& color) {
    for (std::size_t r = top; r < top + size; ++r)
      for (std::size_t c = left; c < left + size; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch) img[(r * w + c) * 3 + ch] = color[ch];
  };

  for (std::size_t i = 0; i < cfg.n; ++i) {
    const auto fine = static_cast<std::uint32_t>(rng.index(cfg.n_small));
    const auto coarse = static_cast<std::uint32_t>(fine % cfg.n_big);
    const std::size_t bt = rng.index(h - cfg.big_size + 1);
    const std::size_t bl = rng.index(w - cfg.big_size + 1);
    std::size_t st = 0, sl = 0;
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
      st = rng.index(h - cfg.small_size + 1);
      sl = rng.index(w - cfg.small_size + 1);
      const bool disjoint = st + cfg.small_size <= bt || bt + cfg.big_size <= st || sl + cfg.small_size <= bl ||
                            bl + cfg.big_size <= sl;
      placed = disjoint;
    }
    if (!placed) {
      throw PlacementError("gen_patch_dataset: could not place small patch without overlap after " +
                           std::to_string(kMaxPlacementAttempts) + " attempts (image " + std::to_string(i) + ")");
    }
    auto img = d.examples.row(i);
    paint(img, bt, bl, cfg.big_size, big_pool[coarse]);
    paint(img, st, sl, cfg.small_size, small_pool[fine]);
    d.coarse_labels[i] = coarse;
    d.fine_labels[i] = fine;
  }
  return d;
}

struct BlobConfig {
  std::size_t num_coarse = 4;
  std::size_t fine_per_coarse = 5;
  std::size_t z = 10;
  std::size_t dim = 16;
  double coarse_spread = 4.0;
  double fine_spread = 1.0;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

/// Hierarchical Gaussian blobs: coarse centers, fine centers around them, z points per fine class.
inline Dataset gen_blob_dataset(const BlobConfig& cfg) {
  if (cfg.num_coarse == 0 || cfg.fine_per_coarse == 0 || cfg.z == 0 || cfg.dim == 0) {
    throw InvalidArgument("gen_blob_dataset: counts must be >= 1");
  }
  if (!(cfg.coarse_spread > 0.0) || !(cfg.fine_spread > 0.0) || cfg.noise < 0.0) {
    throw InvalidArgument("gen_blob_dataset: spreads must be > 0 and noise >= 0");
  }
  Rng rng(cfg.seed);
  const std::size_t num_fine = cfg.num_coarse * cfg.fine_per_coarse;
  const std::size_t n = num_fine * cfg.z;
  Dataset d;
  d.examples = Matrix(n, cfg.dim);
  d.coarse_labels.resize(n);
  d.fine_labels.resize(n);
  d.num_coarse = static_cast<std::uint32_t>(cfg.num_coarse);
  d.num_fine = static_cast<std::uint32_t>(num_fine);

  Vector coarse_center(cfg.dim), fine_center(cfg.dim);
  std::size_t i = 0;
  for (std::size_t k = 0; k < cfg.num_coarse; ++k) {
    for (double& v : coarse_center) v = rng.normal(0.0, cfg.coarse_spread);
    for (std::size_t f = 0; f < cfg.fine_per_coarse; ++f) {
      for (std::size_t t = 0; t < cfg.dim; ++t) fine_center[t] = coarse_center[t] + rng.normal(0.0, cfg.fine_spread);
      const auto fine = static_cast<std::uint32_t>(k * cfg.fine_per_coarse + f);
      for (std::size_t e = 0; e < cfg.z; ++e, ++i) {
        auto row = d.examples.row(i);
        for (std::size_t t = 0; t < cfg.dim; ++t)
          row[t] = cfg.noise > 0.0 ? fine_center[t] + rng.normal(0.0, cfg.noise) : fine_center[t];
        d.coarse_labels[i] = static_cast<std::uint32_t>(k);
        d.fine_labels[i] = fine;
      }
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Augmentation

/// Mirror (optional) then crop an H×W window at (dy, dx) from the image zero-padded by `pad`.
inline Vector augment_with(std::span<const double> image, std::size_t h, std::size_t w, std::size_t pad, bool mirror,
                           std::size_t dy, std::size_t dx) {
  if (image.size() != h * w * 3) throw InvalidArgument("augment: example is not H×W×3");
  if (dy > 2 * pad || dx > 2 * pad) throw InvalidArgument("augment: crop offset outside padded image");
  Vector out(image.size(), 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    const auto pr = static_cast<std::ptrdiff_t>(r + dy) - static_cast<std::ptrdiff_t>(pad);
    if (pr < 0 || pr >= static_cast<std::ptrdiff_t>(h)) continue;
    for (std::size_t c = 0; c < w; ++c) {
      const auto pc = static_cast<std::ptrdiff_t>(c + dx) - static_cast<std::ptrdiff_t>(pad);
      if (pc < 0 || pc >= static_cast<std::ptrdiff_t>(w)) continue;
      const std::size_t src_c = mirror ? w - 1 - static_cast<std::size_t>(pc) : static_cast<std::size_t>(pc);
      const std::size_t src = (static_cast<std::size_t>(pr) * w + src_c) * 3;
      const std::size_t dst = (r * w + c) * 3;
      for (std::size_t ch = 0; ch < 3; ++ch) out[dst + ch] = image[src + ch];
    }
  }
  return out;
}

/// Random horizontal mirror (p = 0.5) and random crop from the zero-padded image.
inline Vector augment(std::span<const double> image, std::size_t h, std::size_t w, std::size_t pad, Rng& rng) {
  const bool mirror = rng.coin();
  const std::size_t dy = rng.index(2 * pad + 1);
  const std::size_t dx = rng.index(2 * pad + 1);
  return augment_with(image, h, w, pad, mirror, dy, dx);
}

// ---------------------------------------------------------------------------
// CFDS1 binary format (little-endian):
//   "CFDS1\0" | u32 n | u32 dim | u32 C | u32 F | u8 dtype | n·dim values | n u32 coarse | [n u32 fine]

inline constexpr std::array<char, 6> kDatasetMagic = {'C', 'F', 'D', 'S', '1', '\0'};

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t len) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + len);
  }
  template <typename T>
  void le(T value) {
    std::array<std::uint8_t, sizeof(T)> buf;
    std::memcpy(buf.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    bytes_.insert(bytes_.end(), buf.begin(), buf.end());
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    std::array<std::uint8_t, sizeof(T)> buf;
    std::memcpy(buf.data(), bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    T value;
    std::memcpy(&value, buf.data(), sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  void expect(std::span<const char> magic, const char* what) {
    need(magic.size(), what);
    if (std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0)
      throw FormatError(std::string("bad magic: expected ") + what, pos_);
    pos_ += magic.size();
  }
  void need(std::size_t len, const char* what) const {
    if (bytes_.size() - pos_ < len) throw FormatError(std::string("truncated file while reading ") + what, pos_);
  }
  std::size_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
  validate(d);
  detail::ByteWriter w;
  w.raw(kDatasetMagic.data(), kDatasetMagic.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(d.size()));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(d.dim()));
  w.le<std::uint32_t>(d.num_coarse);
  w.le<std::uint32_t>(d.num_fine);
  w.le<std::uint8_t>(static_cast<std::uint8_t>(d.dtype));
  for (double v : d.examples.flat()) {
    if (d.dtype == DType::f32) {
      w.le<float>(static_cast<float>(v));
    } else {
      w.le<double>(v);
    }
  }
  for (auto y : d.coarse_labels) w.le<std::uint32_t>(y);
  if (d.has_fine())
    for (auto y : d.fine_labels) w.le<std::uint32_t>(y);
  return w.take();
}

inline Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.expect(kDatasetMagic, "CFDS1");
  const auto n = r.le<std::uint32_t>("n");
  const auto dim = r.le<std::uint32_t>("dim");
  Dataset d;
  d.num_coarse = r.le<std::uint32_t>("C");
  d.num_fine = r.le<std::uint32_t>("F");
  const std::size_t dtype_at = r.offset();
  const auto dtype = r.le<std::uint8_t>("dtype");
  if (dtype > 1) throw FormatError("unknown dtype " + std::to_string(dtype), dtype_at);
  d.dtype = static_cast<DType>(dtype);
  const std::size_t value_size = d.dtype == DType::f32 ? 4 : 8;
  const std::size_t label_blocks = d.num_fine > 0 ? 2 : 1;
  // Size check up front so a corrupt header cannot trigger a huge allocation.
  r.need(static_cast<std::size_t>(n) * dim * value_size + static_cast<std::size_t>(n) * 4 * label_blocks, "payload");

  std::vector<double> values(static_cast<std::size_t>(n) * dim);
  for (double& v : values) v = d.dtype == DType::f32 ? r.le<float>("example") : r.le<double>("example");
  d.examples = Matrix(n, dim, std::move(values));

  auto read_labels = [&](std::vector<std::uint32_t>& out, std::uint32_t bound, const char* what) {
    out.resize(n);
    for (auto& y : out) {
      const std::size_t at = r.offset();
      y = r.le<std::uint32_t>(what);
      if (y >= bound) {
        throw FormatError(std::string(what) + " label " + std::to_string(y) + " out of range [0, " +
                              std::to_string(bound) + ")",
                          at);
      }
    }
  };
  read_labels(d.coarse_labels, d.num_coarse, "coarse");
  if (d.num_fine > 0) read_labels(d.fine_labels, d.num_fine, "fine");
  if (!r.at_end()) throw FormatError("trailing bytes after dataset payload", r.offset());
  return d;
}

inline void save_dataset(const Dataset& d, const std::string& path) { detail::write_file(path, encode_dataset(d)); }

inline Dataset load_dataset(const std::string& path) { return decode_dataset(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// CSV: header `coarse,fine,x0..x{dim-1}`; an empty fine column means no fine labels.

inline void save_dataset_csv(const Dataset& d, const std::string& path) {
  validate(d);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "coarse,fine";
  for (std::size_t k = 0; k < d.dim(); ++k) out << ",x" << k;
  out << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << d.coarse_labels[i] << ',';
    if (d.has_fine()) out << d.fine_labels[i];
    for (double v : d.examples.row(i)) out << ',' << v;
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

inline Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line)) throw FormatError("empty CSV", 0);
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  const auto header = split(line);
  if (header.size() < 2 || header[0] != "coarse" || header[1] != "fine") {
    throw FormatError("CSV header must start with coarse,fine", 0);
  }
  const std::size_t dim = header.size() - 2;
  offset += line.size() + 1;

  std::vector<double> values;
  Dataset d;
  bool any_fine = false, any_missing_fine = false;
  std::uint32_t max_c = 0, max_f = 0;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    const auto cells = split(line);
    if (cells.size() != dim + 2) throw FormatError("CSV row has wrong number of columns", offset);
    try {
      const auto c = static_cast<std::uint32_t>(std::stoul(cells[0]));
      d.coarse_labels.push_back(c);
      max_c = std::max(max_c, c);
      if (cells[1].empty()) {
        any_missing_fine = true;
      } else {
        const auto f = static_cast<std::uint32_t>(std::stoul(cells[1]));
        d.fine_labels.push_back(f);
        max_f = std::max(max_f, f);
        any_fine = true;
      }
      for (std::size_t k = 0; k < dim; ++k) values.push_back(std::stod(cells[k + 2]));
    } catch (const std::logic_error&) {
      throw FormatError("unparseable CSV cell", offset);
    }
    offset += line.size() + 1;
  }
  if (any_fine && any_missing_fine) throw FormatError("fine labels present on some rows only", offset);
  const std::size_t n = d.coarse_labels.size();
  d.examples = Matrix(n, dim, std::move(values));
  d.num_coarse = n > 0 ? max_c + 1 : 0;
  d.num_fine = any_fine ? max_f + 1 : 0;
  validate(d);
  return d;
}

}  // namespace coins
