#pragma once

#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "deft/opcount.hpp"
#include "deft/params.hpp"

namespace deft {

struct SddhConfig {
  int k = 3;    // patch / kernel size (odd)
  int m = 16;   // deformable sample positions, any positive integer
  int dim = 128;

  void validate() const {
    if (k < 1 || k % 2 == 0)
      throw std::invalid_argument("SddhConfig: K must be odd and positive");
    if (m < 1) throw std::invalid_argument("SddhConfig: M must be >= 1");
    if (dim < 1) throw std::invalid_argument("SddhConfig: dim must be >= 1");
  }
};

/// Raster-ordered K x K tap coordinates relative to the patch center, (x,y).
inline Tensor kxk_grid(int k) {
  int r = k / 2;
  Tensor g({k * k, 2});
  for (int i = 0; i < k * k; ++i) {
    g.at(i, 0) = (i % k) - r;
    g.at(i, 1) = (i / k) - r;
  }
  return g;
}

/// Weighted summation over M sampled features: out[d] = sum_i,c w[i,c,d] s[i,c].
/// This is the convM aggregation; it runs over M flexible positions instead
/// of a fixed K x K grid and carries no bias.
inline Var conv_m(const Var& support, const Var& w) {
  if (support.value().rank() != 2 || w.value().rank() != 3 ||
      support.dim(0) != w.dim(0) || support.dim(1) != w.dim(1))
    throw std::invalid_argument("conv_m: expects [M,C] and [M,C,D]");
  int m = w.dim(0), c = w.dim(1), d = w.dim(2);
  Tensor out({d});
  for (int i = 0; i < m; ++i)
    for (int ci = 0; ci < c; ++ci) {
      double s = support.value().at(i, ci);
      for (int co = 0; co < d; ++co) out[co] += s * w.value().at(i, ci, co);
    }
  return make_op(std::move(out), {support, w}, [m, c, d](Node& nd) {
    const Tensor& sv = nd.inputs[0]->value;
    const Tensor& wv = nd.inputs[1]->value;
    if (nd.inputs[0]->requires_grad) {
      Tensor& g = nd.inputs[0]->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int ci = 0; ci < c; ++ci) {
          double acc = 0.0;
          for (int co = 0; co < d; ++co)
            acc += nd.grad[co] * wv.at(i, ci, co);
          g.at(i, ci) += acc;
        }
    }
    if (nd.inputs[1]->requires_grad) {
      Tensor& g = nd.inputs[1]->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int ci = 0; ci < c; ++ci) {
          double s = sv.at(i, ci);
          for (int co = 0; co < d; ++co) g.at(i, ci, co) += s * nd.grad[co];
        }
    }
  });
}

/// Result of sparse descriptor extraction. `kept` maps descriptor rows back
/// to input keypoint indices; `dropped` records border rejections.
struct HeadOutput {
  Var descriptors;  // [N_kept, dim], unit L2 rows
  std::vector<int> kept;
  std::vector<int> dropped;
};

class DescriptorHead {
 public:
  virtual ~DescriptorHead() = default;

  /// feature: [H,W,dim]; positions: [N,2] (x,y), differentiable.
  virtual HeadOutput extract(const Var& feature, const Var& positions,
                             OpCounter* counter = nullptr) const = 0;

  /// Keypoints closer than this to any border are dropped.
  virtual double border_margin() const = 0;
  virtual std::string kind() const = 0;
};

namespace detail {

inline std::pair<std::vector<int>, std::vector<int>> split_by_border(
    const Tensor& positions, int h, int w, double margin) {
  std::vector<int> kept, dropped;
  for (int i = 0; i < positions.dim(0); ++i) {
    double x = positions.at(i, 0), y = positions.at(i, 1);
    bool inside = x >= margin && x <= w - 1 - margin && y >= margin &&
                  y <= h - 1 - margin;
    (inside ? kept : dropped).push_back(i);
  }
  return {kept, dropped};
}

inline Var row_as_point(const Var& positions, int i) {
  return reshape(gather_rows(positions, {i}), {2});
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SDDH
// ---------------------------------------------------------------------------

/// Sparse Deformable Descriptor Head: estimates M sample positions on the
/// K x K keypoint patch, bilinearly samples M supporting features, encodes
/// them with a shared 1x1 conv + SELU, and aggregates with convM.
class SddhHead final : public DescriptorHead {
 public:
  SddhHead(ParamStore& store, const SddhConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg),
        off_kxk_(ConvLayer::create(store, "sddh.off_kxk", cfg.k, cfg.dim,
                                   2 * cfg.m, 0, rng, /*zero_init=*/true)),
        off_1x1_(ConvLayer::create(store, "sddh.off_1x1", 1, 2 * cfg.m,
                                   2 * cfg.m, 0, rng, /*zero_init=*/true)),
        phi_(ConvLayer::create(store, "sddh.phi", 1, cfg.dim, cfg.dim, 0, rng)),
        w_m_(store.create("sddh.conv_m.w",
                          init::normal_fanin({cfg.m, cfg.dim, cfg.dim},
                                             cfg.m * cfg.dim, rng))) {
    cfg.validate();
    grid_ = kxk_grid(cfg.k);
  }

  const SddhConfig& config() const { return cfg_; }

  /// p^s = conv1x1(SELU(convKxK(patch))); the KxK conv has no padding, so it
  /// collapses the patch to 1x1. Returns [M,2].
  Var estimate_offsets(const Var& patch, OpCounter* counter = nullptr) const {
    if (patch.value().rank() != 3 || patch.dim(0) != cfg_.k ||
        patch.dim(1) != cfg_.k || patch.dim(2) != cfg_.dim)
      throw std::invalid_argument("estimate_offsets: patch must be KxKxdim");
    if (counter) {
      counter->add(kStageSddhOffsets,
                   static_cast<int64_t>(cfg_.k) * cfg_.k * cfg_.dim * 2 * cfg_.m);
      counter->add(kStageSddhOffsets, static_cast<int64_t>(2 * cfg_.m) * 2 * cfg_.m);
    }
    Var x = selu(off_kxk_(patch));   // [1,1,2M]
    Var o = off_1x1_(x);             // [1,1,2M]
    return reshape(o, {cfg_.m, 2});
  }

  HeadOutput extract(const Var& feature, const Var& positions,
                     OpCounter* counter = nullptr) const override {
    if (feature.value().rank() != 3 || feature.dim(2) != cfg_.dim)
      throw std::invalid_argument("sddh extract: feature must be [H,W,dim]");
    int h = feature.dim(0), w = feature.dim(1);
    HeadOutput out;
    auto [kept, dropped] =
        detail::split_by_border(positions.value(), h, w, border_margin());
    out.kept = kept;
    out.dropped = dropped;
    if (kept.empty()) {
      out.descriptors = Var::constant(Tensor({0, cfg_.dim}));
      return out;
    }
    std::vector<Var> rows;
    rows.reserve(kept.size());
    for (int idx : kept) {
      Var p = detail::row_as_point(positions, idx);
      // Patch gather: data movement, not a counted stage.
      Var patch_pos = add_row_vector(Var::constant(grid_), p);
      Var patch =
          reshape(bilinear_sample(feature, patch_pos), {cfg_.k, cfg_.k, cfg_.dim});
      Var offsets = estimate_offsets(patch, counter);
      Var sample_pos = add_row_vector(offsets, p);
      Var support = bilinear_sample(feature, sample_pos);  // [M,dim]
      if (counter)
        counter->add(kStageSddhSample, 4LL * cfg_.m * cfg_.dim);
      Var encoded = selu(conv2d(reshape(support, {cfg_.m, 1, cfg_.dim}),
                                phi_.w, phi_.b, 1, 0));
      if (counter) {
        counter->add(kStageSddhExtract,
                     static_cast<int64_t>(cfg_.m) * cfg_.dim * cfg_.dim);
        counter->add(kStageSddhExtract,
                     static_cast<int64_t>(cfg_.m) * cfg_.dim * cfg_.dim);
      }
      rows.push_back(conv_m(reshape(encoded, {cfg_.m, cfg_.dim}), w_m_));
    }
    out.descriptors = l2_normalize_rows(stack(rows));
    return out;
  }

  double border_margin() const override { return cfg_.k / 2; }
  std::string kind() const override { return "sddh"; }

  const ConvLayer& offset_kxk() const { return off_kxk_; }
  const ConvLayer& offset_1x1() const { return off_1x1_; }
  const ConvLayer& phi() const { return phi_; }
  const Var& conv_m_weights() const { return w_m_; }
  Var& conv_m_weights() { return w_m_; }

 private:
  SddhConfig cfg_;
  ConvLayer off_kxk_;
  ConvLayer off_1x1_;
  ConvLayer phi_;
  Var w_m_;
  Tensor grid_;
};

// ---------------------------------------------------------------------------
// DMH (dense baseline)
// ---------------------------------------------------------------------------

/// Descriptor Map Head: convKxK(SELU(conv1x1(F))) over the whole feature map,
/// descriptors bilinearly sampled at keypoints and row-normalized.
class DmhHead final : public DescriptorHead {
 public:
  DmhHead(ParamStore& store, int k, int dim, std::mt19937_64& rng)
      : k_(k), dim_(dim),
        c1x1_(ConvLayer::create(store, "dmh.conv1x1", 1, dim, dim, 0, rng)),
        ckxk_(ConvLayer::create(store, "dmh.conv_kxk", k, dim, dim, k / 2, rng)) {
    if (k < 1 || k % 2 == 0)
      throw std::invalid_argument("DmhHead: K must be odd");
  }

  /// Dense [H,W,dim] descriptor map (not normalized).
  Var dense_map(const Var& feature, OpCounter* counter = nullptr) const {
    if (feature.value().rank() != 3 || feature.dim(2) != dim_)
      throw std::invalid_argument("dmh: feature must be [H,W,dim]");
    if (counter) {
      int64_t hw = static_cast<int64_t>(feature.dim(0)) * feature.dim(1);
      counter->add(kStageDmhConv, hw * dim_ * dim_);
      counter->add(kStageDmhConv, hw * k_ * k_ * dim_ * dim_);
    }
    return ckxk_(selu(c1x1_(feature)));
  }

  HeadOutput extract(const Var& feature, const Var& positions,
                     OpCounter* counter = nullptr) const override {
    Var map = dense_map(feature, counter);
    HeadOutput out;
    int n = positions.dim(0);
    out.kept.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.kept[static_cast<size_t>(i)] = i;
    if (counter) counter->add(kStageDmhSample, 4LL * n * dim_);
    out.descriptors = l2_normalize_rows(bilinear_sample(map, positions));
    return out;
  }

  double border_margin() const override { return 0.0; }
  std::string kind() const override { return "dmh"; }

  ConvLayer& conv1x1() { return c1x1_; }
  ConvLayer& conv_kxk() { return ckxk_; }
  const ConvLayer& conv1x1() const { return c1x1_; }
  const ConvLayer& conv_kxk() const { return ckxk_; }
  int kernel() const { return k_; }

 private:
  int k_;
  int dim_;
  ConvLayer c1x1_;
  ConvLayer ckxk_;
};

// ---------------------------------------------------------------------------
// SDH ablation heads (plain sparse conv heads, Table-style variants 1-3)
// ---------------------------------------------------------------------------

class SdhHead final : public DescriptorHead {
 public:
  SdhHead(ParamStore& store, int variant, int dim, std::mt19937_64& rng)
      : variant_(variant), dim_(dim) {
    switch (variant) {
      case 1:
        l1_ = ConvLayer::create(store, "sdh1.conv1", 1, dim, dim, 0, rng);
        l2_ = ConvLayer::create(store, "sdh1.conv2", 1, dim, dim, 0, rng);
        patch_ = 1;
        break;
      case 2:
        l1_ = ConvLayer::create(store, "sdh2.conv1", 3, dim, dim, 0, rng);
        patch_ = 3;
        break;
      case 3:
        l1_ = ConvLayer::create(store, "sdh3.conv1", 3, dim, dim, 0, rng);
        l2_ = ConvLayer::create(store, "sdh3.conv2", 3, dim, dim, 0, rng);
        patch_ = 5;
        break;
      default:
        throw std::invalid_argument("SdhHead: variant must be 1, 2 or 3");
    }
    grid_ = kxk_grid(patch_);
  }

  HeadOutput extract(const Var& feature, const Var& positions,
                     OpCounter* = nullptr) const override {
    int h = feature.dim(0), w = feature.dim(1);
    HeadOutput out;
    auto [kept, dropped] =
        detail::split_by_border(positions.value(), h, w, border_margin());
    out.kept = kept;
    out.dropped = dropped;
    if (kept.empty()) {
      out.descriptors = Var::constant(Tensor({0, dim_}));
      return out;
    }
    std::vector<Var> rows;
    for (int idx : kept) {
      Var p = detail::row_as_point(positions, idx);
      Var pos = add_row_vector(Var::constant(grid_), p);
      Var patch = reshape(bilinear_sample(feature, pos), {patch_, patch_, dim_});
      Var y;
      if (variant_ == 1) {
        y = l2_(selu(l1_(patch)));
      } else if (variant_ == 2) {
        y = l1_(patch);
      } else {
        y = l2_(selu(l1_(patch)));
      }
      rows.push_back(reshape(y, {dim_}));
    }
    out.descriptors = l2_normalize_rows(stack(rows));
    return out;
  }

  double border_margin() const override { return patch_ / 2; }
  std::string kind() const override { return "sdh" + std::to_string(variant_); }

 private:
  int variant_;
  int dim_;
  int patch_ = 1;
  ConvLayer l1_, l2_;
  Tensor grid_;
};

enum class HeadType { kSddh, kSdh1, kSdh2, kSdh3 };

inline std::unique_ptr<DescriptorHead> make_head(HeadType type,
                                                 ParamStore& store,
                                                 const SddhConfig& cfg,
                                                 std::mt19937_64& rng) {
  switch (type) {
    case HeadType::kSddh:
      return std::make_unique<SddhHead>(store, cfg, rng);
    case HeadType::kSdh1:
      return std::make_unique<SdhHead>(store, 1, cfg.dim, rng);
    case HeadType::kSdh2:
      return std::make_unique<SdhHead>(store, 2, cfg.dim, rng);
    case HeadType::kSdh3:
      return std::make_unique<SdhHead>(store, 3, cfg.dim, rng);
  }
  throw std::invalid_argument("make_head: unknown type");
}

// ---------------------------------------------------------------------------
// Descriptor file format
// ---------------------------------------------------------------------------
//
// Binary, little-endian. Layout:
//   magic   8 bytes  "DEFTDSC1"
//   u32     version (1)
//   u8      variant tag ('T','N','L','U')
//   i32     dim, M, K
//   i32     image_w, image_h, pad_x, pad_y   (pre-pad size and applied pad)
//   i64     N (record count)
//   record * N:  f64 x, f64 y, f64 score, f32 desc[dim]

struct DescriptorRecord {
  double x = 0.0, y = 0.0, score = 0.0;
  std::vector<float> desc;
};

struct DescriptorFile {
  char variant = 'U';
  int dim = 0, m = 0, k = 0;
  int image_w = 0, image_h = 0, pad_x = 0, pad_y = 0;
  std::vector<DescriptorRecord> records;
};

namespace detail {

inline constexpr char kDescMagic[8] = {'D', 'E', 'F', 'T', 'D', 'S', 'C', '1'};

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw std::runtime_error("descriptor file: truncated");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void save_descriptors(const std::string& path, const DescriptorFile& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_descriptors: cannot open " + path);
  out.write(detail::kDescMagic, 8);
  detail::write_le<uint32_t>(out, 1);
  detail::write_le<uint8_t>(out, static_cast<uint8_t>(f.variant));
  detail::write_le<int32_t>(out, f.dim);
  detail::write_le<int32_t>(out, f.m);
  detail::write_le<int32_t>(out, f.k);
  detail::write_le<int32_t>(out, f.image_w);
  detail::write_le<int32_t>(out, f.image_h);
  detail::write_le<int32_t>(out, f.pad_x);
  detail::write_le<int32_t>(out, f.pad_y);
  detail::write_le<int64_t>(out, static_cast<int64_t>(f.records.size()));
  for (const auto& r : f.records) {
    if (static_cast<int>(r.desc.size()) != f.dim)
      throw std::invalid_argument("save_descriptors: dim mismatch in record");
    detail::write_le<double>(out, r.x);
    detail::write_le<double>(out, r.y);
    detail::write_le<double>(out, r.score);
    for (float v : r.desc) detail::write_le<float>(out, v);
  }
  if (!out) throw std::runtime_error("save_descriptors: write failed");
}

inline DescriptorFile load_descriptors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_descriptors: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kDescMagic, 8) != 0)
    throw std::runtime_error("load_descriptors: bad magic");
  uint32_t version = detail::read_le<uint32_t>(in);
  if (version != 1)
    throw std::runtime_error("load_descriptors: unsupported version");
  DescriptorFile f;
  f.variant = static_cast<char>(detail::read_le<uint8_t>(in));
  f.dim = detail::read_le<int32_t>(in);
  f.m = detail::read_le<int32_t>(in);
  f.k = detail::read_le<int32_t>(in);
  f.image_w = detail::read_le<int32_t>(in);
  f.image_h = detail::read_le<int32_t>(in);
  f.pad_x = detail::read_le<int32_t>(in);
  f.pad_y = detail::read_le<int32_t>(in);
  int64_t n = detail::read_le<int64_t>(in);
  if (f.dim < 0 || n < 0) throw std::runtime_error("load_descriptors: corrupt header");
  f.records.resize(static_cast<size_t>(n));
  for (auto& r : f.records) {
    r.x = detail::read_le<double>(in);
    r.y = detail::read_le<double>(in);
    r.score = detail::read_le<double>(in);
    r.desc.resize(static_cast<size_t>(f.dim));
    for (int i = 0; i < f.dim; ++i) r.desc[static_cast<size_t>(i)] = detail::read_le<float>(in);
  }
  return f;
}

}  // namespace deft
