#pragma once

#include <random>
#include <stdexcept>
#include <string>

#include "deft/params.hpp"

namespace deft {

enum class Variant : char { kTiny = 'T', kNormal = 'N', kLarge = 'L', kCustom = 'U' };

/// Channel plan of the encoder blocks and the descriptor dimension.
struct NetConfig {
  Variant variant = Variant::kNormal;
  int c1 = 16, c2 = 32, c3 = 64, c4 = 128;
  int dim = 128;

  static NetConfig tiny() { return {Variant::kTiny, 8, 16, 32, 64, 64}; }
  static NetConfig normal() { return {Variant::kNormal, 16, 32, 64, 128, 128}; }
  static NetConfig large() { return {Variant::kLarge, 32, 64, 128, 128, 128}; }
  /// Desk-scale configuration for fast CPU experiments.
  static NetConfig micro() { return {Variant::kCustom, 4, 8, 16, 32, 32}; }

  static NetConfig preset(const std::string& name) {
    if (name == "T" || name == "tiny") return tiny();
    if (name == "N" || name == "normal") return normal();
    if (name == "L" || name == "large") return large();
    if (name == "micro") return micro();
    throw std::invalid_argument("NetConfig: unknown preset " + name);
  }

  char tag() const { return static_cast<char>(variant); }

  void validate() const {
    if (c1 <= 0 || c2 <= 0 || c3 <= 0 || c4 <= 0 || dim <= 0)
      throw std::invalid_argument("NetConfig: channels must be positive");
    if (dim % 4 != 0)
      throw std::invalid_argument("NetConfig: dim must divide by 4 (ublocks)");
  }
};

/// Multi-scale features produced by the four encoder blocks.
struct Pyramid {
  Var f1;  // [H,   W,   c1]
  Var f2;  // [H/2, W/2, c2]
  Var f3;  // [H/8, W/8, c3]
  Var f4;  // [H/32,W/32,c4]
};

/// Encoder (blocks 1-4, deformable in 3-4), multi-scale aggregation, and the
/// score-map head.
class Backbone {
 public:
  Backbone(ParamStore& store, const NetConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg),
        b1c1_(ConvLayer::create(store, "block1.conv1", 3, 3, cfg.c1, 1, rng)),
        b1c2_(ConvLayer::create(store, "block1.conv2", 3, cfg.c1, cfg.c1, 1, rng)),
        b2c1_(ConvLayer::create(store, "block2.conv1", 3, cfg.c1, cfg.c2, 1, rng)),
        b2c2_(ConvLayer::create(store, "block2.conv2", 3, cfg.c2, cfg.c2, 1, rng)),
        b3d1_(DcnLayer::create(store, "block3.dcn1", 3, cfg.c2, cfg.c3, rng)),
        b3d2_(DcnLayer::create(store, "block3.dcn2", 3, cfg.c3, cfg.c3, rng)),
        b3skip_(ConvLayer::create(store, "block3.skip", 1, cfg.c2, cfg.c3, 0, rng)),
        b4d1_(DcnLayer::create(store, "block4.dcn1", 3, cfg.c3, cfg.c4, rng)),
        b4d2_(DcnLayer::create(store, "block4.dcn2", 3, cfg.c4, cfg.c4, rng)),
        b4skip_(ConvLayer::create(store, "block4.skip", 1, cfg.c3, cfg.c4, 0, rng)),
        u1_(ConvLayer::create(store, "ublock1.proj", 1, cfg.c1, cfg.dim / 4, 0, rng)),
        u2_(ConvLayer::create(store, "ublock2.proj", 1, cfg.c2, cfg.dim / 4, 0, rng)),
        u3_(ConvLayer::create(store, "ublock3.proj", 1, cfg.c3, cfg.dim / 4, 0, rng)),
        u4_(ConvLayer::create(store, "ublock4.proj", 1, cfg.c4, cfg.dim / 4, 0, rng)),
        s1_(ConvLayer::create(store, "score.l1", 1, cfg.dim, 8, 0, rng)),
        s2_(ConvLayer::create(store, "score.l2", 3, 8, 4, 1, rng)),
        s3_(ConvLayer::create(store, "score.l3", 3, 4, 4, 1, rng)),
        s4_(ConvLayer::create(store, "score.l4", 3, 4, 1, 1, rng)) {
    cfg.validate();
  }

  const NetConfig& config() const { return cfg_; }

  /// Input must be [H,W,3] with H and W divisible by 32 (the total pooling
  /// factor); anything else is rejected rather than silently cropped.
  Pyramid encode(const Var& image) const {
    if (image.value().rank() != 3 || image.dim(2) != 3)
      throw std::invalid_argument("encode: expects [H,W,3] image");
    int h = image.dim(0), w = image.dim(1);
    if (h % 32 != 0 || w % 32 != 0)
      throw std::invalid_argument("encode: image size must divide by 32, got " +
                                  std::to_string(w) + "x" + std::to_string(h));
    Pyramid p;
    p.f1 = selu(b1c2_(selu(b1c1_(image))));
    p.f2 = selu(b2c2_(selu(b2c1_(avg_pool(p.f1, 2)))));
    p.f3 = residual(avg_pool(p.f2, 4), b3d1_, b3d2_, b3skip_);
    p.f4 = residual(avg_pool(p.f3, 4), b4d1_, b4d2_, b4skip_);
    return p;
  }

  /// Projects every level to dim/4 channels, upsamples to full resolution,
  /// and concatenates into the [H,W,dim] aggregated feature.
  Var aggregate(const Pyramid& p) const {
    int h = p.f1.dim(0), w = p.f1.dim(1);
    Var a1 = u1_(p.f1);
    Var a2 = upsample_bilinear(u2_(p.f2), h, w);
    Var a3 = upsample_bilinear(u3_(p.f3), h, w);
    Var a4 = upsample_bilinear(u4_(p.f4), h, w);
    return concat_channels({a1, a2, a3, a4});
  }

  /// SH3-style head; returns the [H,W] score map, values strictly in (0,1).
  Var score_head(const Var& feature) const {
    Var x = selu(s1_(feature));
    x = selu(s2_(x));
    x = selu(s3_(x));
    Var s = sigmoid(s4_(x));
    return reshape(s, {s.dim(0), s.dim(1)});
  }

  Var forward_scores(const Var& image) const {
    return score_head(aggregate(encode(image)));
  }

 private:
  static Var residual(const Var& x, const DcnLayer& d1, const DcnLayer& d2,
                      const ConvLayer& skip) {
    Var y = d2(selu(d1(x)));
    return selu(add(y, skip(x)));
  }

  NetConfig cfg_;
  ConvLayer b1c1_, b1c2_;
  ConvLayer b2c1_, b2c2_;
  DcnLayer b3d1_, b3d2_;
  ConvLayer b3skip_;
  DcnLayer b4d1_, b4d2_;
  ConvLayer b4skip_;
  ConvLayer u1_, u2_, u3_, u4_;
  ConvLayer s1_, s2_, s3_, s4_;
};

}  // namespace deft
