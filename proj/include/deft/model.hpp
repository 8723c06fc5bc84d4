#pragma once

#include <memory>
#include <random>

#include "deft/backbone.hpp"
#include "deft/descriptors.hpp"
#include "deft/dkd.hpp"
#include "deft/image.hpp"

namespace deft {

struct ModelConfig {
  NetConfig net = NetConfig::normal();
  int sddh_m = 16;
  int sddh_k = 3;
  HeadType head_type = HeadType::kSddh;
  uint64_t seed = 0;

  SddhConfig sddh() const { return SddhConfig{sddh_k, sddh_m, net.dim}; }
};

inline char head_tag(HeadType t) {
  switch (t) {
    case HeadType::kSddh: return 'D';
    case HeadType::kSdh1: return '1';
    case HeadType::kSdh2: return '2';
    case HeadType::kSdh3: return '3';
  }
  return '?';
}

inline HeadType head_from_tag(char c) {
  switch (c) {
    case 'D': return HeadType::kSddh;
    case '1': return HeadType::kSdh1;
    case '2': return HeadType::kSdh2;
    case '3': return HeadType::kSdh3;
  }
  throw std::invalid_argument("head_from_tag: unknown tag");
}

/// Backbone + descriptor head with one parameter registry; weights are
/// fan-in normal from the configured seed (offset predictors zero).
class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    std::mt19937_64 rng(cfg.seed);
    backbone_ = std::make_unique<Backbone>(store_, cfg.net, rng);
    head_ = make_head(cfg.head_type, store_, cfg.sddh(), rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  Backbone& backbone() { return *backbone_; }
  const Backbone& backbone() const { return *backbone_; }
  DescriptorHead& head() { return *head_; }
  const DescriptorHead& head() const { return *head_; }

  /// Score map and aggregated feature of one image.
  struct Forward {
    Var scores;   // [H,W]
    Var feature;  // [H,W,dim]
  };

  Forward forward(const Var& image) const {
    Forward f;
    Var agg = backbone_->aggregate(backbone_->encode(image));
    f.scores = backbone_->score_head(agg);
    f.feature = agg;
    return f;
  }

  static Var image_var(const Image& img) { return Var::constant(img.data); }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<DescriptorHead> head_;
};

}  // namespace deft
