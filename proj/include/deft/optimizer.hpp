#pragma once

#include <cmath>
#include <vector>

#include "deft/params.hpp"

namespace deft {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (lr < 0) throw std::invalid_argument("AdamConfig: lr must be >= 0");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
      throw std::invalid_argument("AdamConfig: betas must lie in (0,1)");
  }
};

/// Adam with bias correction. step() consumes whatever gradients have been
/// accumulated on the parameters (so gradient accumulation across
/// micro-batches is the plain sum) and leaves zeroing to the caller.
class Adam {
 public:
  explicit Adam(const AdamConfig& cfg = {}) : cfg_(cfg) { cfg.validate(); }

  void step(ParamStore& params) {
    auto& entries = params.entries();
    if (m_.empty()) {
      for (auto& [name, v] : entries) {
        m_.emplace_back(v.value().shape());
        v_.emplace_back(v.value().shape());
      }
    }
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (size_t p = 0; p < entries.size(); ++p) {
      Var& param = entries[p].second;
      if (param.node->grad.size() == 0) continue;
      Tensor& w = param.mutable_value();
      const Tensor& g = param.grad();
      Tensor& m = m_[p];
      Tensor& v = v_[p];
      for (int64_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace deft
