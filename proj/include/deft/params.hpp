#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "deft/autodiff.hpp"
#include "deft/numerics.hpp"
#include "deft/tensor.hpp"

namespace deft {

/// Insertion-ordered registry of named trainable tensors. The order is the
/// serialization and optimizer-iteration order, so it must be deterministic.
class ParamStore {
 public:
  Var create(const std::string& name, Tensor init) {
    for (const auto& [n, v] : entries_)
      if (n == name) throw std::logic_error("ParamStore: duplicate " + name);
    Var v = Var::leaf(std::move(init), /*requires_grad=*/true);
    entries_.emplace_back(name, v);
    return v;
  }

  Var& get(const std::string& name) {
    for (auto& [n, v] : entries_)
      if (n == name) return v;
    throw std::out_of_range("ParamStore: missing " + name);
  }

  const std::vector<std::pair<std::string, Var>>& entries() const {
    return entries_;
  }
  std::vector<std::pair<std::string, Var>>& entries() { return entries_; }

  void zero_grads() {
    for (auto& [n, v] : entries_) v.zero_grad();
  }

  int64_t total_size() const {
    int64_t s = 0;
    for (const auto& [n, v] : entries_) s += v.value().size();
    return s;
  }

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

namespace init {

/// Fan-in-scaled normal initialization, N(0, 1/fan_in).
inline Tensor normal_fanin(std::vector<int> shape, int fan_in,
                           std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / fan_in));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace init

/// Conv2d with owned weights. pad/stride fixed at construction.
struct ConvLayer {
  Var w;  // [K,K,Cin,Cout]
  Var b;  // [Cout]
  int pad = 0;
  int stride = 1;

  static ConvLayer create(ParamStore& store, const std::string& name, int k,
                          int cin, int cout, int pad, std::mt19937_64& rng,
                          bool zero_init = false) {
    ConvLayer l;
    l.pad = pad;
    Tensor wt = zero_init ? Tensor({k, k, cin, cout})
                          : init::normal_fanin({k, k, cin, cout}, k * k * cin, rng);
    l.w = store.create(name + ".w", std::move(wt));
    l.b = store.create(name + ".b", Tensor({cout}));
    return l;
  }

  Var operator()(const Var& x) const { return conv2d(x, w, b, stride, pad); }

  int kernel() const { return w.dim(0); }
  int cin() const { return w.dim(2); }
  int cout() const { return w.dim(3); }
};

/// 3x3 deformable convolution whose per-pixel offsets come from a plain,
/// zero-initialized 3x3 conv; at initialization it reduces to vanilla conv.
struct DcnLayer {
  Var w;  // [K,K,Cin,Cout]
  Var b;
  ConvLayer offset_pred;  // Cin -> 2*K*K, zero-init

  static DcnLayer create(ParamStore& store, const std::string& name, int k,
                         int cin, int cout, std::mt19937_64& rng) {
    DcnLayer l;
    l.w = store.create(name + ".w",
                       init::normal_fanin({k, k, cin, cout}, k * k * cin, rng));
    l.b = store.create(name + ".b", Tensor({cout}));
    l.offset_pred = ConvLayer::create(store, name + ".offset", 3, cin,
                                      2 * k * k, 1, rng, /*zero_init=*/true);
    return l;
  }

  Var operator()(const Var& x) const {
    int k = w.dim(0);
    int h = x.dim(0), ww = x.dim(1);
    Var off = reshape(offset_pred(x), {h, ww, k * k, 2});
    return dcn_conv(x, w, b, off);
  }
};

}  // namespace deft
