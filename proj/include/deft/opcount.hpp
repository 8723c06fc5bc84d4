#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace deft {

// Pipeline stage names, matching the columns of the DMH/SDDH comparison.
inline constexpr const char* kStageDmhConv = "convolutions";
inline constexpr const char* kStageDmhSample = "descriptor sample";
inline constexpr const char* kStageSddhOffsets = "sample position estimation";
inline constexpr const char* kStageSddhSample = "feature sample";
inline constexpr const char* kStageSddhExtract = "descriptor extraction";

/// Per-invocation multiply-add accumulator, attributed by pipeline stage.
///
/// Accounting convention (matches the analytic cost model):
///  - one multiply-accumulate counts as one operation;
///  - convolutions count dense taps (padding reads included), biases and
///    activations excluded;
///  - a bilinear sample counts 4 multiply-adds per channel;
///  - keypoint patch gathering is data movement and is not counted.
struct OpCounter {
  std::map<std::string, int64_t> stages;

  void add(const std::string& stage, int64_t macs) { stages[stage] += macs; }

  int64_t total() const {
    int64_t t = 0;
    for (const auto& [k, v] : stages) t += v;
    return t;
  }

  int64_t at(const std::string& stage) const {
    auto it = stages.find(stage);
    return it == stages.end() ? 0 : it->second;
  }
};

}  // namespace deft
