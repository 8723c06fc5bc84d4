#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "deft/geometry.hpp"
#include "deft/numerics.hpp"

namespace deft {

struct DetectionConfig {
  int radius = 2;                // NMS radius; window = 2*radius+1
  double score_threshold = 0.2;  // 0.2 HPatches-style, 0.1 pose-style
  int top_k = 5000;              // 0 disables the cap
  double t_det = 0.1;            // softargmax temperature

  int window() const { return 2 * radius + 1; }

  void validate() const {
    if (radius < 1) throw std::invalid_argument("DetectionConfig: radius >= 1");
    if (t_det <= 0.0) throw std::invalid_argument("DetectionConfig: t_det > 0");
    if (top_k < 0) throw std::invalid_argument("DetectionConfig: top_k >= 0");
  }
};

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;
};

/// Selection result plus the differentiable refined positions. `pixels` are
/// the NMS cells the keypoints originate from (x,y integer pairs).
struct DetectedKeypoints {
  std::vector<std::pair<int, int>> pixels;
  Var positions;  // [N,2], pixel + softargmax offset

  size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }
};

/// Pixel-level selection: strict NMS maxima above the threshold, at least
/// window/2 pixels from every border, top_k by score with raster-order ties.
inline std::vector<std::pair<int, int>> select_pixels(const Tensor& s,
                                                      const DetectionConfig& cfg) {
  cfg.validate();
  if (s.rank() != 2) throw std::invalid_argument("select_pixels: [H,W] map");
  int h = s.dim(0), w = s.dim(1);
  int margin = cfg.window() / 2;
  Tensor mask = nms(s, cfg.radius);
  struct Cand {
    double score;
    int y, x;
  };
  std::vector<Cand> cands;
  for (int y = margin; y < h - margin; ++y)
    for (int x = margin; x < w - margin; ++x)
      if (mask.at(y, x) > 0.5 && s.at(y, x) > cfg.score_threshold)
        cands.push_back({s.at(y, x), y, x});
  std::sort(cands.begin(), cands.end(), [w](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.y * w + a.x < b.y * w + b.x;
  });
  if (cfg.top_k > 0 && static_cast<int>(cands.size()) > cfg.top_k)
    cands.resize(static_cast<size_t>(cfg.top_k));
  std::vector<std::pair<int, int>> out;
  out.reserve(cands.size());
  for (const Cand& c : cands) out.emplace_back(c.x, c.y);
  return out;
}

/// Softargmax refinement of given cells on a (possibly tracked) score map.
/// Positions are differentiable w.r.t. the map.
inline DetectedKeypoints refine_keypoints(
    const Var& score_map, const std::vector<std::pair<int, int>>& pixels,
    const DetectionConfig& cfg) {
  DetectedKeypoints out;
  out.pixels = pixels;
  if (pixels.empty()) {
    out.positions = Var::constant(Tensor({0, 2}));
    return out;
  }
  int w = cfg.window();
  std::vector<Var> rows;
  rows.reserve(pixels.size());
  for (auto [px, py] : pixels) {
    Var patch = extract_patch(score_map, py, px, w);
    Var offset = softargmax(patch, cfg.t_det);
    Tensor base({2});
    base[0] = px;
    base[1] = py;
    rows.push_back(add(offset, Var::constant(std::move(base))));
  }
  out.positions = stack(rows);
  return out;
}

/// NMS + threshold + top_k + subpixel refinement. Scores are the raw map
/// values at the originating cells.
inline std::vector<Keypoint> detect(const Tensor& s, const DetectionConfig& cfg) {
  auto pixels = select_pixels(s, cfg);
  DetectedKeypoints d = refine_keypoints(Var::constant(s), pixels, cfg);
  std::vector<Keypoint> out;
  out.reserve(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) {
    Keypoint kp;
    kp.x = d.positions.value().at(static_cast<int>(i), 0);
    kp.y = d.positions.value().at(static_cast<int>(i), 1);
    kp.score = s.at(pixels[i].second, pixels[i].first);
    out.push_back(kp);
  }
  return out;
}

/// W x W score patch centered on the integer pixel of p (nearest cell).
/// Keypoints whose window crosses the border are rejected; detect() never
/// produces them.
inline Tensor sample_score_patch(const Tensor& s, const Point2& p, int w) {
  if (w % 2 == 0) throw std::invalid_argument("sample_score_patch: even window");
  int cx = static_cast<int>(std::llround(p.x));
  int cy = static_cast<int>(std::llround(p.y));
  Var patch = extract_patch(Var::constant(s), cy, cx, w);  // throws on border
  return patch.value();
}

}  // namespace deft
