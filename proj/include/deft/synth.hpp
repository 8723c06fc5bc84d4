#pragma once

#include <cmath>
#include <random>
#include <stdexcept>

#include "deft/image.hpp"

namespace deft {

/// Bounds of the random homography and photometric jitter for synthetic
/// training pairs. All-zero magnitudes (and unit scale) give the identity.
struct SynthConfig {
  double max_rotation_deg = 25.0;
  double min_scale = 0.8;
  double max_scale = 1.25;
  double max_shear = 0.15;
  double max_perspective = 8e-4;  // |h20|, |h21|
  double max_translation = 6.0;   // pixels
  double brightness = 0.08;
  double contrast = 0.15;
  double noise = 0.02;
  int max_retries = 32;
};

struct ImagePair {
  Image a;
  Image b;
};

// ---------------------------------------------------------------------------
// Procedural textures (training substrate: corners, blobs, gradients)
// ---------------------------------------------------------------------------

/// Deterministic multi-structure texture: gradient background, rotated
/// rectangles, discs, light smoothing, mild noise.
inline Image synth_texture(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Image img(h, w);
  // Bilinear gradient between four random corner colors.
  double corner[4][3];
  for (auto& c : corner)
    for (double& v : c) v = u01(rng);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double fy = static_cast<double>(y) / (h - 1);
      double fx = static_cast<double>(x) / (w - 1);
      for (int c = 0; c < 3; ++c)
        img.data.at(y, x, c) = (1 - fy) * ((1 - fx) * corner[0][c] + fx * corner[1][c]) +
                               fy * ((1 - fx) * corner[2][c] + fx * corner[3][c]);
    }
  // Rotated rectangles.
  int n_rect = 6 + static_cast<int>(u01(rng) * 6);
  for (int r = 0; r < n_rect; ++r) {
    double cx = u01(rng) * w, cy = u01(rng) * h;
    double rw = (0.05 + 0.2 * u01(rng)) * w, rh = (0.05 + 0.2 * u01(rng)) * h;
    double ang = u01(rng) * M_PI;
    double ca = std::cos(ang), sa = std::sin(ang);
    double col[3] = {u01(rng), u01(rng), u01(rng)};
    int y0 = std::max(0, static_cast<int>(cy - rw - rh)), y1 = std::min(h, static_cast<int>(cy + rw + rh) + 1);
    int x0 = std::max(0, static_cast<int>(cx - rw - rh)), x1 = std::min(w, static_cast<int>(cx + rw + rh) + 1);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        double dx = x - cx, dy = y - cy;
        double lx = ca * dx + sa * dy, ly = -sa * dx + ca * dy;
        if (std::abs(lx) < rw / 2 && std::abs(ly) < rh / 2)
          for (int c = 0; c < 3; ++c) img.data.at(y, x, c) = col[c];
      }
  }
  // Discs.
  int n_disc = 4 + static_cast<int>(u01(rng) * 5);
  for (int d = 0; d < n_disc; ++d) {
    double cx = u01(rng) * w, cy = u01(rng) * h;
    double rad = (0.02 + 0.08 * u01(rng)) * std::min(h, w);
    double col[3] = {u01(rng), u01(rng), u01(rng)};
    int y0 = std::max(0, static_cast<int>(cy - rad)), y1 = std::min(h, static_cast<int>(cy + rad) + 1);
    int x0 = std::max(0, static_cast<int>(cx - rad)), x1 = std::min(w, static_cast<int>(cx + rad) + 1);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) < rad * rad)
          for (int c = 0; c < 3; ++c) img.data.at(y, x, c) = col[c];
  }
  // One 3x3 box blur pass to soften aliasing, then mild pixel noise.
  Image blurred(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            s += img.data.at(yy, xx, c);
            ++cnt;
          }
        blurred.data.at(y, x, c) = s / cnt;
      }
  std::normal_distribution<double> nd(0.0, 0.01);
  for (int64_t i = 0; i < blurred.data.size(); ++i)
    blurred.data[i] = std::clamp(blurred.data[i] + nd(rng), 0.0, 1.0);
  return blurred;
}

// ---------------------------------------------------------------------------
// Random homography pairs
// ---------------------------------------------------------------------------

namespace detail {

inline Homography random_homography_about_center(const SynthConfig& cfg, int h,
                                                 int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double ang = u(rng) * cfg.max_rotation_deg * M_PI / 180.0;
  double scale = cfg.min_scale + (cfg.max_scale - cfg.min_scale) *
                                     (0.5 * (u(rng) + 1.0));
  double shear = u(rng) * cfg.max_shear;
  double px = u(rng) * cfg.max_perspective;
  double py = u(rng) * cfg.max_perspective;
  double tx = u(rng) * cfg.max_translation;
  double ty = u(rng) * cfg.max_translation;

  double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  Mat3 center;
  center(0, 2) = -cx;
  center(1, 2) = -cy;
  Mat3 uncenter;
  uncenter(0, 2) = cx + tx;
  uncenter(1, 2) = cy + ty;

  double ca = std::cos(ang), sa = std::sin(ang);
  Mat3 core;
  core(0, 0) = scale * (ca + shear * sa);
  core(0, 1) = scale * (-sa + shear * ca);
  core(1, 0) = scale * sa;
  core(1, 1) = scale * ca;
  core(2, 0) = px;
  core(2, 1) = py;
  return Homography(uncenter.mul(core.mul(center)));
}

inline bool homography_sane(const Homography& h, int img_h, int img_w) {
  // Corners must stay finite and the warped quad must keep a healthy area.
  std::array<Point2, 4> corners{{{0, 0},
                                 {static_cast<double>(img_w - 1), 0},
                                 {static_cast<double>(img_w - 1), static_cast<double>(img_h - 1)},
                                 {0, static_cast<double>(img_h - 1)}}};
  std::array<Point2, 4> warped;
  for (size_t i = 0; i < 4; ++i) {
    try {
      warped[i] = warp_homography(corners[i], h);
    } catch (const std::domain_error&) {
      return false;
    }
    if (std::abs(warped[i].x) > 4.0 * img_w || std::abs(warped[i].y) > 4.0 * img_h)
      return false;
  }
  double area = 0.0;
  for (size_t i = 0; i < 4; ++i) {
    const Point2& p = warped[i];
    const Point2& q = warped[(i + 1) % 4];
    area += p.x * q.y - q.x * p.y;
  }
  area = 0.5 * std::abs(area);
  double base = static_cast<double>(img_w - 1) * (img_h - 1);
  return area > 0.2 * base && area < 5.0 * base;
}

inline Image photometric_jitter(const Image& img, const SynthConfig& cfg,
                                std::mt19937_64& rng) {
  if (cfg.brightness == 0.0 && cfg.contrast == 0.0 && cfg.noise == 0.0)
    return img;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double b = u(rng) * cfg.brightness;
  double c = 1.0 + u(rng) * cfg.contrast;
  std::normal_distribution<double> nd(0.0, cfg.noise);
  Image out = img;
  for (int64_t i = 0; i < out.data.size(); ++i) {
    double noise = cfg.noise > 0.0 ? nd(rng) : 0.0;
    out.data[i] = std::clamp(c * (out.data[i] - 0.5) + 0.5 + b + noise, 0.0, 1.0);
  }
  return out;
}

}  // namespace detail

/// Draws a bounded random homography (resampling degenerate draws), warps the
/// image, applies independent photometric jitter to both sides, and returns
/// the pair with its exact ground truth. Zero magnitudes give an identity
/// pair with byte-identical images.
inline std::pair<ImagePair, Homography> synth_pair(const Image& img,
                                                   const SynthConfig& cfg,
                                                   std::mt19937_64& rng) {
  if (img.height() < 8 || img.width() < 8)
    throw std::invalid_argument("synth_pair: image too small");
  Homography h;
  bool ok = false;
  for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
    h = detail::random_homography_about_center(cfg, img.height(), img.width(), rng);
    ok = detail::homography_sane(h, img.height(), img.width());
  }
  if (!ok) throw std::runtime_error("synth_pair: no sane homography drawn");

  bool identity_h = true;
  for (int i = 0; i < 9; ++i) {
    double expect = (i == 0 || i == 4 || i == 8) ? 1.0 : 0.0;
    if (h.h.m[static_cast<size_t>(i)] != expect) identity_h = false;
  }

  ImagePair pair;
  pair.a = detail::photometric_jitter(img, cfg, rng);
  Image warped = identity_h ? img : warp_image(img, h, img.height(), img.width());
  pair.b = detail::photometric_jitter(warped, cfg, rng);
  return {std::move(pair), h};
}

}  // namespace deft
