#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "deft/tensor.hpp"

namespace deft {

/// Pixel coordinate convention used everywhere: x grows right, y grows down,
/// origin at the center of the top-left pixel.
struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(const Point2& a, const Point2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

struct Mat3 {
  // Row-major.
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double& operator()(int r, int c) { return m[static_cast<size_t>(r) * 3 + c]; }
  double operator()(int r, int c) const { return m[static_cast<size_t>(r) * 3 + c]; }

  static Mat3 identity() { return Mat3{}; }

  Vec3 apply(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 mul(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
        r(i, j) = s;
      }
    return r;
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) -
           m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  Mat3 inverse() const {
    double d = det();
    if (std::abs(d) < 1e-15) throw std::domain_error("Mat3: singular");
    Mat3 r;
    r(0, 0) = (m[4] * m[8] - m[5] * m[7]) / d;
    r(0, 1) = (m[2] * m[7] - m[1] * m[8]) / d;
    r(0, 2) = (m[1] * m[5] - m[2] * m[4]) / d;
    r(1, 0) = (m[5] * m[6] - m[3] * m[8]) / d;
    r(1, 1) = (m[0] * m[8] - m[2] * m[6]) / d;
    r(1, 2) = (m[2] * m[3] - m[0] * m[5]) / d;
    r(2, 0) = (m[3] * m[7] - m[4] * m[6]) / d;
    r(2, 1) = (m[1] * m[6] - m[0] * m[7]) / d;
    r(2, 2) = (m[0] * m[4] - m[1] * m[3]) / d;
    return r;
  }
};

// ---------------------------------------------------------------------------
// Transform models
// ---------------------------------------------------------------------------

/// x' = A x + b.
struct AffineMap {
  std::array<double, 4> a{1, 0, 0, 1};  // row-major 2x2
  std::array<double, 2> b{0, 0};
};

inline Point2 affine_transform(const Point2& p, const AffineMap& m) {
  return {m.a[0] * p.x + m.a[1] * p.y + m.b[0],
          m.a[2] * p.x + m.a[3] * p.y + m.b[1]};
}

/// Per-position pixel displacements: x' = x + off[i].
struct OffsetField {
  std::vector<Point2> offsets;
};

inline Point2 deformable_transform(const Point2& p, const OffsetField& off,
                                   size_t i) {
  if (i >= off.offsets.size())
    throw std::out_of_range("deformable_transform: offset index");
  return {p.x + off.offsets[i].x, p.y + off.offsets[i].y};
}

/// 3x3 projective map, kept normalized so H(2,2) = 1.
struct Homography {
  Mat3 h;

  Homography() = default;
  explicit Homography(const Mat3& m) : h(m) { normalize(); }

  void normalize() {
    double w = h(2, 2);
    if (std::abs(w) < 1e-15)
      throw std::domain_error("Homography: H[2][2] is zero");
    for (double& v : h.m) v /= w;
  }

  Homography inverse() const { return Homography(h.inverse()); }

  static Homography identity() { return Homography(); }

  static Homography translation(double tx, double ty) {
    Mat3 m;
    m(0, 2) = tx;
    m(1, 2) = ty;
    return Homography(m);
  }

  Homography compose(const Homography& o) const {
    // (this o o): applies o first.
    return Homography(h.mul(o.h));
  }
};

inline Point2 warp_homography(const Point2& p, const Homography& hh) {
  Vec3 q = hh.h.apply({p.x, p.y, 1.0});
  if (std::abs(q.z) < 1e-12)
    throw std::domain_error("warp_homography: point maps to infinity");
  return {q.x / q.z, q.y / q.z};
}

// ---------------------------------------------------------------------------
// Perspective model
// ---------------------------------------------------------------------------

/// Pinhole projection of a 3D camera-frame point.
inline Point2 project(const Vec3& p, const Mat3& k) {
  if (p.z <= 0.0) throw std::domain_error("project: non-positive depth");
  Vec3 q = k.apply(p);
  return {q.x / q.z, q.y / q.z};
}

/// Two-view relation: X_B = R_AB X_A + t_AB with per-image intrinsics and
/// dense positive depth maps (Tensor [H,W], <= 0 marks invalid).
struct RelativePose {
  Mat3 r_ab;
  Vec3 t_ab;
  Mat3 k_a;
  Mat3 k_b;
  Tensor depth_a;  // [H,W]
  Tensor depth_b;

  RelativePose inverse() const {
    RelativePose inv;
    inv.r_ab = r_ab.transposed();
    Vec3 rt = inv.r_ab.apply(t_ab);
    inv.t_ab = {-rt.x, -rt.y, -rt.z};
    inv.k_a = k_b;
    inv.k_b = k_a;
    inv.depth_a = depth_b;
    inv.depth_b = depth_a;
    return inv;
  }
};

/// Bilinear depth lookup; invalid when the 2x2 footprint leaves the map or
/// touches a non-positive depth (matches the descriptor sampler's footprint).
inline std::optional<double> sample_depth(const Tensor& depth, const Point2& p) {
  if (depth.rank() != 2) throw std::invalid_argument("sample_depth: rank");
  int h = depth.dim(0), w = depth.dim(1);
  int x0 = static_cast<int>(std::floor(p.x));
  int y0 = static_cast<int>(std::floor(p.y));
  if (x0 < 0 || y0 < 0 || x0 + 1 >= w || y0 + 1 >= h) return std::nullopt;
  double d00 = depth.at(y0, x0), d10 = depth.at(y0, x0 + 1);
  double d01 = depth.at(y0 + 1, x0), d11 = depth.at(y0 + 1, x0 + 1);
  if (d00 <= 0.0 || d10 <= 0.0 || d01 <= 0.0 || d11 <= 0.0) return std::nullopt;
  double fx = p.x - x0, fy = p.y - y0;
  return (1 - fy) * ((1 - fx) * d00 + fx * d10) +
         fy * ((1 - fx) * d01 + fx * d11);
}

/// p_AB = pi(d_A R_AB pi^(-1)(p) + t_AB); "no correspondence" (nullopt) when
/// the depth is invalid at p or the transformed point falls behind image B.
inline std::optional<Point2> warp_perspective(const Point2& p,
                                              const RelativePose& pose) {
  auto d = sample_depth(pose.depth_a, p);
  if (!d) return std::nullopt;
  Vec3 ray = pose.k_a.inverse().apply({p.x, p.y, 1.0});
  Vec3 xa{*d * ray.x, *d * ray.y, *d * ray.z};
  Vec3 xb = pose.r_ab.apply(xa);
  xb.x += pose.t_ab.x;
  xb.y += pose.t_ab.y;
  xb.z += pose.t_ab.z;
  if (xb.z <= 0.0) return std::nullopt;
  return project(xb, pose.k_b);
}

// ---------------------------------------------------------------------------
// Ground-truth correspondences
// ---------------------------------------------------------------------------

/// A bidirectional point map between two images. Either side may report "no
/// correspondence" (invalid depth, behind camera) as nullopt.
struct Warp {
  std::function<std::optional<Point2>(const Point2&)> forward;
  std::function<std::optional<Point2>(const Point2&)> backward;

  static Warp from_homography(const Homography& h) {
    Homography inv = h.inverse();
    return {[h](const Point2& p) -> std::optional<Point2> {
              return warp_homography(p, h);
            },
            [inv](const Point2& p) -> std::optional<Point2> {
              return warp_homography(p, inv);
            }};
  }

  static Warp from_pose(const RelativePose& pose) {
    RelativePose inv = pose.inverse();
    return {[pose](const Point2& p) { return warp_perspective(p, pose); },
            [inv](const Point2& p) { return warp_perspective(p, inv); }};
  }

  static Warp identity() {
    auto id = [](const Point2& p) -> std::optional<Point2> { return p; };
    return {id, id};
  }
};

/// One-to-one mutual matches; distances are the symmetric mean reprojection
/// residual and every stored distance is strictly below th_gt.
struct CorrespondenceSet {
  std::vector<std::pair<int, int>> pairs;
  std::vector<double> distances;

  size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

namespace detail {

/// Index of the nearest target to q; ties resolved to the lower index.
inline int nearest_index(const Point2& q, const std::vector<Point2>& pts,
                         double* dist_out) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < pts.size(); ++i) {
    double d = distance(q, pts[i]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  if (dist_out) *dist_out = best_d;
  return best;
}

}  // namespace detail

/// Mutual-nearest matching under a bidirectional warp with a strict th_gt
/// pixel gate applied in both directions.
inline CorrespondenceSet gt_correspondences(const std::vector<Point2>& pts_a,
                                            const std::vector<Point2>& pts_b,
                                            const Warp& warp, double th_gt) {
  int na = static_cast<int>(pts_a.size());
  int nb = static_cast<int>(pts_b.size());
  std::vector<int> a_to_b(static_cast<size_t>(na), -1);
  std::vector<int> b_to_a(static_cast<size_t>(nb), -1);
  std::vector<double> d_ab(static_cast<size_t>(na), 0.0);
  std::vector<double> d_ba(static_cast<size_t>(nb), 0.0);

  for (int i = 0; i < na; ++i) {
    auto q = warp.forward(pts_a[static_cast<size_t>(i)]);
    if (!q || pts_b.empty()) continue;
    double d;
    int j = detail::nearest_index(*q, pts_b, &d);
    if (d < th_gt) {
      a_to_b[static_cast<size_t>(i)] = j;
      d_ab[static_cast<size_t>(i)] = d;
    }
  }
  for (int j = 0; j < nb; ++j) {
    auto q = warp.backward(pts_b[static_cast<size_t>(j)]);
    if (!q || pts_a.empty()) continue;
    double d;
    int i = detail::nearest_index(*q, pts_a, &d);
    if (d < th_gt) {
      b_to_a[static_cast<size_t>(j)] = i;
      d_ba[static_cast<size_t>(j)] = d;
    }
  }

  CorrespondenceSet out;
  for (int i = 0; i < na; ++i) {
    int j = a_to_b[static_cast<size_t>(i)];
    if (j >= 0 && b_to_a[static_cast<size_t>(j)] == i) {
      out.pairs.emplace_back(i, j);
      out.distances.push_back(
          0.5 * (d_ab[static_cast<size_t>(i)] + d_ba[static_cast<size_t>(j)]));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Homography text format (HPatches "H_1_N": 3 rows x 3 decimals, row-major)
// ---------------------------------------------------------------------------

inline Homography load_homography(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_homography: cannot open " + path);
  Mat3 m;
  for (int i = 0; i < 9; ++i)
    if (!(in >> m.m[static_cast<size_t>(i)]))
      throw std::runtime_error("load_homography: malformed file " + path);
  return Homography(m);
}

inline void save_homography(const std::string& path, const Homography& h) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_homography: cannot open " + path);
  out.precision(17);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out << h.h(r, c) << (c < 2 ? " " : "");
    out << "\n";
  }
}

}  // namespace deft
