#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "deft/geometry.hpp"
#include "deft/tensor.hpp"

namespace deft {

/// Mutual nearest-neighbor matches with their similarities.
struct MatchSet {
  std::vector<std::pair<int, int>> pairs;
  std::vector<double> similarity;

  size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

/// Mutual nearest neighbor matching by inner-product similarity; ties go to
/// the lower index.
inline MatchSet mnn_match(const Tensor& desc_a, const Tensor& desc_b) {
  if (desc_a.rank() != 2 || desc_b.rank() != 2 || desc_a.dim(1) != desc_b.dim(1))
    throw std::invalid_argument("mnn_match: descriptor shape mismatch");
  int na = desc_a.dim(0), nb = desc_b.dim(0), d = desc_a.dim(1);
  MatchSet out;
  if (na == 0 || nb == 0) return out;

  std::vector<int> best_b(static_cast<size_t>(na), -1);
  std::vector<double> best_b_sim(static_cast<size_t>(na),
                                 -std::numeric_limits<double>::infinity());
  std::vector<int> best_a(static_cast<size_t>(nb), -1);
  std::vector<double> best_a_sim(static_cast<size_t>(nb),
                                 -std::numeric_limits<double>::infinity());
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += desc_a.at(i, k) * desc_b.at(j, k);
      if (s > best_b_sim[static_cast<size_t>(i)]) {
        best_b_sim[static_cast<size_t>(i)] = s;
        best_b[static_cast<size_t>(i)] = j;
      }
      if (s > best_a_sim[static_cast<size_t>(j)]) {
        best_a_sim[static_cast<size_t>(j)] = s;
        best_a[static_cast<size_t>(j)] = i;
      }
    }
  for (int i = 0; i < na; ++i) {
    int j = best_b[static_cast<size_t>(i)];
    if (j >= 0 && best_a[static_cast<size_t>(j)] == i) {
      out.pairs.emplace_back(i, j);
      out.similarity.push_back(best_b_sim[static_cast<size_t>(i)]);
    }
  }
  return out;
}

/// Fraction of putative matches with reprojection error strictly below th.
struct MmaResult {
  double value = 0.0;
  int correct = 0;
  int putative = 0;
  bool valid = false;  // false when there were no matches
};

inline MmaResult mma(const MatchSet& m, const std::vector<Point2>& kps_a,
                     const std::vector<Point2>& kps_b, const Warp& warp,
                     double th = 3.0) {
  MmaResult r;
  r.putative = static_cast<int>(m.size());
  if (m.empty()) return r;
  for (auto [i, j] : m.pairs) {
    auto w = warp.forward(kps_a[static_cast<size_t>(i)]);
    if (w && distance(*w, kps_b[static_cast<size_t>(j)]) < th) ++r.correct;
  }
  r.value = static_cast<double>(r.correct) / r.putative;
  r.valid = true;
  return r;
}

// ---------------------------------------------------------------------------
// Homography estimation (normalized DLT inside RANSAC)
// ---------------------------------------------------------------------------

struct RansacParams {
  uint64_t seed = 42;
  double inlier_threshold = 3.0;
  int iterations = 2000;
};

namespace detail {

struct Normalization {
  double cx = 0, cy = 0, s = 1;

  Point2 apply(const Point2& p) const { return {(p.x - cx) * s, (p.y - cy) * s}; }

  Mat3 matrix() const {
    Mat3 t;
    t(0, 0) = s;
    t(1, 1) = s;
    t(0, 2) = -cx * s;
    t(1, 2) = -cy * s;
    return t;
  }
};

inline Normalization normalize_points(const std::vector<Point2>& pts) {
  Normalization n;
  for (const Point2& p : pts) {
    n.cx += p.x;
    n.cy += p.y;
  }
  n.cx /= static_cast<double>(pts.size());
  n.cy /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const Point2& p : pts) mean_dist += std::hypot(p.x - n.cx, p.y - n.cy);
  mean_dist /= static_cast<double>(pts.size());
  n.s = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
  return n;
}

/// Direct linear transform on >= 4 correspondences; nullopt when the system
/// is degenerate.
inline std::optional<Homography> dlt(const std::vector<Point2>& a,
                                     const std::vector<Point2>& b) {
  size_t n = a.size();
  if (n < 4) return std::nullopt;
  Normalization na = normalize_points(a), nb = normalize_points(b);
  Eigen::MatrixXd sys(2 * n, 9);
  for (size_t i = 0; i < n; ++i) {
    Point2 p = na.apply(a[i]), q = nb.apply(b[i]);
    sys.row(2 * i) << -p.x, -p.y, -1, 0, 0, 0, q.x * p.x, q.x * p.y, q.x;
    sys.row(2 * i + 1) << 0, 0, 0, -p.x, -p.y, -1, q.y * p.x, q.y * p.y, q.y;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(sys, Eigen::ComputeFullV);
  // Rank deficiency beyond the homography's 1D nullspace means degeneracy
  // (e.g. collinear points).
  const auto& sv = svd.singularValues();
  if (sv(7) < 1e-9 * sv(0)) return std::nullopt;
  Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 hn;
  for (int i = 0; i < 9; ++i) hn.m[static_cast<size_t>(i)] = h(i);
  if (std::abs(hn(2, 2)) < 1e-12) return std::nullopt;
  // Denormalize: H = Tb^-1 Hn Ta.
  Mat3 full = nb.matrix().inverse().mul(hn.mul(na.matrix()));
  if (std::abs(full(2, 2)) < 1e-12) return std::nullopt;
  Homography out(full);
  if (std::abs(out.h.det()) < 1e-12) return std::nullopt;
  return out;
}

inline bool any_three_collinear(const std::array<Point2, 4>& p) {
  for (int skip = 0; skip < 4; ++skip) {
    std::array<Point2, 3> t;
    int k = 0;
    for (int i = 0; i < 4; ++i)
      if (i != skip) t[static_cast<size_t>(k++)] = p[static_cast<size_t>(i)];
    double area = (t[1].x - t[0].x) * (t[2].y - t[0].y) -
                  (t[2].x - t[0].x) * (t[1].y - t[0].y);
    if (std::abs(area) < 1e-9) return true;
  }
  return false;
}

}  // namespace detail

/// RANSAC + normalized DLT + inlier refit. Deterministic for a fixed seed.
/// Fewer than 4 matches or a degenerate configuration yields nullopt (the
/// estimation-failed sentinel; MHA scores it incorrect).
inline std::optional<Homography> estimate_homography_points(
    const std::vector<Point2>& pa, const std::vector<Point2>& pb,
    const RansacParams& params = {}) {
  if (pa.size() != pb.size()) throw std::invalid_argument("estimate_homography");
  size_t n = pa.size();
  if (n < 4) return std::nullopt;

  std::mt19937_64 rng(params.seed);
  std::uniform_int_distribution<size_t> pick(0, n - 1);
  std::vector<char> best_inliers;
  int best_count = -1;

  for (int iter = 0; iter < params.iterations; ++iter) {
    std::array<size_t, 4> idx;
    // Four distinct indices.
    for (int i = 0; i < 4; ++i) {
      bool fresh = false;
      while (!fresh) {
        idx[static_cast<size_t>(i)] = pick(rng);
        fresh = true;
        for (int j = 0; j < i; ++j)
          if (idx[static_cast<size_t>(j)] == idx[static_cast<size_t>(i)]) fresh = false;
      }
    }
    std::array<Point2, 4> sa, sb;
    for (int i = 0; i < 4; ++i) {
      sa[static_cast<size_t>(i)] = pa[idx[static_cast<size_t>(i)]];
      sb[static_cast<size_t>(i)] = pb[idx[static_cast<size_t>(i)]];
    }
    if (detail::any_three_collinear(sa) || detail::any_three_collinear(sb))
      continue;
    auto model = detail::dlt({sa.begin(), sa.end()}, {sb.begin(), sb.end()});
    if (!model) continue;

    std::vector<char> inliers(n, 0);
    int count = 0;
    for (size_t i = 0; i < n; ++i) {
      Point2 proj;
      try {
        proj = warp_homography(pa[i], *model);
      } catch (const std::domain_error&) {
        continue;
      }
      if (distance(proj, pb[i]) < params.inlier_threshold) {
        inliers[i] = 1;
        ++count;
      }
    }
    if (count > best_count) {
      best_count = count;
      best_inliers = inliers;
    }
  }

  if (best_count < 4) return std::nullopt;
  std::vector<Point2> ia, ib;
  for (size_t i = 0; i < n; ++i)
    if (best_inliers[i]) {
      ia.push_back(pa[i]);
      ib.push_back(pb[i]);
    }
  return detail::dlt(ia, ib);
}

inline std::optional<Homography> estimate_homography(
    const MatchSet& m, const std::vector<Point2>& kps_a,
    const std::vector<Point2>& kps_b, const RansacParams& params = {}) {
  std::vector<Point2> pa, pb;
  for (auto [i, j] : m.pairs) {
    pa.push_back(kps_a[static_cast<size_t>(i)]);
    pb.push_back(kps_b[static_cast<size_t>(j)]);
  }
  return estimate_homography_points(pa, pb, params);
}

// ---------------------------------------------------------------------------
// Homography accuracy / matching score / repeatability
// ---------------------------------------------------------------------------

/// Mean displacement of the four image corners between the two warps.
inline double mean_corner_error(const Homography& h_est, const Homography& h_gt,
                                int width, int height) {
  std::array<Point2, 4> corners{{{0.0, 0.0},
                                 {static_cast<double>(width - 1), 0.0},
                                 {static_cast<double>(width - 1),
                                  static_cast<double>(height - 1)},
                                 {0.0, static_cast<double>(height - 1)}}};
  double err = 0.0;
  for (const Point2& c : corners)
    err += distance(warp_homography(c, h_est), warp_homography(c, h_gt));
  return err / 4.0;
}

/// A pair is MHA-correct when the mean corner displacement is below th; an
/// estimation failure counts as incorrect.
inline bool mha_correct(const std::optional<Homography>& h_est,
                        const Homography& h_gt, int width, int height,
                        double th = 3.0) {
  if (!h_est) return false;
  try {
    return mean_corner_error(*h_est, h_gt, width, height) < th;
  } catch (const std::domain_error&) {
    return false;  // corner at infinity
  }
}

struct ImageSize {
  int width = 0;
  int height = 0;

  bool contains(const Point2& p) const {
    return p.x >= 0 && p.x <= width - 1 && p.y >= 0 && p.y <= height - 1;
  }
};

namespace detail {

inline int count_covisible(const std::vector<Point2>& kps,
                           const std::function<std::optional<Point2>(const Point2&)>& map,
                           const ImageSize& other) {
  int n = 0;
  for (const Point2& p : kps) {
    auto q = map(p);
    if (q && other.contains(*q)) ++n;
  }
  return n;
}

}  // namespace detail

/// Correct matches over the co-visible keypoint count min(|A_vis|, |B_vis|).
struct MatchingScoreResult {
  double value = 0.0;
  int correct = 0;
  int covisible_a = 0;
  int covisible_b = 0;
  bool valid = false;
};

inline MatchingScoreResult matching_score(const MatchSet& m,
                                          const std::vector<Point2>& kps_a,
                                          const std::vector<Point2>& kps_b,
                                          const Warp& warp, const ImageSize& size_a,
                                          const ImageSize& size_b, double th = 3.0) {
  MatchingScoreResult r;
  r.covisible_a = detail::count_covisible(kps_a, warp.forward, size_b);
  r.covisible_b = detail::count_covisible(kps_b, warp.backward, size_a);
  int denom = std::min(r.covisible_a, r.covisible_b);
  for (auto [i, j] : m.pairs) {
    auto w = warp.forward(kps_a[static_cast<size_t>(i)]);
    if (w && distance(*w, kps_b[static_cast<size_t>(j)]) < th) ++r.correct;
  }
  if (denom == 0) return r;
  r.value = static_cast<double>(r.correct) / denom;
  r.valid = true;
  return r;
}

/// Symmetric repeatability: the fraction of co-visible keypoints with a
/// keypoint of the other image within th after warping, averaged over the
/// two directions.
inline double repeatability(const std::vector<Point2>& kps_a,
                            const std::vector<Point2>& kps_b, const Warp& warp,
                            const ImageSize& size_a, const ImageSize& size_b,
                            double th = 3.0) {
  auto directional = [th](const std::vector<Point2>& from,
                          const std::vector<Point2>& to,
                          const std::function<std::optional<Point2>(const Point2&)>& map,
                          const ImageSize& other) -> std::optional<double> {
    int covis = 0, hit = 0;
    for (const Point2& p : from) {
      auto q = map(p);
      if (!q || !other.contains(*q)) continue;
      ++covis;
      for (const Point2& t : to)
        if (distance(*q, t) < th) {
          ++hit;
          break;
        }
    }
    if (covis == 0) return std::nullopt;
    return static_cast<double>(hit) / covis;
  };
  auto ra = directional(kps_a, kps_b, warp.forward, size_b);
  auto rb = directional(kps_b, kps_a, warp.backward, size_a);
  if (!ra && !rb) return 0.0;
  if (!ra) return *rb;
  if (!rb) return *ra;
  return 0.5 * (*ra + *rb);
}

}  // namespace deft
