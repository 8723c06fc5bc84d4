#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "deft/geometry.hpp"
#include "deft/numerics.hpp"

namespace deft {

/// Weights of the four training losses.
struct LossWeights {
  double rp = 1.0;
  double pk = 0.5;
  double ds = 5.0;
  double re = 1.0;

  void validate() const {
    if (rp < 0 || pk < 0 || ds < 0 || re < 0)
      throw std::invalid_argument("LossWeights: weights must be >= 0");
  }
};

struct Temperatures {
  double det = 0.1;
  double des = 0.1;
  double rel = 1.0;

  void validate() const {
    if (det <= 0 || des <= 0 || rel <= 0)
      throw std::invalid_argument("Temperatures: must be > 0");
  }
};

/// A loss term together with a validity flag; invalid terms (e.g. empty match
/// sets) carry value 0 and contribute nothing.
struct LossValue {
  Var value;
  bool valid = false;

  static LossValue zero() { return {Var::scalar(0.0), false}; }
  static LossValue of(Var v) { return {std::move(v), true}; }
};

// ---------------------------------------------------------------------------
// Differentiable point warps (training plumbing)
// ---------------------------------------------------------------------------

/// Applies a homography to [n,2] points with analytic Jacobian backward.
inline Var warp_points_homography(const Var& pts, const Homography& hh) {
  if (pts.value().rank() != 2 || pts.dim(1) != 2)
    throw std::invalid_argument("warp_points_homography: [n,2] expected");
  int n = pts.dim(0);
  const Mat3 m = hh.h;
  Tensor out({n, 2});
  for (int i = 0; i < n; ++i) {
    double x = pts.value().at(i, 0), y = pts.value().at(i, 1);
    double hw = m(2, 0) * x + m(2, 1) * y + m(2, 2);
    if (std::abs(hw) < 1e-12)
      throw std::domain_error("warp_points_homography: point at infinity");
    out.at(i, 0) = (m(0, 0) * x + m(0, 1) * y + m(0, 2)) / hw;
    out.at(i, 1) = (m(1, 0) * x + m(1, 1) * y + m(1, 2)) / hw;
  }
  return make_op(std::move(out), {pts}, [m, n](Node& nd) {
    const Tensor& p = nd.inputs[0]->value;
    Tensor& g = nd.inputs[0]->ensure_grad();
    for (int i = 0; i < n; ++i) {
      double x = p.at(i, 0), y = p.at(i, 1);
      double hx = m(0, 0) * x + m(0, 1) * y + m(0, 2);
      double hy = m(1, 0) * x + m(1, 1) * y + m(1, 2);
      double hw = m(2, 0) * x + m(2, 1) * y + m(2, 2);
      double inv2 = 1.0 / (hw * hw);
      // d(hx/hw)/dx etc.
      double du_dx = (m(0, 0) * hw - m(2, 0) * hx) * inv2;
      double du_dy = (m(0, 1) * hw - m(2, 1) * hx) * inv2;
      double dv_dx = (m(1, 0) * hw - m(2, 0) * hy) * inv2;
      double dv_dy = (m(1, 1) * hw - m(2, 1) * hy) * inv2;
      g.at(i, 0) += nd.grad.at(i, 0) * du_dx + nd.grad.at(i, 1) * dv_dx;
      g.at(i, 1) += nd.grad.at(i, 0) * du_dy + nd.grad.at(i, 1) * dv_dy;
    }
  });
}

/// Perspective warp of [n,2] points through depth, pose and intrinsics, with
/// gradients through the bilinear depth lookup and the projection. Rows must
/// have valid depth and land in front of the camera (callers pre-filter with
/// warp_perspective).
inline Var warp_points_perspective(const Var& pts, const RelativePose& pose) {
  if (pts.value().rank() != 2 || pts.dim(1) != 2)
    throw std::invalid_argument("warp_points_perspective: [n,2] expected");
  int n = pts.dim(0);
  const Mat3 ainv = pose.k_a.inverse();
  const Mat3& r = pose.r_ab;
  const Mat3& kb = pose.k_b;
  const Tensor& depth = pose.depth_a;
  int dh = depth.dim(0), dw = depth.dim(1);

  // Forward pass caching intermediates for the pull-back.
  struct RowCache {
    double d, ddx, ddy;  // depth and its spatial derivatives
    Vec3 ray, u;         // back-projected ray, homogeneous projection
  };
  std::vector<RowCache> cache(static_cast<size_t>(n));
  Tensor out({n, 2});
  for (int i = 0; i < n; ++i) {
    double x = pts.value().at(i, 0), y = pts.value().at(i, 1);
    int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    if (x0 < 0 || y0 < 0 || x0 + 1 >= dw || y0 + 1 >= dh)
      throw std::domain_error("warp_points_perspective: depth undefined");
    double d00 = depth.at(y0, x0), d10 = depth.at(y0, x0 + 1);
    double d01 = depth.at(y0 + 1, x0), d11 = depth.at(y0 + 1, x0 + 1);
    if (d00 <= 0 || d10 <= 0 || d01 <= 0 || d11 <= 0)
      throw std::domain_error("warp_points_perspective: non-positive depth");
    double fx = x - x0, fy = y - y0;
    RowCache& rc = cache[static_cast<size_t>(i)];
    rc.d = (1 - fy) * ((1 - fx) * d00 + fx * d10) +
           fy * ((1 - fx) * d01 + fx * d11);
    rc.ddx = (1 - fy) * (d10 - d00) + fy * (d11 - d01);
    rc.ddy = (1 - fx) * (d01 - d00) + fx * (d11 - d10);
    rc.ray = ainv.apply({x, y, 1.0});
    Vec3 xa{rc.d * rc.ray.x, rc.d * rc.ray.y, rc.d * rc.ray.z};
    Vec3 xb = r.apply(xa);
    xb.x += pose.t_ab.x;
    xb.y += pose.t_ab.y;
    xb.z += pose.t_ab.z;
    if (xb.z <= 0)
      throw std::domain_error("warp_points_perspective: behind camera");
    rc.u = kb.apply(xb);
    out.at(i, 0) = rc.u.x / rc.u.z;
    out.at(i, 1) = rc.u.y / rc.u.z;
  }
  return make_op(std::move(out), {pts}, [cache, ainv, r, kb, n](Node& nd) {
    Tensor& g = nd.inputs[0]->ensure_grad();
    Mat3 kr = kb.mul(r);
    for (int i = 0; i < n; ++i) {
      const RowCache& rc = cache[static_cast<size_t>(i)];
      // dX/dx = (dd/dx) ray + d * dray/dx, with dray/dx = A^-1 e1.
      for (int axis = 0; axis < 2; ++axis) {
        double dd = axis == 0 ? rc.ddx : rc.ddy;
        Vec3 dray{ainv(0, axis), ainv(1, axis), ainv(2, axis)};
        Vec3 dxa{dd * rc.ray.x + rc.d * dray.x, dd * rc.ray.y + rc.d * dray.y,
                 dd * rc.ray.z + rc.d * dray.z};
        Vec3 du = kr.apply(dxa);
        double inv2 = 1.0 / (rc.u.z * rc.u.z);
        double dout0 = (du.x * rc.u.z - rc.u.x * du.z) * inv2;
        double dout1 = (du.y * rc.u.z - rc.u.y * du.z) * inv2;
        g.at(i, axis) += nd.grad.at(i, 0) * dout0 + nd.grad.at(i, 1) * dout1;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

/// Mean over matches of (|p_A - p_BA| + |p_B - p_AB|) / 2. All four inputs
/// are [n,2] with rows aligned by match.
inline LossValue reprojection_loss(const Var& pa, const Var& pb, const Var& pab,
                                   const Var& pba) {
  if (pa.dim(0) == 0) return LossValue::zero();
  Var da = rowwise_norm(sub(pa, pba));
  Var db = rowwise_norm(sub(pb, pab));
  return LossValue::of(scale(add(mean(da), mean(db)), 0.5));
}

/// Per keypoint, softmax of its W x W score patch dotted with the distances
/// between the patch coordinates and the (refined, differentiable) keypoint;
/// averaged over keypoints.
inline LossValue dispersity_peak_loss(
    const Var& score_map, const std::vector<std::pair<int, int>>& pixels,
    const Var& positions, int window) {
  if (pixels.empty()) return LossValue::zero();
  if (window % 2 == 0)
    throw std::invalid_argument("dispersity_peak_loss: even window");
  int r = window / 2;
  std::vector<Var> terms;
  terms.reserve(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) {
    auto [px, py] = pixels[i];
    Var patch = extract_patch(score_map, py, px, window);
    Var q = reshape(softmax(patch, 1.0), {window * window});
    Tensor coords({window * window, 2});
    for (int j = 0; j < window * window; ++j) {
      coords.at(j, 0) = px - r + (j % window);
      coords.at(j, 1) = py - r + (j / window);
    }
    Var p = reshape(gather_rows(positions, {static_cast<int>(i)}), {2});
    terms.push_back(dot(q, dist_to_coords(p, coords)));
  }
  return LossValue::of(mean(stack(terms)));
}

/// Matching similarity vector sim(d_A, D_B) = D_B d_A; entries in [-1,1]
/// for unit inputs.
inline Var similarity(const Var& d_a, const Var& d_b_set) {
  if (d_a.value().rank() != 1 || d_b_set.value().rank() != 2 ||
      d_b_set.dim(1) != d_a.dim(0))
    throw std::invalid_argument("similarity: expects [dim] and [N,dim]");
  Var col = reshape(d_a, {d_a.dim(0), 1});
  return reshape(matmul(d_b_set, col), {d_b_set.dim(0)});
}

/// q_m = softmax((sim - 1) / t_des).
inline Var matching_prob(const Var& sim, double t_des) {
  if (t_des <= 0.0) throw std::domain_error("matching_prob: t_des > 0");
  return softmax(add_scalar(sim, -1.0), t_des);
}

/// Sparse NRE: mean over matched keypoints, both directions, of the
/// cross-entropy -ln q_m[matched index].
inline LossValue sparse_nre_loss(const Var& desc_a, const Var& desc_b,
                                 const std::vector<std::pair<int, int>>& matches,
                                 double t_des) {
  if (t_des <= 0.0) throw std::domain_error("sparse_nre_loss: t_des > 0");
  if (matches.empty()) return LossValue::zero();
  std::vector<int> ia, ib;
  for (auto [a, b] : matches) {
    ia.push_back(a);
    ib.push_back(b);
  }
  // (sim - 1)/t and sim/t give identical softmax rows; the -1 shift is kept
  // for fidelity to the matching-probability definition.
  Var logits_ab = add_scalar(matmul_nt(gather_rows(desc_a, ia), desc_b), -1.0);
  Var logits_ba = add_scalar(matmul_nt(gather_rows(desc_b, ib), desc_a), -1.0);
  Var nll_ab = softmax_xent_rows(logits_ab, ib, t_des);
  Var nll_ba = softmax_xent_rows(logits_ba, ia, t_des);
  return LossValue::of(scale(add(mean(nll_ab), mean(nll_ba)), 0.5));
}

/// r(p_A, I_B) = softmax(sim / t_rel) at the ground-truth matched index.
inline Var reliability(const Var& d_a, const Var& d_b_set, int matched_index,
                       double t_rel) {
  Var sim = similarity(d_a, d_b_set);
  Var row = reshape(sim, {1, d_b_set.dim(0)});
  return reshape(softmax_pick_rows(row, {matched_index}, t_rel), {1});
}

/// Batched reliabilities for matched keypoints: rows of desc_from against the
/// full desc_to set; returns [n].
inline Var reliability_rows(const Var& desc_from, const Var& desc_to,
                            const std::vector<int>& from_idx,
                            const std::vector<int>& to_idx, double t_rel) {
  Var logits = matmul_nt(gather_rows(desc_from, from_idx), desc_to);
  return softmax_pick_rows(logits, to_idx, t_rel);
}

/// sum((1 - r) * s) / sum(s) over one image's matched keypoints.
inline LossValue reliable_loss(const Var& scores, const Var& reliabilities) {
  if (scores.dim(0) == 0) return LossValue::zero();
  if (scores.dim(0) != reliabilities.dim(0))
    throw std::invalid_argument("reliable_loss: size mismatch");
  double ssum = 0.0;
  for (int i = 0; i < scores.dim(0); ++i) ssum += scores.value()[i];
  if (ssum == 0.0) return LossValue::zero();
  Var weighted = dot(sub_from_scalar(1.0, reliabilities), scores);
  return LossValue::of(div(weighted, sum(scores)));
}

/// Weighted sum of the four loss terms. Non-finite components abort training.
inline Var total_loss(const LossValue& rp, const LossValue& pk,
                      const LossValue& ds, const LossValue& re,
                      const LossWeights& w) {
  w.validate();
  auto check = [](const LossValue& lv, const char* name) {
    if (lv.valid && !lv.value.value().all_finite())
      throw std::runtime_error(std::string("total_loss: non-finite ") + name);
  };
  check(rp, "reprojection loss");
  check(pk, "dispersity peak loss");
  check(ds, "sparse NRE loss");
  check(re, "reliable loss");
  Var total = Var::scalar(0.0);
  if (rp.valid) total = add(total, scale(rp.value, w.rp));
  if (pk.valid) total = add(total, scale(pk.value, w.pk));
  if (ds.valid) total = add(total, scale(ds.value, w.ds));
  if (re.valid) total = add(total, scale(re.value, w.re));
  return total;
}

}  // namespace deft
