// Acceptance suite: run as `acceptance <criterion 1..10>`. Each criterion
// prints one [PASS]/[FAIL] line (plus detail lines) and the process exit code
// reflects the result. `acceptance all` runs every criterion.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "deft/checkpoint.hpp"
#include "deft/complexity.hpp"
#include "deft/evalrun.hpp"
#include "deft/extract.hpp"
#include "deft/train.hpp"

using namespace deft;
namespace fs = std::filesystem;

namespace {

int g_train_steps_override = 0;  // for local experimentation only

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::string run_cli(const std::string& args) {
  std::string cmd = std::string(DEFT_CLI_PATH) + " " + args;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("cannot run " + cmd);
  std::string out;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) out += buf;
  pclose(pipe);
  return out;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Criterion {
  Criterion(int id_, std::string name_) : id(id_), name(std::move(name_)) {}

  int id;
  std::string name;
  bool ok = true;
  std::vector<std::string> details;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      details.push_back("failed: " + what);
    }
  }

  void note(const std::string& s) { details.push_back(s); }

  int finish() const {
    std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", id, name.c_str());
    for (const std::string& d : details) std::printf("    %s\n", d.c_str());
    std::fflush(stdout);
    return ok ? 0 : 1;
  }
};

// ---------------------------------------------------------------------------
// 1. Published cost-table reproduction through the flops CLI
// ---------------------------------------------------------------------------

int criterion1() {
  Criterion c{1, "flops CLI reproduces the published DMH/SDDH table exactly"};
  std::string out1 = run_cli("flops --H 480 --W 640 --C 128 --K 5 --M 25 --N 5000");
  for (const char* s : {"130.86G", "2.56M", "812.50M", "64.00M", "4096.00M"})
    c.expect(contains(out1, s), std::string("K=5/N=5000 output misses ") + s);
  std::string out2 = run_cli("flops --H 480 --W 640 --C 128 --K 3 --M 9 --N 1000");
  for (const char* s : {"50.33G", "2.56M", "21.06M", "4.61M", "294.91M"})
    c.expect(contains(out2, s), std::string("K=3/N=1000 output misses ") + s);
  return c.finish();
}

// ---------------------------------------------------------------------------
// 2. Instrumented counter equals the analytic model
// ---------------------------------------------------------------------------

int criterion2() {
  Criterion c{2, "instrumented multiply-add counter equals dmh_cost/sddh_cost"};
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> hd(10, 20), cd(2, 6), md(1, 8), nd(0, 6),
      kd(1, 2);
  int instances = 0;
  for (int trial = 0; trial < 6; ++trial) {
    CostQuery q{hd(rng), hd(rng), cd(rng), 2 * kd(rng) + 1, md(rng), nd(rng)};
    OpCountReport im = instrumented_count(InstrumentedOp::kDmhExtract, q, 500 + trial);
    OpCountReport am = dmh_cost(q);
    for (size_t i = 0; i < am.stages.size(); ++i)
      c.expect(im.stages[i].second == am.stages[i].second,
               "DMH stage " + am.stages[i].first + " mismatch");
    OpCountReport is = instrumented_count(InstrumentedOp::kSddhExtract, q, 900 + trial);
    OpCountReport as = sddh_cost(q);
    for (size_t i = 0; i < as.stages.size(); ++i)
      c.expect(is.stages[i].second == as.stages[i].second,
               "SDDH stage " + as.stages[i].first + " mismatch");
    ++instances;
  }
  c.note("checked " + std::to_string(instances) + " random instances (exact equality)");
  return c.finish();
}

// ---------------------------------------------------------------------------
// 3. SDDH <-> DMH grid equivalence
// ---------------------------------------------------------------------------

int criterion3() {
  Criterion c{3, "SDDH with M=K^2 grid-frozen offsets equals DMH within 1e-5"};
  ParamStore store;
  std::mt19937_64 rng(17);
  const int k = 3, dim = 16;
  SddhConfig cfg{k, k * k, dim};
  SddhHead sddh(store, cfg, rng);
  DmhHead dmh(store, k, dim, rng);

  Tensor grid = kxk_grid(k);
  Tensor& bias = store.get("sddh.off_1x1.b").mutable_value();
  for (int i = 0; i < k * k; ++i) {
    bias[2 * i] = grid.at(i, 0);
    bias[2 * i + 1] = grid.at(i, 1);
  }
  store.get("sddh.phi.w").mutable_value() = store.get("dmh.conv1x1.w").value();
  store.get("sddh.phi.b").mutable_value() = store.get("dmh.conv1x1.b").value();
  Tensor& wm = store.get("sddh.conv_m.w").mutable_value();
  const Tensor& kw = store.get("dmh.conv_kxk.w").value();
  for (int i = 0; i < k * k; ++i)
    for (int ci = 0; ci < dim; ++ci)
      for (int co = 0; co < dim; ++co)
        wm.at(i, ci, co) = kw.at(i / k, i % k, ci, co);
  store.get("dmh.conv_kxk.b").mutable_value().fill(0.0);

  Tensor feat = random_tensor({28, 30, dim}, rng);
  std::uniform_int_distribution<int> xd(2, 27), yd(2, 25);
  Tensor pos({128, 2});
  for (int i = 0; i < 128; ++i) {
    pos.at(i, 0) = xd(rng);
    pos.at(i, 1) = yd(rng);
  }
  HeadOutput a = sddh.extract(Var::constant(feat), Var::constant(pos));
  HeadOutput b = dmh.extract(Var::constant(feat), Var::constant(pos));
  c.expect(a.kept.size() == 128, "border drop in the interior keypoint set");
  double diff = max_abs_diff(a.descriptors.value(), b.descriptors.value());
  c.expect(diff < 1e-5, "max-abs descriptor difference " + std::to_string(diff));
  c.note("128 random integer keypoints, max |diff| = " + std::to_string(diff));
  return c.finish();
}

// ---------------------------------------------------------------------------
// 4. DCN reduction to plain convolution
// ---------------------------------------------------------------------------

int criterion4() {
  Criterion c{4, "dcn_conv with zero offsets equals conv2d within 1e-6"};
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 12; ++trial) {
    int k = (trial % 2 == 0) ? 3 : 5;
    int cin = 1 + trial % 3, cout = 1 + (trial + 1) % 4;
    Tensor g = random_tensor({9, 8, cin}, rng);
    Tensor kv = random_tensor({k, k, cin, cout}, rng);
    Tensor b = random_tensor({cout}, rng);
    Tensor off({9, 8, k * k, 2});
    Var dcn = dcn_conv(Var::constant(g), Var::constant(kv), Var::constant(b),
                       Var::constant(off));
    Var ref = conv2d(Var::constant(g), Var::constant(kv), Var::constant(b), 1, k / 2);
    double diff = max_abs_diff(dcn.value(), ref.value());
    c.expect(diff < 1e-6, "instance " + std::to_string(trial) + " diff " +
                              std::to_string(diff));
  }
  c.note("12 random instances");
  return c.finish();
}

// ---------------------------------------------------------------------------
// 5. Gradient suite
// ---------------------------------------------------------------------------

int criterion5() {
  Criterion c{5, "finite-difference gradient suite (1e-4; composite 1e-3)"};
  std::mt19937_64 rng(31);

  {  // bilinear_sample w.r.t. points and grid
    Tensor g = random_tensor({7, 7, 3}, rng);
    Tensor pts = random_tensor({6, 2}, rng, 0.4, 5.4);
    double e1 = grad_check(
        [&](const Var& p) { return sum(bilinear_sample(Var::constant(g), p)); },
        pts, 1e-6);
    double e2 = grad_check(
        [&](const Var& gr) {
          Var s = bilinear_sample(gr, Var::constant(pts));
          return sum(mul(s, s));
        },
        g, 1e-6);
    c.expect(e1 < 1e-4, "bilinear_sample d/dp rel err " + std::to_string(e1));
    c.expect(e2 < 1e-4, "bilinear_sample d/dgrid rel err " + std::to_string(e2));
    c.note("bilinear_sample: " + std::to_string(std::max(e1, e2)));
  }
  {  // softargmax
    Tensor p = random_tensor({5, 5}, rng, -1.0, 1.0);
    double e = grad_check(
        [](const Var& patch) {
          Var o = softargmax(patch, 0.1);
          return sum(mul(o, o));
        },
        p, 1e-6);
    c.expect(e < 1e-4, "softargmax rel err " + std::to_string(e));
    c.note("softargmax: " + std::to_string(e));
  }
  {  // dcn_conv w.r.t. grid, offsets, kernel
    Tensor g = random_tensor({5, 5, 2}, rng);
    Tensor k = random_tensor({3, 3, 2, 2}, rng);
    Tensor off = random_tensor({5, 5, 9, 2}, rng, -0.7, 0.7);
    double e1 = grad_check(
        [&](const Var& x) {
          Var o = dcn_conv(x, Var::constant(k), Var(), Var::constant(off));
          return sum(mul(o, o));
        },
        g, 1e-6);
    double e2 = grad_check(
        [&](const Var& o) {
          Var y = dcn_conv(Var::constant(g), Var::constant(k), Var(), o);
          return sum(mul(y, y));
        },
        off, 1e-6);
    double e3 = grad_check(
        [&](const Var& kk) {
          Var y = dcn_conv(Var::constant(g), kk, Var(), Var::constant(off));
          return sum(mul(y, y));
        },
        k, 1e-6);
    double worst = std::max({e1, e2, e3});
    c.expect(worst < 1e-4, "dcn_conv rel err " + std::to_string(worst));
    c.note("dcn_conv: " + std::to_string(worst));
  }
  {  // sddh_extract w.r.t. feature and positions
    ParamStore store;
    SddhConfig scfg{3, 3, 3};
    SddhHead head(store, scfg, rng);
    store.get("sddh.off_1x1.b").mutable_value() = random_tensor({6}, rng, -0.5, 0.5);
    Tensor feat = random_tensor({9, 9, 3}, rng);
    Tensor pos({2, 2});
    pos.at(0, 0) = 3.3;
    pos.at(0, 1) = 4.6;
    pos.at(1, 0) = 5.2;
    pos.at(1, 1) = 3.4;
    double e1 = grad_check(
        [&](const Var& f) {
          HeadOutput o = head.extract(f, Var::constant(pos));
          return sum(mul(o.descriptors, o.descriptors));
        },
        feat, 1e-6);
    Tensor w({2, 3});
    for (int64_t i = 0; i < w.size(); ++i) w[i] = 0.2 * ((i % 3) - 1);
    double e2 = grad_check(
        [&](const Var& p) {
          HeadOutput o = head.extract(Var::constant(feat), p);
          return dot(o.descriptors, Var::constant(w));
        },
        pos, 1e-6);
    double worst = std::max(e1, e2);
    c.expect(worst < 1e-4, "sddh_extract rel err " + std::to_string(worst));
    c.note("sddh_extract: " + std::to_string(worst));
  }
  {  // the four losses
    Tensor pa = random_tensor({4, 2}, rng, 3.0, 20.0);
    Tensor pb = random_tensor({4, 2}, rng, 3.0, 20.0);
    Homography h = Homography::translation(1.0, -2.0);
    double e_rp = grad_check(
        [&](const Var& x) {
          Var pab = warp_points_homography(x, h);
          Var pba = warp_points_homography(Var::constant(pb), h.inverse());
          return reprojection_loss(x, Var::constant(pb), pab, pba).value;
        },
        pa, 1e-6);
    c.expect(e_rp < 1e-4, "reprojection rel err " + std::to_string(e_rp));

    Tensor map({12, 12});
    Tensor rm = random_tensor({12, 12, 1}, rng, 0.0, 1.0);
    for (int64_t i = 0; i < map.size(); ++i) map[i] = rm[i];
    std::vector<std::pair<int, int>> cells{{5, 5}, {7, 8}};
    Tensor pos({2, 2});
    pos.at(0, 0) = 5.4;
    pos.at(0, 1) = 5.3;
    pos.at(1, 0) = 6.6;
    pos.at(1, 1) = 8.2;
    double e_pk = grad_check(
        [&](const Var& m) {
          return dispersity_peak_loss(m, cells, Var::constant(pos), 5).value;
        },
        map, 1e-6);
    c.expect(e_pk < 1e-4, "dispersity rel err " + std::to_string(e_pk));

    auto unit_rows = [](Tensor m) {
      for (int i = 0; i < m.dim(0); ++i) {
        double n = 0.0;
        for (int j = 0; j < m.dim(1); ++j) n += m.at(i, j) * m.at(i, j);
        n = std::sqrt(n);
        for (int j = 0; j < m.dim(1); ++j) m.at(i, j) /= n;
      }
      return m;
    };
    Tensor da = unit_rows(random_tensor({5, 4}, rng));
    Tensor db = unit_rows(random_tensor({6, 4}, rng));
    std::vector<std::pair<int, int>> matches{{0, 1}, {2, 4}, {4, 0}};
    double e_ds = grad_check(
        [&](const Var& x) {
          return sparse_nre_loss(x, Var::constant(db), matches, 0.1).value;
        },
        da, 1e-6);
    c.expect(e_ds < 1e-4, "sparse NRE rel err " + std::to_string(e_ds));

    Tensor sv({3});
    sv[0] = 0.4;
    sv[1] = 0.7;
    sv[2] = 0.2;
    std::vector<int> from{0, 2, 4}, to{1, 4, 0};
    double e_re = grad_check(
        [&](const Var& x) {
          Var rel = reliability_rows(x, Var::constant(db), from, to, 1.0);
          return reliable_loss(Var::constant(sv), rel).value;
        },
        da, 1e-6);
    c.expect(e_re < 1e-4, "reliable rel err " + std::to_string(e_re));
    c.note("losses: rp " + std::to_string(e_rp) + ", pk " + std::to_string(e_pk) +
           ", ds " + std::to_string(e_ds) + ", re " + std::to_string(e_re));
  }
  {  // end-to-end composite on a micro network, frozen selection, 1e-3
    ModelConfig mc;
    mc.net = NetConfig::micro();
    mc.sddh_m = 4;
    mc.seed = 5;
    Model model(mc);
    // Move the zero-initialized offset predictors off the integer lattice:
    // bilinear sampling has one-sided position derivatives exactly on grid
    // nodes, so the composite must be evaluated at a differentiable point.
    {
      std::mt19937_64 nudge(321);
      std::uniform_real_distribution<double> u(-0.35, 0.35);
      for (auto& [name, v] : model.params().entries())
        if (name.find("offset.b") != std::string::npos ||
            name.find("off_1x1.b") != std::string::npos)
          for (int64_t i = 0; i < v.value().size(); ++i)
            v.mutable_value()[i] = u(nudge);
    }
    std::mt19937_64 srng(41);
    Image base = synth_texture(32, 32, srng);
    SynthConfig sc;
    sc.max_rotation_deg = 6;
    sc.max_translation = 2;
    sc.noise = 0;
    auto [pair, h] = synth_pair(base, sc, srng);
    DiffWarp warp = DiffWarp::from_homography(h);

    TrainConfig tc;
    tc.variant = "micro";
    tc.kp_detect = 12;
    tc.kp_random = 12;
    tc.detect_threshold = 0.05;
    tc.image_size = 32;

    // Freeze keypoint cells and matches from the unperturbed state so the
    // composite stays continuous for finite differences.
    Model::Forward fa0 = model.forward(Model::image_var(pair.a));
    Model::Forward fb0 = model.forward(Model::image_var(pair.b));
    DetectionConfig det = tc.detection();
    std::mt19937_64 cell_rng(7);
    auto margin_filter = [&](std::vector<std::pair<int, int>> cells) {
      std::vector<std::pair<int, int>> out;
      for (auto [x, y] : cells)
        if (x >= 5 && x <= 26 && y >= 5 && y <= 26) out.push_back({x, y});
      return out;
    };
    auto cells_a = margin_filter(loss_keypoint_cells(fa0.scores.value(), det, 12, cell_rng));
    auto cells_b = margin_filter(loss_keypoint_cells(fb0.scores.value(), det, 12, cell_rng));
    DetectedKeypoints kp_a0 = refine_keypoints(fa0.scores, cells_a, det);
    DetectedKeypoints kp_b0 = refine_keypoints(fb0.scores, cells_b, det);
    std::vector<Point2> pts_a, pts_b;
    for (int i = 0; i < static_cast<int>(cells_a.size()); ++i)
      pts_a.push_back({kp_a0.positions.value().at(i, 0), kp_a0.positions.value().at(i, 1)});
    for (int i = 0; i < static_cast<int>(cells_b.size()); ++i)
      pts_b.push_back({kp_b0.positions.value().at(i, 0), kp_b0.positions.value().at(i, 1)});
    CorrespondenceSet ms = gt_correspondences(pts_a, pts_b, warp.scalar, tc.th_gt);
    if (ms.empty()) {
      c.expect(false, "composite setup produced no matches");
      return c.finish();
    }

    auto loss_fn = [&]() -> Var {
      Model::Forward fa = model.forward(Model::image_var(pair.a));
      Model::Forward fb = model.forward(Model::image_var(pair.b));
      DetectedKeypoints kp_a = refine_keypoints(fa.scores, cells_a, det);
      DetectedKeypoints kp_b = refine_keypoints(fb.scores, cells_b, det);
      HeadOutput da = model.head().extract(fa.feature, kp_a.positions);
      HeadOutput db = model.head().extract(fb.feature, kp_b.positions);
      std::vector<int> ia, ib;
      std::vector<std::pair<int, int>> cells_ma, cells_mb;
      for (auto [i, j] : ms.pairs) {
        ia.push_back(i);
        ib.push_back(j);
        cells_ma.push_back(cells_a[static_cast<size_t>(i)]);
        cells_mb.push_back(cells_b[static_cast<size_t>(j)]);
      }
      Var pa = gather_rows(kp_a.positions, ia);
      Var pb = gather_rows(kp_b.positions, ib);
      LossValue l_rp = reprojection_loss(pa, pb, warp.forward(pa), warp.backward(pb));
      LossValue pk_a = dispersity_peak_loss(fa.scores, cells_ma, pa, det.window());
      LossValue pk_b = dispersity_peak_loss(fb.scores, cells_mb, pb, det.window());
      LossValue l_pk = LossValue::of(scale(add(pk_a.value, pk_b.value), 0.5));
      LossValue l_ds = sparse_nre_loss(da.descriptors, db.descriptors, ms.pairs,
                                       tc.temps.des);
      Var s_a = reshape(bilinear_sample(reshape(fa.scores, {32, 32, 1}), pa),
                        {static_cast<int>(ms.pairs.size())});
      Var s_b = reshape(bilinear_sample(reshape(fb.scores, {32, 32, 1}), pb),
                        {static_cast<int>(ms.pairs.size())});
      Var r_a = reliability_rows(da.descriptors, db.descriptors, ia, ib, tc.temps.rel);
      Var r_b = reliability_rows(db.descriptors, da.descriptors, ib, ia, tc.temps.rel);
      LossValue l_re = LossValue::of(scale(
          add(reliable_loss(s_a, r_a).value, reliable_loss(s_b, r_b).value), 0.5));
      return total_loss(l_rp, l_pk, l_ds, l_re, tc.weights);
    };

    // Analytic gradients for every parameter.
    model.params().zero_grads();
    Var loss0 = loss_fn();
    backward(loss0);
    // Central differences on a random subset of parameter coordinates.
    std::mt19937_64 pick_rng(97);
    auto& entries = model.params().entries();
    double worst = 0.0;
    int checked = 0;
    const double eps = 1e-6;
    std::uniform_int_distribution<size_t> pdist(0, entries.size() - 1);
    while (checked < 220) {
      size_t pi = pdist(pick_rng);
      Var& param = entries[pi].second;
      if (param.value().size() == 0) continue;
      std::uniform_int_distribution<int64_t> edist(0, param.value().size() - 1);
      int64_t ei = edist(pick_rng);
      double analytic = param.node->grad.size() > 0 ? param.node->grad[ei] : 0.0;
      double saved = param.value()[ei];
      param.mutable_value()[ei] = saved + eps;
      double fp = loss_fn().value().item();
      param.mutable_value()[ei] = saved - eps;
      double fm = loss_fn().value().item();
      param.mutable_value()[ei] = saved;
      double numeric = (fp - fm) / (2 * eps);
      double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
      worst = std::max(worst, rel);
      ++checked;
    }
    c.expect(worst < 1e-3, "composite rel err " + std::to_string(worst));
    c.note("composite over " + std::to_string(checked) +
           " sampled parameter coordinates: " + std::to_string(worst));
  }
  return c.finish();
}

// ---------------------------------------------------------------------------
// 6. Loss oracle equalities and worked values
// ---------------------------------------------------------------------------

int criterion6() {
  Criterion c{6, "loss vectorized paths equal loop oracles; worked values hold"};
  std::mt19937_64 rng(43);
  auto unit_rows = [](Tensor m) {
    for (int i = 0; i < m.dim(0); ++i) {
      double n = 0.0;
      for (int j = 0; j < m.dim(1); ++j) n += m.at(i, j) * m.at(i, j);
      n = std::sqrt(n);
      for (int j = 0; j < m.dim(1); ++j) m.at(i, j) /= n;
    }
    return m;
  };

  {  // sparse NRE vs per-keypoint loop oracle, 1e-8
    Tensor da = unit_rows(random_tensor({8, 6}, rng));
    Tensor db = unit_rows(random_tensor({9, 6}, rng));
    std::vector<std::pair<int, int>> matches{{0, 2}, {3, 3}, {5, 8}, {7, 0}};
    double t = 0.1;
    LossValue lv = sparse_nre_loss(Var::constant(da), Var::constant(db), matches, t);
    auto ce = [&](const Tensor& from, const Tensor& to, int i, int j) {
      std::vector<double> sims;
      for (int r = 0; r < to.dim(0); ++r) {
        double s = 0.0;
        for (int k = 0; k < 6; ++k) s += from.at(i, k) * to.at(r, k);
        sims.push_back((s - 1.0) / t);
      }
      double mx = *std::max_element(sims.begin(), sims.end());
      double z = 0.0;
      for (double s : sims) z += std::exp(s - mx);
      return -(sims[static_cast<size_t>(j)] - mx - std::log(z));
    };
    double oracle = 0.0;
    for (auto [i, j] : matches) oracle += ce(da, db, i, j) + ce(db, da, j, i);
    oracle /= 2.0 * matches.size();
    double diff = std::abs(lv.value.value().item() - oracle);
    c.expect(diff < 1e-8, "sparse NRE loop-oracle diff " + std::to_string(diff));
    c.note("sparse NRE vs loop oracle: " + std::to_string(diff));
  }
  {  // worked value 0.126928 (two candidates, sims [1.0, 0.8], t=0.1)
    Tensor sim({2});
    sim[0] = 1.0;
    sim[1] = 0.8;
    Var q = matching_prob(Var::constant(sim), 0.1);
    double nll = -std::log(q.value()[0]);
    // Independent scalar oracle.
    double oracle = -std::log(std::exp(0.0) / (std::exp(0.0) + std::exp(-2.0)));
    c.expect(std::abs(nll - oracle) < 1e-12, "scalar oracle disagreement");
    c.expect(std::abs(nll - 0.126928) < 5e-7,
             "worked value 0.126928, got " + std::to_string(nll));
    c.note("sparse NRE worked value: " + std::to_string(nll));
  }
  {  // dispersity: uniform 3x3 patch worked value 1.072985 + loop oracle
    Tensor s = Tensor::full({9, 9}, 0.3);
    std::vector<std::pair<int, int>> cells{{4, 4}};
    Tensor pos({1, 2});
    pos.at(0, 0) = 4;
    pos.at(0, 1) = 4;
    LossValue lv = dispersity_peak_loss(Var::constant(s), cells, Var::constant(pos), 3);
    double oracle = (4.0 + 4.0 * std::sqrt(2.0)) / 9.0;  // = 1.0729838...
    c.expect(std::abs(lv.value.value().item() - oracle) < 1e-12, "dispersity oracle");
    // The published worked value 1.072985 carries a last-digit rounding slip;
    // the oracle value rounds to 1.072984. Accept the oracle exactly and the
    // printed value to 2e-6.
    c.expect(std::abs(lv.value.value().item() - 1.072985) < 2e-6,
             "worked value 1.072985, got " + std::to_string(lv.value.value().item()));

    // Random patch against the loop oracle, 1e-8.
    Tensor rm = random_tensor({11, 11, 1}, rng, 0.0, 1.0);
    Tensor map({11, 11});
    for (int64_t i = 0; i < map.size(); ++i) map[i] = rm[i];
    std::vector<std::pair<int, int>> rcells{{5, 5}, {3, 7}};
    Tensor rpos({2, 2});
    rpos.at(0, 0) = 5.4;
    rpos.at(0, 1) = 4.7;
    rpos.at(1, 0) = 3.2;
    rpos.at(1, 1) = 7.8;
    LossValue rv = dispersity_peak_loss(Var::constant(map), rcells, Var::constant(rpos), 5);
    double expect = 0.0;
    for (int kp = 0; kp < 2; ++kp) {
      auto [px, py] = rcells[static_cast<size_t>(kp)];
      double z = 0.0, term = 0.0;
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) z += std::exp(map.at(py + dy, px + dx));
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx) {
          double qv = std::exp(map.at(py + dy, px + dx)) / z;
          term += qv * std::hypot(rpos.at(kp, 0) - (px + dx), rpos.at(kp, 1) - (py + dy));
        }
      expect += term;
    }
    expect /= 2.0;
    double diff = std::abs(rv.value.value().item() - expect);
    c.expect(diff < 1e-8, "dispersity loop-oracle diff " + std::to_string(diff));
    c.note("dispersity worked value and loop oracle ok");
  }
  {  // reliable loss vs loop oracle
    Tensor sv = random_tensor({7}, rng, 0.05, 1.0);
    Tensor rv = random_tensor({7}, rng, 0.0, 1.0);
    LossValue lv = reliable_loss(Var::constant(sv), Var::constant(rv));
    double num = 0.0, den = 0.0;
    for (int i = 0; i < 7; ++i) {
      num += (1.0 - rv[i]) * sv[i];
      den += sv[i];
    }
    double diff = std::abs(lv.value.value().item() - num / den);
    c.expect(diff < 1e-8, "reliable loop-oracle diff " + std::to_string(diff));
    // Worked value: single keypoint, r = softmax([1.0, 0.8])[0].
    Tensor s1({1}), r1({1});
    s1[0] = 0.777;
    r1[0] = std::exp(1.0) / (std::exp(1.0) + std::exp(0.8));
    LossValue single = reliable_loss(Var::constant(s1), Var::constant(r1));
    c.expect(std::abs(single.value.value().item() - 0.450166) < 5e-7,
             "worked value 0.450166, got " + std::to_string(single.value.value().item()));
    c.note("reliable loss loop oracle and 0.450166 worked value ok");
  }
  return c.finish();
}

// ---------------------------------------------------------------------------
// 7. Identity-pair sanity
// ---------------------------------------------------------------------------

int criterion7() {
  Criterion c{7, "identity pair yields MMA@3 = 1.0 with random weights"};
  ModelConfig mc;
  mc.net = NetConfig::micro();
  mc.sddh_m = 8;
  mc.seed = 2024;
  Model model(mc);
  std::mt19937_64 rng(51);
  Image img = synth_texture(64, 64, rng);
  DetectionConfig det;
  det.score_threshold = 0.1;
  ExtractionResult r = extract_features(model, img, det);
  c.expect(r.keypoints.size() >= 4,
           "too few keypoints: " + std::to_string(r.keypoints.size()));
  MatchSet m = mnn_match(r.descriptors, r.descriptors);
  c.expect(!m.empty(), "no mutual matches on the identity pair");
  MmaResult res = mma(m, keypoint_points(r), keypoint_points(r),
                      Warp::from_homography(Homography::identity()), 3.0);
  c.expect(res.valid && res.value == 1.0,
           "MMA@3 = " + std::to_string(res.value));
  c.note(std::to_string(r.keypoints.size()) + " keypoints, " +
         std::to_string(m.size()) + " matches, MMA@3 = " + std::to_string(res.value));
  return c.finish();
}

// ---------------------------------------------------------------------------
// 8. Toy training run
// ---------------------------------------------------------------------------

/// Zero-mean, unit-norm grayscale patch sampled around a keypoint: the
/// raw-patch correlation baseline descriptor.
Tensor patch_descriptors(const Image& img, const std::vector<Keypoint>& kps,
                         int patch = 9) {
  int r = patch / 2;
  Tensor out({static_cast<int>(kps.size()), patch * patch});
  for (size_t i = 0; i < kps.size(); ++i) {
    std::vector<double> vals;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        double x = kps[i].x + dx, y = kps[i].y + dy;
        double g = 0.0;
        for (int ch = 0; ch < 3; ++ch) g += sample_image(img, x, y, ch);
        vals.push_back(g / 3.0);
      }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double norm = 0.0;
    for (double v : vals) norm += (v - mean) * (v - mean);
    norm = std::max(std::sqrt(norm), 1e-9);
    for (size_t j = 0; j < vals.size(); ++j)
      out.at(static_cast<int>(i), static_cast<int>(j)) = (vals[j] - mean) / norm;
  }
  return out;
}

int criterion8() {
  Criterion c{8, "toy training: loss halves, MMA@3 >= 0.5, MHA >= patch baseline"};
  fs::path out_dir = fs::temp_directory_path() / "deft_acceptance_train";
  fs::remove_all(out_dir);

  TrainConfig cfg;
  cfg.variant = "micro";
  cfg.m_samples = 8;
  cfg.kernel_k = 3;
  cfg.steps = g_train_steps_override > 0 ? g_train_steps_override : 2000;
  cfg.batch_size = 1;
  cfg.grad_accum = 1;
  cfg.image_size = 64;
  cfg.lr = 2e-3;
  cfg.seed = 7;
  cfg.kp_detect = 128;
  cfg.kp_random = 128;
  cfg.detect_threshold = 0.1;
  cfg.synth_pool = 24;
  cfg.synth.max_rotation_deg = 10.0;
  cfg.synth.min_scale = 0.9;
  cfg.synth.max_scale = 1.12;
  cfg.synth.max_shear = 0.05;
  cfg.synth.max_perspective = 2e-4;
  cfg.synth.max_translation = 3.0;
  cfg.synth.brightness = 0.05;
  cfg.synth.contrast = 0.1;
  cfg.synth.noise = 0.01;
  cfg.out_dir = out_dir.string();

  Model model(cfg.model_config());
  TrainResult result = train(cfg, model);

  // (a) mean total loss over the last 100 steps < 50% of the first 100.
  int span = std::min<int>(100, static_cast<int>(result.step_means.size()) / 2);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < span; ++i) first += result.step_means[static_cast<size_t>(i)].total;
  for (int i = 0; i < span; ++i)
    last += result.step_means[result.step_means.size() - 1 - static_cast<size_t>(i)].total;
  first /= span;
  last /= span;
  c.expect(last < 0.5 * first, "loss ratio " + std::to_string(last / first));
  c.note("mean total loss: first " + std::to_string(span) + " steps " +
         std::to_string(first) + ", last " + std::to_string(span) + " steps " +
         std::to_string(last) + " (ratio " + std::to_string(last / first) + ")");

  // Held-out mild pairs.
  SynthConfig mild;
  mild.max_rotation_deg = 4.0;
  mild.min_scale = 0.97;
  mild.max_scale = 1.03;
  mild.max_shear = 0.02;
  mild.max_perspective = 1e-4;
  mild.max_translation = 2.0;
  mild.brightness = 0.03;
  mild.contrast = 0.05;
  mild.noise = 0.005;

  DetectionConfig det;
  det.score_threshold = 0.1;
  det.top_k = 300;
  RansacParams ransac;

  std::mt19937_64 eval_rng(987654321);
  double mma_sum = 0.0;
  int mha_model = 0, mha_baseline = 0;
  const int n_pairs = 50;
  for (int p = 0; p < n_pairs; ++p) {
    Image base = synth_texture(64, 64, eval_rng);
    auto [pair, h] = synth_pair(base, mild, eval_rng);
    Warp warp = Warp::from_homography(h);

    ExtractionResult ra = extract_features(model, pair.a, det);
    ExtractionResult rb = extract_features(model, pair.b, det);
    MatchSet m = mnn_match(ra.descriptors, rb.descriptors);
    auto ka = keypoint_points(ra);
    auto kb = keypoint_points(rb);
    MmaResult mr = mma(m, ka, kb, warp, 3.0);
    mma_sum += mr.value;
    auto est = estimate_homography(m, ka, kb, ransac);
    if (mha_correct(est, h, 64, 64, 3.0)) ++mha_model;

    // Raw-patch correlation baseline on the same detections.
    Tensor pa = patch_descriptors(pair.a, ra.keypoints);
    Tensor pb = patch_descriptors(pair.b, rb.keypoints);
    MatchSet mb = mnn_match(pa, pb);
    auto est_b = estimate_homography(mb, ka, kb, ransac);
    if (mha_correct(est_b, h, 64, 64, 3.0)) ++mha_baseline;
  }
  double mma_mean = mma_sum / n_pairs;
  c.expect(mma_mean >= 0.5, "held-out MMA@3 " + std::to_string(mma_mean));
  c.expect(mha_model >= mha_baseline,
           "MHA model " + std::to_string(mha_model) + "/50 vs baseline " +
               std::to_string(mha_baseline) + "/50");
  c.note("held-out MMA@3 = " + std::to_string(mma_mean) + "; MHA@3 model " +
         std::to_string(mha_model) + "/50, raw-patch baseline " +
         std::to_string(mha_baseline) + "/50");
  fs::remove_all(out_dir);
  return c.finish();
}

// ---------------------------------------------------------------------------
// 9. Metric unit values and homography recovery
// ---------------------------------------------------------------------------

int criterion9() {
  Criterion c{9, "metric fractions exact; homography recovery < 1e-6 and deterministic"};
  // Hand-constructed fractions: 7 matches off by 0.5 px (correct at th=3),
  // 3 off by exactly 9 px (wrong, and >= 3 px from every other keypoint so
  // repeatability cannot pick up a neighbor). Everything stays inside 80x80.
  std::vector<Point2> ka, kb;
  MatchSet m;
  for (int i = 0; i < 10; ++i) {
    ka.push_back({i * 6.0 + 2.0, 20.0});
    kb.push_back({i * 6.0 + 2.0 + (i < 7 ? 0.5 : 9.0), 20.0});
    m.pairs.emplace_back(i, i);
    m.similarity.push_back(1.0);
  }
  MmaResult mr = mma(m, ka, kb, Warp::identity(), 3.0);
  c.expect(mr.value == 0.7, "mma 7/10, got " + std::to_string(mr.value));

  ImageSize size{80, 80};
  MatchingScoreResult ms = matching_score(m, ka, kb, Warp::identity(), size, size, 3.0);
  c.expect(ms.covisible_a == 10 && ms.covisible_b == 10,
           "covisible counts " + std::to_string(ms.covisible_a));
  c.expect(ms.value == 0.7, "matching score 0.7, got " + std::to_string(ms.value));

  double rep = repeatability(ka, kb, Warp::identity(), size, size, 3.0);
  c.expect(rep == 0.7, "repeatability 0.7, got " + std::to_string(rep));

  // Homography recovery from exact correspondences.
  std::mt19937_64 rng(61);
  Mat3 hm;
  hm(0, 0) = 1.05;
  hm(0, 1) = 0.04;
  hm(0, 2) = 2.5;
  hm(1, 0) = -0.03;
  hm(1, 1) = 0.97;
  hm(1, 2) = -1.5;
  hm(2, 0) = 1e-4;
  hm(2, 1) = -5e-5;
  Homography h(hm);
  std::uniform_real_distribution<double> d(0.0, 60.0);
  std::vector<Point2> pa, pb;
  for (int i = 0; i < 10; ++i) {
    Point2 p{d(rng), d(rng)};
    pa.push_back(p);
    pb.push_back(warp_homography(p, h));
  }
  auto est1 = estimate_homography_points(pa, pb);
  auto est2 = estimate_homography_points(pa, pb);
  c.expect(est1.has_value(), "estimation failed on exact correspondences");
  if (est1) {
    double err = mean_corner_error(*est1, h, 64, 64);
    c.expect(err < 1e-6, "corner error " + std::to_string(err));
    c.note("corner error on exact correspondences: " + std::to_string(err));
    bool identical = true;
    for (int i = 0; i < 9; ++i)
      identical = identical && est1->h.m[static_cast<size_t>(i)] == est2->h.m[static_cast<size_t>(i)];
    c.expect(identical, "fixed-seed RANSAC not deterministic");
  }
  c.expect(!estimate_homography_points({{0, 0}, {1, 2}, {2, 4}, {3, 6}, {4, 8}},
                                       {{0, 0}, {1, 2}, {2, 4}, {3, 6}, {4, 8}})
               .has_value(),
           "collinear points should fail");
  return c.finish();
}

// ---------------------------------------------------------------------------
// 10. Determinism & persistence
// ---------------------------------------------------------------------------

int criterion10() {
  Criterion c{10, "seeded training is bit-deterministic; files round-trip"};
  fs::path d1 = fs::temp_directory_path() / "deft_acc10_a";
  fs::path d2 = fs::temp_directory_path() / "deft_acc10_b";
  fs::remove_all(d1);
  fs::remove_all(d2);

  TrainConfig cfg;
  cfg.variant = "micro";
  cfg.m_samples = 4;
  cfg.steps = 3;
  cfg.batch_size = 1;
  cfg.grad_accum = 2;
  cfg.image_size = 32;
  cfg.seed = 77;
  cfg.kp_detect = 24;
  cfg.kp_random = 24;
  cfg.detect_threshold = 0.05;
  cfg.synth_pool = 2;

  cfg.out_dir = d1.string();
  TrainResult r1 = train(cfg);
  cfg.out_dir = d2.string();
  TrainResult r2 = train(cfg);
  c.expect(slurp(r1.loss_csv_path) == slurp(r2.loss_csv_path),
           "loss CSVs differ between identical runs");
  c.expect(slurp(r1.checkpoint_path) == slurp(r2.checkpoint_path),
           "checkpoints differ between identical runs");

  // Checkpoint bitwise round-trip through load + save.
  auto model = load_checkpoint(r1.checkpoint_path);
  std::string resaved = (d1 / "resaved.ckpt").string();
  save_checkpoint(resaved, *model);
  c.expect(slurp(r1.checkpoint_path) == slurp(resaved),
           "checkpoint load+save is not bitwise");

  // Descriptor file re-read to identical values.
  std::mt19937_64 rng(71);
  Image img = synth_texture(64, 64, rng);
  DetectionConfig det;
  det.score_threshold = 0.05;
  ExtractionResult ex = extract_features(*model, img, det);
  std::string desc_path = (d1 / "desc.bin").string();
  save_descriptors(desc_path, to_descriptor_file(ex, model->config()));
  DescriptorFile f = load_descriptors(desc_path);
  bool identical = f.records.size() == ex.keypoints.size();
  for (size_t i = 0; identical && i < f.records.size(); ++i) {
    identical = f.records[i].x == ex.keypoints[i].x &&
                f.records[i].y == ex.keypoints[i].y &&
                f.records[i].score == ex.keypoints[i].score;
    for (int j = 0; identical && j < f.dim; ++j)
      identical = f.records[i].desc[static_cast<size_t>(j)] ==
                  static_cast<float>(ex.descriptors.at(static_cast<int>(i), j));
  }
  c.expect(identical, "descriptor file re-read differs");
  c.note("trained twice (3 steps), compared CSV + checkpoint bytes; descriptor file re-read");
  fs::remove_all(d1);
  fs::remove_all(d2);
  return c.finish();
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <1..10|all> [--steps N]\n");
    return 2;
  }
  for (int i = 2; i < argc; ++i) {
    if (std::strcmp(argv[i], "--steps") == 0 && i + 1 < argc)
      g_train_steps_override = std::atoi(argv[i + 1]);
  }
  std::string which = argv[1];
  int (*criteria[])() = {criterion1, criterion2, criterion3, criterion4,
                         criterion5, criterion6, criterion7, criterion8,
                         criterion9, criterion10};
  if (which == "all") {
    int failures = 0;
    for (auto* f : criteria) failures += f();
    return failures == 0 ? 0 : 1;
  }
  int n = std::atoi(which.c_str());
  if (n < 1 || n > 10) {
    std::fprintf(stderr, "unknown criterion %s\n", which.c_str());
    return 2;
  }
  return criteria[n - 1]();
}
