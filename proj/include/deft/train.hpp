#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "deft/checkpoint.hpp"
#include "deft/dataset.hpp"
#include "deft/losses.hpp"
#include "deft/model.hpp"
#include "deft/optimizer.hpp"
#include "deft/synth.hpp"

namespace deft {

struct TrainConfig {
  std::string variant = "N";  // T / N / L / micro
  int m_samples = 16;
  int kernel_k = 3;
  std::string head = "sddh";  // sddh / sdh1 / sdh2 / sdh3
  int steps = 2000;
  int batch_size = 2;
  int grad_accum = 6;
  int image_size = 800;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  uint64_t seed = 0;
  double th_gt = 5.0;
  LossWeights weights;
  Temperatures temps;
  int nms_radius = 2;
  double detect_threshold = 0.1;
  int kp_detect = 400;
  int kp_random = 400;
  std::string data_dir;  // empty: synthetic pairs
  std::string out_dir = "out";
  int checkpoint_every = 0;  // 0: final only
  int synth_pool = 16;
  SynthConfig synth;

  void validate() const {
    if (steps < 0 || batch_size < 1 || grad_accum < 1)
      throw std::invalid_argument("TrainConfig: bad step/batch settings");
    if (image_size < 32 || image_size % 32 != 0)
      throw std::invalid_argument("TrainConfig: image_size must divide by 32");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
      throw std::invalid_argument("TrainConfig: betas must lie in (0,1)");
    if (th_gt <= 0) throw std::invalid_argument("TrainConfig: th_gt must be > 0");
    if (kp_detect < 0 || kp_random < 0)
      throw std::invalid_argument("TrainConfig: keypoint budgets must be >= 0");
    weights.validate();
    temps.validate();
  }

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.net = NetConfig::preset(variant);
    mc.sddh_m = m_samples;
    mc.sddh_k = kernel_k;
    if (head == "sddh") mc.head_type = HeadType::kSddh;
    else if (head == "sdh1") mc.head_type = HeadType::kSdh1;
    else if (head == "sdh2") mc.head_type = HeadType::kSdh2;
    else if (head == "sdh3") mc.head_type = HeadType::kSdh3;
    else throw std::invalid_argument("TrainConfig: unknown head " + head);
    mc.seed = seed;
    return mc;
  }

  DetectionConfig detection() const {
    DetectionConfig d;
    d.radius = nms_radius;
    d.score_threshold = detect_threshold;
    d.top_k = kp_detect;
    d.t_det = temps.det;
    return d;
  }
};

// ---------------------------------------------------------------------------
// Flat key=value config files
// ---------------------------------------------------------------------------

inline TrainConfig parse_train_config(std::istream& in) {
  TrainConfig cfg;
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
      if (!blank)
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }

  auto geti = [&](const char* k, int& out) { if (kv.count(k)) { out = std::stoi(kv[k]); kv.erase(k); } };
  auto getd = [&](const char* k, double& out) { if (kv.count(k)) { out = std::stod(kv[k]); kv.erase(k); } };
  auto gets = [&](const char* k, std::string& out) { if (kv.count(k)) { out = kv[k]; kv.erase(k); } };

  gets("variant", cfg.variant);
  geti("m", cfg.m_samples);
  geti("k", cfg.kernel_k);
  gets("head", cfg.head);
  geti("steps", cfg.steps);
  geti("batch_size", cfg.batch_size);
  geti("grad_accum", cfg.grad_accum);
  geti("image_size", cfg.image_size);
  getd("lr", cfg.lr);
  getd("beta1", cfg.beta1);
  getd("beta2", cfg.beta2);
  if (kv.count("seed")) { cfg.seed = std::stoull(kv["seed"]); kv.erase("seed"); }
  getd("th_gt", cfg.th_gt);
  getd("w_rp", cfg.weights.rp);
  getd("w_pk", cfg.weights.pk);
  getd("w_ds", cfg.weights.ds);
  getd("w_re", cfg.weights.re);
  getd("t_det", cfg.temps.det);
  getd("t_des", cfg.temps.des);
  getd("t_rel", cfg.temps.rel);
  geti("nms_radius", cfg.nms_radius);
  getd("detect_threshold", cfg.detect_threshold);
  geti("kp_detect", cfg.kp_detect);
  geti("kp_random", cfg.kp_random);
  gets("data_dir", cfg.data_dir);
  gets("out_dir", cfg.out_dir);
  geti("checkpoint_every", cfg.checkpoint_every);
  geti("synth_pool", cfg.synth_pool);
  getd("synth_rotation", cfg.synth.max_rotation_deg);
  getd("synth_min_scale", cfg.synth.min_scale);
  getd("synth_max_scale", cfg.synth.max_scale);
  getd("synth_shear", cfg.synth.max_shear);
  getd("synth_perspective", cfg.synth.max_perspective);
  getd("synth_translation", cfg.synth.max_translation);
  getd("synth_brightness", cfg.synth.brightness);
  getd("synth_contrast", cfg.synth.contrast);
  getd("synth_noise", cfg.synth.noise);
  if (!kv.empty())
    throw std::runtime_error("config: unknown key '" + kv.begin()->first + "'");
  cfg.validate();
  return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_train_config: cannot open " + path);
  return parse_train_config(in);
}

// ---------------------------------------------------------------------------
// Loss keypoint selection: detected + random, NMS-deduplicated
// ---------------------------------------------------------------------------

/// Top detected cells plus uniformly random cells, deduplicated so that no
/// two kept cells fall within the NMS radius (Chebyshev), higher score wins.
inline std::vector<std::pair<int, int>> loss_keypoint_cells(
    const Tensor& scores, const DetectionConfig& det, int n_random,
    std::mt19937_64& rng) {
  int h = scores.dim(0), w = scores.dim(1);
  auto detected = select_pixels(scores, det);

  int margin = det.window() / 2 + 1;
  std::vector<std::pair<int, int>> random_cells;
  if (w - 1 - margin >= margin && h - 1 - margin >= margin) {
    std::uniform_int_distribution<int> xd(margin, w - 1 - margin);
    std::uniform_int_distribution<int> yd(margin, h - 1 - margin);
    for (int i = 0; i < n_random; ++i) random_cells.emplace_back(xd(rng), yd(rng));
  }

  struct Cand {
    double score;
    int x, y;
    bool detected;
  };
  std::vector<Cand> cands;
  for (auto [x, y] : detected) cands.push_back({scores.at(y, x), x, y, true});
  for (auto [x, y] : random_cells) cands.push_back({scores.at(y, x), x, y, false});
  std::sort(cands.begin(), cands.end(), [w](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.y * w + a.x < b.y * w + b.x;
  });

  std::vector<std::pair<int, int>> kept;
  for (const Cand& c : cands) {
    bool clash = false;
    for (auto [kx, ky] : kept)
      if (std::abs(kx - c.x) <= det.radius && std::abs(ky - c.y) <= det.radius) {
        clash = true;
        break;
      }
    if (!clash) kept.emplace_back(c.x, c.y);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Pair loss
// ---------------------------------------------------------------------------

/// Differentiable bidirectional warp plus its scalar twin for matching.
struct DiffWarp {
  std::function<Var(const Var&)> forward;
  std::function<Var(const Var&)> backward;
  Warp scalar;

  static DiffWarp from_homography(const Homography& h) {
    DiffWarp w;
    Homography inv = h.inverse();
    w.forward = [h](const Var& p) { return warp_points_homography(p, h); };
    w.backward = [inv](const Var& p) { return warp_points_homography(p, inv); };
    w.scalar = Warp::from_homography(h);
    return w;
  }

  static DiffWarp from_pose(const RelativePose& pose) {
    DiffWarp w;
    RelativePose inv = pose.inverse();
    w.forward = [pose](const Var& p) { return warp_points_perspective(p, pose); };
    w.backward = [inv](const Var& p) { return warp_points_perspective(p, inv); };
    w.scalar = Warp::from_pose(pose);
    return w;
  }

  static DiffWarp from_entry_gt(const DatasetEntry& e) {
    if (e.homography) return from_homography(*e.homography);
    if (e.pose) return from_pose(*e.pose);
    throw std::logic_error("DiffWarp: entry has no ground truth");
  }
};

struct PairLossValues {
  double rp = 0, pk = 0, ds = 0, re = 0, total = 0;
  int matches = 0;
  bool valid = false;  // false when no matched keypoints existed
};

struct PairLoss {
  Var total;
  PairLossValues values;
};

/// Full training loss of one image pair: detect + random loss keypoints on
/// both score maps, NMS-dedup, refine, extract descriptors, mutual-nearest
/// matching under the ground-truth warp, then the weighted sum of the four
/// terms.
inline PairLoss compute_pair_loss(Model& model, const Image& img_a,
                                  const Image& img_b, const DiffWarp& warp,
                                  const TrainConfig& cfg, std::mt19937_64& rng) {
  Model::Forward fa = model.forward(Model::image_var(img_a));
  Model::Forward fb = model.forward(Model::image_var(img_b));
  DetectionConfig det = cfg.detection();

  auto cells_a = loss_keypoint_cells(fa.scores.value(), det, cfg.kp_random, rng);
  auto cells_b = loss_keypoint_cells(fb.scores.value(), det, cfg.kp_random, rng);
  PairLoss out;
  out.total = Var::scalar(0.0);
  if (cells_a.empty() || cells_b.empty()) return out;

  DetectedKeypoints kp_a = refine_keypoints(fa.scores, cells_a, det);
  DetectedKeypoints kp_b = refine_keypoints(fb.scores, cells_b, det);

  HeadOutput desc_a = model.head().extract(fa.feature, kp_a.positions);
  HeadOutput desc_b = model.head().extract(fb.feature, kp_b.positions);
  if (desc_a.kept.empty() || desc_b.kept.empty()) return out;

  // Match the descriptor-bearing keypoints under the ground-truth warp.
  std::vector<Point2> pts_a, pts_b;
  for (int idx : desc_a.kept)
    pts_a.push_back({kp_a.positions.value().at(idx, 0), kp_a.positions.value().at(idx, 1)});
  for (int idx : desc_b.kept)
    pts_b.push_back({kp_b.positions.value().at(idx, 0), kp_b.positions.value().at(idx, 1)});
  CorrespondenceSet matches = gt_correspondences(pts_a, pts_b, warp.scalar, cfg.th_gt);
  if (matches.empty()) return out;

  std::vector<std::pair<int, int>> match_rows = matches.pairs;  // descriptor rows
  std::vector<int> rows_a, rows_b, kp_idx_a, kp_idx_b;
  std::vector<std::pair<int, int>> cells_ma, cells_mb;
  for (auto [i, j] : match_rows) {
    rows_a.push_back(i);
    rows_b.push_back(j);
    kp_idx_a.push_back(desc_a.kept[static_cast<size_t>(i)]);
    kp_idx_b.push_back(desc_b.kept[static_cast<size_t>(j)]);
    cells_ma.push_back(cells_a[static_cast<size_t>(desc_a.kept[static_cast<size_t>(i)])]);
    cells_mb.push_back(cells_b[static_cast<size_t>(desc_b.kept[static_cast<size_t>(j)])]);
  }

  Var pa = gather_rows(kp_a.positions, kp_idx_a);
  Var pb = gather_rows(kp_b.positions, kp_idx_b);
  Var pab = warp.forward(pa);
  Var pba = warp.backward(pb);

  LossValue l_rp = reprojection_loss(pa, pb, pab, pba);

  LossValue pk_a = dispersity_peak_loss(fa.scores, cells_ma, pa, det.window());
  LossValue pk_b = dispersity_peak_loss(fb.scores, cells_mb, pb, det.window());
  LossValue l_pk = LossValue::of(scale(add(pk_a.value, pk_b.value), 0.5));

  LossValue l_ds = sparse_nre_loss(desc_a.descriptors, desc_b.descriptors,
                                   match_rows, cfg.temps.des);

  int h_a = fa.scores.dim(0), w_a = fa.scores.dim(1);
  int h_b = fb.scores.dim(0), w_b = fb.scores.dim(1);
  Var s_a = reshape(bilinear_sample(reshape(fa.scores, {h_a, w_a, 1}), pa),
                    {static_cast<int>(match_rows.size())});
  Var s_b = reshape(bilinear_sample(reshape(fb.scores, {h_b, w_b, 1}), pb),
                    {static_cast<int>(match_rows.size())});
  Var r_a = reliability_rows(desc_a.descriptors, desc_b.descriptors, rows_a,
                             rows_b, cfg.temps.rel);
  Var r_b = reliability_rows(desc_b.descriptors, desc_a.descriptors, rows_b,
                             rows_a, cfg.temps.rel);
  LossValue re_a = reliable_loss(s_a, r_a);
  LossValue re_b = reliable_loss(s_b, r_b);
  LossValue l_re =
      (re_a.valid && re_b.valid)
          ? LossValue::of(scale(add(re_a.value, re_b.value), 0.5))
          : (re_a.valid ? re_a : re_b);

  out.total = total_loss(l_rp, l_pk, l_ds, l_re, cfg.weights);
  out.values.rp = l_rp.valid ? l_rp.value.value().item() : 0.0;
  out.values.pk = l_pk.valid ? l_pk.value.value().item() : 0.0;
  out.values.ds = l_ds.valid ? l_ds.value.value().item() : 0.0;
  out.values.re = l_re.valid ? l_re.value.value().item() : 0.0;
  out.values.total = out.total.value().item();
  out.values.matches = static_cast<int>(match_rows.size());
  out.values.valid = true;
  return out;
}

// ---------------------------------------------------------------------------
// Data source for training: synthetic pairs or an ingested directory
// ---------------------------------------------------------------------------

class TrainData {
 public:
  TrainData(const TrainConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    if (cfg.data_dir.empty()) {
      for (int i = 0; i < cfg.synth_pool; ++i)
        pool_.push_back(synth_texture(cfg.image_size, cfg.image_size, rng));
    } else {
      IngestReport report = ingest(cfg.data_dir);
      for (const auto& [path, reason] : report.skipped)
        std::cerr << "[ingest] skipped " << path << ": " << reason << "\n";
      entries_ = std::move(report.entries);
      if (entries_.empty())
        throw std::runtime_error("train: dataset is empty: " + cfg.data_dir);
    }
  }

  /// Draws one training pair with its differentiable ground-truth warp.
  std::tuple<Image, Image, DiffWarp> draw(std::mt19937_64& rng) {
    if (!pool_.empty()) {
      std::uniform_int_distribution<size_t> pick(0, pool_.size() - 1);
      auto [pair, h] = synth_pair(pool_[pick(rng)], cfg_.synth, rng);
      return {std::move(pair.a), std::move(pair.b), DiffWarp::from_homography(h)};
    }
    std::uniform_int_distribution<size_t> pick(0, entries_.size() - 1);
    const DatasetEntry& e = entries_[pick(rng)];
    Image a = padded(load_image_ppm(e.image_a));
    Image b = padded(load_image_ppm(e.image_b));
    return {std::move(a), std::move(b), DiffWarp::from_entry_gt(e)};
  }

 private:
  Image padded(const Image& img) const { return pad_to_multiple(img, 32).image; }

  TrainConfig cfg_;
  std::vector<Image> pool_;
  std::vector<DatasetEntry> entries_;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainResult {
  std::string checkpoint_path;
  std::string loss_csv_path;
  std::vector<PairLossValues> step_means;
};

/// Deterministic given (seed, config, data): per optimizer step, grad_accum
/// micro-batches of batch_size pairs are backpropagated onto the summed
/// gradient, then one Adam update is applied. A non-finite loss aborts with
/// a diagnostic dump of the offending pair.
inline TrainResult train(const TrainConfig& cfg, Model& model) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 1);
  TrainData data(cfg, rng);
  AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.beta1 = cfg.beta1;
  acfg.beta2 = cfg.beta2;
  Adam adam(acfg);

  TrainResult result;
  result.loss_csv_path = cfg.out_dir + "/loss.csv";
  result.checkpoint_path = cfg.out_dir + "/model.ckpt";
  std::ofstream csv(result.loss_csv_path);
  if (!csv) throw std::runtime_error("train: cannot open " + result.loss_csv_path);
  csv << "step,loss_rp,loss_pk,loss_ds,loss_re,total\n";
  csv.precision(12);

  // Per-pair gradients are summed into a dedicated accumulator so that the
  // accumulated update is, floating-point-exactly, one update on the summed
  // gradient.
  std::vector<Tensor> accum;
  for (const auto& [name, v] : model.params().entries())
    accum.emplace_back(v.value().shape());

  for (int step = 1; step <= cfg.steps; ++step) {
    PairLossValues mean;
    int counted = 0;
    for (Tensor& t : accum) t.fill(0.0);
    for (int micro = 0; micro < cfg.grad_accum; ++micro) {
      for (int b = 0; b < cfg.batch_size; ++b) {
        auto [img_a, img_b, warp] = data.draw(rng);
        PairLoss loss;
        try {
          loss = compute_pair_loss(model, img_a, img_b, warp, cfg, rng);
        } catch (const std::runtime_error& ex) {
          // Non-finite loss: dump the offending pair and re-throw.
          save_image_ppm(cfg.out_dir + "/diagnostic_a.ppm", img_a);
          save_image_ppm(cfg.out_dir + "/diagnostic_b.ppm", img_b);
          throw std::runtime_error(std::string("training aborted at step ") +
                                   std::to_string(step) + ": " + ex.what() +
                                   " (pair dumped to " + cfg.out_dir + ")");
        }
        if (!loss.values.valid) continue;
        model.params().zero_grads();
        backward(scale(loss.total, 1.0 / cfg.batch_size));
        size_t pi = 0;
        for (const auto& [name, v] : model.params().entries()) {
          if (v.node->grad.size() > 0) accum[pi] += v.node->grad;
          ++pi;
        }
        mean.rp += loss.values.rp;
        mean.pk += loss.values.pk;
        mean.ds += loss.values.ds;
        mean.re += loss.values.re;
        mean.total += loss.values.total;
        mean.matches += loss.values.matches;
        ++counted;
      }
    }
    {
      size_t pi = 0;
      for (auto& [name, v] : model.params().entries()) {
        v.grad_ref() = accum[pi];
        ++pi;
      }
    }
    adam.step(model.params());
    model.params().zero_grads();
    if (counted > 0) {
      mean.rp /= counted;
      mean.pk /= counted;
      mean.ds /= counted;
      mean.re /= counted;
      mean.total /= counted;
      mean.valid = true;
    }
    csv << step << "," << mean.rp << "," << mean.pk << "," << mean.ds << ","
        << mean.re << "," << mean.total << "\n";
    result.step_means.push_back(mean);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
      save_checkpoint(cfg.out_dir + "/model_step" + std::to_string(step) + ".ckpt",
                      model);
  }
  csv.flush();
  save_checkpoint(result.checkpoint_path, model);
  return result;
}

inline TrainResult train(const TrainConfig& cfg) {
  Model model(cfg.model_config());
  return train(cfg, model);
}

}  // namespace deft
