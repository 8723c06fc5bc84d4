#pragma once

#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "deft/dataset.hpp"
#include "deft/evalbench.hpp"
#include "deft/extract.hpp"

namespace deft {

struct PairMetrics {
  std::string scene;
  std::string tag;
  int keypoints_a = 0, keypoints_b = 0;
  int putative = 0, correct = 0;
  int covisible = 0;
  double mma = 0.0;
  double ms = 0.0;
  double rep = 0.0;
  bool mha_ok = false;
  bool mha_defined = false;  // only homography ground truth scores MHA
  double corner_error = -1.0;
};

struct EvalReport {
  std::vector<PairMetrics> pairs;
  double mma = 0.0, mha = 0.0, ms = 0.0, rep = 0.0;
  double threshold = 3.0;

  void aggregate() {
    if (pairs.empty()) return;
    double sm = 0, sms = 0, sr = 0;
    int mha_num = 0, mha_den = 0;
    for (const PairMetrics& p : pairs) {
      sm += p.mma;
      sms += p.ms;
      sr += p.rep;
      if (p.mha_defined) {
        ++mha_den;
        mha_num += p.mha_ok ? 1 : 0;
      }
    }
    mma = sm / pairs.size();
    ms = sms / pairs.size();
    rep = sr / pairs.size();
    mha = mha_den > 0 ? static_cast<double>(mha_num) / mha_den : 0.0;
  }
};

struct EvalOptions {
  DetectionConfig det;
  double threshold = 3.0;
  RansacParams ransac;
  bool overlays = false;
  std::string overlay_dir;
};

// ---------------------------------------------------------------------------
// Match overlays (side-by-side, error-colored lines)
// ---------------------------------------------------------------------------

namespace detail {

inline void draw_line(Image& img, Point2 a, Point2 b, double r, double g,
                      double bl) {
  int steps = static_cast<int>(std::max(std::abs(b.x - a.x), std::abs(b.y - a.y))) + 1;
  for (int i = 0; i <= steps; ++i) {
    double t = static_cast<double>(i) / steps;
    int x = static_cast<int>(std::lround(a.x + t * (b.x - a.x)));
    int y = static_cast<int>(std::lround(a.y + t * (b.y - a.y)));
    if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) continue;
    img.data.at(y, x, 0) = r;
    img.data.at(y, x, 1) = g;
    img.data.at(y, x, 2) = bl;
  }
}

/// Correct matches fade green (error 0) to yellow (error = th); wrong ones
/// are red.
inline Image match_overlay(const Image& a, const Image& b, const MatchSet& m,
                           const std::vector<Point2>& ka,
                           const std::vector<Point2>& kb, const Warp& warp,
                           double th) {
  int h = std::max(a.height(), b.height());
  Image canvas(h, a.width() + b.width());
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      for (int c = 0; c < 3; ++c) canvas.data.at(y, x, c) = a.data.at(y, x, c);
  for (int y = 0; y < b.height(); ++y)
    for (int x = 0; x < b.width(); ++x)
      for (int c = 0; c < 3; ++c)
        canvas.data.at(y, x + a.width(), c) = b.data.at(y, x, c);
  for (auto [i, j] : m.pairs) {
    Point2 pa = ka[static_cast<size_t>(i)];
    Point2 pb = kb[static_cast<size_t>(j)];
    auto w = warp.forward(pa);
    double err = w ? distance(*w, pb) : th * 10;
    Point2 right{pb.x + a.width(), pb.y};
    if (err < th) {
      double f = err / th;  // 0 green, 1 yellow
      draw_line(canvas, pa, right, f, 1.0, 0.0);
    } else {
      draw_line(canvas, pa, right, 1.0, 0.0, 0.0);
    }
  }
  return canvas;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Evaluation over a dataset
// ---------------------------------------------------------------------------

inline PairMetrics evaluate_pair(const Model& model, const DatasetEntry& entry,
                                 const EvalOptions& opt) {
  Image img_a = load_image_ppm(entry.image_a);
  Image img_b = load_image_ppm(entry.image_b);
  ExtractionResult ra = extract_features(model, img_a, opt.det);
  ExtractionResult rb = extract_features(model, img_b, opt.det);

  PairMetrics pm;
  pm.scene = entry.scene;
  pm.tag = entry.tag;
  pm.keypoints_a = static_cast<int>(ra.keypoints.size());
  pm.keypoints_b = static_cast<int>(rb.keypoints.size());

  MatchSet matches = mnn_match(ra.descriptors, rb.descriptors);
  Warp warp = warp_from_entry(entry);
  auto ka = keypoint_points(ra);
  auto kb = keypoint_points(rb);

  MmaResult mr = mma(matches, ka, kb, warp, opt.threshold);
  pm.mma = mr.value;
  pm.putative = mr.putative;
  pm.correct = mr.correct;

  ImageSize size_a{img_a.width(), img_a.height()};
  ImageSize size_b{img_b.width(), img_b.height()};
  MatchingScoreResult ms = matching_score(matches, ka, kb, warp, size_a, size_b,
                                          opt.threshold);
  pm.ms = ms.value;
  pm.covisible = std::min(ms.covisible_a, ms.covisible_b);
  pm.rep = repeatability(ka, kb, warp, size_a, size_b, opt.threshold);

  if (entry.homography) {
    pm.mha_defined = true;
    auto est = estimate_homography(matches, ka, kb, opt.ransac);
    pm.mha_ok = mha_correct(est, *entry.homography, img_a.width(),
                            img_a.height(), opt.threshold);
    if (est) {
      try {
        pm.corner_error = mean_corner_error(*est, *entry.homography,
                                            img_a.width(), img_a.height());
      } catch (const std::domain_error&) {
        pm.corner_error = -1.0;
      }
    }
  }

  if (opt.overlays && !opt.overlay_dir.empty()) {
    std::filesystem::create_directories(opt.overlay_dir);
    Image overlay = detail::match_overlay(img_a, img_b, matches, ka, kb, warp,
                                          opt.threshold);
    save_image_ppm(opt.overlay_dir + "/" + entry.scene + "_" + entry.tag + ".ppm",
                   overlay);
  }
  return pm;
}

inline EvalReport run_eval(const Model& model,
                           const std::vector<DatasetEntry>& entries,
                           const EvalOptions& opt) {
  EvalReport report;
  report.threshold = opt.threshold;
  for (const DatasetEntry& e : entries)
    report.pairs.push_back(evaluate_pair(model, e, opt));
  report.aggregate();
  return report;
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["threshold"] = r.threshold;
  j["aggregate"] = {{"mma", r.mma}, {"mha", r.mha}, {"ms", r.ms}, {"rep", r.rep},
                    {"pairs", r.pairs.size()}};
  j["pairs"] = nlohmann::json::array();
  for (const PairMetrics& p : r.pairs) {
    nlohmann::json pj = {{"scene", p.scene},
                         {"tag", p.tag},
                         {"keypoints_a", p.keypoints_a},
                         {"keypoints_b", p.keypoints_b},
                         {"putative", p.putative},
                         {"correct", p.correct},
                         {"covisible", p.covisible},
                         {"mma", p.mma},
                         {"ms", p.ms},
                         {"rep", p.rep}};
    if (p.mha_defined) {
      pj["mha_ok"] = p.mha_ok;
      pj["corner_error"] = p.corner_error;
    }
    j["pairs"].push_back(pj);
  }
  return j;
}

inline std::string report_table(const EvalReport& r) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-20s %-6s %6s %6s %8s %8s %8s %8s\n",
                "scene", "pair", "kps", "match", "MMA", "MS", "Rep", "MHA");
  out << line;
  for (const PairMetrics& p : r.pairs) {
    std::snprintf(line, sizeof(line), "%-20s %-6s %6d %6d %8.4f %8.4f %8.4f %8s\n",
                  p.scene.c_str(), p.tag.c_str(), p.keypoints_a, p.putative,
                  p.mma, p.ms, p.rep,
                  p.mha_defined ? (p.mha_ok ? "ok" : "fail") : "-");
    out << line;
  }
  std::snprintf(line, sizeof(line),
                "aggregate over %zu pairs @%.1fpx: MMA %.4f  MHA %.4f  MS %.4f  Rep %.4f\n",
                r.pairs.size(), r.threshold, r.mma, r.mha, r.ms, r.rep);
  out << line;
  return out.str();
}

}  // namespace deft
