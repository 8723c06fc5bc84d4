#pragma once

#include <string>
#include <vector>

#include "deft/descriptors.hpp"
#include "deft/dkd.hpp"
#include "deft/image.hpp"
#include "deft/model.hpp"

namespace deft {

/// Keypoints with their descriptors, aligned row-for-row.
struct ExtractionResult {
  std::vector<Keypoint> keypoints;
  Tensor descriptors;  // [N, dim]
  int image_w = 0, image_h = 0;
  int pad_x = 0, pad_y = 0;
};

/// Whole inference pipeline: pad to /32, forward, DKD detection, descriptor
/// extraction. Keypoints that land in the padding or too close to a border
/// for the head are discarded.
inline ExtractionResult extract_features(const Model& model, const Image& img,
                                         const DetectionConfig& det) {
  PaddedImage padded = pad_to_multiple(img, 32);
  Model::Forward fwd = model.forward(Model::image_var(padded.image));

  auto cells = select_pixels(fwd.scores.value(), det);
  DetectedKeypoints refined = refine_keypoints(fwd.scores, cells, det);

  // Reject refined positions inside the synthetic padding.
  std::vector<int> keep;
  for (int i = 0; i < static_cast<int>(refined.size()); ++i) {
    double x = refined.positions.value().at(i, 0);
    double y = refined.positions.value().at(i, 1);
    if (x <= img.width() - 1 && y <= img.height() - 1) keep.push_back(i);
  }
  Tensor pos({static_cast<int>(keep.size()), 2});
  std::vector<double> cell_scores;
  for (size_t r = 0; r < keep.size(); ++r) {
    int i = keep[r];
    pos.at(static_cast<int>(r), 0) = refined.positions.value().at(i, 0);
    pos.at(static_cast<int>(r), 1) = refined.positions.value().at(i, 1);
    auto [cx, cy] = refined.pixels[static_cast<size_t>(i)];
    cell_scores.push_back(fwd.scores.value().at(cy, cx));
  }

  HeadOutput desc = model.head().extract(fwd.feature, Var::constant(pos));

  ExtractionResult out;
  out.image_w = img.width();
  out.image_h = img.height();
  out.pad_x = padded.pad_x;
  out.pad_y = padded.pad_y;
  out.descriptors = desc.descriptors.value();
  for (int row : desc.kept) {
    Keypoint kp;
    kp.x = pos.at(row, 0);
    kp.y = pos.at(row, 1);
    kp.score = cell_scores[static_cast<size_t>(row)];
    out.keypoints.push_back(kp);
  }
  return out;
}

inline DescriptorFile to_descriptor_file(const ExtractionResult& r,
                                         const ModelConfig& cfg) {
  DescriptorFile f;
  f.variant = cfg.net.tag();
  f.dim = cfg.net.dim;
  f.m = cfg.sddh_m;
  f.k = cfg.sddh_k;
  f.image_w = r.image_w;
  f.image_h = r.image_h;
  f.pad_x = r.pad_x;
  f.pad_y = r.pad_y;
  for (size_t i = 0; i < r.keypoints.size(); ++i) {
    DescriptorRecord rec;
    rec.x = r.keypoints[i].x;
    rec.y = r.keypoints[i].y;
    rec.score = r.keypoints[i].score;
    for (int c = 0; c < f.dim; ++c)
      rec.desc.push_back(static_cast<float>(r.descriptors.at(static_cast<int>(i), c)));
    f.records.push_back(std::move(rec));
  }
  return f;
}

/// Rehydrates keypoints + descriptors (f32 widened to f64) from a file.
inline ExtractionResult from_descriptor_file(const DescriptorFile& f) {
  ExtractionResult r;
  r.image_w = f.image_w;
  r.image_h = f.image_h;
  r.pad_x = f.pad_x;
  r.pad_y = f.pad_y;
  r.descriptors = Tensor({static_cast<int>(f.records.size()), f.dim});
  for (size_t i = 0; i < f.records.size(); ++i) {
    const DescriptorRecord& rec = f.records[i];
    r.keypoints.push_back({rec.x, rec.y, rec.score});
    for (int c = 0; c < f.dim; ++c)
      r.descriptors.at(static_cast<int>(i), c) = rec.desc[static_cast<size_t>(c)];
  }
  return r;
}

inline std::vector<Point2> keypoint_points(const ExtractionResult& r) {
  std::vector<Point2> pts;
  pts.reserve(r.keypoints.size());
  for (const Keypoint& k : r.keypoints) pts.push_back({k.x, k.y});
  return pts;
}

}  // namespace deft
