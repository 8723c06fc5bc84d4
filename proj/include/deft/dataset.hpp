#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "deft/geometry.hpp"
#include "deft/image.hpp"

namespace deft {

/// One evaluation/training pair with its ground truth (exactly one of
/// homography / pose is set).
struct DatasetEntry {
  std::string image_a;
  std::string image_b;
  std::optional<Homography> homography;
  std::optional<RelativePose> pose;
  std::string scene;
  std::string tag;  // split tag, e.g. "1_2"
};

struct IngestReport {
  std::vector<DatasetEntry> entries;
  std::vector<std::pair<std::string, std::string>> skipped;  // path, reason
};

// ---------------------------------------------------------------------------
// Depth map file: "DEFTDPT1", i32 H, i32 W, f64[H*W], little-endian
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kDepthMagic[8] = {'D', 'E', 'F', 'T', 'D', 'P', 'T', '1'};

}  // namespace detail

inline void save_depth(const std::string& path, const Tensor& depth) {
  if (depth.rank() != 2) throw std::invalid_argument("save_depth: [H,W]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_depth: cannot open " + path);
  out.write(detail::kDepthMagic, 8);
  int32_t h = depth.dim(0), w = depth.dim(1);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(depth.data()),
            static_cast<std::streamsize>(sizeof(double) * depth.size()));
  if (!out) throw std::runtime_error("save_depth: write failed");
}

inline Tensor load_depth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_depth: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kDepthMagic, 8) != 0)
    throw std::runtime_error("load_depth: bad magic in " + path);
  int32_t h = 0, w = 0;
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  if (!in || h <= 0 || w <= 0) throw std::runtime_error("load_depth: bad header");
  Tensor depth({h, w});
  in.read(reinterpret_cast<char*>(depth.data()),
          static_cast<std::streamsize>(sizeof(double) * depth.size()));
  if (!in) throw std::runtime_error("load_depth: truncated " + path);
  return depth;
}

namespace detail {

inline Mat3 load_mat3(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_mat3: cannot open " + path);
  Mat3 m;
  for (int i = 0; i < 9; ++i)
    if (!(in >> m.m[static_cast<size_t>(i)]))
      throw std::runtime_error("load_mat3: malformed " + path);
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------
//
// Homography (HPatches-style) layout:
//   <root>/<scene>/1.ppm ... 6.ppm
//   <root>/<scene>/H_1_2 ... H_1_6   (3x3 row-major text)
// Pose layout:
//   <root>/<pair>/a.ppm, b.ppm
//   <root>/<pair>/pose.txt      (R row-major 9 numbers, then t 3 numbers)
//   <root>/<pair>/K_a.txt, K_b.txt
//   <root>/<pair>/depth_a.bin, depth_b.bin
// A directory qualifying for both is read as HPatches-style.

inline IngestReport ingest(const std::string& root) {
  namespace fs = std::filesystem;
  IngestReport report;
  if (!fs::is_directory(root))
    throw std::invalid_argument("ingest: not a directory: " + root);

  std::vector<fs::path> scenes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) scenes.push_back(e.path());
  std::sort(scenes.begin(), scenes.end());

  for (const fs::path& scene : scenes) {
    fs::path ref = scene / "1.ppm";
    if (fs::exists(ref)) {
      // HPatches-style: pairs (1, n) for n = 2..6.
      for (int n = 2; n <= 6; ++n) {
        fs::path img = scene / (std::to_string(n) + ".ppm");
        fs::path hfile = scene / ("H_1_" + std::to_string(n));
        if (!fs::exists(img)) {
          report.skipped.emplace_back(img.string(), "missing image");
          continue;
        }
        if (!fs::exists(hfile)) {
          report.skipped.emplace_back(hfile.string(), "missing homography");
          continue;
        }
        DatasetEntry entry;
        entry.image_a = ref.string();
        entry.image_b = img.string();
        entry.scene = scene.filename().string();
        entry.tag = "1_" + std::to_string(n);
        try {
          entry.homography = load_homography(hfile.string());
        } catch (const std::exception& ex) {
          report.skipped.emplace_back(hfile.string(), ex.what());
          continue;
        }
        report.entries.push_back(std::move(entry));
      }
      continue;
    }
    fs::path pa = scene / "a.ppm";
    fs::path pb = scene / "b.ppm";
    if (fs::exists(pa) && fs::exists(pb)) {
      DatasetEntry entry;
      entry.image_a = pa.string();
      entry.image_b = pb.string();
      entry.scene = scene.filename().string();
      entry.tag = "ab";
      try {
        RelativePose pose;
        std::ifstream pin((scene / "pose.txt").string());
        if (!pin) throw std::runtime_error("missing pose.txt");
        for (int i = 0; i < 9; ++i)
          if (!(pin >> pose.r_ab.m[static_cast<size_t>(i)]))
            throw std::runtime_error("malformed pose.txt");
        if (!(pin >> pose.t_ab.x >> pose.t_ab.y >> pose.t_ab.z))
          throw std::runtime_error("malformed pose.txt (translation)");
        pose.k_a = detail::load_mat3((scene / "K_a.txt").string());
        pose.k_b = detail::load_mat3((scene / "K_b.txt").string());
        pose.depth_a = load_depth((scene / "depth_a.bin").string());
        pose.depth_b = load_depth((scene / "depth_b.bin").string());
        // Basic sanity: R orthonormal, depths positive somewhere.
        Mat3 rtr = pose.r_ab.transposed().mul(pose.r_ab);
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j)
            if (std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0)) > 1e-9)
              throw std::runtime_error("R is not a rotation");
        entry.pose = std::move(pose);
      } catch (const std::exception& ex) {
        report.skipped.emplace_back(scene.string(), ex.what());
        continue;
      }
      report.entries.push_back(std::move(entry));
      continue;
    }
    report.skipped.emplace_back(scene.string(), "unrecognized scene layout");
  }
  return report;
}

/// Writes a homography-style scene (images plus H_1_n files); the inverse of
/// the HPatches-style branch of ingest().
inline void write_hpatches_scene(const std::string& scene_dir,
                                 const std::vector<Image>& images,
                                 const std::vector<Homography>& h_1_n) {
  namespace fs = std::filesystem;
  if (images.size() != h_1_n.size() + 1)
    throw std::invalid_argument("write_hpatches_scene: need N images, N-1 homographies");
  fs::create_directories(scene_dir);
  for (size_t i = 0; i < images.size(); ++i)
    save_image_ppm(scene_dir + "/" + std::to_string(i + 1) + ".ppm", images[i]);
  for (size_t i = 0; i < h_1_n.size(); ++i)
    save_homography(scene_dir + "/H_1_" + std::to_string(i + 2), h_1_n[i]);
}

inline Warp warp_from_entry(const DatasetEntry& e) {
  if (e.homography) return Warp::from_homography(*e.homography);
  if (e.pose) return Warp::from_pose(*e.pose);
  throw std::logic_error("warp_from_entry: entry has no ground truth");
}

}  // namespace deft
