#include <CLI11.hpp>
#include <iostream>
#include <json.hpp>

#include "deft/complexity.hpp"
#include "deft/evalrun.hpp"
#include "deft/train.hpp"

namespace {

int cmd_train(const std::string& config_path) {
  deft::TrainConfig cfg = deft::load_train_config(config_path);
  deft::Model model(cfg.model_config());
  std::cout << "training " << cfg.variant << " (M=" << cfg.m_samples
            << ", K=" << cfg.kernel_k << ") for " << cfg.steps << " steps, "
            << model.params().total_size() << " parameters\n";
  deft::TrainResult result = deft::train(cfg, model);
  if (!result.step_means.empty()) {
    const auto& last = result.step_means.back();
    std::cout << "final step loss: total " << last.total << " (rp " << last.rp
              << ", pk " << last.pk << ", ds " << last.ds << ", re " << last.re
              << ")\n";
  }
  std::cout << "checkpoint: " << result.checkpoint_path << "\n";
  std::cout << "loss log:   " << result.loss_csv_path << "\n";
  return 0;
}

int cmd_extract(const std::string& ckpt, const std::string& image,
                const std::string& out, double threshold, int top_k, int radius) {
  auto model = deft::load_checkpoint(ckpt);
  deft::Image img = deft::load_image_ppm(image);
  deft::DetectionConfig det;
  det.score_threshold = threshold;
  det.top_k = top_k;
  det.radius = radius;
  deft::ExtractionResult r = deft::extract_features(*model, img, det);
  deft::save_descriptors(out, deft::to_descriptor_file(r, model->config()));
  std::cout << r.keypoints.size() << " keypoints -> " << out << "\n";
  return 0;
}

int cmd_match(const std::string& a, const std::string& b, const std::string& out) {
  deft::ExtractionResult ra = deft::from_descriptor_file(deft::load_descriptors(a));
  deft::ExtractionResult rb = deft::from_descriptor_file(deft::load_descriptors(b));
  deft::MatchSet m = deft::mnn_match(ra.descriptors, rb.descriptors);
  nlohmann::json j;
  j["a"] = a;
  j["b"] = b;
  j["pairs"] = m.pairs;
  j["similarity"] = m.similarity;
  auto dump_kps = [](const deft::ExtractionResult& r) {
    nlohmann::json arr = nlohmann::json::array();
    for (const deft::Keypoint& k : r.keypoints) arr.push_back({k.x, k.y, k.score});
    return arr;
  };
  j["keypoints_a"] = dump_kps(ra);
  j["keypoints_b"] = dump_kps(rb);
  std::ofstream of(out);
  if (!of) throw std::runtime_error("match: cannot open " + out);
  of << j.dump(2) << "\n";
  std::cout << m.size() << " mutual matches -> " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& dataset, const std::string& ckpt,
             const std::string& report_path, double threshold,
             double score_threshold, int top_k, bool overlays,
             const std::string& overlay_dir) {
  auto model = deft::load_checkpoint(ckpt);
  deft::IngestReport ingested = deft::ingest(dataset);
  for (const auto& [path, reason] : ingested.skipped)
    std::cerr << "[ingest] skipped " << path << ": " << reason << "\n";
  if (ingested.entries.empty()) {
    std::cerr << "eval: no usable pairs in " << dataset << "\n";
    return 1;
  }
  deft::EvalOptions opt;
  opt.threshold = threshold;
  opt.det.score_threshold = score_threshold;
  opt.det.top_k = top_k;
  opt.overlays = overlays;
  opt.overlay_dir = overlay_dir.empty() ? report_path + ".overlays" : overlay_dir;
  deft::EvalReport report = deft::run_eval(*model, ingested.entries, opt);
  std::cout << deft::report_table(report);
  std::ofstream of(report_path);
  if (!of) throw std::runtime_error("eval: cannot open " + report_path);
  of << deft::report_json(report).dump(2) << "\n";
  std::cout << "report -> " << report_path << "\n";
  return 0;
}

int cmd_flops(int h, int w, int c, int k, int m, int n, bool as_json) {
  deft::CostQuery q{h, w, c, k, m, n};
  deft::OpCountReport dmh = deft::dmh_cost(q);
  deft::OpCountReport sddh = deft::sddh_cost(q);
  if (as_json) {
    nlohmann::json j;
    j["query"] = {{"H", h}, {"W", w}, {"C", c}, {"K", k}, {"M", m}, {"N", n}};
    for (const auto& rep : {dmh, sddh}) {
      nlohmann::json stages = nlohmann::json::object();
      for (const auto& [name, ops] : rep.stages) stages[name] = ops;
      j[rep.method] = {{"stages", stages}, {"total", rep.total()}};
    }
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::cout << "Cost model for H=" << h << " W=" << w << " C=" << c << " K=" << k
            << " M=" << m << " N=" << n << "\n";
  std::cout << deft::format_report(dmh);
  std::cout << deft::format_report(sddh);
  std::cout << deft::reference_table_text();
  std::cout << deft::convention_text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deft: deformable keypoint/descriptor extraction toolkit"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string config_path;
  train->add_option("--config", config_path, "flat key=value config file")->required();

  auto* extract = app.add_subcommand("extract", "extract keypoints + descriptors");
  std::string ckpt, image, out;
  double threshold = 0.2;
  int top_k = 5000, radius = 2;
  extract->add_option("--ckpt", ckpt, "checkpoint file")->required();
  extract->add_option("--image", image, "input image (ppm/pgm)")->required();
  extract->add_option("--out", out, "output descriptor file")->required();
  extract->add_option("--threshold", threshold, "score threshold (default 0.2)");
  extract->add_option("--top-k", top_k, "max keypoints (default 5000)");
  extract->add_option("--radius", radius, "NMS radius (default 2)");

  auto* match = app.add_subcommand("match", "mutual-NN match two descriptor files");
  std::string file_a, file_b, match_out;
  match->add_option("--a", file_a, "descriptor file A")->required();
  match->add_option("--b", file_b, "descriptor file B")->required();
  match->add_option("--out", match_out, "output JSON")->required();

  auto* eval = app.add_subcommand("eval", "evaluate matching metrics on a dataset");
  std::string dataset, eval_ckpt, report = "report.json", overlay_dir;
  double eval_th = 3.0, eval_score_th = 0.2;
  int eval_top_k = 5000;
  bool overlays = false;
  eval->add_option("--dataset", dataset, "dataset directory")->required();
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--report", report, "output JSON report");
  eval->add_option("--threshold", eval_th, "pixel error threshold (default 3)");
  eval->add_option("--score-threshold", eval_score_th, "detection threshold");
  eval->add_option("--top-k", eval_top_k, "max keypoints per image");
  eval->add_flag("--overlays", overlays, "write match overlay images");
  eval->add_option("--overlay-dir", overlay_dir, "overlay output directory");

  auto* flops = app.add_subcommand("flops", "DMH vs SDDH analytic op counts");
  int fh = 480, fw = 640, fc = 128, fk = 5, fm = 25, fn = 5000;
  bool flops_json = false;
  flops->add_option("--H", fh, "feature map height (default 480)");
  flops->add_option("--W", fw, "feature map width (default 640)");
  flops->add_option("--C", fc, "channels (default 128)");
  flops->add_option("--K", fk, "kernel size (default 5)");
  flops->add_option("--M", fm, "SDDH sample positions (default 25)");
  flops->add_option("--N", fn, "keypoints (default 5000)");
  flops->add_flag("--json", flops_json, "print JSON instead of the table");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config_path);
    if (*extract) return cmd_extract(ckpt, image, out, threshold, top_k, radius);
    if (*match) return cmd_match(file_a, file_b, match_out);
    if (*eval)
      return cmd_eval(dataset, eval_ckpt, report, eval_th, eval_score_th,
                      eval_top_k, overlays, overlay_dir);
    if (*flops) return cmd_flops(fh, fw, fc, fk, fm, fn, flops_json);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
