#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "objslam/error.hpp"
#include "objslam/harness.hpp"
#include "objslam/io.hpp"

namespace fs = std::filesystem;
using namespace objslam;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool no_prior = false;
  std::string cov_mode;
  bool single_view = false;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "random seed");
  app->add_flag("--no-prior", o.no_prior, "disable prior detections for symmetric objects");
  app->add_option("--cov-mode", o.cov_mode, "calibrated | identity | manual[:pixels^2]");
  app->add_flag("--single-view", o.single_view, "per-frame PnP only, no SLAM");
  app->add_option("--out", o.out, "output directory");
  app->add_option("--set", o.overrides, "extra key=value override, repeatable");
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig cfg;
  if (!o.config.empty()) apply_config_text(read_text(o.config), cfg);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kParseError, "--set expects key=value, got '" + kv + "'");
    apply_config_value(kv.substr(0, eq), kv.substr(eq + 1), cfg);
  }
  if (o.seed) cfg.set_seed(*o.seed);
  if (o.no_prior) cfg.frontend.use_prior = false;
  if (o.single_view) cfg.single_view_only = true;
  if (!o.cov_mode.empty()) {
    const auto colon = o.cov_mode.find(':');
    cfg.noise.cov_mode = covariance_mode_from_string(o.cov_mode.substr(0, colon));
    if (colon != std::string::npos) apply_config_value("noise.manual_cov", o.cov_mode.substr(colon + 1), cfg);
  }
  if (!o.out.empty()) cfg.out_dir = o.out;
  cfg.validate();
  return cfg;
}

void write_outputs(const RunConfig& cfg, const GroundTruth& gt, const PipelineOutput& out) {
  const fs::path dir = cfg.out_dir;
  const RunReport& rep = out.report;
  write_text(dir / "report.json", rep.to_json(true).dump(2) + "\n");
  write_text(dir / "metrics.csv", metrics_csv(rep.table));
  write_text(dir / "calibration.csv", calibration_csv(rep.calibration));
  write_text(dir / "trace.csv", rep.trace_csv());
  write_text(dir / "scene.json", scene_to_json(gt).dump(2) + "\n");
  write_text(dir / "config.txt", config_to_text(cfg));
  write_text(dir / "detections.jsonl", out.dump.to_jsonl());
}

void print_summary(const RunReport& rep) {
  std::cout << "frames tracked " << rep.frames_tracked << ", external " << rep.frames_external << ", dropped "
            << rep.frames_dropped << "\n";
  std::cout << metrics_csv(rep.table);
  std::cout << "calibration: chi2-99 pass " << rep.calibration.fraction_pass_chi2_99 << " over "
            << rep.calibration.count << " detections\n";
  std::cout << "time " << rep.seconds << " s\n";
}

GroundTruth load_or_generate(const std::string& scene_path, const RunConfig& cfg) {
  if (scene_path.empty()) return generate_scene(cfg);
  return scene_from_json(nlohmann::json::parse(read_text(scene_path)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-level SLAM with semantic keypoints: simulation harness"};
  app.require_subcommand(1);

  CommonOptions gen_opts, run_opts, replay_opts;
  std::string run_scene, replay_scene, replay_dump;
  std::vector<std::string> report_inputs;
  std::string report_out;

  auto* gen = app.add_subcommand("gen-scene", "generate a ground-truth scene");
  add_common(gen, gen_opts);

  auto* run = app.add_subcommand("run", "simulate, track, optimize and score");
  add_common(run, run_opts);
  run->add_option("--scene", run_scene, "use this scene.json instead of generating one")->check(CLI::ExistingFile);

  auto* replay = app.add_subcommand("replay", "rerun the pipeline from a detection dump");
  add_common(replay, replay_opts);
  replay->add_option("--scene", replay_scene, "scene.json of the recorded run")->required()->check(CLI::ExistingFile);
  replay->add_option("--detections", replay_dump, "detections.jsonl")->required()->check(CLI::ExistingFile);

  auto* report = app.add_subcommand("report", "aggregate report.json files into one CSV");
  report->add_option("reports", report_inputs, "report.json files or run directories")->required();
  report->add_option("--out", report_out, "write the CSV here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const RunConfig cfg = resolve(gen_opts);
      const GroundTruth gt = generate_scene(cfg);
      write_text(fs::path(cfg.out_dir) / "scene.json", scene_to_json(gt).dump(2) + "\n");
      write_text(fs::path(cfg.out_dir) / "config.txt", config_to_text(cfg));
      std::cout << "scene with " << gt.models.size() << " objects and " << gt.cameras.size() << " frames written to "
                << cfg.out_dir << "\n";
    } else if (*run) {
      const RunConfig cfg = resolve(run_opts);
      const GroundTruth gt = load_or_generate(run_scene, cfg);
      const PipelineOutput out = run_pipeline(cfg, gt);
      write_outputs(cfg, gt, out);
      print_summary(out.report);
    } else if (*replay) {
      const RunConfig cfg = resolve(replay_opts);
      const GroundTruth gt = load_or_generate(replay_scene, cfg);
      const DetectionDump dump = DetectionDump::from_jsonl(read_text(replay_dump));
      const PipelineOutput out = replay_pipeline(cfg, gt, dump);
      write_outputs(cfg, gt, out);
      print_summary(out.report);
    } else if (*report) {
      std::string csv = "report,seed,prior,cov_mode,single_view,ADD-AUC,ADD-S-AUC,ADD(-S)-AUC,symmetric ADD(-S)-AUC\n";
      for (const auto& in : report_inputs) {
        fs::path p = in;
        if (fs::is_directory(p)) p /= "report.json";
        const auto j = nlohmann::json::parse(read_text(p));
        const auto& c = j.at("config");
        const auto& mean = j.at("metrics").at("mean");
        csv += p.string() + "," + c.at("seed").get<std::string>() + "," + c.at("frontend.prior").get<std::string>() + "," +
               c.at("noise.cov_mode").get<std::string>() + "," + c.at("single_view").get<std::string>() + "," +
               std::to_string(mean.at("add_auc").get<double>()) + "," +
               std::to_string(mean.at("add_s_auc").get<double>()) + "," +
               std::to_string(mean.at("add_of_s_auc").get<double>()) + "," +
               std::to_string(j.at("symmetric_metrics").at("mean").at("add_of_s_auc").get<double>()) + "\n";
      }
      if (report_out.empty()) {
        std::cout << csv;
      } else {
        write_text(report_out, csv);
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
