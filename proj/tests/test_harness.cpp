#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "objslam/error.hpp"
#include "objslam/harness.hpp"
#include "objslam/io.hpp"
#include "test_util.hpp"

using namespace objslam;

namespace {

RunConfig quick(int objects, int symmetric, int frames, std::uint64_t seed) {
  RunConfig cfg;
  cfg.scene.num_objects = objects;
  cfg.scene.num_symmetric = symmetric;
  cfg.scene.frames = frames;
  cfg.set_seed(seed);
  return cfg;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST(Config, TextRoundTrip) {
  RunConfig cfg;
  apply_config_text(
      "# ablation grid cell\n"
      "seed = 42\n"
      "scene.objects = 7\n"
      "scene.symmetric = 3\n"
      "scene.trajectory = arc\n"
      "noise.sigma_min = 0.5   # px\n"
      "noise.sigma_max = 8\n"
      "noise.cov_mode = manual\n"
      "noise.manual_cov = 2.25\n"
      "frontend.prior = false\n"
      "backend.schedule_every = 5\n",
      cfg);
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_EQ(cfg.noise.seed, 42u);
  EXPECT_EQ(cfg.frontend.seed, 42u);
  EXPECT_EQ(cfg.scene.num_objects, 7);
  EXPECT_EQ(cfg.scene.trajectory, TrajectoryType::kArc);
  EXPECT_EQ(cfg.noise.cov_mode, CovarianceMode::kManual);
  EXPECT_DOUBLE_EQ(cfg.noise.manual_cov, 2.25);
  EXPECT_FALSE(cfg.frontend.use_prior);
  EXPECT_EQ(cfg.backend.schedule_every, 5);

  RunConfig back;
  apply_config_text(config_to_text(cfg), back);
  EXPECT_EQ(config_to_text(back), config_to_text(cfg));
  EXPECT_EQ(config_to_json(back), config_to_json(cfg));
}

TEST(Config, RejectsBadInput) {
  RunConfig cfg;
  EXPECT_EQ(code_of([&] { apply_config_text("nonsense.key = 1\n", cfg); }), ErrorCode::kParseError);
  EXPECT_EQ(code_of([&] { apply_config_text("scene.frames = many\n", cfg); }), ErrorCode::kParseError);
  EXPECT_EQ(code_of([&] { apply_config_text("just words\n", cfg); }), ErrorCode::kParseError);
  RunConfig bad;
  bad.scene.frames = 0;
  EXPECT_THROW(bad.validate(), Error);
  RunConfig manual;
  manual.noise.cov_mode = CovarianceMode::kManual;
  manual.noise.manual_cov = 0.0;
  EXPECT_THROW(manual.validate(), Error);
}

TEST(GenerateScene, SingleObjectSingleFrame) {
  const GroundTruth gt = generate_scene(quick(1, 0, 1, 5));
  ASSERT_EQ(gt.cameras.size(), 1u);
  ASSERT_EQ(gt.objects.size(), 1u);
  EXPECT_DOUBLE_EQ(visibility_fraction(gt, "asym0"), 1.0);
}

TEST(GenerateScene, DoubleOrbitSpansTwoTurns) {
  const GroundTruth gt = generate_scene(quick(10, 4, 100, 1));
  double yaw = 0.0;
  for (std::size_t j = 1; j < gt.cameras.size(); ++j) {
    const Eigen::Vector3d a = gt.cameras[j - 1].inverse().translation;
    const Eigen::Vector3d b = gt.cameras[j].inverse().translation;
    yaw += std::remainder(std::atan2(b.y(), b.x()) - std::atan2(a.y(), a.x()), 2.0 * std::numbers::pi);
  }
  EXPECT_GE(std::abs(yaw) * 180.0 / std::numbers::pi, 720.0 - 1e-9);
}

TEST(GenerateScene, EveryObjectVisibleInHalfTheFrames) {
  for (auto traj : {TrajectoryType::kOrbit, TrajectoryType::kArc, TrajectoryType::kRandomWalk}) {
    RunConfig cfg = quick(10, 4, 60, 9);
    cfg.scene.trajectory = traj;
    const GroundTruth gt = generate_scene(cfg);
    for (const auto& [id, m] : gt.models) EXPECT_GE(visibility_fraction(gt, id), 0.5) << id << " " << to_string(traj);
  }
}

TEST(GenerateScene, FixedSeedGivesIdenticalBytes) {
  const RunConfig cfg = quick(10, 4, 50, 21);
  const std::string a = scene_to_json(generate_scene(cfg)).dump(2);
  const std::string b = scene_to_json(generate_scene(cfg)).dump(2);
  EXPECT_EQ(a, b);
  const std::string c = scene_to_json(generate_scene(quick(10, 4, 50, 22))).dump(2);
  EXPECT_NE(a, c);
}

TEST(GenerateScene, UnsatisfiableVisibilityThrows) {
  RunConfig cfg = quick(4, 0, 10, 1);
  cfg.camera.width = 16;
  cfg.camera.height = 16;
  cfg.camera.cx = 8;
  cfg.camera.cy = 8;
  EXPECT_EQ(code_of([&] { generate_scene(cfg); }), ErrorCode::kInfeasibleScene);
}

TEST(GenerateScene, JsonRoundTrip) {
  const GroundTruth gt = generate_scene(quick(6, 3, 20, 4));
  const GroundTruth back = scene_from_json(nlohmann::json::parse(scene_to_json(gt).dump()));
  ASSERT_EQ(back.cameras.size(), gt.cameras.size());
  for (std::size_t j = 0; j < gt.cameras.size(); ++j)
    EXPECT_LT(objslam::testing::max_abs_diff(back.cameras[j], gt.cameras[j]), 1e-12);
  EXPECT_EQ(back.models.at("bowl5").symmetries.size(), 64u);
}

TEST(Models, BuiltinSetLayout) {
  const ModelMap m = builtin_models(10, 4);
  ASSERT_EQ(m.size(), 10u);
  int symmetric = 0;
  for (const auto& [id, model] : m) symmetric += model.is_symmetric;
  EXPECT_EQ(symmetric, 4);
  EXPECT_EQ(m.at("bowl8").symmetries.size(), 64u);
  EXPECT_EQ(m.at("cross7").symmetries.size(), 4u);
  EXPECT_EQ(m.at("clamp6").symmetries.size(), 2u);
  EXPECT_EQ(m.at("asym0").symmetries.size(), 1u);
}

TEST(Io, PoseAndDetectionRoundTrip) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const RigidTransform t = objslam::testing::random_pose(rng);
    const RigidTransform back = nlohmann::json::parse(nlohmann::json(t).dump()).get<RigidTransform>();
    EXPECT_LT(objslam::testing::max_abs_diff(back, t), 1e-12);
  }
  KeypointDetection d;
  d.keypoint_id = 17;
  d.coord = {12.5, -3.25};
  d.cov << 2.0, 0.5, 0.5, 3.0;
  d.mask_score = 0.75;
  const auto back = nlohmann::json::parse(nlohmann::json(d).dump()).get<KeypointDetection>();
  EXPECT_EQ(back.keypoint_id, 17);
  EXPECT_EQ(back.coord, d.coord);
  EXPECT_EQ(back.cov, d.cov);
  EXPECT_EQ(back.mask_score, 0.75);
  EXPECT_EQ(code_of([] { nlohmann::json{{"q", {0, 0, 0, 0}}, {"t", {0, 0, 0}}}.get<RigidTransform>(); }),
            ErrorCode::kParseError);
}

TEST(Io, JsonlReportsTheBadLine) {
  try {
    parse_jsonl("{\"a\": 1}\n\n{broken\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParseError);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_EQ(code_of([] { read_text("/nonexistent/dir/file.json"); }), ErrorCode::kIoError);
}

TEST(Pipeline, DumpRoundTripAndReplayMatchesRun) {
  RunConfig cfg = quick(6, 2, 30, 8);
  cfg.noise.outlier_rate = 0.05;
  const GroundTruth gt = generate_scene(cfg);
  const PipelineOutput run = run_pipeline(cfg, gt);
  ASSERT_FALSE(run.dump.prior_detections.empty());
  const std::string text = run.dump.to_jsonl();
  const DetectionDump dump = DetectionDump::from_jsonl(text);
  EXPECT_EQ(dump.to_jsonl(), text);
  const PipelineOutput replay = replay_pipeline(cfg, gt, dump);
  // Calibration and the label spread need the simulator's ground truth noise,
  // which a dump does not carry.
  const auto a = run.report.to_json(false);
  const auto b = replay.report.to_json(false);
  for (const char* key : {"config", "metrics", "symmetric_metrics", "frames", "measurements", "backend"})
    EXPECT_EQ(a.at(key), b.at(key)) << key;
  EXPECT_EQ(a.at("symmetric_spread").at("inliers"), b.at("symmetric_spread").at("inliers"));
  EXPECT_EQ(b.at("calibration").at("count"), 0);
}

TEST(Pipeline, ReportIsDeterministic) {
  const RunConfig cfg = quick(6, 2, 30, 12);
  const GroundTruth gt = generate_scene(cfg);
  const auto a = run_pipeline(cfg, gt).report;
  const auto b = run_pipeline(cfg, gt).report;
  EXPECT_EQ(a.to_json(false).dump(2), b.to_json(false).dump(2));
  EXPECT_TRUE(a.to_json(true).contains("timing"));
  EXPECT_FALSE(a.to_json(false).contains("timing"));
  EXPECT_EQ(a.trace_csv(), b.trace_csv());
}

TEST(Pipeline, CleanRunMatchesTheOracle) {
  RunConfig cfg = quick(6, 2, 40, 2);
  cfg.noise.sigma_min = 0.5;
  cfg.noise.sigma_max = 0.5;
  const GroundTruth gt = generate_scene(cfg);
  const PipelineOutput out = run_pipeline(cfg, gt);
  const double oracle =
      score_table(score_scene(oracle_scene(out.scene, gt, cfg), gt, out.visible)).mean.add_of_s_auc;
  EXPECT_GT(oracle, 97.0);
  EXPECT_NEAR(out.report.table.mean.add_of_s_auc, oracle, 1.0);
  EXPECT_EQ(out.report.frames_dropped, 0);
}

TEST(Pipeline, SingleViewIsWorseThanSlam) {
  RunConfig cfg = quick(8, 3, 40, 6);
  cfg.noise.sigma_min = 2.0;
  cfg.noise.sigma_max = 2.0;
  cfg.noise.outlier_rate = 0.05;
  const GroundTruth gt = generate_scene(cfg);
  RunConfig single = cfg;
  single.single_view_only = true;
  EXPECT_GT(run_pipeline(cfg, gt).report.table.mean.add_of_s_auc,
            run_pipeline(single, gt).report.table.mean.add_of_s_auc);
}

TEST(Pipeline, CovarianceModesRankOnHeteroscedasticScenes) {
  double cal = 0.0, manual = 0.0, ident = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    RunConfig cfg;
    cfg.noise.sigma_min = 0.5;
    cfg.noise.sigma_max = 8.0;
    cfg.set_seed(seed);
    const GroundTruth gt = generate_scene(cfg);
    cal += run_pipeline(cfg, gt).report.table.mean.add_of_s_auc;
    RunConfig m = cfg;
    m.noise.cov_mode = CovarianceMode::kManual;
    m.noise.manual_cov = 16.0;  // a single hand-picked variance in the middle of the range
    manual += run_pipeline(m, gt).report.table.mean.add_of_s_auc;
    RunConfig i = cfg;
    i.noise.cov_mode = CovarianceMode::kIdentity;
    ident += run_pipeline(i, gt).report.table.mean.add_of_s_auc;
  }
  EXPECT_GE(cal, manual);
  EXPECT_GE(manual, ident);
}
