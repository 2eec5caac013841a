#include <benchmark/benchmark.h>

#include <numbers>
#include <random>

#include "objslam/backend.hpp"
#include "objslam/harness.hpp"
#include "objslam/keypoint_head.hpp"
#include "objslam/pnp.hpp"

using namespace objslam;

namespace {

std::vector<Correspondence> pnp_problem(int n, double sigma, double outlier_rate, std::uint64_t seed) {
  const CameraModel cam;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, sigma);
  const RigidTransform pose(axis_angle(Eigen::Vector3d(u(rng), u(rng), u(rng)).normalized(), u(rng)),
                            Eigen::Vector3d(0.05 * u(rng), 0.05 * u(rng), 0.9));
  std::vector<Correspondence> out;
  while (static_cast<int>(out.size()) < n) {
    const Eigen::Vector3d p = 0.06 * Eigen::Vector3d(u(rng), u(rng), u(rng));
    Eigen::Vector2d uv = project(cam, pose * p) + Eigen::Vector2d(nd(rng), nd(rng));
    if (u01(rng) < outlier_rate) uv += 100.0 * Eigen::Vector2d(u(rng), u(rng));
    out.push_back({p, uv, std::max(sigma * sigma, 1.0) * Eigen::Matrix2d::Identity()});
  }
  return out;
}

void BM_P3P(benchmark::State& state) {
  const auto corrs = pnp_problem(3, 0.0, 0.0, 1);
  const CameraModel cam;
  for (auto _ : state) benchmark::DoNotOptimize(solve_p3p(corrs, cam));
}
BENCHMARK(BM_P3P);

void BM_RansacPnP(benchmark::State& state) {
  const auto corrs = pnp_problem(static_cast<int>(state.range(0)), 2.0, 0.1, 2);
  const CameraModel cam;
  RansacConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ransac_pnp(corrs, cam, cfg));
    ++cfg.seed;
  }
}
BENCHMARK(BM_RansacPnP)->Arg(8)->Arg(32);

void BM_HeadBackward(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const int n = 8;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 1.5);
  std::uniform_real_distribution<double> uc(0.0, size - 1.0);
  Tensor3 logits(n, size, size);
  for (double& v : logits.data()) v = nd(rng);
  std::vector<Eigen::Vector2d> gt;
  for (int i = 0; i < n; ++i) gt.emplace_back(uc(rng), uc(rng));
  const HeadTarget tgt = HeadTarget::from_mask(gt, std::vector<int>(n, 1));
  for (auto _ : state) benchmark::DoNotOptimize(head_backward(logits, tgt));
}
BENCHMARK(BM_HeadBackward)->Arg(16)->Arg(64);

// Tracked state of the default 10-object scene, then one global optimization.
void BM_BundleAdjustment(benchmark::State& state) {
  RunConfig cfg;
  cfg.scene.frames = static_cast<int>(state.range(0));
  cfg.noise.outlier_rate = 0.05;
  const GroundTruth gt = generate_scene(cfg);
  const PipelineOutput out = run_pipeline(cfg, gt);
  for (auto _ : state) {
    state.PauseTiming();
    SceneState s = out.scene;
    Rng rng = make_rng(4);
    for (const auto& [j, c] : out.scene.cameras())
      if (j != *s.gauge_frame()) s.mutable_camera(j) = perturb_pose(c, 0.5, 0.005, rng);
    state.ResumeTiming();
    classify_inliers(s, gt.models, gt.camera, cfg.backend);
    benchmark::DoNotOptimize(optimize_global(s, gt.models, gt.camera, cfg.backend));
  }
  state.counters["measurements"] = static_cast<double>(out.scene.measurements().size());
}
BENCHMARK(BM_BundleAdjustment)->Arg(30)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_FullPipeline(benchmark::State& state) {
  RunConfig cfg;
  cfg.noise.outlier_rate = 0.05;
  const GroundTruth gt = generate_scene(cfg);
  for (auto _ : state) benchmark::DoNotOptimize(run_pipeline(cfg, gt));
}
BENCHMARK(BM_FullPipeline)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
