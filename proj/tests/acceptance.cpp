// Acceptance suite. Run with no arguments for every criterion, or with a
// criterion number to run one. Prints one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "objslam/backend.hpp"
#include "objslam/error.hpp"
#include "objslam/harness.hpp"
#include "objslam/keypoint_head.hpp"
#include "objslam/metrics.hpp"
#include "objslam/pnp.hpp"

using namespace objslam;

namespace {

// Oracle ADD(-S) AUC for the end-to-end scene at seed 1, computed once from
// the ground-truth-initialized back end and pinned here.
constexpr double kFrozenOracleAuc = 97.21;
constexpr std::uint64_t kBenchmarkSeed = 1;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// sigma = 2 px, 5% gross outliers, default 10 objects (4 symmetric, one is the 64-way bowl), 100-frame double orbit
RunConfig benchmark_config(std::uint64_t seed) {
  RunConfig cfg;
  cfg.noise.sigma_min = 2.0;
  cfg.noise.sigma_max = 2.0;
  cfg.noise.aniso_ratio_max = 1.0;
  cfg.noise.outlier_rate = 0.05;
  cfg.set_seed(seed);
  return cfg;
}

// Ground truth re-expressed so that frame 0 is the identity camera.
SceneState gauge_scene(const GroundTruth& gt) {
  SceneState s;
  const RigidTransform g = gt.cameras.at(0);
  const RigidTransform g_inv = g.inverse();
  for (std::size_t j = 0; j < gt.cameras.size(); ++j) s.set_camera(static_cast<int>(j), gt.cameras[j] * g_inv);
  for (const auto& [id, t] : gt.objects) s.set_object(id, g * t);
  return s;
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd(0.0, 1.5);
  std::uniform_real_distribution<double> uc(0.0, 15.0);
  double worst = 0.0;
  const int problems = 10;
  for (int p = 0; p < problems; ++p) {
    const int n = 3;
    Tensor3 logits(n, 16, 16);
    for (double& v : logits.data()) v = nd(rng);
    std::vector<Eigen::Vector2d> gt;
    std::vector<int> mask;
    for (int i = 0; i < n; ++i) {
      gt.emplace_back(uc(rng), uc(rng));
      mask.push_back(i == 2 && p % 3 == 0 ? 0 : 1);
    }
    const HeadTarget tgt = HeadTarget::from_mask(gt, mask);
    const Tensor3 grad = head_backward(logits, tgt);
    const double h = 1e-5;
    double diff = 0.0;
    double ref = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
      Tensor3 plus = logits;
      Tensor3 minus = logits;
      plus.data()[k] += h;
      minus.data()[k] -= h;
      const double fd =
          (total_loss(predict(plus), tgt).value - total_loss(predict(minus), tgt).value) / (2 * h);
      diff += std::pow(grad.data()[k] - fd, 2);
      ref += fd * fd;
    }
    worst = std::max(worst, std::sqrt(diff / ref));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 5.0, fmt("max relative error %.3g over %d problems, %.2f s", worst, problems, secs)};
}

Outcome covariance_calibration() {
  RunConfig cfg;
  cfg.scene.frames = 1400;
  cfg.set_seed(7);
  const GroundTruth gt = generate_scene(cfg);
  const std::size_t n = 100000;

  auto collect = [&](const RunConfig& c, std::vector<Eigen::Vector2d>& res, std::vector<Eigen::Matrix2d>& covs) {
    SceneSimulator sim(gt, c);
    for (int j = 0; j < cfg.scene.frames && sim.residuals().size() < n; ++j) sim.frame(j);
    if (sim.residuals().size() < n) throw Error(ErrorCode::kInvalidArgument, "not enough detections");
    res.assign(sim.residuals().begin(), sim.residuals().begin() + n);
    covs.assign(sim.reported_covs().begin(), sim.reported_covs().begin() + n);
  };

  std::vector<Eigen::Vector2d> res;
  std::vector<Eigen::Matrix2d> covs;
  collect(cfg, res, covs);
  const CalibrationReport cal = calibration_report(res, covs);
  double mean_var = 0.0;
  for (const auto& c : covs) mean_var += c.trace() / 2.0;
  mean_var /= static_cast<double>(n);

  RunConfig manual = cfg;
  manual.noise.cov_mode = CovarianceMode::kManual;
  manual.noise.manual_cov = 0.25 * mean_var;
  std::vector<Eigen::Vector2d> res_m;
  std::vector<Eigen::Matrix2d> covs_m;
  collect(manual, res_m, covs_m);
  const CalibrationReport mis = calibration_report(res_m, covs_m);

  const bool pass = cal.fraction_pass_chi2_99 >= 0.98 && cal.fraction_in_3sigma_u >= 0.99 &&
                    cal.fraction_in_3sigma_v >= 0.99 && mis.fraction_pass_chi2_99 < 0.80;
  return {pass, fmt("calibrated chi2-99 %.4f, 3sigma u %.4f v %.4f; manual x0.25 (%.3f px^2) chi2-99 %.4f",
                    cal.fraction_pass_chi2_99, cal.fraction_in_3sigma_u, cal.fraction_in_3sigma_v,
                    manual.noise.manual_cov, mis.fraction_pass_chi2_99)};
}

Outcome gating_rate() {
  RunConfig cfg;
  cfg.scene.frames = 1400;
  cfg.set_seed(11);
  const GroundTruth gt = generate_scene(cfg);
  SceneState s = gauge_scene(gt);
  Rng rng = make_rng(11, 99);
  std::normal_distribution<double> nd;
  const std::size_t target = 100000;
  for (int j = 0; j < cfg.scene.frames && s.measurements().size() < target; ++j) {
    for (const auto& [id, model] : gt.models) {
      for (int k : model.valid_indices) {
        if (s.measurements().size() >= target) break;
        const Eigen::Vector3d pc = s.camera(j) * (s.object(id) * model.keypoints[model.local_index(k)]);
        const auto uv = try_project(gt.camera, pc);
        if (!uv || !gt.camera.in_image(*uv)) continue;
        const Eigen::Matrix2d cov = sample_covariance(cfg.noise, rng);
        const Eigen::Matrix2d l = cov.llt().matrixL();
        Measurement m;
        m.frame = j;
        m.object = id;
        m.keypoint = k;
        m.coord = *uv + l * Eigen::Vector2d(nd(rng), nd(rng));
        m.cov = cov;
        s.add_measurement(m);
      }
    }
  }
  if (s.measurements().size() < target) return {false, "not enough measurements generated"};
  const int inliers = classify_inliers(s, gt.models, gt.camera, BackendConfig{});
  const double rate = static_cast<double>(inliers) / static_cast<double>(s.measurements().size());
  return {std::abs(rate - 0.95) <= 0.01, fmt("inlier rate %.4f over %zu measurements", rate, s.measurements().size())};
}

Outcome pnp_exactness() {
  const CameraModel cam;
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_rot = 0.0;
  double worst_trans = 0.0;
  int failures = 0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const Eigen::Vector3d axis = Eigen::Vector3d(u(rng), u(rng), u(rng)).normalized();
    const RigidTransform truth(axis_angle(axis, std::numbers::pi * u(rng)),
                               Eigen::Vector3d(0.2 * u(rng), 0.2 * u(rng), 1.0 + 0.5 * (u(rng) + 1.0)));
    std::vector<Correspondence> corrs;
    while (corrs.size() < 8) {
      const Eigen::Vector3d p(0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng));
      const auto uv = try_project(cam, truth * p);
      if (!uv) continue;
      corrs.push_back({p, *uv, Eigen::Matrix2d::Identity()});
    }
    RansacConfig rc;
    rc.seed = static_cast<std::uint64_t>(t);
    try {
      const PnPResult r = ransac_pnp(corrs, cam, rc);
      if (r.inlier_count != 8) {
        ++failures;
        continue;
      }
      worst_rot = std::max(worst_rot, rotation_angle_between(r.pose.rotation, truth.rotation));
      worst_trans = std::max(worst_trans, (r.pose.translation - truth.translation).norm());
    } catch (const Error&) {
      ++failures;
    }
  }
  return {failures == 0 && worst_rot < 1e-6 && worst_trans < 1e-8,
          fmt("%d trials, %d failures, max rotation error %.3g rad, max translation error %.3g m", trials, failures,
              worst_rot, worst_trans)};
}

Outcome ba_convergence() {
  RunConfig cfg;
  cfg.scene.num_objects = 5;
  cfg.scene.num_symmetric = 2;
  cfg.scene.frames = 30;
  cfg.set_seed(5);
  const GroundTruth gt = generate_scene(cfg);
  const SceneState truth = gauge_scene(gt);
  SceneState s = truth;
  for (const auto& [j, cam_pose] : truth.cameras()) {
    for (const auto& [id, obj] : truth.objects()) {
      const ObjectModel& model = gt.models.at(id);
      for (int k : model.valid_indices) {
        const auto uv = try_project(gt.camera, cam_pose * (obj * model.keypoints[model.local_index(k)]));
        if (uv && gt.camera.in_image(*uv)) s.add_measurement({j, id, k, *uv, Eigen::Matrix2d::Identity(), true});
      }
    }
  }
  Rng rng = make_rng(5, 77);
  for (const auto& [j, c] : truth.cameras())
    if (j != *s.gauge_frame()) s.mutable_camera(j) = perturb_pose(c, 2.0, 0.02, rng);
  for (const auto& [id, o] : truth.objects()) s.mutable_object(id) = perturb_pose(o, 2.0, 0.02, rng);

  // noise-free: every measurement stays active even though the start is far off
  const BackendResult r = optimize_global(s, gt.models, gt.camera, cfg.backend);

  double rot = 0.0;
  double trans = 0.0;
  for (const auto& [j, c] : truth.cameras()) {
    rot = std::max(rot, rotation_angle_between(s.camera(j).rotation, c.rotation));
    trans = std::max(trans, (s.camera(j).translation - c.translation).norm());
  }
  for (const auto& [id, o] : truth.objects()) {
    rot = std::max(rot, rotation_angle_between(s.object(id).rotation, o.rotation));
    trans = std::max(trans, (s.object(id).translation - o.translation).norm());
  }
  bool monotone = true;
  double prev = r.initial_cost;
  for (const auto& it : r.trace) {
    if (!it.accepted) continue;
    if (it.cost > prev) monotone = false;
    prev = it.cost;
  }
  const bool pass = r.iterations <= 50 && rot < 1e-6 && trans < 1e-7 && monotone;
  return {pass, fmt("%d iterations, %zu measurements, max rotation error %.3g rad, translation error %.3g m, %s",
                    r.iterations, s.measurements().size(), rot, trans,
                    monotone ? "cost non-increasing" : "cost increased on an accepted step")};
}

double mean_auc(const RunReport& rep) { return rep.table.mean.add_of_s_auc; }
double symmetric_auc(const RunReport& rep) { return rep.symmetric_table.mean.add_of_s_auc; }

Outcome end_to_end() {
  const RunConfig cfg = benchmark_config(kBenchmarkSeed);
  const auto t0 = std::chrono::steady_clock::now();
  const GroundTruth gt = generate_scene(cfg);
  const PipelineOutput out = run_pipeline(cfg, gt);
  const double secs = seconds_since(t0);
  const SceneState oracle = oracle_scene(out.scene, gt, cfg);
  const double recomputed = score_table(score_scene(oracle, gt, out.visible)).mean.add_of_s_auc;
  const double got = mean_auc(out.report);
  const bool oracle_stable = std::abs(recomputed - kFrozenOracleAuc) < 0.5;
  const bool pass = std::abs(got - kFrozenOracleAuc) <= 2.0 && oracle_stable && secs < 60.0;
  return {pass, fmt("ADD(-S) AUC %.2f vs frozen oracle %.2f (recomputed %.2f), %d/%d frames tracked, %.2f s", got,
                    kFrozenOracleAuc, recomputed, out.report.frames_tracked, cfg.scene.frames, secs)};
}

Outcome prior_ablation() {
  RunConfig with = benchmark_config(kBenchmarkSeed);
  RunConfig without = with;
  without.frontend.use_prior = false;
  const GroundTruth gt = generate_scene(with);
  const RunReport a = run_pipeline(with, gt).report;
  const RunReport b = run_pipeline(without, gt).report;
  const double drop = symmetric_auc(a) - symmetric_auc(b);
  bool spread_exceeds = !b.label_spread.empty();
  std::string spreads;
  for (const auto& s : b.label_spread) {
    spread_exceeds = spread_exceeds && s.max_spread > s.diameter;
    spreads += fmt(" %s %.1f/%.1f cm", s.object_id.c_str(), 100 * s.max_spread, 100 * s.diameter);
  }
  return {drop >= 20.0 && spread_exceeds,
          fmt("symmetric ADD(-S) AUC %.2f with prior, %.2f without (drop %.2f); no-prior spread/diameter:%s",
              symmetric_auc(a), symmetric_auc(b), drop, spreads.c_str())};
}

Outcome covariance_ablation() {
  int wins = 0;
  double sum_cal = 0.0;
  double sum_id = 0.0;
  const int seeds = 20;
  for (int seed = 1; seed <= seeds; ++seed) {
    RunConfig cal;
    cal.noise.sigma_min = 0.5;
    cal.noise.sigma_max = 8.0;
    cal.set_seed(static_cast<std::uint64_t>(seed));
    RunConfig id = cal;
    id.noise.cov_mode = CovarianceMode::kIdentity;
    const GroundTruth gt = generate_scene(cal);
    const double a = mean_auc(run_pipeline(cal, gt).report);
    const double b = mean_auc(run_pipeline(id, gt).report);
    sum_cal += a;
    sum_id += b;
    wins += a > b;
  }
  return {wins >= 18, fmt("calibrated wins %d/%d seeds, mean AUC %.2f vs %.2f", wins, seeds, sum_cal / seeds,
                          sum_id / seeds)};
}

Outcome single_view_ablation() {
  int wins = 0;
  double sum_slam = 0.0;
  double sum_single = 0.0;
  const int seeds = 20;
  for (int seed = 1; seed <= seeds; ++seed) {
    RunConfig slam = benchmark_config(static_cast<std::uint64_t>(seed));
    RunConfig single = slam;
    single.single_view_only = true;
    const GroundTruth gt = generate_scene(slam);
    const double a = mean_auc(run_pipeline(slam, gt).report);
    const double b = mean_auc(run_pipeline(single, gt).report);
    sum_slam += a;
    sum_single += b;
    wins += a > b;
  }
  return {wins == seeds && sum_slam > sum_single,
          fmt("SLAM above single view in %d/%d seeds, mean AUC %.2f vs %.2f", wins, seeds, sum_slam / seeds,
              sum_single / seeds)};
}

Eigen::Matrix4d homogeneous(const RigidTransform& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = t.rotation;
  m.topRightCorner<3, 1>() = t.translation;
  return m;
}

Outcome metric_oracles() {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> count(1, 40);
  double worst = 0.0;
  bool ordered = true;
  for (int c = 0; c < 10000; ++c) {
    std::vector<Eigen::Vector3d> pts(static_cast<std::size_t>(count(rng)));
    for (auto& p : pts) p = 0.1 * Eigen::Vector3d(u(rng), u(rng), u(rng));
    auto random_pose = [&] {
      return RigidTransform(axis_angle(Eigen::Vector3d(u(rng), u(rng), u(rng)).normalized(), 3.0 * u(rng)),
                            0.2 * Eigen::Vector3d(u(rng), u(rng), u(rng)));
    };
    const RigidTransform est = random_pose();
    const RigidTransform gt = random_pose();
    const Eigen::Matrix4d me = homogeneous(est);
    const Eigen::Matrix4d mg = homogeneous(gt);
    double add = 0.0;
    double add_s = 0.0;
    for (const auto& p : pts) {
      const Eigen::Vector4d ph(p.x(), p.y(), p.z(), 1.0);
      add += ((me - mg) * ph).norm();
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : pts) {
        const Eigen::Vector4d qh(q.x(), q.y(), q.z(), 1.0);
        best = std::min(best, (me * ph - mg * qh).norm());
      }
      add_s += best;
    }
    add /= static_cast<double>(pts.size());
    add_s /= static_cast<double>(pts.size());
    const double a = add_metric(pts, est, gt);
    const double s = add_s_metric(pts, est, gt);
    worst = std::max({worst, std::abs(a - add), std::abs(s - add_s)});
    ordered = ordered && s <= a;
  }

  double worst_auc = 0.0;
  std::uniform_real_distribution<double> ue(0.0, 0.15);
  for (int c = 0; c < 50; ++c) {
    std::vector<double> errs(200);
    for (double& e : errs) e = ue(rng);
    const int steps = 200000;
    double area = 0.0;
    for (int k = 0; k < steps; ++k) {
      const double t = 0.10 * (k + 0.5) / steps;
      area += static_cast<double>(std::count_if(errs.begin(), errs.end(), [&](double e) { return e <= t; }));
    }
    const double dense = 100.0 * area / (steps * static_cast<double>(errs.size()));
    worst_auc = std::max(worst_auc, std::abs(dense - auc(errs, 0.10)));
  }
  return {worst < 1e-12 && worst_auc < 1e-3 && ordered,
          fmt("max ADD/ADD-S deviation %.3g over 10^4 cases, max AUC deviation %.3g, add_s <= add %s", worst,
              worst_auc, ordered ? "everywhere" : "violated")};
}

Outcome determinism() {
  const RunConfig cfg = benchmark_config(3);
  const std::string a = run_pipeline(cfg, generate_scene(cfg)).report.to_json(false).dump(2);
  const std::string b = run_pipeline(cfg, generate_scene(cfg)).report.to_json(false).dump(2);
  return {a == b, fmt("report.json without timing: %zu vs %zu bytes, %s", a.size(), b.size(),
                      a == b ? "identical" : "different")};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"gradient correctness", gradient_check},
      {"covariance calibration", covariance_calibration},
      {"chi-square gating rate", gating_rate},
      {"PnP exactness", pnp_exactness},
      {"bundle adjustment convergence", ba_convergence},
      {"end-to-end accuracy", end_to_end},
      {"prior ablation", prior_ablation},
      {"covariance weighting ablation", covariance_ablation},
      {"single-view ablation", single_view_ablation},
      {"metric oracles", metric_oracles},
      {"determinism", determinism},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int k = std::atoi(argv[i]);
    if (k < 1 || k > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "unknown criterion '%s'\n", argv[i]);
      return 2;
    }
    selected.push_back(k);
  }
  if (selected.empty()) {
    selected.resize(criteria.size());
    std::iota(selected.begin(), selected.end(), 1);
  }
  int failed = 0;
  for (int k : selected) {
    const Criterion& c = criteria[static_cast<std::size_t>(k - 1)];
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", k, c.name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
