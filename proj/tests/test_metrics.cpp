#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "objslam/error.hpp"
#include "objslam/metrics.hpp"
#include "test_util.hpp"

namespace objslam {
namespace {

std::vector<Eigen::Vector3d> cloud(std::mt19937_64& rng, int m) {
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < m; ++i) pts.push_back(testing::random_vec3(rng, 0.1));
  return pts;
}

// Naive loops with homogeneous matrices, kept apart from the library path.
double naive_add(const std::vector<Eigen::Vector3d>& pts, const RigidTransform& a, const RigidTransform& b) {
  const Eigen::Matrix4d ma = a.matrix(), mb = b.matrix();
  double s = 0.0;
  for (const auto& p : pts) s += ((ma * p.homogeneous()) - (mb * p.homogeneous())).norm();
  return s / pts.size();
}

double naive_add_s(const std::vector<Eigen::Vector3d>& pts, const RigidTransform& a, const RigidTransform& b) {
  const Eigen::Matrix4d ma = a.matrix(), mb = b.matrix();
  double s = 0.0;
  for (const auto& p : pts) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : pts) best = std::min(best, ((ma * p.homogeneous()) - (mb * q.homogeneous())).norm());
    s += best;
  }
  return s / pts.size();
}

// Accuracy curve sampled on a fine grid, integrated with the midpoint rule.
double dense_auc(const std::vector<double>& errors, double cap, int steps = 200000) {
  double area = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double t = cap * (i + 0.5) / steps;
    int ok = 0;
    for (double e : errors) ok += e <= t;
    area += static_cast<double>(ok) / errors.size();
  }
  return 100.0 * area / steps;
}

TEST(Add, Examples) {
  std::mt19937_64 rng(60);
  const auto pts = cloud(rng, 20);
  const RigidTransform t = testing::random_pose(rng);
  EXPECT_EQ(add_metric(pts, t, t), 0.0);
  const RigidTransform shifted = RigidTransform::from_translation({0.03, -0.04, 0}) * t;
  EXPECT_NEAR(add_metric(pts, shifted, t), 0.05, 1e-12);
  EXPECT_THROW(add_metric({}, t, t), Error);
  EXPECT_THROW(add_s_metric({}, t, t), Error);
}

TEST(Add, MatchesBruteForceOnRandomCases) {
  std::mt19937_64 rng(61);
  std::uniform_int_distribution<int> m(1, 40);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto pts = cloud(rng, m(rng));
    const RigidTransform a = testing::random_pose(rng, 0.2), b = testing::random_pose(rng, 0.2);
    const double add = add_metric(pts, a, b);
    const double adds = add_s_metric(pts, a, b);
    ASSERT_NEAR(add, naive_add(pts, a, b), 1e-12);
    ASSERT_NEAR(adds, naive_add_s(pts, a, b), 1e-12);
    ASSERT_LE(adds, add + 1e-12);
  }
}

TEST(Add, BruteForceAtTwoHundredPoints) {
  std::mt19937_64 rng(62);
  const auto pts = cloud(rng, 200);
  const RigidTransform a = testing::random_pose(rng), b = testing::random_pose(rng);
  EXPECT_NEAR(add_metric(pts, a, b), naive_add(pts, a, b), 1e-12);
  EXPECT_NEAR(add_s_metric(pts, a, b), naive_add_s(pts, a, b), 1e-12);
}

TEST(AddS, SquareRotatedByItsOwnSymmetry) {
  const std::vector<Eigen::Vector3d> sq{{0.05, 0.05, 0}, {-0.05, 0.05, 0}, {-0.05, -0.05, 0}, {0.05, -0.05, 0}};
  const RigidTransform gt = RigidTransform::from_translation({0, 0, 1});
  const RigidTransform est = gt * RigidTransform::from_rotation(axis_angle(Eigen::Vector3d::UnitZ(), std::numbers::pi / 2));
  EXPECT_NEAR(add_s_metric(sq, est, gt), 0.0, 1e-15);
  EXPECT_GT(add_metric(sq, est, gt), 0.05);
}

TEST(AddOfS, DispatchesOnSymmetryFlag) {
  std::mt19937_64 rng(63);
  ObjectModel m;
  m.object_id = "m";
  for (int k = 0; k < 6; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 6;
    m.keypoints.push_back({0.05 * std::cos(a), 0.05 * std::sin(a), 0.02 * (k % 2)});
  }
  const RigidTransform gt = testing::random_pose(rng);
  const RigidTransform est = gt * RigidTransform::from_rotation(axis_angle(Eigen::Vector3d::UnitZ(), 2.0 * std::numbers::pi / 3));
  m.is_symmetric = false;
  EXPECT_EQ(add_of_s(m, est, gt), add_metric(m.keypoints, est, gt));
  EXPECT_GT(add_of_s(m, est, gt), 0.05);
  m.is_symmetric = true;
  EXPECT_EQ(add_of_s(m, est, gt), add_s_metric(m.keypoints, est, gt));
  EXPECT_NEAR(add_of_s(m, est, gt), 0.0, 1e-12);
}

TEST(AddOfS, MetricCloudOverridesKeypoints) {
  ObjectModel m;
  m.keypoints = {{0, 0, 0}};
  m.metric_points = {{1, 0, 0}, {-1, 0, 0}};
  const RigidTransform flip = RigidTransform::from_rotation(axis_angle(Eigen::Vector3d::UnitZ(), std::numbers::pi));
  EXPECT_NEAR(add_of_s(m, flip, RigidTransform::identity()), 2.0, 1e-12);
}

TEST(PoseErrors, MissingEstimateIsInfinite) {
  ObjectModel m;
  m.object_id = "x";
  m.keypoints = {{0, 0, 0}};
  const PoseErrorSample s = pose_errors(m, nullptr, RigidTransform::identity());
  EXPECT_TRUE(std::isinf(s.add));
  EXPECT_TRUE(std::isinf(s.add_of_s));
  EXPECT_EQ(auc(std::vector<double>{s.add_of_s}), 0.0);
}

TEST(Auc, Examples) {
  EXPECT_DOUBLE_EQ(auc(std::vector<double>(5, 0.0)), 100.0);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.2, 0.11, 1.0}), 0.0);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.05}), 50.0);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.0, 0.2}), 50.0);
  EXPECT_THROW(auc(std::vector<double>{}), Error);
}

TEST(Auc, UniformErrorsNearFifty) {
  std::vector<double> e;
  for (int i = 0; i < 1000; ++i) e.push_back(0.1 * (i + 0.5) / 1000);
  EXPECT_NEAR(auc(e), 50.0, 1e-9);
  EXPECT_NEAR(auc(e), dense_auc(e, 0.1), 1e-3);
}

TEST(Auc, MatchesDenseSampling) {
  std::mt19937_64 rng(64);
  std::exponential_distribution<double> ex(25.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> e(30);
    for (auto& v : e) v = ex(rng);
    EXPECT_NEAR(auc(e), dense_auc(e, 0.1), 1e-3);
  }
}

TEST(Auc, MonotoneAndPermutationInvariant) {
  std::mt19937_64 rng(65);
  std::uniform_real_distribution<double> u(0.0, 0.15);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> e(25);
    for (auto& v : e) v = u(rng);
    std::vector<double> smaller = e;
    for (auto& v : smaller) v *= u(rng) / 0.15;
    EXPECT_GE(auc(smaller), auc(e));
    std::vector<double> perm = e;
    std::shuffle(perm.begin(), perm.end(), rng);
    EXPECT_EQ(auc(perm), auc(e));
  }
}

TEST(Calibration, Examples) {
  const std::vector<Eigen::Matrix2d> covs(3, Eigen::Matrix2d::Identity() * 4.0);
  const std::vector<Eigen::Vector2d> zero(3, Eigen::Vector2d::Zero());
  CalibrationReport r = calibration_report(zero, covs);
  EXPECT_EQ(r.fraction_in_3sigma_u, 1.0);
  EXPECT_EQ(r.fraction_pass_chi2_99, 1.0);
  const std::vector<Eigen::Vector2d> far(3, Eigen::Vector2d(20.0, -20.0));
  r = calibration_report(far, covs);
  EXPECT_EQ(r.fraction_in_3sigma_u, 0.0);
  EXPECT_EQ(r.fraction_in_3sigma_v, 0.0);
  EXPECT_EQ(r.fraction_pass_chi2_99, 0.0);
  EXPECT_THROW(calibration_report(far, std::vector<Eigen::Matrix2d>(2)), Error);
}

TEST(Calibration, GaussianResidualsPassAtNinetyNinePercent) {
  std::mt19937_64 rng(66);
  std::normal_distribution<double> n01;
  std::vector<Eigen::Vector2d> errs;
  std::vector<Eigen::Matrix2d> covs;
  for (int i = 0; i < 100000; ++i) {
    // Correlated covariance from a random factor.
    Eigen::Matrix2d l;
    l << 0.5 + std::abs(n01(rng)), 0.0, n01(rng), 0.5 + std::abs(n01(rng));
    errs.push_back(l * Eigen::Vector2d(n01(rng), n01(rng)));
    covs.push_back(l * l.transpose());
  }
  const CalibrationReport r = calibration_report(errs, covs);
  EXPECT_NEAR(r.fraction_pass_chi2_99, 0.99, 0.005);
  EXPECT_NEAR(r.fraction_in_3sigma_u, 0.9973, 0.002);
  EXPECT_NEAR(r.fraction_in_3sigma_v, 0.9973, 0.002);
}

TEST(ScoreTable, AveragesPerObject) {
  std::vector<PoseErrorSample> s{{"a", 0.0, 0.0, 0.0}, {"a", 0.2, 0.0, 0.2}, {"b", 0.05, 0.05, 0.05}};
  const MetricsTable t = score_table(s);
  ASSERT_EQ(t.per_object.size(), 2u);
  EXPECT_DOUBLE_EQ(t.per_object[0].add_auc, 50.0);
  EXPECT_DOUBLE_EQ(t.per_object[0].add_s_auc, 100.0);
  EXPECT_DOUBLE_EQ(t.per_object[1].add_auc, 50.0);
  EXPECT_DOUBLE_EQ(t.mean.add_s_auc, 75.0);
  EXPECT_EQ(t.mean.samples, 3u);
  const auto csv = metrics_csv(t);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "object,ADD-AUC,ADD-S-AUC,ADD(-S)-AUC,samples");
  EXPECT_EQ(to_json(t)["mean"]["add_s_auc"].get<double>(), 75.0);
}

}  // namespace
}  // namespace objslam
