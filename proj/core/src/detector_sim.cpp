#include "objslam/detector_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Cholesky>

#include "objslam/error.hpp"

namespace objslam {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Eigen::Vector3d random_unit(Rng& rng) {
  std::normal_distribution<double> n01;
  Eigen::Vector3d v;
  do {
    v = Eigen::Vector3d(n01(rng), n01(rng), n01(rng));
  } while (v.norm() < 1e-9);
  return v.normalized();
}

}  // namespace

Rng make_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ a);
  h = splitmix(h ^ b);
  h = splitmix(h ^ c);
  return Rng(h);
}

std::string_view to_string(CovarianceMode mode) {
  switch (mode) {
    case CovarianceMode::kCalibrated: return "calibrated";
    case CovarianceMode::kManual: return "manual";
    case CovarianceMode::kIdentity: return "identity";
  }
  return "calibrated";
}

CovarianceMode covariance_mode_from_string(std::string_view s) {
  if (s == "calibrated") return CovarianceMode::kCalibrated;
  if (s == "manual") return CovarianceMode::kManual;
  if (s == "identity") return CovarianceMode::kIdentity;
  throw Error(ErrorCode::kParseError, "unknown covariance mode '" + std::string(s) + "'");
}

void NoiseConfig::validate() const {
  auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!(sigma_min > 0.0) || sigma_max < sigma_min) throw Error(ErrorCode::kInvalidArgument, "pixel sigma range");
  if (aniso_ratio_max < 1.0) throw Error(ErrorCode::kInvalidArgument, "aniso_ratio_max < 1");
  if (!rate_ok(outlier_rate) || !rate_ok(mask_flip_rate)) throw Error(ErrorCode::kInvalidArgument, "rate outside [0,1]");
  if (outlier_spread < 0.0) throw Error(ErrorCode::kInvalidArgument, "negative outlier spread");
  if (cov_mode == CovarianceMode::kManual && !(manual_cov > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "manual covariance must be positive");
  }
}

Eigen::Matrix2d sample_covariance(const NoiseConfig& cfg, Rng& rng) {
  const double s1 = uniform(rng, cfg.sigma_min, cfg.sigma_max);
  const double lo = std::max(cfg.sigma_min, s1 / cfg.aniso_ratio_max);
  const double hi = std::min(cfg.sigma_max, s1 * cfg.aniso_ratio_max);
  const double s2 = hi > lo ? uniform(rng, lo, hi) : lo;
  const double angle = uniform(rng, 0.0, std::numbers::pi);
  const Eigen::Matrix2d rot = Eigen::Rotation2Dd(angle).toRotationMatrix();
  const Eigen::Vector2d var(s1 * s1, s2 * s2);
  Eigen::Matrix2d cov = rot * var.asDiagonal() * rot.transpose();
  cov(0, 1) = cov(1, 0);
  return cov;
}

int nearest_symmetry_to_prior(const ObjectModel& model, const RigidTransform& cam_from_obj, const CameraModel& cam,
                              const PriorDetection& prior) {
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < model.symmetries.size(); ++m) {
    const RigidTransform pose = cam_from_obj * model.symmetries[m];
    double sum = 0.0;
    int used = 0;
    for (std::size_t k = 0; k < model.size() && k < prior.coords.size(); ++k) {
      if (!prior.coords[k]) continue;
      auto uv = try_project(cam, pose * model.keypoints[k]);
      if (!uv) continue;
      sum += (*uv - *prior.coords[k]).norm();
      ++used;
    }
    if (used == 0) continue;
    const double mean = sum / used;
    if (mean < best_dist) {
      best_dist = mean;
      best = static_cast<int>(m);
    }
  }
  return best;
}

SimulatedDetections simulate_detection(const ObjectModel& model, const RigidTransform& cam_from_global,
                                       const RigidTransform& global_from_obj, const CameraModel& cam,
                                       const std::optional<PriorDetection>& prior, const NoiseConfig& cfg, Rng& rng,
                                       const std::optional<BoundingBox>& box) {
  const RigidTransform cam_from_obj = cam_from_global * global_from_obj;
  SimulatedDetections out;
  out.symmetry_index = prior ? nearest_symmetry_to_prior(model, cam_from_obj, cam, *prior)
                             : canonical_symmetry(model, cam_from_obj.rotation);
  const RigidTransform effective = cam_from_obj * model.symmetries[out.symmetry_index];

  std::normal_distribution<double> n01;
  for (std::size_t k = 0; k < model.size(); ++k) {
    auto uv = try_project(cam, effective * model.keypoints[k]);
    if (!uv) continue;
    const Eigen::Matrix2d cov = sample_covariance(cfg, rng);
    const Eigen::Matrix2d chol = cov.llt().matrixL();
    const Eigen::Vector2d z(n01(rng), n01(rng));

    KeypointDetection det;
    det.keypoint_id = model.valid_indices[k];
    det.coord = *uv + chol * z;

    const bool is_outlier = uniform(rng, 0.0, 1.0) < cfg.outlier_rate;
    const double dir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double mag = uniform(rng, 0.5, 1.0) * cfg.outlier_spread;
    if (is_outlier) det.coord = *uv + mag * Eigen::Vector2d(std::cos(dir), std::sin(dir));

    switch (cfg.cov_mode) {
      case CovarianceMode::kCalibrated: det.cov = cov; break;
      case CovarianceMode::kManual: det.cov = cfg.manual_cov * Eigen::Matrix2d::Identity(); break;
      case CovarianceMode::kIdentity: det.cov = Eigen::Matrix2d::Identity(); break;
    }

    const bool inside = cam.in_image(*uv) && (!box || box->contains(*uv));
    const bool flip = uniform(rng, 0.0, 1.0) < cfg.mask_flip_rate;
    det.mask_score = (inside != flip) ? 1.0 : 0.0;

    out.detections.push_back(det);
    out.exact.push_back(*uv);
    out.true_cov.push_back(cov);
    out.outlier.push_back(is_outlier);
  }
  if (out.detections.empty()) throw Error(ErrorCode::kNotVisible, model.object_id);
  return out;
}

BoundingBox simulate_bbox(const ObjectModel& model, const RigidTransform& cam_from_global,
                          const RigidTransform& global_from_obj, const CameraModel& cam, double jitter, Rng& rng) {
  const RigidTransform cam_from_obj = cam_from_global * global_from_obj;
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector2d hi = -lo;
  int count = 0;
  for (const auto& p : model.keypoints) {
    auto uv = try_project(cam, cam_from_obj * p);
    if (!uv) continue;
    lo = lo.cwiseMin(*uv);
    hi = hi.cwiseMax(*uv);
    ++count;
  }
  if (count == 0) throw Error(ErrorCode::kNotVisible, model.object_id);

  const Eigen::Vector2d center = 0.5 * (lo + hi);
  Eigen::Vector2d extent = (1.1 * (hi - lo)).cwiseMax(kMinBoxSide);
  Eigen::Vector2d a = center - 0.5 * extent;
  Eigen::Vector2d b = center + 0.5 * extent;
  if (jitter > 0.0) {
    a.x() += uniform(rng, -jitter, jitter);
    a.y() += uniform(rng, -jitter, jitter);
    b.x() += uniform(rng, -jitter, jitter);
    b.y() += uniform(rng, -jitter, jitter);
  }
  // Jitter never collapses the box below the floor.
  for (int i = 0; i < 2; ++i) {
    if (b(i) - a(i) < kMinBoxSide) {
      const double mid = 0.5 * (a(i) + b(i));
      a(i) = mid - 0.5 * kMinBoxSide;
      b(i) = mid + 0.5 * kMinBoxSide;
    }
  }
  return {a.x(), a.y(), b.x() - a.x(), b.y() - a.y()};
}

RigidTransform perturb_pose(const RigidTransform& pose, double rot_deg, double trans_m, Rng& rng) {
  const Eigen::Vector3d axis = random_unit(rng);
  const Eigen::Vector3d dir = random_unit(rng);
  const RigidTransform delta(axis_angle(axis, rot_deg * std::numbers::pi / 180.0), trans_m * dir);
  return delta * pose;
}

}  // namespace objslam
