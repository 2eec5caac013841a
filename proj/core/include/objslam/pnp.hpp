#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "objslam/robust.hpp"
#include "objslam/se3.hpp"

namespace objslam {

/// 3D point in the pose's source frame observed at a full-image pixel.
struct Correspondence {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
};

struct PnPResult {
  RigidTransform pose;        // ^C_O T
  std::vector<int> inlier_ids;  // indices into the correspondence list
  int inlier_count = 0;
};

struct RansacConfig {
  int max_iterations = 200;
  double confidence = 0.99;
  int min_inliers = 4;
  double tau = kChi2Dof2At95;
  std::uint64_t seed = 0;
  /// Covariance-weighted refinement of the winning model on its inliers.
  bool refine = true;
};

/// Levenberg-Marquardt settings shared by the pose refiners and the back end.
struct LmOptions {
  int max_iters = 50;
  double rel_tol = 1e-8;
  double initial_lambda = 1e-4;
  double huber_knee = kChi2Dof2At95;
};

struct LmIteration {
  int iteration = 0;
  double cost = 0.0;
  double lambda = 0.0;
  double step_norm = 0.0;
  bool accepted = false;
};

struct PoseRefineResult {
  RigidTransform pose;
  bool converged = false;
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double last_step_norm = 0.0;
  std::vector<LmIteration> trace;
};

/**
 * Lambda Twist P3P. Returns every pose (up to four) that reprojects the three
 * correspondences. Throws DegenerateConfiguration for collinear points or
 * coincident bearings.
 */
std::vector<RigidTransform> solve_p3p(std::span<const Correspondence> corrs, const CameraModel& cam);

/// Mahalanobis reprojection error of one correspondence under `pose`;
/// +infinity when the point is behind the camera.
double reprojection_chi2(const RigidTransform& pose, const Correspondence& c, const CameraModel& cam);

/// P3P inside RANSAC with chi^2 inlier counting. Throws TooFewCorrespondences
/// (fewer than 4) and NoConsensus.
PnPResult ransac_pnp(std::span<const Correspondence> corrs, const CameraModel& cam, const RansacConfig& cfg = {});

/**
 * Minimizes sum_i rho_H(r_i^T cov_i^-1 r_i) over a single pose that maps the
 * correspondence points into the camera frame. Only entries with a nonzero
 * `active` flag contribute (all when `active` is empty). Accepted steps never
 * increase the cost.
 */
PoseRefineResult refine_pose(const RigidTransform& init, std::span<const Correspondence> corrs,
                             const CameraModel& cam, const LmOptions& opts = {},
                             std::span<const std::uint8_t> active = {});

/// Single-view refinement of ^C_O T with the camera held at identity.
PoseRefineResult refine_single_view(const RigidTransform& pose, std::span<const Correspondence> corrs,
                                    const CameraModel& cam, const LmOptions& opts = {},
                                    std::span<const std::uint8_t> active = {});

}  // namespace objslam
