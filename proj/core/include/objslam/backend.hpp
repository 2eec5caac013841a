#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "objslam/pnp.hpp"
#include "objslam/robust.hpp"
#include "objslam/scene.hpp"

namespace objslam {

struct BackendConfig {
  double tau = kChi2Dof2At95;
  double huber_delta = kChi2Dof2At95;  // knee on the squared Mahalanobis form
  int max_iters = 50;
  double rel_tol = 1e-8;
  double initial_lambda = 1e-4;
  int schedule_every = 10;

  void validate() const;
};

struct Residual {
  int frame = 0;
  std::string object;
  int keypoint = 0;
  Eigen::Vector2d value = Eigen::Vector2d::Zero();  // u_meas - u_proj, pixels
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
  bool inlier = false;
  bool valid = false;  // false when the keypoint is behind the camera

  double chi2() const;
};

/// Object-frame position of a global keypoint id, if the model has it.
std::optional<Eigen::Vector3d> model_point(const ModelMap& models, const std::string& object, int keypoint);

/// r = u - project(^C_G T * ^G_O T * p). Behind-camera points come back
/// invalid with s = 0.
Residual evaluate_residual(const Measurement& meas, const RigidTransform& cam_from_global,
                           const RigidTransform& global_from_obj, const Eigen::Vector3d& point, const CameraModel& cam);

/// d project(^C_G T * ^G_O T * p) with respect to left perturbations of the
/// camera pose and of the object pose.
struct ProjectionJacobians {
  Matrix26d d_camera;
  Matrix26d d_object;
};
ProjectionJacobians projection_jacobians(const RigidTransform& cam_from_global, const RigidTransform& global_from_obj,
                                         const Eigen::Vector3d& point, const CameraModel& cam);

/// Sets s = 1 iff r^T cov^-1 r < tau at the current estimates. Returns the
/// number of inliers.
int classify_inliers(SceneState& scene, const ModelMap& models, const CameraModel& cam, const BackendConfig& cfg);

/// sum over s = 1 of huber(r^T cov^-1 r, huber_delta).
double global_cost(const SceneState& scene, const ModelMap& models, const CameraModel& cam, const BackendConfig& cfg);

struct BackendResult {
  bool converged = false;
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int active_residuals = 0;
  std::vector<LmIteration> trace;
};

/**
 * Levenberg-Marquardt over every camera except the gauge and every object,
 * with the inlier flags frozen. Camera blocks are eliminated by a Schur
 * complement; the reduced object system is solved densely.
 */
BackendResult optimize_global(SceneState& scene, const ModelMap& models, const CameraModel& cam,
                              const BackendConfig& cfg);

}  // namespace objslam
