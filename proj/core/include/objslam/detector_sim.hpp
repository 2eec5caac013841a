#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "objslam/se3.hpp"
#include "objslam/symmetry.hpp"

namespace objslam {

using Rng = std::mt19937_64;

/// Deterministic generator for one (seed, stream...) tuple.
Rng make_rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0);

/// What covariance the detector reports alongside each keypoint.
enum class CovarianceMode {
  kCalibrated,  // the exact sampling covariance
  kManual,      // manual_cov * I
  kIdentity,    // I (pixels^2)
};

std::string_view to_string(CovarianceMode mode);
CovarianceMode covariance_mode_from_string(std::string_view s);

struct NoiseConfig {
  double sigma_min = 1.0;  // pixels
  double sigma_max = 3.0;
  double aniso_ratio_max = 2.0;
  double outlier_rate = 0.0;
  double outlier_spread = 100.0;  // pixels
  double mask_flip_rate = 0.0;
  double prior_perturb_rot_deg = 10.0;
  double prior_perturb_trans_m = 0.02;
  std::uint64_t seed = 1;
  CovarianceMode cov_mode = CovarianceMode::kCalibrated;
  double manual_cov = 4.0;  // pixels^2, used by kManual

  void validate() const;
};

struct KeypointDetection {
  int keypoint_id = 0;  // global keypoint id
  Eigen::Vector2d coord = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
  double mask_score = 1.0;
};

/// Detections plus the simulator's ground truth for each of them.
struct SimulatedDetections {
  std::vector<KeypointDetection> detections;
  int symmetry_index = 0;
  std::vector<Eigen::Vector2d> exact;      // noise-free projection under the chosen symmetry
  std::vector<Eigen::Matrix2d> true_cov;   // sampling covariance
  std::vector<bool> outlier;               // replaced by a gross offset
};

/// Anisotropic covariance with axis sigmas in [sigma_min, sigma_max], ratio
/// capped at aniso_ratio_max and a uniformly random orientation.
Eigen::Matrix2d sample_covariance(const NoiseConfig& cfg, Rng& rng);

/// Symmetry whose induced projections lie closest (mean 2D distance over the
/// prior's present keypoints) to the prior coordinates.
int nearest_symmetry_to_prior(const ObjectModel& model, const RigidTransform& cam_from_obj, const CameraModel& cam,
                              const PriorDetection& prior);

/**
 * Synthetic keypoint detector. The symmetry hypothesis follows the prior when
 * one is given, otherwise the canonical-view rule. Keypoints behind the camera
 * are not reported; the mask is box membership (image bounds when no box).
 * Throws NotVisible when nothing projects.
 */
SimulatedDetections simulate_detection(const ObjectModel& model, const RigidTransform& cam_from_global,
                                       const RigidTransform& global_from_obj, const CameraModel& cam,
                                       const std::optional<PriorDetection>& prior, const NoiseConfig& cfg, Rng& rng,
                                       const std::optional<BoundingBox>& box = std::nullopt);

/// Minimum side of a simulated box, pixels.
inline constexpr double kMinBoxSide = 8.0;

/// Tight box around the projected keypoints, grown 10%, floored at 8x8 px and
/// with each corner jittered uniformly by +-jitter. Throws NotVisible.
BoundingBox simulate_bbox(const ObjectModel& model, const RigidTransform& cam_from_global,
                          const RigidTransform& global_from_obj, const CameraModel& cam, double jitter, Rng& rng);

/// delta T: rotation of rot_deg about a random axis, translation of trans_m in
/// a random direction, applied on the left.
RigidTransform perturb_pose(const RigidTransform& pose, double rot_deg, double trans_m, Rng& rng);

}  // namespace objslam
