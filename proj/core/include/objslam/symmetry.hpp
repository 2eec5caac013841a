#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "objslam/keypoint_head.hpp"
#include "objslam/se3.hpp"

namespace objslam {

/**
 * Labeled keypoint model of one object class.
 *
 * `keypoints[k]` is the object-frame position of the keypoint whose global
 * (dataset-wide) id is `valid_indices[k]`. `symmetries` always contains the
 * identity; for continuous axes it holds a discretization.
 */
struct ObjectModel {
  std::string object_id;
  std::vector<Eigen::Vector3d> keypoints;
  std::vector<int> valid_indices;
  std::vector<RigidTransform> symmetries{RigidTransform::identity()};
  Eigen::Matrix3d canonical_rotation = Eigen::Matrix3d::Identity();
  bool is_symmetric = false;
  /// Optional densified cloud used by the pose metrics instead of keypoints.
  std::vector<Eigen::Vector3d> metric_points;

  std::size_t size() const { return keypoints.size(); }
  /// Local index of a global keypoint id, or -1.
  int local_index(int global_id) const;
  const std::vector<Eigen::Vector3d>& eval_points() const {
    return metric_points.empty() ? keypoints : metric_points;
  }
  /// Largest pairwise keypoint distance, meters.
  double diameter() const;
  /// Throws InvalidArgument when a model invariant is violated.
  void validate() const;
};

/// Projection of an object's current 3D keypoints into a new image.
struct PriorDetection {
  std::vector<std::optional<Eigen::Vector2d>> coords;  // per local keypoint, full-image pixels
  RigidTransform source_pose;                          // ^C_O T used for the projection

  std::size_t present() const;
};

/**
 * Index of the symmetry transform that brings the mean-subtracted keypoints
 * closest to the canonical view. Ties go to the lowest index.
 */
int canonical_symmetry(const ObjectModel& model, const Eigen::Matrix3d& cam_from_obj_rot);

/// Mean distance between the mean-subtracted clouds compared by canonical_symmetry.
double canonical_cost(const ObjectModel& model, const Eigen::Matrix3d& cam_from_obj_rot,
                      const RigidTransform& symmetry);

/// `count` rotations of 2*pi*m/count about `axis` through `center`, m = 0..count-1.
std::vector<RigidTransform> discretize_axis_symmetry(const Eigen::Vector3d& axis, int count,
                                                     const Eigen::Vector3d& center = Eigen::Vector3d::Zero());

/// Projects the object's keypoints through ^C_G T * ^G_O T. Throws
/// AllBehindCamera when no keypoint has positive depth.
PriorDetection build_prior(const ObjectModel& model, const RigidTransform& cam_from_global,
                           const RigidTransform& global_from_obj, const CameraModel& cam);

/// Default prior blob width, grid cells.
inline constexpr double kPriorSigmaCells = 2.0;

/// Unit-peak isotropic Gaussian per keypoint given in grid coordinates; absent
/// keypoints leave a zero channel.
Tensor3 render_prior_heatmaps(std::span<const std::optional<Eigen::Vector2d>> grid_coords, int height, int width,
                              double sigma = kPriorSigmaCells);

/// Renders a full-image prior into a crop grid. A missing prior gives zeros.
Tensor3 render_prior_heatmaps(const std::optional<PriorDetection>& prior, int channels, const CropTransform& crop,
                              double sigma = kPriorSigmaCells);

}  // namespace objslam
