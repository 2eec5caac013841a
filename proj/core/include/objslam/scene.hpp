#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Core>

#include "objslam/se3.hpp"
#include "objslam/symmetry.hpp"

namespace objslam {

/// One stored keypoint observation; `inlier` is the s flag of the robust cost.
struct Measurement {
  int frame = 0;
  std::string object;
  int keypoint = 0;  // global keypoint id
  Eigen::Vector2d coord = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
  bool inlier = true;
};

using ModelMap = std::map<std::string, ObjectModel>;

/**
 * Camera poses ^{C_j}_G T, object poses ^G_O T and the measurement store. The
 * first camera added becomes the gauge and is pinned to identity.
 */
class SceneState {
 public:
  void set_camera(int frame, const RigidTransform& cam_from_global);
  void set_object(const std::string& id, const RigidTransform& global_from_obj);

  bool has_camera(int frame) const { return cam_poses_.count(frame) != 0; }
  bool has_object(const std::string& id) const { return obj_poses_.count(id) != 0; }
  const RigidTransform& camera(int frame) const;
  const RigidTransform& object(const std::string& id) const;
  RigidTransform& mutable_camera(int frame);
  RigidTransform& mutable_object(const std::string& id);

  const std::map<int, RigidTransform>& cameras() const { return cam_poses_; }
  const std::map<std::string, RigidTransform>& objects() const { return obj_poses_; }
  std::optional<int> gauge_frame() const { return gauge_; }

  /// Appends unless the (frame, object, keypoint) triple is already stored.
  /// Throws InvalidArgument when the frame or object has no pose.
  bool add_measurement(const Measurement& m);
  const std::vector<Measurement>& measurements() const { return measurements_; }
  std::vector<Measurement>& mutable_measurements() { return measurements_; }

 private:
  std::map<int, RigidTransform> cam_poses_;
  std::map<std::string, RigidTransform> obj_poses_;
  std::vector<Measurement> measurements_;
  std::set<std::tuple<int, std::string, int>> keys_;
  std::optional<int> gauge_;
};

}  // namespace objslam
