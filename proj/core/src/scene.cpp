#include "objslam/scene.hpp"

#include "objslam/error.hpp"

namespace objslam {

void SceneState::set_camera(int frame, const RigidTransform& cam_from_global) {
  if (!gauge_) {
    gauge_ = frame;
    cam_poses_[frame] = RigidTransform::identity();
    return;
  }
  if (frame == *gauge_) return;
  cam_poses_[frame] = cam_from_global;
}

void SceneState::set_object(const std::string& id, const RigidTransform& global_from_obj) {
  obj_poses_[id] = global_from_obj;
}

const RigidTransform& SceneState::camera(int frame) const {
  auto it = cam_poses_.find(frame);
  if (it == cam_poses_.end()) throw Error(ErrorCode::kInvalidArgument, "no camera pose for frame " + std::to_string(frame));
  return it->second;
}

const RigidTransform& SceneState::object(const std::string& id) const {
  auto it = obj_poses_.find(id);
  if (it == obj_poses_.end()) throw Error(ErrorCode::kInvalidArgument, "no pose for object " + id);
  return it->second;
}

RigidTransform& SceneState::mutable_camera(int frame) {
  if (gauge_ && frame == *gauge_) throw Error(ErrorCode::kInvalidArgument, "gauge camera is fixed");
  auto it = cam_poses_.find(frame);
  if (it == cam_poses_.end()) throw Error(ErrorCode::kInvalidArgument, "no camera pose for frame " + std::to_string(frame));
  return it->second;
}

RigidTransform& SceneState::mutable_object(const std::string& id) {
  auto it = obj_poses_.find(id);
  if (it == obj_poses_.end()) throw Error(ErrorCode::kInvalidArgument, "no pose for object " + id);
  return it->second;
}

bool SceneState::add_measurement(const Measurement& m) {
  if (!has_camera(m.frame) || !has_object(m.object)) {
    throw Error(ErrorCode::kInvalidArgument, "measurement references unknown frame or object");
  }
  if (!keys_.emplace(m.frame, m.object, m.keypoint).second) return false;
  measurements_.push_back(m);
  return true;
}

}  // namespace objslam
