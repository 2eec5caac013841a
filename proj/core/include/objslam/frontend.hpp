#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "objslam/backend.hpp"
#include "objslam/detector_sim.hpp"
#include "objslam/error.hpp"
#include "objslam/pnp.hpp"
#include "objslam/scene.hpp"

namespace objslam {

struct ObjectObservation {
  std::string object_id;
  std::optional<BoundingBox> bbox;
  std::vector<KeypointDetection> detections;
};

/// One image worth of detector output. Detections here were produced
/// without a prior.
struct FrameInput {
  int frame_id = 0;
  std::vector<ObjectObservation> objects;
  std::optional<RigidTransform> external_cam_pose;  // ^C_G T

  const ObjectObservation* find(const std::string& id) const;
};

/// Re-runs the detector on one object with a prior; nullopt when it has nothing.
using PriorDetector = std::function<std::optional<ObjectObservation>(const std::string& object_id,
                                                                     const PriorDetection& prior)>;

struct FrontendConfig {
  double tau = kChi2Dof2At95;
  double mask_threshold = 0.5;
  int reinit_window = 5;
  int min_hypothesis_inliers = 6;
  double min_hypothesis_fraction = 0.3;
  bool use_prior = true;
  RansacConfig ransac;
  LmOptions local_lm;
  std::uint64_t seed = 1;

  void validate() const;
};

enum class FrameStatus { kTracked, kExternalPose, kDropped };
std::string_view to_string(FrameStatus s);

struct ObjectLog {
  std::string object_id;
  bool stream1 = false;
  std::optional<ErrorCode> error;
  int pnp_inliers = 0;
  bool initialized = false;
  bool reinitialized = false;
  int stored = 0;
};

struct FrameResult {
  int frame_id = 0;
  FrameStatus status = FrameStatus::kDropped;
  int hypothesis_inliers = 0;
  int testable = 0;
  bool local_refine_converged = false;
  std::vector<ObjectLog> objects;

  ObjectLog* log_for(const std::string& id);
};

/// PnP output of the first pass, keyed by object id.
using PnPMap = std::map<std::string, PnPResult>;

/// Per-frame tracking: PnP on stream-1 objects, camera voting, object
/// initialization, local camera refinement and measurement capture.
class Frontend {
 public:
  Frontend(ModelMap models, CameraModel cam, FrontendConfig cfg);

  const ModelMap& models() const { return models_; }
  const CameraModel& camera() const { return cam_; }
  const FrontendConfig& config() const { return cfg_; }

  /// Detections usable as correspondences: mask above threshold and a keypoint the model knows.
  std::vector<KeypointDetection> usable(const std::string& object_id, const std::vector<KeypointDetection>& dets) const;

  /// Asymmetric objects and symmetric objects without a global pose.
  bool in_stream1(const std::string& object_id, const SceneState& scene) const;

  PnPMap first_pass(const FrameInput& frame, const SceneState& scene, FrameResult& log) const;

  /// Max-inlier hypothesis ^C_O T_pnp * ^G_O T^-1 over initialized objects,
  /// falling back to the external pose. nullopt means the frame is dropped.
  std::optional<RigidTransform> select_camera_pose(const PnPMap& pnp, const FrameInput& frame,
                                                   const SceneState& scene, FrameResult& log) const;

  /// Gives uninitialized objects with a PnP pose ^G_O T = ^C_G T^-1 ^C_O T_pnp.
  std::set<std::string> initialize_objects(const PnPMap& pnp, const RigidTransform& cam_from_global,
                                           SceneState& scene) const;

  /// Swaps in the current PnP pose when it explains strictly more of the
  /// object's recent measurements. Returns true on a swap. The current frame's
  /// detections come from `frame` unless `detections` is given.
  bool maybe_reinitialize(const std::string& object_id, const PnPResult& pnp, const FrameInput& frame,
                          const RigidTransform& cam_from_global, SceneState& scene,
                          const std::vector<KeypointDetection>* detections = nullptr) const;

  /// Camera-only LM on this frame's detections with objects fixed. Throws
  /// NotConverged when nothing survives the gate.
  PoseRefineResult refine_camera_local(const FrameInput& frame, const RigidTransform& cam_from_global,
                                       const SceneState& scene, const std::set<std::string>& exclude) const;

  /// Stores measurements for every initialized object in the frame, querying
  /// the detector with a prior for symmetric objects that already had a pose.
  int second_pass(const FrameInput& frame, SceneState& scene, const std::set<std::string>& stream1,
                  const PriorDetector& detector, FrameResult& log) const;

  FrameResult process(const FrameInput& frame, SceneState& scene, const PriorDetector& detector = {}) const;

 private:
  std::uint64_t ransac_seed(int frame, const std::string& object_id) const;
  int count_inliers(const std::string& object_id, const std::vector<KeypointDetection>& dets,
                    const RigidTransform& cam_from_obj) const;

  ModelMap models_;
  CameraModel cam_;
  FrontendConfig cfg_;
};

/// Front end plus the back-end schedule.
class SlamSystem {
 public:
  SlamSystem(ModelMap models, CameraModel cam, FrontendConfig fcfg, BackendConfig bcfg);

  /// Tracks one frame; runs the back end after every schedule_every frames.
  FrameResult process_frame(const FrameInput& frame, const PriorDetector& detector = {});
  /// Final back-end pass if frames arrived since the last one.
  void finish();
  BackendResult run_backend();

  const SceneState& scene() const { return scene_; }
  SceneState& mutable_scene() { return scene_; }
  const Frontend& frontend() const { return frontend_; }
  const std::vector<BackendResult>& backend_runs() const { return runs_; }
  const std::vector<FrameResult>& frame_log() const { return frames_; }

 private:
  Frontend frontend_;
  BackendConfig bcfg_;
  SceneState scene_;
  std::vector<BackendResult> runs_;
  std::vector<FrameResult> frames_;
  int since_backend_ = 0;
};

}  // namespace objslam
