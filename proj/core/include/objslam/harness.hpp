#pragma once

#include <cstdint>
#include <map>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "objslam/backend.hpp"
#include "objslam/detector_sim.hpp"
#include "objslam/frontend.hpp"
#include "objslam/metrics.hpp"

namespace objslam {

enum class TrajectoryType { kOrbit, kArc, kRandomWalk };
std::string_view to_string(TrajectoryType t);
TrajectoryType trajectory_from_string(std::string_view s);

struct SceneSpec {
  int num_objects = 10;
  int num_symmetric = 4;
  int frames = 100;
  TrajectoryType trajectory = TrajectoryType::kOrbit;
  double turns = 2.0;          // orbit only
  double orbit_radius = 0.9;   // meters from the table center
  double camera_height = 0.5;
  double table_radius = 0.3;
  double bbox_jitter = 2.0;    // pixels
};

struct RunConfig {
  SceneSpec scene;
  NoiseConfig noise;
  BackendConfig backend;
  FrontendConfig frontend;
  CameraModel camera;
  bool single_view_only = false;
  bool external_poses = false;  // hand the tracker ground-truth camera poses as a fallback
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  /// Sets the seed everywhere it is consumed.
  void set_seed(std::uint64_t s);
  void validate() const;
};

/// Parses `key = value` lines ('#' starts a comment) into cfg. Throws ParseError.
void apply_config_text(const std::string& text, RunConfig& cfg);
/// Applies a single key; throws ParseError for unknown keys or bad values.
void apply_config_value(const std::string& key, const std::string& value, RunConfig& cfg);
/// Resolved configuration in the same key = value format.
std::string config_to_text(const RunConfig& cfg);
nlohmann::json config_to_json(const RunConfig& cfg);

/// Canonical view for z-up models whose front faces +x.
Eigen::Matrix3d default_canonical_rotation();

/// Built-in model set: asymmetric objects first, then symmetric ones cycling
/// through a 2-fold clamp, a 4-fold cross, a 64-way bowl and a 2-fold block.
ModelMap builtin_models(int num_objects, int num_symmetric);

struct GroundTruth {
  CameraModel camera;
  ModelMap models;
  std::map<std::string, RigidTransform> objects;  // ^W_O T
  std::vector<RigidTransform> cameras;            // ^{C_j}_W T
  int attempts = 0;
};

/// Tabletop scene and camera trajectory. Throws InfeasibleScene when no
/// placement keeps every object fully in view in half the frames.
GroundTruth generate_scene(const RunConfig& cfg);
nlohmann::json scene_to_json(const GroundTruth& gt);
GroundTruth scene_from_json(const nlohmann::json& j);

/// Fraction of frames in which all of the object's keypoints are in the image.
double visibility_fraction(const GroundTruth& gt, const std::string& object_id);

/// Deterministic detector over a ground-truth scene.
class SceneSimulator {
 public:
  SceneSimulator(const GroundTruth& gt, const RunConfig& cfg);

  /// No-prior detections for every object that projects into frame j.
  FrameInput frame(int j);
  /// Detections for one object conditioned on a prior.
  std::optional<ObjectObservation> detect_with_prior(int j, const std::string& object_id, const PriorDetection& prior);

  /// True when the measurement carries a pixel the simulator replaced by a gross outlier.
  bool is_injected_outlier(const Measurement& m) const;

  /// Residuals (detected minus exact) and reported covariances of every emitted detection.
  const std::vector<Eigen::Vector2d>& residuals() const { return residuals_; }
  const std::vector<Eigen::Matrix2d>& reported_covs() const { return covs_; }

 private:
  std::uint64_t object_index(const std::string& id) const;
  void record(int j, const std::string& id, const SimulatedDetections& sim);

  const GroundTruth& gt_;
  const RunConfig& cfg_;
  std::map<std::pair<int, std::string>, BoundingBox> boxes_;
  std::vector<Eigen::Vector2d> residuals_;
  std::vector<Eigen::Matrix2d> covs_;
  std::set<std::tuple<int, std::string, int, double, double>> outliers_;
};

/// Frame inputs plus the prior-conditioned detections the tracker asked for.
struct DetectionDump {
  std::vector<FrameInput> frames;
  std::map<std::pair<int, std::string>, ObjectObservation> prior_detections;

  std::string to_jsonl() const;
  static DetectionDump from_jsonl(const std::string& text);
};

/// Per-keypoint 3D spread of a subset of one object's stored measurements.
struct SpreadStat {
  std::string object_id;
  double mean_spread = 0.0;  // meters, mean over keypoint ids
  double max_spread = 0.0;
  double diameter = 0.0;
  int keypoints = 0;
};

/// Back-projects each selected measurement of a symmetric object at the depth
/// of the estimated keypoint and takes the largest pairwise distance per
/// keypoint id.
std::vector<SpreadStat> measurement_spread(const SceneState& scene, const ModelMap& models, const CameraModel& cam,
                                           const std::function<bool(const Measurement&)>& select);

struct RunReport {
  RunConfig config;
  std::vector<PoseErrorSample> samples;
  MetricsTable table;
  MetricsTable symmetric_table;
  CalibrationReport calibration;
  int frames_tracked = 0;
  int frames_external = 0;
  int frames_dropped = 0;
  int measurements = 0;
  int inliers = 0;
  std::vector<BackendResult> backend_runs;
  std::vector<SpreadStat> spread;        // measurements flagged inlier
  std::vector<SpreadStat> label_spread;  // every stored measurement that is not an injected outlier
  double seconds = 0.0;

  nlohmann::json to_json(bool include_timing = true) const;
  std::string trace_csv() const;
};

/// Frames and objects scored by the pose metrics: every (frame, object) with detections.
using VisibilitySet = std::vector<std::pair<int, std::string>>;

struct PipelineOutput {
  RunReport report;
  SceneState scene;          // final SLAM state, empty in single-view mode
  VisibilitySet visible;
  DetectionDump dump;
};

/// simulate -> track -> optimize -> score.
PipelineOutput run_pipeline(const RunConfig& cfg, const GroundTruth& gt);
/// Same pipeline driven by recorded detections.
PipelineOutput replay_pipeline(const RunConfig& cfg, const GroundTruth& gt, const DetectionDump& dump);

/// Camera-relative pose errors of a SLAM state over the visibility set;
/// frames without a camera and objects without a pose count as +inf.
std::vector<PoseErrorSample> score_scene(const SceneState& scene, const GroundTruth& gt, const VisibilitySet& visible);

/// Back end started at ground truth (expressed in the tracker's gauge) on the
/// same measurement store; returns the optimized scene.
SceneState oracle_scene(const SceneState& tracked, const GroundTruth& gt, const RunConfig& cfg);

}  // namespace objslam
