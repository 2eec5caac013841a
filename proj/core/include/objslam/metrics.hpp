#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "objslam/se3.hpp"
#include "objslam/symmetry.hpp"

namespace objslam {

/// Pose errors of one object in one evaluation, meters. Missing estimates use +inf.
struct PoseErrorSample {
  std::string object_id;
  double add = 0.0;
  double add_s = 0.0;
  double add_of_s = 0.0;
};

/// Mean over points of |T_est p - T_gt p|. Throws EmptyCloud.
double add_metric(std::span<const Eigen::Vector3d> points, const RigidTransform& est, const RigidTransform& gt);

/// Mean over points of the distance from T_est p to the nearest point of T_gt * cloud.
double add_s_metric(std::span<const Eigen::Vector3d> points, const RigidTransform& est, const RigidTransform& gt);

/// ADD-S for symmetric models, ADD otherwise, on the model's evaluation cloud.
double add_of_s(const ObjectModel& model, const RigidTransform& est, const RigidTransform& gt);

/// All three errors for one estimate; a missing estimate gives +inf everywhere.
PoseErrorSample pose_errors(const ObjectModel& model, const RigidTransform* est, const RigidTransform& gt);

/**
 * Area under the accuracy-vs-threshold step curve for thresholds in
 * [0, max_threshold], scaled to [0, 100]. Accuracy at t is the fraction of
 * errors <= t. Throws EmptyList.
 */
double auc(std::span<const double> errors, double max_threshold = 0.10);

struct CalibrationReport {
  double fraction_in_3sigma_u = 1.0;
  double fraction_in_3sigma_v = 1.0;
  double fraction_pass_chi2_99 = 1.0;
  std::size_t count = 0;
};

/// Per-axis |e| < 3 sigma and e^T cov^-1 e < 9.210. Throws LengthMismatch.
CalibrationReport calibration_report(std::span<const Eigen::Vector2d> errors, std::span<const Eigen::Matrix2d> covs);

struct ObjectScore {
  std::string object;
  double add_auc = 0.0;
  double add_s_auc = 0.0;
  double add_of_s_auc = 0.0;
  std::size_t samples = 0;
};

/// Per-object AUCs plus their unweighted mean (object "mean").
struct MetricsTable {
  std::vector<ObjectScore> per_object;
  ObjectScore mean;
};

/// Groups samples by object, scores each group, then averages over objects.
MetricsTable score_table(std::span<const PoseErrorSample> samples, double max_threshold = 0.10);

std::string metrics_csv(const MetricsTable& table);
std::string calibration_csv(const CalibrationReport& report);
nlohmann::json to_json(const MetricsTable& table);
nlohmann::json to_json(const CalibrationReport& report);

}  // namespace objslam
