#include "objslam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "objslam/error.hpp"
#include "objslam/robust.hpp"

namespace objslam {

double add_metric(std::span<const Eigen::Vector3d> points, const RigidTransform& est, const RigidTransform& gt) {
  if (points.empty()) throw Error(ErrorCode::kEmptyCloud, "add needs at least one point");
  double sum = 0.0;
  for (const auto& p : points) sum += (est * p - gt * p).norm();
  return sum / static_cast<double>(points.size());
}

double add_s_metric(std::span<const Eigen::Vector3d> points, const RigidTransform& est, const RigidTransform& gt) {
  if (points.empty()) throw Error(ErrorCode::kEmptyCloud, "add-s needs at least one point");
  std::vector<Eigen::Vector3d> target;
  target.reserve(points.size());
  for (const auto& p : points) target.push_back(gt * p);
  double sum = 0.0;
  for (const auto& p : points) {
    const Eigen::Vector3d q = est * p;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : target) best = std::min(best, (q - t).squaredNorm());
    sum += std::sqrt(best);
  }
  return sum / static_cast<double>(points.size());
}

double add_of_s(const ObjectModel& model, const RigidTransform& est, const RigidTransform& gt) {
  const auto& pts = model.eval_points();
  return model.is_symmetric ? add_s_metric(pts, est, gt) : add_metric(pts, est, gt);
}

PoseErrorSample pose_errors(const ObjectModel& model, const RigidTransform* est, const RigidTransform& gt) {
  PoseErrorSample s;
  s.object_id = model.object_id;
  if (!est) {
    s.add = s.add_s = s.add_of_s = std::numeric_limits<double>::infinity();
    return s;
  }
  s.add = add_metric(model.eval_points(), *est, gt);
  s.add_s = add_s_metric(model.eval_points(), *est, gt);
  s.add_of_s = model.is_symmetric ? s.add_s : s.add;
  return s;
}

double auc(std::span<const double> errors, double max_threshold) {
  if (errors.empty()) throw Error(ErrorCode::kEmptyList, "auc of an empty list");
  if (!(max_threshold > 0.0)) throw Error(ErrorCode::kInvalidArgument, "max_threshold must be > 0");
  std::vector<double> e(errors.begin(), errors.end());
  std::sort(e.begin(), e.end());
  // Integrate the step curve: accuracy jumps by 1/n at each error below the cap.
  const double n = static_cast<double>(e.size());
  double area = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double x = std::clamp(e[i], 0.0, max_threshold);
    area += (x - prev) * static_cast<double>(i) / n;
    prev = x;
  }
  // Past the largest error every sample counts; if it was capped this adds nothing.
  area += max_threshold - prev;
  return 100.0 * area / max_threshold;
}

CalibrationReport calibration_report(std::span<const Eigen::Vector2d> errors, std::span<const Eigen::Matrix2d> covs) {
  if (errors.size() != covs.size()) throw Error(ErrorCode::kLengthMismatch, "errors and covariances differ in length");
  CalibrationReport r;
  r.count = errors.size();
  if (errors.empty()) return r;
  std::size_t in_u = 0, in_v = 0, pass = 0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    const auto& e = errors[i];
    const auto& c = covs[i];
    in_u += std::abs(e.x()) < 3.0 * std::sqrt(c(0, 0));
    in_v += std::abs(e.y()) < 3.0 * std::sqrt(c(1, 1));
    pass += mahalanobis_sq(e, c) < kChi2Dof2At99;
  }
  const double n = static_cast<double>(errors.size());
  r.fraction_in_3sigma_u = in_u / n;
  r.fraction_in_3sigma_v = in_v / n;
  r.fraction_pass_chi2_99 = pass / n;
  return r;
}

MetricsTable score_table(std::span<const PoseErrorSample> samples, double max_threshold) {
  std::map<std::string, std::vector<const PoseErrorSample*>> groups;
  for (const auto& s : samples) groups[s.object_id].push_back(&s);
  MetricsTable t;
  t.mean.object = "mean";
  for (const auto& [id, group] : groups) {
    std::vector<double> add, adds, addos;
    for (const auto* s : group) {
      add.push_back(s->add);
      adds.push_back(s->add_s);
      addos.push_back(s->add_of_s);
    }
    ObjectScore o{id, auc(add, max_threshold), auc(adds, max_threshold), auc(addos, max_threshold), group.size()};
    t.mean.add_auc += o.add_auc;
    t.mean.add_s_auc += o.add_s_auc;
    t.mean.add_of_s_auc += o.add_of_s_auc;
    t.mean.samples += o.samples;
    t.per_object.push_back(o);
  }
  if (!t.per_object.empty()) {
    const double k = static_cast<double>(t.per_object.size());
    t.mean.add_auc /= k;
    t.mean.add_s_auc /= k;
    t.mean.add_of_s_auc /= k;
  }
  return t;
}

std::string metrics_csv(const MetricsTable& table) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "object,ADD-AUC,ADD-S-AUC,ADD(-S)-AUC,samples\n";
  auto row = [&](const ObjectScore& o) {
    os << o.object << ',' << o.add_auc << ',' << o.add_s_auc << ',' << o.add_of_s_auc << ',' << o.samples << '\n';
  };
  for (const auto& o : table.per_object) row(o);
  row(table.mean);
  return os.str();
}

std::string calibration_csv(const CalibrationReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  os << "count,fraction_in_3sigma_u,fraction_in_3sigma_v,fraction_pass_chi2_99\n";
  os << r.count << ',' << r.fraction_in_3sigma_u << ',' << r.fraction_in_3sigma_v << ',' << r.fraction_pass_chi2_99 << '\n';
  return os.str();
}

namespace {
nlohmann::json score_json(const ObjectScore& o) {
  return {{"object", o.object}, {"add_auc", o.add_auc}, {"add_s_auc", o.add_s_auc},
          {"add_of_s_auc", o.add_of_s_auc}, {"samples", o.samples}};
}
}  // namespace

nlohmann::json to_json(const MetricsTable& table) {
  nlohmann::json j;
  j["per_object"] = nlohmann::json::array();
  for (const auto& o : table.per_object) j["per_object"].push_back(score_json(o));
  j["mean"] = score_json(table.mean);
  return j;
}

nlohmann::json to_json(const CalibrationReport& r) {
  return {{"count", r.count}, {"fraction_in_3sigma_u", r.fraction_in_3sigma_u},
          {"fraction_in_3sigma_v", r.fraction_in_3sigma_v}, {"fraction_pass_chi2_99", r.fraction_pass_chi2_99}};
}

}  // namespace objslam
