#include "objslam/symmetry.hpp"

#include <cmath>
#include <numbers>

#include "objslam/error.hpp"

namespace objslam {

int ObjectModel::local_index(int global_id) const {
  for (std::size_t k = 0; k < valid_indices.size(); ++k) {
    if (valid_indices[k] == global_id) return static_cast<int>(k);
  }
  return -1;
}

double ObjectModel::diameter() const {
  double best = 0.0;
  for (std::size_t a = 0; a < keypoints.size(); ++a) {
    for (std::size_t b = a + 1; b < keypoints.size(); ++b) {
      best = std::max(best, (keypoints[a] - keypoints[b]).norm());
    }
  }
  return best;
}

void ObjectModel::validate() const {
  if (keypoints.size() != valid_indices.size()) {
    throw Error(ErrorCode::kInvalidArgument, object_id + ": keypoints and valid_indices differ in length");
  }
  if (keypoints.size() < 4) throw Error(ErrorCode::kInvalidArgument, object_id + ": fewer than 4 keypoints");
  bool has_identity = false;
  for (const auto& s : symmetries) {
    if (!s.is_valid(1e-6)) throw Error(ErrorCode::kInvalidArgument, object_id + ": invalid symmetry transform");
    if ((s.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9 && s.translation.norm() < 1e-9) {
      has_identity = true;
    }
  }
  if (!has_identity) throw Error(ErrorCode::kInvalidArgument, object_id + ": symmetry set lacks the identity");
}

std::size_t PriorDetection::present() const {
  std::size_t n = 0;
  for (const auto& c : coords) n += c.has_value() ? 1 : 0;
  return n;
}

namespace {

std::vector<Eigen::Vector3d> mean_subtracted(std::vector<Eigen::Vector3d> pts) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  for (auto& p : pts) p -= mean;
  return pts;
}

}  // namespace

double canonical_cost(const ObjectModel& model, const Eigen::Matrix3d& cam_from_obj_rot,
                      const RigidTransform& symmetry) {
  std::vector<Eigen::Vector3d> current;
  std::vector<Eigen::Vector3d> canonical;
  current.reserve(model.size());
  canonical.reserve(model.size());
  for (const auto& p : model.keypoints) {
    current.push_back(cam_from_obj_rot * (symmetry * p));
    canonical.push_back(model.canonical_rotation * p);
  }
  current = mean_subtracted(std::move(current));
  canonical = mean_subtracted(std::move(canonical));
  double sum = 0.0;
  for (std::size_t k = 0; k < current.size(); ++k) sum += (current[k] - canonical[k]).norm();
  return sum / static_cast<double>(current.size());
}

int canonical_symmetry(const ObjectModel& model, const Eigen::Matrix3d& cam_from_obj_rot) {
  if (model.symmetries.empty()) throw Error(ErrorCode::kInvalidArgument, "empty symmetry set");
  int best = 0;
  double best_cost = canonical_cost(model, cam_from_obj_rot, model.symmetries[0]);
  for (std::size_t m = 1; m < model.symmetries.size(); ++m) {
    const double cost = canonical_cost(model, cam_from_obj_rot, model.symmetries[m]);
    if (cost < best_cost) {
      best_cost = cost;
      best = static_cast<int>(m);
    }
  }
  return best;
}

std::vector<RigidTransform> discretize_axis_symmetry(const Eigen::Vector3d& axis, int count,
                                                     const Eigen::Vector3d& center) {
  if (axis.norm() < 1e-9) throw Error(ErrorCode::kZeroAxis, "symmetry axis has zero length");
  if (count < 1) throw Error(ErrorCode::kInvalidArgument, "symmetry count must be >= 1");
  std::vector<RigidTransform> out;
  out.reserve(count);
  out.push_back(RigidTransform::identity());
  for (int m = 1; m < count; ++m) {
    const Eigen::Matrix3d r = axis_angle(axis, 2.0 * std::numbers::pi * m / count);
    out.emplace_back(r, center - r * center);
  }
  return out;
}

PriorDetection build_prior(const ObjectModel& model, const RigidTransform& cam_from_global,
                           const RigidTransform& global_from_obj, const CameraModel& cam) {
  PriorDetection prior;
  prior.source_pose = cam_from_global * global_from_obj;
  prior.coords.reserve(model.size());
  for (const auto& p : model.keypoints) prior.coords.push_back(try_project(cam, prior.source_pose * p));
  if (prior.present() == 0) throw Error(ErrorCode::kAllBehindCamera, model.object_id);
  return prior;
}

Tensor3 render_prior_heatmaps(std::span<const std::optional<Eigen::Vector2d>> grid_coords, int height, int width,
                              double sigma) {
  if (height < 4 || width < 4) throw Error(ErrorCode::kInvalidArgument, "prior grid must be at least 4x4");
  Tensor3 out(static_cast<int>(grid_coords.size()), height, width);
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < grid_coords.size(); ++i) {
    if (!grid_coords[i]) continue;
    const Eigen::Vector2d& g = *grid_coords[i];
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const double dx = c - g.x();
        const double dy = r - g.y();
        out.at(static_cast<int>(i), r, c) = std::exp(-(dx * dx + dy * dy) * inv_two_var);
      }
    }
  }
  return out;
}

Tensor3 render_prior_heatmaps(const std::optional<PriorDetection>& prior, int channels, const CropTransform& crop,
                              double sigma) {
  std::vector<std::optional<Eigen::Vector2d>> grid(channels);
  if (prior) {
    if (static_cast<int>(prior->coords.size()) != channels) {
      throw Error(ErrorCode::kLengthMismatch, "prior keypoint count differs from channel count");
    }
    for (int i = 0; i < channels; ++i) {
      if (prior->coords[i]) grid[i] = crop.to_grid(*prior->coords[i]);
    }
  }
  return render_prior_heatmaps(grid, crop.grid_h, crop.grid_w, sigma);
}

}  // namespace objslam
