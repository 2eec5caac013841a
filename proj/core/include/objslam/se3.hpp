#pragma once

#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace objslam {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix26d = Eigen::Matrix<double, 2, 6>;
using Matrix23d = Eigen::Matrix<double, 2, 3>;

/// Skew-symmetric matrix such that skew(v) * u = v x u.
Eigen::Matrix3d skew(const Eigen::Vector3d& v);

/**
 * Rigid-body transform ^B_A T mapping points expressed in frame {A} into
 * frame {B}: ^B p = R * ^A p + t.
 *
 * Rotation is stored as a matrix; quaternions only appear at I/O boundaries.
 */
struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  RigidTransform() = default;
  RigidTransform(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) : rotation(r), translation(t) {}

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Eigen::Vector3d& t) {
    return {Eigen::Matrix3d::Identity(), t};
  }
  static RigidTransform from_rotation(const Eigen::Matrix3d& r) { return {r, Eigen::Vector3d::Zero()}; }

  RigidTransform inverse() const;

  /// Composition: (a * b) maps b's source frame into a's target frame.
  RigidTransform operator*(const RigidTransform& other) const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  Eigen::Matrix4d matrix() const;

  /// Orthonormal rotation with det +1, within tol.
  bool is_valid(double tol = 1e-9) const;
};

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
Eigen::Vector3d transform_point(const RigidTransform& t, const Eigen::Vector3d& p);

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& omega);

/// Rotation vector of R. At an angle of exactly pi the sign of the axis is
/// ambiguous; the branch whose largest-magnitude axis component is positive is
/// returned.
Eigen::Vector3d so3_log(const Eigen::Matrix3d& r);

/// SE(3) exponential of the tangent xi = (omega, v): rotation part first.
RigidTransform exp_map(const Vector6d& xi);
Vector6d log_map(const RigidTransform& t);

/// Geodesic angle between two rotations, radians.
double rotation_angle_between(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

/// Rotation of `angle` radians about `axis` (normalized internally).
Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle);

/// Project R onto SO(3) via SVD.
Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& r);

struct CameraModel {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  bool is_valid() const { return fx > 0 && fy > 0 && width > 0 && height > 0; }
  bool in_image(const Eigen::Vector2d& uv) const {
    return uv.x() >= 0.0 && uv.y() >= 0.0 && uv.x() < width && uv.y() < height;
  }
};

/// Depth below which a point counts as behind the camera.
inline constexpr double kMinDepth = 1e-6;

/// Pinhole projection in full-image pixels. Throws NonPositiveDepth.
Eigen::Vector2d project(const CameraModel& cam, const Eigen::Vector3d& p_cam);
std::optional<Eigen::Vector2d> try_project(const CameraModel& cam, const Eigen::Vector3d& p_cam);

/// d project(p) / d p.
Matrix23d projection_jacobian(const CameraModel& cam, const Eigen::Vector3d& p_cam);

/// d project(exp(xi) * p) / d xi at xi = 0, for p already in the camera frame.
Matrix26d project_left_jacobian(const CameraModel& cam, const Eigen::Vector3d& p_cam);

/// d (exp(xi) * p) / d xi at xi = 0.
Eigen::Matrix<double, 3, 6> point_left_jacobian(const Eigen::Vector3d& p);

struct BoundingBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double w = 1.0;
  double h = 1.0;

  bool is_valid() const { return w > 0 && h > 0; }
  bool contains(const Eigen::Vector2d& uv) const {
    return uv.x() >= x0 && uv.y() >= y0 && uv.x() <= x0 + w && uv.y() <= y0 + h;
  }
};

/**
 * Affine map between a detector's crop grid and full-image pixels. Grid cell
 * (c, r) covers the box sub-rectangle [x0 + c*sx, x0 + (c+1)*sx) and its
 * center sits at integer grid coordinates.
 */
struct CropTransform {
  BoundingBox box;
  int grid_w = 64;
  int grid_h = 64;

  double scale_x() const { return box.w / grid_w; }
  double scale_y() const { return box.h / grid_h; }

  Eigen::Vector2d to_image(const Eigen::Vector2d& grid) const;
  Eigen::Vector2d to_grid(const Eigen::Vector2d& pixel) const;
  Eigen::Matrix2d cov_to_image(const Eigen::Matrix2d& grid_cov) const;
};

}  // namespace objslam
