#include "objslam/se3.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/SVD>

#include "objslam/error.hpp"

namespace objslam {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  // clang-format off
  s <<  0.0,   -v.z(),  v.y(),
        v.z(),  0.0,   -v.x(),
       -v.y(),  v.x(),  0.0;
  // clang-format on
  return s;
}

RigidTransform RigidTransform::inverse() const {
  const Eigen::Matrix3d rt = rotation.transpose();
  return {rt, -(rt * translation)};
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

bool RigidTransform::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return a * b; }

Eigen::Vector3d transform_point(const RigidTransform& t, const Eigen::Vector3d& p) { return t * p; }

namespace {

// Coefficients A = sin(t)/t, B = (1 - cos t)/t^2, C = (t - sin t)/t^3.
struct ExpCoeffs {
  double a, b, c;
};

ExpCoeffs exp_coeffs(double theta) {
  const double t2 = theta * theta;
  if (theta < 1e-4) {
    return {1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0};
  }
  return {std::sin(theta) / theta, (1.0 - std::cos(theta)) / t2, (theta - std::sin(theta)) / (t2 * theta)};
}

}  // namespace

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& omega) {
  const double theta = omega.norm();
  const ExpCoeffs k = exp_coeffs(theta);
  const Eigen::Matrix3d w = skew(omega);
  return Eigen::Matrix3d::Identity() + k.a * w + k.b * w * w;
}

Eigen::Vector3d so3_log(const Eigen::Matrix3d& r) {
  const Eigen::Vector3d w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double sin_theta = 0.5 * w.norm();
  const double cos_theta = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(sin_theta, cos_theta);

  if (theta < 1e-8) return 0.5 * (1.0 + theta * theta / 6.0) * w;
  if (std::numbers::pi - theta > 1e-4) return (theta / (2.0 * sin_theta)) * w;

  // Near pi: the symmetric part is cos(t) I + (1 - cos t) a a^T.
  const Eigen::Matrix3d s = 0.5 * (r + r.transpose()) - cos_theta * Eigen::Matrix3d::Identity();
  int i = 0;
  s.diagonal().maxCoeff(&i);
  Eigen::Vector3d axis = s.col(i) / std::sqrt(std::max(s(i, i), 1e-300));
  axis.normalize();
  const double along = axis.dot(w);
  if (along < 0.0) {
    axis = -axis;
  } else if (along == 0.0) {
    int j = 0;
    axis.cwiseAbs().maxCoeff(&j);
    if (axis(j) < 0.0) axis = -axis;
  }
  return theta * axis;
}

RigidTransform exp_map(const Vector6d& xi) {
  const Eigen::Vector3d omega = xi.head<3>();
  const Eigen::Vector3d v = xi.tail<3>();
  const double theta = omega.norm();
  const ExpCoeffs k = exp_coeffs(theta);
  const Eigen::Matrix3d w = skew(omega);
  const Eigen::Matrix3d w2 = w * w;
  const Eigen::Matrix3d rot = Eigen::Matrix3d::Identity() + k.a * w + k.b * w2;
  const Eigen::Matrix3d jac = Eigen::Matrix3d::Identity() + k.b * w + k.c * w2;
  return {rot, jac * v};
}

Vector6d log_map(const RigidTransform& t) {
  const Eigen::Vector3d omega = so3_log(t.rotation);
  const double theta = omega.norm();
  const Eigen::Matrix3d w = skew(omega);
  double d = 0.0;
  if (theta < 1e-4) {
    d = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    const ExpCoeffs k = exp_coeffs(theta);
    d = (1.0 - k.a / (2.0 * k.b)) / (theta * theta);
  }
  const Eigen::Matrix3d jac_inv = Eigen::Matrix3d::Identity() - 0.5 * w + d * w * w;
  Vector6d xi;
  xi << omega, jac_inv * t.translation;
  return xi;
}

double rotation_angle_between(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  return so3_log(a.transpose() * b).norm();
}

Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& r) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

std::optional<Eigen::Vector2d> try_project(const CameraModel& cam, const Eigen::Vector3d& p_cam) {
  if (!(p_cam.z() > kMinDepth)) return std::nullopt;
  const double inv_z = 1.0 / p_cam.z();
  return Eigen::Vector2d(cam.fx * p_cam.x() * inv_z + cam.cx, cam.fy * p_cam.y() * inv_z + cam.cy);
}

Eigen::Vector2d project(const CameraModel& cam, const Eigen::Vector3d& p_cam) {
  auto uv = try_project(cam, p_cam);
  if (!uv) throw Error(ErrorCode::kNonPositiveDepth, "point at depth " + std::to_string(p_cam.z()));
  return *uv;
}

Matrix23d projection_jacobian(const CameraModel& cam, const Eigen::Vector3d& p_cam) {
  const double inv_z = 1.0 / p_cam.z();
  const double inv_z2 = inv_z * inv_z;
  Matrix23d j;
  j << cam.fx * inv_z, 0.0, -cam.fx * p_cam.x() * inv_z2,
       0.0, cam.fy * inv_z, -cam.fy * p_cam.y() * inv_z2;
  return j;
}

Eigen::Matrix<double, 3, 6> point_left_jacobian(const Eigen::Vector3d& p) {
  Eigen::Matrix<double, 3, 6> j;
  j.leftCols<3>() = -skew(p);
  j.rightCols<3>().setIdentity();
  return j;
}

Matrix26d project_left_jacobian(const CameraModel& cam, const Eigen::Vector3d& p_cam) {
  return projection_jacobian(cam, p_cam) * point_left_jacobian(p_cam);
}

Eigen::Vector2d CropTransform::to_image(const Eigen::Vector2d& grid) const {
  return {box.x0 + (grid.x() + 0.5) * scale_x(), box.y0 + (grid.y() + 0.5) * scale_y()};
}

Eigen::Vector2d CropTransform::to_grid(const Eigen::Vector2d& pixel) const {
  return {(pixel.x() - box.x0) / scale_x() - 0.5, (pixel.y() - box.y0) / scale_y() - 0.5};
}

Eigen::Matrix2d CropTransform::cov_to_image(const Eigen::Matrix2d& grid_cov) const {
  const Eigen::Vector2d s(scale_x(), scale_y());
  return s.asDiagonal() * grid_cov * s.asDiagonal();
}

}  // namespace objslam
