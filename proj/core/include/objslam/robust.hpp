#pragma once

#include <cmath>

#include <Eigen/Core>

namespace objslam {

/// chi^2 quantiles for 2 degrees of freedom.
inline constexpr double kChi2Dof2At95 = 5.991;
inline constexpr double kChi2Dof2At99 = 9.210;

/// Squared Mahalanobis norm r^T cov^-1 r of a 2-vector.
inline double mahalanobis_sq(const Eigen::Vector2d& r, const Eigen::Matrix2d& cov) {
  return r.dot(cov.inverse() * r);
}

/// Huber norm on the squared Mahalanobis form: q below the knee, linear in
/// sqrt(q) above it. Continuous with continuous first derivative at q = knee.
inline double huber(double q, double knee) {
  return q <= knee ? q : 2.0 * std::sqrt(knee * q) - knee;
}

/// d huber / d q.
inline double huber_weight(double q, double knee) {
  return q <= knee ? 1.0 : std::sqrt(knee / q);
}

}  // namespace objslam
