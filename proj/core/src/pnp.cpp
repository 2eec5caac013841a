#include "objslam/pnp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "objslam/error.hpp"

namespace objslam {

namespace {

// Real roots of c3 x^3 + c2 x^2 + c1 x + c0, Newton-polished.
std::vector<double> cubic_real_roots(double c3, double c2, double c1, double c0) {
  std::vector<double> roots;
  const double b = c2 / c3;
  const double c = c1 / c3;
  const double d = c0 / c3;
  const double q = (3.0 * c - b * b) / 9.0;
  const double r = (9.0 * b * c - 27.0 * d - 2.0 * b * b * b) / 54.0;
  const double disc = q * q * q + r * r;
  const double shift = -b / 3.0;
  if (disc > 0.0) {
    const double sq = std::sqrt(disc);
    roots.push_back(shift + std::cbrt(r + sq) + std::cbrt(r - sq));
  } else {
    const double rho = std::sqrt(std::max(-q, 0.0));
    const double denom = rho * rho * rho;
    const double phi = denom > 0.0 ? std::acos(std::clamp(r / denom, -1.0, 1.0)) : 0.0;
    for (int k = 0; k < 3; ++k) {
      roots.push_back(shift + 2.0 * rho * std::cos((phi + 2.0 * M_PI * k) / 3.0));
    }
  }
  for (double& x : roots) {
    for (int it = 0; it < 8; ++it) {
      const double f = ((x + b) * x + c) * x + d;
      const double df = (3.0 * x + 2.0 * b) * x + c;
      if (df == 0.0) break;
      const double nx = x - f / df;
      if (!std::isfinite(nx)) break;
      x = nx;
    }
  }
  return roots;
}

// Coefficients of det(A - g B) as c3 g^3 + c2 g^2 + c1 g + c0.
std::array<double, 4> pencil_det(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  auto adj = [](const Eigen::Matrix3d& m) {
    Eigen::Matrix3d out;
    out.row(0) = m.row(1).cross(m.row(2));
    out.row(1) = m.row(2).cross(m.row(0));
    out.row(2) = m.row(0).cross(m.row(1));
    return Eigen::Matrix3d(out.transpose());
  };
  const double t1 = (adj(a) * b).trace();
  const double t2 = (a * adj(b)).trace();
  return {-b.determinant(), t2, -t1, a.determinant()};
}

struct LambdaProblem {
  double a12, a13, a23, b12, b13, b23;

  Eigen::Vector3d residual(const Eigen::Vector3d& l) const {
    return {l(0) * l(0) + l(1) * l(1) + b12 * l(0) * l(1) - a12,
            l(0) * l(0) + l(2) * l(2) + b13 * l(0) * l(2) - a13,
            l(1) * l(1) + l(2) * l(2) + b23 * l(1) * l(2) - a23};
  }

  void refine(Eigen::Vector3d& l) const {
    for (int it = 0; it < 8; ++it) {
      const Eigen::Vector3d r = residual(l);
      if (r.cwiseAbs().sum() < 1e-13) return;
      Eigen::Matrix3d j;
      j << 2 * l(0) + b12 * l(1), 2 * l(1) + b12 * l(0), 0.0,
           2 * l(0) + b13 * l(2), 0.0, 2 * l(2) + b13 * l(0),
           0.0, 2 * l(1) + b23 * l(2), 2 * l(2) + b23 * l(1);
      const Eigen::Vector3d next = l - j.partialPivLu().solve(r);
      if (!next.allFinite() || residual(next).squaredNorm() >= r.squaredNorm()) return;
      l = next;
    }
  }
};

}  // namespace

std::vector<RigidTransform> solve_p3p(std::span<const Correspondence> corrs, const CameraModel& cam) {
  if (corrs.size() != 3) throw Error(ErrorCode::kInvalidArgument, "P3P needs exactly 3 correspondences");
  std::array<Eigen::Vector3d, 3> x;
  std::array<Eigen::Vector3d, 3> y;
  for (int i = 0; i < 3; ++i) {
    x[i] = corrs[i].point;
    y[i] = Eigen::Vector3d((corrs[i].pixel.x() - cam.cx) / cam.fx, (corrs[i].pixel.y() - cam.cy) / cam.fy, 1.0)
               .normalized();
  }
  const Eigen::Vector3d d12 = x[0] - x[1];
  const Eigen::Vector3d d13 = x[0] - x[2];
  const Eigen::Vector3d d23 = x[1] - x[2];
  const Eigen::Vector3d normal = d12.cross(d13);
  if (0.5 * normal.norm() < 1e-9) throw Error(ErrorCode::kDegenerateConfiguration, "collinear points");
  for (int i = 0; i < 3; ++i) {
    if (y[i].cross(y[(i + 1) % 3]).norm() < 1e-12) {
      throw Error(ErrorCode::kDegenerateConfiguration, "coincident bearings");
    }
  }

  const LambdaProblem prob{d12.squaredNorm(), d13.squaredNorm(), d23.squaredNorm(),
                           -2.0 * y[0].dot(y[1]), -2.0 * y[0].dot(y[2]), -2.0 * y[1].dot(y[2])};

  // Homogeneous conics: a23*(eq1) - a12*(eq3) and a23*(eq2) - a13*(eq3).
  Eigen::Matrix3d m12, m13, m23;
  m12 << 1, prob.b12 / 2, 0, prob.b12 / 2, 1, 0, 0, 0, 0;
  m13 << 1, 0, prob.b13 / 2, 0, 0, 0, prob.b13 / 2, 0, 1;
  m23 << 0, 0, 0, 0, 1, prob.b23 / 2, 0, prob.b23 / 2, 1;
  const Eigen::Matrix3d d1 = prob.a23 * m12 - prob.a12 * m23;
  const Eigen::Matrix3d d2 = prob.a23 * m13 - prob.a13 * m23;
  const std::array<double, 4> cubic = pencil_det(d1, d2);
  if (std::abs(cubic[0]) < 1e-300) throw Error(ErrorCode::kDegenerateConfiguration, "degenerate conic pencil");

  std::vector<Eigen::Vector3d> lambdas;
  auto add_candidate = [&](Eigen::Vector3d l) {
    if (!(l.array() > 0.0).all()) return;
    prob.refine(l);
    const Eigen::Vector3d r = prob.residual(l);
    const double scale = std::max({prob.a12, prob.a13, prob.a23});
    if (!(r.cwiseAbs().maxCoeff() < 1e-6 * scale)) return;
    for (const auto& other : lambdas) {
      if ((other - l).norm() < 1e-7 * l.norm()) return;
    }
    lambdas.push_back(l);
  };

  for (double g : cubic_real_roots(cubic[0], cubic[1], cubic[2], cubic[3])) {
    Eigen::Matrix3d d0 = d1 - g * d2;
    d0 = 0.5 * (d0 + d0.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(d0);
    const Eigen::Vector3d ev = eig.eigenvalues();
    int zero = 0;
    ev.cwiseAbs().minCoeff(&zero);
    const int ia = (zero + 1) % 3;
    const int ib = (zero + 2) % 3;
    const double sa = ev(ia);
    const double sb = ev(ib);
    if (sa * sb > 0.0) continue;  // complex line pair
    const double s = std::sqrt(-sb / sa);
    const Eigen::Vector3d ea = eig.eigenvectors().col(ia);
    const Eigen::Vector3d eb = eig.eigenvectors().col(ib);

    for (double sign : {1.0, -1.0}) {
      const Eigen::Vector3d n = ea - sign * s * eb;
      int pivot = 0;
      n.cwiseAbs().maxCoeff(&pivot);
      const int j = (pivot + 1) % 3;
      const int k = (pivot + 2) % 3;
      // lambda = alpha * (P + tau Q) on the plane n . lambda = 0.
      Eigen::Vector3d p = Eigen::Vector3d::Zero();
      Eigen::Vector3d q = Eigen::Vector3d::Zero();
      p(j) = 1.0;
      p(pivot) = -n(j) / n(pivot);
      q(k) = 1.0;
      q(pivot) = -n(k) / n(pivot);

      const Eigen::Matrix3d& conic = d1.norm() >= d2.norm() ? d1 : d2;
      const double qa = q.dot(conic * q);
      const double qb = 2.0 * p.dot(conic * q);
      const double qc = p.dot(conic * p);
      std::vector<double> taus;
      if (std::abs(qa) < 1e-14 * (std::abs(qb) + std::abs(qc))) {
        if (std::abs(qb) > 0.0) taus.push_back(-qc / qb);
      } else {
        const double disc = qb * qb - 4.0 * qa * qc;
        if (disc < 0.0) continue;
        const double sq = std::sqrt(disc);
        const double t = -0.5 * (qb + (qb >= 0.0 ? sq : -sq));
        if (t != 0.0) {
          taus.push_back(t / qa);
          taus.push_back(qc / t);
        } else {
          taus.push_back(0.0);
        }
      }
      for (double tau : taus) {
        Eigen::Vector3d v = p + tau * q;
        if (v.sum() < 0.0) v = -v;
        const std::array<double, 3> forms = {v(0) * v(0) + v(1) * v(1) + prob.b12 * v(0) * v(1),
                                             v(0) * v(0) + v(2) * v(2) + prob.b13 * v(0) * v(2),
                                             v(1) * v(1) + v(2) * v(2) + prob.b23 * v(1) * v(2)};
        const std::array<double, 3> rhs = {prob.a12, prob.a13, prob.a23};
        int best = 0;
        for (int e = 1; e < 3; ++e) {
          if (forms[e] / rhs[e] > forms[best] / rhs[best]) best = e;
        }
        if (!(forms[best] > 0.0)) continue;
        add_candidate(std::sqrt(rhs[best] / forms[best]) * v);
      }
    }
  }

  Eigen::Matrix3d xm;
  xm.col(0) = d12;
  xm.col(1) = d13;
  xm.col(2) = normal;
  const Eigen::Matrix3d xm_inv = xm.inverse();

  std::vector<RigidTransform> poses;
  for (const auto& l : lambdas) {
    const Eigen::Vector3d ry1 = l(0) * y[0];
    const Eigen::Vector3d yd1 = ry1 - l(1) * y[1];
    const Eigen::Vector3d yd2 = ry1 - l(2) * y[2];
    Eigen::Matrix3d ym;
    ym.col(0) = yd1;
    ym.col(1) = yd2;
    ym.col(2) = yd1.cross(yd2);
    const Eigen::Matrix3d rot = orthonormalize(ym * xm_inv);
    poses.emplace_back(rot, ry1 - rot * x[0]);
  }
  return poses;
}

double reprojection_chi2(const RigidTransform& pose, const Correspondence& c, const CameraModel& cam) {
  auto uv = try_project(cam, pose * c.point);
  if (!uv) return std::numeric_limits<double>::infinity();
  return mahalanobis_sq(c.pixel - *uv, c.cov);
}

namespace {

struct Score {
  int count = -1;
  double truncated = std::numeric_limits<double>::infinity();

  bool better_than(const Score& o) const {
    return count > o.count || (count == o.count && truncated < o.truncated);
  }
};

Score score_pose(const RigidTransform& pose, std::span<const Correspondence> corrs, const CameraModel& cam, double tau,
                 std::vector<int>* inliers) {
  Score s{0, 0.0};
  if (inliers) inliers->clear();
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const double q = reprojection_chi2(pose, corrs[i], cam);
    if (q < tau) {
      ++s.count;
      s.truncated += q;
      if (inliers) inliers->push_back(static_cast<int>(i));
    } else {
      s.truncated += tau;
    }
  }
  return s;
}

// Refit on the current inlier set and re-gate until the set stops growing.
void local_optimize(RigidTransform& pose, Score& score, std::span<const Correspondence> corrs, const CameraModel& cam,
                    double tau) {
  std::vector<int> inliers;
  score_pose(pose, corrs, cam, tau, &inliers);
  LmOptions opts;
  opts.max_iters = 10;
  for (int round = 0; round < 3; ++round) {
    std::vector<std::uint8_t> active(corrs.size(), 0);
    for (int i : inliers) active[i] = 1;
    const RigidTransform refined = refine_pose(pose, corrs, cam, opts, active).pose;
    std::vector<int> next;
    const Score s = score_pose(refined, corrs, cam, tau, &next);
    if (!s.better_than(score)) return;
    pose = refined;
    score = s;
    if (next == inliers) return;
    inliers = std::move(next);
  }
}

}  // namespace

PnPResult ransac_pnp(std::span<const Correspondence> corrs, const CameraModel& cam, const RansacConfig& cfg) {
  const int n = static_cast<int>(corrs.size());
  if (n < 4) throw Error(ErrorCode::kTooFewCorrespondences, std::to_string(n) + " correspondences");

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  RigidTransform best_pose;
  Score best;
  int needed = cfg.max_iterations;
  for (int iter = 0; iter < std::min(needed, cfg.max_iterations); ++iter) {
    for (int i = 0; i < 4; ++i) {
      std::uniform_int_distribution<int> pick(i, n - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    const std::array<Correspondence, 3> minimal = {corrs[order[0]], corrs[order[1]], corrs[order[2]]};
    std::vector<RigidTransform> candidates;
    try {
      candidates = solve_p3p(minimal, cam);
    } catch (const Error&) {
      continue;
    }
    if (candidates.empty()) continue;

    // Disambiguate by pixel error on the held-out fourth correspondence.
    const Correspondence& held = corrs[order[3]];
    const RigidTransform* chosen = nullptr;
    double chosen_err = std::numeric_limits<double>::infinity();
    for (const auto& c : candidates) {
      auto uv = try_project(cam, c * held.point);
      if (!uv) continue;
      const double err = (*uv - held.pixel).norm();
      if (err < chosen_err) {
        chosen_err = err;
        chosen = &c;
      }
    }
    if (!chosen) continue;

    Score s = score_pose(*chosen, corrs, cam, cfg.tau, nullptr);
    if (s.better_than(best)) {
      best_pose = *chosen;
      if (cfg.refine && s.count >= cfg.min_inliers) local_optimize(best_pose, s, corrs, cam, cfg.tau);
      best = s;
      const double w = static_cast<double>(s.count) / n;
      const double miss = 1.0 - std::pow(w, 4);
      if (miss <= 0.0) {
        needed = 0;
      } else {
        const double k = std::log(1.0 - cfg.confidence) / std::log(miss);
        needed = std::isfinite(k) ? static_cast<int>(std::ceil(k)) : cfg.max_iterations;
      }
    }
  }
  if (best.count < cfg.min_inliers) {
    throw Error(ErrorCode::kNoConsensus, "best model has " + std::to_string(std::max(best.count, 0)) + " inliers");
  }

  PnPResult out;
  out.pose = best_pose;
  score_pose(out.pose, corrs, cam, cfg.tau, &out.inlier_ids);
  if (cfg.refine) {
    std::vector<std::uint8_t> active(n, 0);
    for (int i : out.inlier_ids) active[i] = 1;
    const PoseRefineResult refined = refine_pose(out.pose, corrs, cam, {}, active);
    std::vector<int> refined_inliers;
    const Score s = score_pose(refined.pose, corrs, cam, cfg.tau, &refined_inliers);
    if (s.count >= static_cast<int>(out.inlier_ids.size())) {
      out.pose = refined.pose;
      out.inlier_ids = std::move(refined_inliers);
    }
  }
  out.inlier_count = static_cast<int>(out.inlier_ids.size());
  return out;
}

namespace {

struct PoseSystem {
  Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
  Vector6d g = Vector6d::Zero();
};

// Robust cost; +infinity if an active point falls behind the camera.
double robust_cost(const RigidTransform& pose, std::span<const Correspondence> corrs, const CameraModel& cam,
                   std::span<const std::uint8_t> active, double knee) {
  double cost = 0.0;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    if (!active.empty() && active[i] == 0) continue;
    cost += huber(reprojection_chi2(pose, corrs[i], cam), knee);
  }
  return cost;
}

PoseSystem build_system(const RigidTransform& pose, std::span<const Correspondence> corrs, const CameraModel& cam,
                        std::span<const std::uint8_t> active, double knee) {
  PoseSystem sys;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    if (!active.empty() && active[i] == 0) continue;
    const Eigen::Vector3d pc = pose * corrs[i].point;
    if (!(pc.z() > kMinDepth)) continue;
    const Eigen::Vector2d r = corrs[i].pixel - project(cam, pc);
    const Eigen::Matrix2d info = corrs[i].cov.inverse();
    const double w = huber_weight(r.dot(info * r), knee);
    const Matrix26d j = project_left_jacobian(cam, pc);
    sys.h.noalias() += w * j.transpose() * info * j;
    sys.g.noalias() += w * j.transpose() * info * r;
  }
  return sys;
}

}  // namespace

PoseRefineResult refine_pose(const RigidTransform& init, std::span<const Correspondence> corrs,
                             const CameraModel& cam, const LmOptions& opts, std::span<const std::uint8_t> active) {
  PoseRefineResult out;
  out.pose = init;
  double cost = robust_cost(init, corrs, cam, active, opts.huber_knee);
  out.initial_cost = cost;
  out.final_cost = cost;
  if (!std::isfinite(cost)) return out;
  if (cost == 0.0) {
    out.converged = true;
    return out;
  }

  double lambda = opts.initial_lambda;
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    out.iterations = iter + 1;
    const PoseSystem sys = build_system(out.pose, corrs, cam, active, opts.huber_knee);
    if (sys.h.diagonal().maxCoeff() <= 0.0) {
      out.converged = false;
      break;
    }
    Eigen::Matrix<double, 6, 6> damped = sys.h;
    damped.diagonal() += lambda * sys.h.diagonal();
    const Vector6d step = damped.ldlt().solve(sys.g);
    const RigidTransform candidate = exp_map(step) * out.pose;
    const double new_cost = robust_cost(candidate, corrs, cam, active, opts.huber_knee);
    const bool accept = std::isfinite(new_cost) && new_cost <= cost && step.allFinite();
    out.trace.push_back({iter, accept ? new_cost : cost, lambda, step.norm(), accept});
    if (accept) {
      const double decrease = cost - new_cost;
      out.pose = candidate;
      out.last_step_norm = step.norm();
      cost = new_cost;
      lambda *= 0.5;
      if (cost == 0.0 || decrease <= opts.rel_tol * (cost + decrease) || step.norm() < 1e-12) {
        out.converged = true;
        break;
      }
    } else {
      lambda *= 10.0;
      if (lambda > 1e12 || step.norm() < 1e-12) {
        out.converged = true;
        break;
      }
    }
  }
  out.final_cost = cost;
  return out;
}

PoseRefineResult refine_single_view(const RigidTransform& pose, std::span<const Correspondence> corrs,
                                    const CameraModel& cam, const LmOptions& opts,
                                    std::span<const std::uint8_t> active) {
  return refine_pose(pose, corrs, cam, opts, active);
}

}  // namespace objslam
