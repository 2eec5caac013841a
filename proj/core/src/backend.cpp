#include "objslam/backend.hpp"

#include <cmath>
#include <limits>
#include <map>

#include <Eigen/Cholesky>

#include "objslam/error.hpp"

namespace objslam {

void BackendConfig::validate() const {
  if (!(tau > 0.0) || !(huber_delta > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tau and huber_delta must be > 0");
  if (schedule_every < 1) throw Error(ErrorCode::kInvalidArgument, "schedule_every must be >= 1");
  if (max_iters < 0) throw Error(ErrorCode::kInvalidArgument, "max_iters must be >= 0");
}

double Residual::chi2() const {
  return valid ? mahalanobis_sq(value, cov) : std::numeric_limits<double>::infinity();
}

std::optional<Eigen::Vector3d> model_point(const ModelMap& models, const std::string& object, int keypoint) {
  auto it = models.find(object);
  if (it == models.end()) return std::nullopt;
  const int k = it->second.local_index(keypoint);
  if (k < 0) return std::nullopt;
  return it->second.keypoints[k];
}

Residual evaluate_residual(const Measurement& meas, const RigidTransform& cam_from_global,
                           const RigidTransform& global_from_obj, const Eigen::Vector3d& point, const CameraModel& cam) {
  Residual r;
  r.frame = meas.frame;
  r.object = meas.object;
  r.keypoint = meas.keypoint;
  r.cov = meas.cov;
  auto uv = try_project(cam, cam_from_global * (global_from_obj * point));
  if (!uv) return r;
  r.valid = true;
  r.inlier = meas.inlier;
  r.value = meas.coord - *uv;
  return r;
}

ProjectionJacobians projection_jacobians(const RigidTransform& cam_from_global, const RigidTransform& global_from_obj,
                                         const Eigen::Vector3d& point, const CameraModel& cam) {
  const Eigen::Vector3d pg = global_from_obj * point;
  const Eigen::Vector3d pc = cam_from_global * pg;
  return {project_left_jacobian(cam, pc),
          projection_jacobian(cam, pc) * cam_from_global.rotation * point_left_jacobian(pg)};
}

int classify_inliers(SceneState& scene, const ModelMap& models, const CameraModel& cam, const BackendConfig& cfg) {
  int count = 0;
  for (auto& m : scene.mutable_measurements()) {
    m.inlier = false;
    auto p = model_point(models, m.object, m.keypoint);
    if (!p || !scene.has_camera(m.frame) || !scene.has_object(m.object)) continue;
    const Residual r = evaluate_residual(m, scene.camera(m.frame), scene.object(m.object), *p, cam);
    m.inlier = r.valid && r.chi2() < cfg.tau;
    count += m.inlier ? 1 : 0;
  }
  return count;
}

double global_cost(const SceneState& scene, const ModelMap& models, const CameraModel& cam, const BackendConfig& cfg) {
  double cost = 0.0;
  for (const auto& m : scene.measurements()) {
    if (!m.inlier) continue;
    auto p = model_point(models, m.object, m.keypoint);
    if (!p || !scene.has_camera(m.frame) || !scene.has_object(m.object)) continue;
    const Residual r = evaluate_residual(m, scene.camera(m.frame), scene.object(m.object), *p, cam);
    if (r.valid) cost += huber(r.chi2(), cfg.huber_delta);
  }
  return cost;
}

namespace {

using Mat6 = Eigen::Matrix<double, 6, 6>;

struct Term {
  const Measurement* meas;
  Eigen::Vector3d point;
  Eigen::Matrix2d info;
  int cam;  // index into the variable cameras, -1 for the gauge
  int obj;
};

struct Problem {
  std::vector<int> cam_frames;        // variable cameras
  std::vector<std::string> obj_ids;   // variable objects
  std::vector<Term> terms;
};

struct Estimate {
  std::vector<RigidTransform> cams;  // aligned with cam_frames
  std::vector<RigidTransform> objs;
  RigidTransform gauge;
};

// Cost under the estimate; +infinity when an active point crosses behind the camera.
double cost_of(const Problem& pb, const Estimate& est, const CameraModel& cam, double delta) {
  double cost = 0.0;
  for (const Term& t : pb.terms) {
    const RigidTransform& tc = t.cam < 0 ? est.gauge : est.cams[t.cam];
    auto uv = try_project(cam, tc * (est.objs[t.obj] * t.point));
    if (!uv) return std::numeric_limits<double>::infinity();
    const Eigen::Vector2d r = t.meas->coord - *uv;
    cost += huber(r.dot(t.info * r), delta);
  }
  return cost;
}

struct Normal {
  std::vector<Mat6> hcc;
  std::vector<Vector6d> gc;
  std::vector<std::map<int, Mat6>> hco;  // per camera, keyed by object index
  Eigen::MatrixXd hoo;
  Eigen::VectorXd go;
};

Normal build_normal(const Problem& pb, const Estimate& est, const CameraModel& cam, double delta) {
  const int nc = static_cast<int>(pb.cam_frames.size());
  const int no = static_cast<int>(pb.obj_ids.size());
  Normal n;
  n.hcc.assign(nc, Mat6::Zero());
  n.gc.assign(nc, Vector6d::Zero());
  n.hco.resize(nc);
  n.hoo = Eigen::MatrixXd::Zero(6 * no, 6 * no);
  n.go = Eigen::VectorXd::Zero(6 * no);
  for (const Term& t : pb.terms) {
    const RigidTransform& tc = t.cam < 0 ? est.gauge : est.cams[t.cam];
    const Eigen::Vector3d pg = est.objs[t.obj] * t.point;
    const Eigen::Vector3d pc = tc * pg;
    if (!(pc.z() > kMinDepth)) continue;
    const Eigen::Vector2d r = t.meas->coord - project(cam, pc);
    const double w = huber_weight(r.dot(t.info * r), delta);
    const Eigen::Matrix2d wi = w * t.info;
    const auto [jc, jo] = projection_jacobians(tc, est.objs[t.obj], t.point, cam);

    const Eigen::Matrix<double, 6, 2> jo_t_wi = jo.transpose() * wi;
    n.hoo.block<6, 6>(6 * t.obj, 6 * t.obj).noalias() += jo_t_wi * jo;
    n.go.segment<6>(6 * t.obj).noalias() += jo_t_wi * r;
    if (t.cam >= 0) {
      const Eigen::Matrix<double, 6, 2> jc_t_wi = jc.transpose() * wi;
      n.hcc[t.cam].noalias() += jc_t_wi * jc;
      n.gc[t.cam].noalias() += jc_t_wi * r;
      auto [it, inserted] = n.hco[t.cam].try_emplace(t.obj, Mat6::Zero());
      it->second.noalias() += jc_t_wi * jo;
    }
  }
  return n;
}

// Solves the damped system; returns false if a block is not positive definite.
bool solve_step(const Normal& n, double lambda, std::vector<Vector6d>& dc, Eigen::VectorXd& dob) {
  const int nc = static_cast<int>(n.hcc.size());
  Eigen::MatrixXd s = n.hoo;
  s.diagonal() += lambda * n.hoo.diagonal();
  Eigen::VectorXd rhs = n.go;

  std::vector<Eigen::LDLT<Mat6>> inv(nc);
  for (int c = 0; c < nc; ++c) {
    Mat6 h = n.hcc[c];
    h.diagonal() += lambda * n.hcc[c].diagonal();
    inv[c].compute(h);
    if (inv[c].info() != Eigen::Success || !(inv[c].vectorD().minCoeff() > 0.0)) return false;
    // S -= Hoc Hcc^-1 Hco, rhs -= Hoc Hcc^-1 gc.
    const Vector6d hinv_g = inv[c].solve(n.gc[c]);
    for (const auto& [oa, hca] : n.hco[c]) {
      const Mat6 hinv_hca = inv[c].solve(hca);
      rhs.segment<6>(6 * oa).noalias() -= hca.transpose() * hinv_g;
      for (const auto& [ob, hcb] : n.hco[c]) {
        s.block<6, 6>(6 * ob, 6 * oa).noalias() -= hcb.transpose() * hinv_hca;
      }
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
  if (ldlt.info() != Eigen::Success || (s.rows() > 0 && !(ldlt.vectorD().minCoeff() > 0.0))) return false;
  dob = s.rows() > 0 ? Eigen::VectorXd(ldlt.solve(rhs)) : Eigen::VectorXd();
  dc.resize(nc);
  for (int c = 0; c < nc; ++c) {
    Vector6d g = n.gc[c];
    for (const auto& [o, hco] : n.hco[c]) g.noalias() -= hco * dob.segment<6>(6 * o);
    dc[c] = inv[c].solve(g);
  }
  return dob.allFinite();
}

}  // namespace

BackendResult optimize_global(SceneState& scene, const ModelMap& models, const CameraModel& cam,
                              const BackendConfig& cfg) {
  cfg.validate();
  BackendResult out;
  if (!scene.gauge_frame()) return out;
  const int gauge = *scene.gauge_frame();

  // Only parameters touched by an active residual are optimized.
  Problem pb;
  std::map<int, int> cam_index;
  std::map<std::string, int> obj_index;
  for (const auto& m : scene.measurements()) {
    if (!m.inlier || !scene.has_camera(m.frame) || !scene.has_object(m.object)) continue;
    auto p = model_point(models, m.object, m.keypoint);
    if (!p) continue;
    int ci = -1;
    if (m.frame != gauge) {
      auto [it, inserted] = cam_index.try_emplace(m.frame, static_cast<int>(pb.cam_frames.size()));
      if (inserted) pb.cam_frames.push_back(m.frame);
      ci = it->second;
    }
    auto [ot, oinserted] = obj_index.try_emplace(m.object, static_cast<int>(pb.obj_ids.size()));
    if (oinserted) pb.obj_ids.push_back(m.object);
    pb.terms.push_back({&m, *p, m.cov.inverse(), ci, ot->second});
  }
  out.active_residuals = static_cast<int>(pb.terms.size());

  Estimate est;
  est.gauge = scene.camera(gauge);
  for (int f : pb.cam_frames) est.cams.push_back(scene.camera(f));
  for (const auto& id : pb.obj_ids) est.objs.push_back(scene.object(id));

  double cost = cost_of(pb, est, cam, cfg.huber_delta);
  out.initial_cost = cost;
  out.final_cost = cost;
  if (pb.terms.empty() || cost == 0.0) {
    out.converged = true;
    return out;
  }
  if (!std::isfinite(cost)) return out;

  double lambda = cfg.initial_lambda;
  std::vector<Vector6d> dc;
  Eigen::VectorXd dob;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    out.iterations = iter + 1;
    const Normal n = build_normal(pb, est, cam, cfg.huber_delta);
    bool accept = false;
    double step_norm = 0.0;
    double new_cost = cost;
    Estimate cand;
    if (solve_step(n, lambda, dc, dob)) {
      double sq = dob.squaredNorm();
      for (const auto& d : dc) sq += d.squaredNorm();
      step_norm = std::sqrt(sq);
      cand.gauge = est.gauge;
      cand.cams.resize(est.cams.size());
      cand.objs.resize(est.objs.size());
      for (std::size_t c = 0; c < est.cams.size(); ++c) cand.cams[c] = exp_map(dc[c]) * est.cams[c];
      for (std::size_t o = 0; o < est.objs.size(); ++o) cand.objs[o] = exp_map(dob.segment<6>(6 * o)) * est.objs[o];
      new_cost = cost_of(pb, cand, cam, cfg.huber_delta);
      accept = std::isfinite(new_cost) && new_cost <= cost;
    }
    out.trace.push_back({iter, accept ? new_cost : cost, lambda, step_norm, accept});
    if (accept) {
      const double decrease = cost - new_cost;
      est = std::move(cand);
      cost = new_cost;
      lambda = std::max(lambda * 0.5, 1e-12);
      if (cost == 0.0 || decrease <= cfg.rel_tol * (cost + decrease) || step_norm < 1e-14) {
        out.converged = true;
        break;
      }
    } else {
      lambda *= 10.0;
      if (lambda > 1e12 || (step_norm > 0.0 && step_norm < 1e-14)) {
        out.converged = true;
        break;
      }
    }
  }

  for (std::size_t c = 0; c < pb.cam_frames.size(); ++c) {
    scene.mutable_camera(pb.cam_frames[c]) = RigidTransform(orthonormalize(est.cams[c].rotation), est.cams[c].translation);
  }
  for (std::size_t o = 0; o < pb.obj_ids.size(); ++o) {
    scene.mutable_object(pb.obj_ids[o]) = RigidTransform(orthonormalize(est.objs[o].rotation), est.objs[o].translation);
  }
  out.final_cost = global_cost(scene, models, cam, cfg);
  return out;
}

}  // namespace objslam
