#include "objslam/frontend.hpp"

#include <algorithm>
#include <cmath>

namespace objslam {

const ObjectObservation* FrameInput::find(const std::string& id) const {
  for (const auto& o : objects)
    if (o.object_id == id) return &o;
  return nullptr;
}

void FrontendConfig::validate() const {
  if (!(tau > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tau must be > 0");
  if (reinit_window < 1) throw Error(ErrorCode::kInvalidArgument, "reinit_window must be >= 1");
  if (min_hypothesis_inliers < 0 || min_hypothesis_fraction < 0.0 || min_hypothesis_fraction > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "bad hypothesis acceptance floor");
  }
}

std::string_view to_string(FrameStatus s) {
  switch (s) {
    case FrameStatus::kTracked: return "tracked";
    case FrameStatus::kExternalPose: return "external";
    case FrameStatus::kDropped: return "dropped";
  }
  return "?";
}

ObjectLog* FrameResult::log_for(const std::string& id) {
  for (auto& o : objects)
    if (o.object_id == id) return &o;
  objects.push_back({});
  objects.back().object_id = id;
  return &objects.back();
}

Frontend::Frontend(ModelMap models, CameraModel cam, FrontendConfig cfg)
    : models_(std::move(models)), cam_(cam), cfg_(cfg) {
  cfg_.validate();
  for (const auto& [id, m] : models_) m.validate();
}

std::vector<KeypointDetection> Frontend::usable(const std::string& object_id,
                                                const std::vector<KeypointDetection>& dets) const {
  std::vector<KeypointDetection> out;
  auto it = models_.find(object_id);
  if (it == models_.end()) return out;
  for (const auto& d : dets) {
    if (d.mask_score >= cfg_.mask_threshold && it->second.local_index(d.keypoint_id) >= 0) out.push_back(d);
  }
  return out;
}

bool Frontend::in_stream1(const std::string& object_id, const SceneState& scene) const {
  auto it = models_.find(object_id);
  return it != models_.end() && (!it->second.is_symmetric || !scene.has_object(object_id));
}

std::uint64_t Frontend::ransac_seed(int frame, const std::string& object_id) const {
  auto it = models_.find(object_id);
  const auto idx = static_cast<std::uint64_t>(std::distance(models_.begin(), it));
  Rng rng = make_rng(cfg_.seed, static_cast<std::uint64_t>(frame), idx, 7);
  return rng();
}

int Frontend::count_inliers(const std::string& object_id, const std::vector<KeypointDetection>& dets,
                            const RigidTransform& cam_from_obj) const {
  const ObjectModel& m = models_.at(object_id);
  int n = 0;
  for (const auto& d : dets) {
    const Correspondence c{m.keypoints[m.local_index(d.keypoint_id)], d.coord, d.cov};
    n += reprojection_chi2(cam_from_obj, c, cam_) < cfg_.tau;
  }
  return n;
}

PnPMap Frontend::first_pass(const FrameInput& frame, const SceneState& scene, FrameResult& log) const {
  PnPMap out;
  for (const auto& obs : frame.objects) {
    if (!in_stream1(obs.object_id, scene)) continue;
    ObjectLog* ol = log.log_for(obs.object_id);
    ol->stream1 = true;
    const ObjectModel& m = models_.at(obs.object_id);
    std::vector<Correspondence> corrs;
    for (const auto& d : usable(obs.object_id, obs.detections)) {
      corrs.push_back({m.keypoints[m.local_index(d.keypoint_id)], d.coord, d.cov});
    }
    RansacConfig rc = cfg_.ransac;
    rc.tau = cfg_.tau;
    rc.seed = ransac_seed(frame.frame_id, obs.object_id);
    try {
      PnPResult r = ransac_pnp(corrs, cam_, rc);
      ol->pnp_inliers = r.inlier_count;
      out.emplace(obs.object_id, std::move(r));
    } catch (const Error& e) {
      ol->error = e.code();
    }
  }
  return out;
}

std::optional<RigidTransform> Frontend::select_camera_pose(const PnPMap& pnp, const FrameInput& frame,
                                                           const SceneState& scene, FrameResult& log) const {
  if (!scene.gauge_frame()) {
    log.status = FrameStatus::kTracked;
    return RigidTransform::identity();
  }
  // Detections of initialized stream-1 objects are the votes.
  std::vector<std::pair<std::string, std::vector<KeypointDetection>>> votes;
  for (const auto& obs : frame.objects) {
    if (!scene.has_object(obs.object_id) || !in_stream1(obs.object_id, scene)) continue;
    auto dets = usable(obs.object_id, obs.detections);
    if (!dets.empty()) votes.emplace_back(obs.object_id, std::move(dets));
  }
  int testable = 0;
  for (const auto& [id, dets] : votes) testable += static_cast<int>(dets.size());
  log.testable = testable;

  std::optional<RigidTransform> best;
  int best_inliers = -1;
  for (const auto& [id, r] : pnp) {
    if (!scene.has_object(id)) continue;
    const RigidTransform hyp = r.pose * scene.object(id).inverse();
    int inl = 0;
    for (const auto& [vid, dets] : votes) inl += count_inliers(vid, dets, hyp * scene.object(vid));
    if (inl > best_inliers) {
      best_inliers = inl;
      best = hyp;
    }
  }
  const int floor = std::max(cfg_.min_hypothesis_inliers,
                             static_cast<int>(std::ceil(cfg_.min_hypothesis_fraction * testable)));
  if (best && best_inliers >= floor) {
    log.hypothesis_inliers = best_inliers;
    log.status = FrameStatus::kTracked;
    return best;
  }
  log.hypothesis_inliers = std::max(best_inliers, 0);
  if (frame.external_cam_pose) {
    log.status = FrameStatus::kExternalPose;
    return frame.external_cam_pose;
  }
  log.status = FrameStatus::kDropped;
  return std::nullopt;
}

std::set<std::string> Frontend::initialize_objects(const PnPMap& pnp, const RigidTransform& cam_from_global,
                                                   SceneState& scene) const {
  std::set<std::string> added;
  const RigidTransform global_from_cam = cam_from_global.inverse();
  for (const auto& [id, r] : pnp) {
    if (scene.has_object(id)) continue;
    scene.set_object(id, global_from_cam * r.pose);
    added.insert(id);
  }
  return added;
}

bool Frontend::maybe_reinitialize(const std::string& object_id, const PnPResult& pnp, const FrameInput& frame,
                                  const RigidTransform& cam_from_global, SceneState& scene,
                                  const std::vector<KeypointDetection>* detections) const {
  if (!scene.has_object(object_id)) return false;
  const ObjectModel& m = models_.at(object_id);
  const RigidTransform current = scene.object(object_id);
  const RigidTransform candidate = cam_from_global.inverse() * pnp.pose;

  // The W most recent earlier frames that have a camera pose.
  std::set<int> window;
  const auto& cams = scene.cameras();
  for (auto it = cams.lower_bound(frame.frame_id); it != cams.begin() && static_cast<int>(window.size()) < cfg_.reinit_window;) {
    --it;
    window.insert(it->first);
  }

  int n_cur = 0, n_cand = 0;
  for (const auto& meas : scene.measurements()) {
    if (meas.object != object_id || !window.count(meas.frame)) continue;
    const int k = m.local_index(meas.keypoint);
    if (k < 0) continue;
    const RigidTransform& tc = scene.camera(meas.frame);
    const Correspondence c{m.keypoints[k], meas.coord, meas.cov};
    n_cur += reprojection_chi2(tc * current, c, cam_) < cfg_.tau;
    n_cand += reprojection_chi2(tc * candidate, c, cam_) < cfg_.tau;
  }
  const ObjectObservation* obs = frame.find(object_id);
  if (detections || obs) {
    const auto dets = usable(object_id, detections ? *detections : obs->detections);
    n_cur += count_inliers(object_id, dets, cam_from_global * current);
    n_cand += count_inliers(object_id, dets, cam_from_global * candidate);
  }
  if (n_cand <= n_cur) return false;
  scene.mutable_object(object_id) = candidate;
  return true;
}

PoseRefineResult Frontend::refine_camera_local(const FrameInput& frame, const RigidTransform& cam_from_global,
                                               const SceneState& scene, const std::set<std::string>& exclude) const {
  std::vector<Correspondence> corrs;
  std::vector<std::uint8_t> active;
  for (const auto& obs : frame.objects) {
    if (!scene.has_object(obs.object_id) || exclude.count(obs.object_id) || !in_stream1(obs.object_id, scene)) continue;
    const ObjectModel& m = models_.at(obs.object_id);
    const RigidTransform& to = scene.object(obs.object_id);
    for (const auto& d : usable(obs.object_id, obs.detections)) {
      Correspondence c{to * m.keypoints[m.local_index(d.keypoint_id)], d.coord, d.cov};
      active.push_back(reprojection_chi2(cam_from_global, c, cam_) < cfg_.tau);
      corrs.push_back(c);
    }
  }
  if (std::find(active.begin(), active.end(), 1) == active.end()) {
    throw Error(ErrorCode::kNotConverged, "no gated measurements for local camera refinement");
  }
  LmOptions opts = cfg_.local_lm;
  opts.huber_knee = cfg_.tau;
  return refine_pose(cam_from_global, corrs, cam_, opts, active);
}

int Frontend::second_pass(const FrameInput& frame, SceneState& scene, const std::set<std::string>& stream1,
                          const PriorDetector& detector, FrameResult& log) const {
  int stored = 0;
  const RigidTransform& tc = scene.camera(frame.frame_id);
  for (const auto& obs : frame.objects) {
    auto mit = models_.find(obs.object_id);
    if (mit == models_.end() || !scene.has_object(obs.object_id)) continue;
    const ObjectModel& m = mit->second;
    std::vector<KeypointDetection> dets = obs.detections;
    if (m.is_symmetric && cfg_.use_prior && !stream1.count(obs.object_id)) {
      try {
        const PriorDetection prior = build_prior(m, tc, scene.object(obs.object_id), cam_);
        if (detector) {
          if (auto re = detector(obs.object_id, prior)) {
            dets = re->detections;
            // Prior-conditioned detections get the same re-initialization
            // check stream-1 objects get.
            if (frame.frame_id != *scene.gauge_frame()) {
              std::vector<Correspondence> corrs;
              for (const auto& d : usable(obs.object_id, dets))
                corrs.push_back({m.keypoints[m.local_index(d.keypoint_id)], d.coord, d.cov});
              RansacConfig rc = cfg_.ransac;
              rc.tau = cfg_.tau;
              rc.seed = ransac_seed(frame.frame_id, obs.object_id);
              try {
                const PnPResult r = ransac_pnp(corrs, cam_, rc);
                if (maybe_reinitialize(obs.object_id, r, frame, tc, scene, &dets))
                  log.log_for(obs.object_id)->reinitialized = true;
              } catch (const Error& e) {
                log.log_for(obs.object_id)->error = e.code();
              }
            }
          }
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kAllBehindCamera) throw;
        log.log_for(obs.object_id)->error = e.code();
        continue;
      }
    }
    int n = 0;
    for (const auto& d : usable(obs.object_id, dets)) {
      n += scene.add_measurement({frame.frame_id, obs.object_id, d.keypoint_id, d.coord, d.cov, true});
    }
    log.log_for(obs.object_id)->stored = n;
    stored += n;
  }
  return stored;
}

FrameResult Frontend::process(const FrameInput& frame, SceneState& scene, const PriorDetector& detector) const {
  FrameResult log;
  log.frame_id = frame.frame_id;
  if (scene.has_camera(frame.frame_id)) throw Error(ErrorCode::kInvalidArgument, "frame processed twice");

  // Routing is decided once, before any object gains a pose this frame.
  std::set<std::string> stream1;
  for (const auto& obs : frame.objects)
    if (in_stream1(obs.object_id, scene)) stream1.insert(obs.object_id);

  const PnPMap pnp = first_pass(frame, scene, log);
  const std::optional<RigidTransform> voted = select_camera_pose(pnp, frame, scene, log);
  if (!voted) return log;
  const bool is_gauge = !scene.gauge_frame();
  scene.set_camera(frame.frame_id, *voted);
  RigidTransform tc = scene.camera(frame.frame_id);

  const std::set<std::string> added = initialize_objects(pnp, tc, scene);
  for (const auto& id : added) log.log_for(id)->initialized = true;

  if (!is_gauge) {
    for (const auto& [id, r] : pnp) {
      if (added.count(id)) continue;
      if (maybe_reinitialize(id, r, frame, tc, scene)) log.log_for(id)->reinitialized = true;
    }
    try {
      const PoseRefineResult rr = refine_camera_local(frame, tc, scene, added);
      log.local_refine_converged = rr.converged;
      if (rr.final_cost <= rr.initial_cost) {
        tc = rr.pose;
        scene.mutable_camera(frame.frame_id) = tc;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotConverged) throw;
    }
  }
  second_pass(frame, scene, stream1, detector, log);
  return log;
}

SlamSystem::SlamSystem(ModelMap models, CameraModel cam, FrontendConfig fcfg, BackendConfig bcfg)
    : frontend_(std::move(models), cam, fcfg), bcfg_(bcfg) {
  bcfg_.validate();
}

FrameResult SlamSystem::process_frame(const FrameInput& frame, const PriorDetector& detector) {
  frames_.push_back(frontend_.process(frame, scene_, detector));
  if (++since_backend_ >= bcfg_.schedule_every) run_backend();
  return frames_.back();
}

void SlamSystem::finish() {
  if (since_backend_ > 0) run_backend();
}

BackendResult SlamSystem::run_backend() {
  since_backend_ = 0;
  classify_inliers(scene_, frontend_.models(), frontend_.camera(), bcfg_);
  runs_.push_back(optimize_global(scene_, frontend_.models(), frontend_.camera(), bcfg_));
  return runs_.back();
}

}  // namespace objslam
