#include "objslam/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

#include "objslam/error.hpp"
#include "objslam/io.hpp"

namespace objslam {

std::string_view to_string(TrajectoryType t) {
  switch (t) {
    case TrajectoryType::kOrbit: return "orbit";
    case TrajectoryType::kArc: return "arc";
    case TrajectoryType::kRandomWalk: return "random-walk";
  }
  return "?";
}

TrajectoryType trajectory_from_string(std::string_view s) {
  if (s == "orbit") return TrajectoryType::kOrbit;
  if (s == "arc") return TrajectoryType::kArc;
  if (s == "random-walk") return TrajectoryType::kRandomWalk;
  throw Error(ErrorCode::kParseError, "unknown trajectory '" + std::string(s) + "'");
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  noise.seed = s;
  frontend.seed = s;
}

void RunConfig::validate() const {
  if (scene.frames < 1) throw Error(ErrorCode::kInvalidArgument, "frame count must be >= 1");
  if (scene.num_objects < 1 || scene.num_symmetric < 0 || scene.num_symmetric > scene.num_objects) {
    throw Error(ErrorCode::kInvalidArgument, "bad object counts");
  }
  if (!(scene.orbit_radius > scene.table_radius) || !(scene.table_radius > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "orbit must enclose the table");
  }
  if (noise.cov_mode == CovarianceMode::kManual && !(noise.manual_cov > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "manual covariance must be > 0");
  }
  if (!camera.is_valid()) throw Error(ErrorCode::kInvalidArgument, "invalid camera");
  noise.validate();
  backend.validate();
  frontend.validate();
}

// ---------------------------------------------------------------------------
// Config text

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw Error(ErrorCode::kParseError, key + ": bad number '" + v + "'");
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw Error(ErrorCode::kParseError, key + ": bad integer '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorCode::kParseError, key + ": bad boolean '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

// One entry per config key: how to read it and how to print it.
struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define OBJSLAM_DOUBLE(expr) \
  Field { [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = parse_double(k, v); }, \
          [](const RunConfig& c) { return fmt(c.expr); } }
#define OBJSLAM_INT(expr) \
  Field { [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = static_cast<int>(parse_int(k, v)); }, \
          [](const RunConfig& c) { return std::to_string(c.expr); } }
#define OBJSLAM_BOOL(expr) \
  Field { [](RunConfig& c, const std::string& k, const std::string& v) { c.expr = parse_bool(k, v); }, \
          [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); } }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"seed", Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                       c.set_seed(static_cast<std::uint64_t>(parse_int(k, v)));
                     },
                     [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"out", Field{[](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; },
                    [](const RunConfig& c) { return c.out_dir; }}},
      {"single_view", OBJSLAM_BOOL(single_view_only)},
      {"external_poses", OBJSLAM_BOOL(external_poses)},
      {"scene.objects", OBJSLAM_INT(scene.num_objects)},
      {"scene.symmetric", OBJSLAM_INT(scene.num_symmetric)},
      {"scene.frames", OBJSLAM_INT(scene.frames)},
      {"scene.trajectory", Field{[](RunConfig& c, const std::string&, const std::string& v) {
                                   c.scene.trajectory = trajectory_from_string(v);
                                 },
                                 [](const RunConfig& c) { return std::string(to_string(c.scene.trajectory)); }}},
      {"scene.turns", OBJSLAM_DOUBLE(scene.turns)},
      {"scene.orbit_radius", OBJSLAM_DOUBLE(scene.orbit_radius)},
      {"scene.camera_height", OBJSLAM_DOUBLE(scene.camera_height)},
      {"scene.table_radius", OBJSLAM_DOUBLE(scene.table_radius)},
      {"scene.bbox_jitter", OBJSLAM_DOUBLE(scene.bbox_jitter)},
      {"noise.sigma_min", OBJSLAM_DOUBLE(noise.sigma_min)},
      {"noise.sigma_max", OBJSLAM_DOUBLE(noise.sigma_max)},
      {"noise.aniso_ratio_max", OBJSLAM_DOUBLE(noise.aniso_ratio_max)},
      {"noise.outlier_rate", OBJSLAM_DOUBLE(noise.outlier_rate)},
      {"noise.outlier_spread", OBJSLAM_DOUBLE(noise.outlier_spread)},
      {"noise.mask_flip_rate", OBJSLAM_DOUBLE(noise.mask_flip_rate)},
      {"noise.cov_mode", Field{[](RunConfig& c, const std::string&, const std::string& v) {
                                 c.noise.cov_mode = covariance_mode_from_string(v);
                               },
                               [](const RunConfig& c) { return std::string(to_string(c.noise.cov_mode)); }}},
      {"noise.manual_cov", OBJSLAM_DOUBLE(noise.manual_cov)},
      {"frontend.prior", OBJSLAM_BOOL(frontend.use_prior)},
      {"frontend.tau", OBJSLAM_DOUBLE(frontend.tau)},
      {"frontend.mask_threshold", OBJSLAM_DOUBLE(frontend.mask_threshold)},
      {"frontend.reinit_window", OBJSLAM_INT(frontend.reinit_window)},
      {"frontend.min_inliers", OBJSLAM_INT(frontend.min_hypothesis_inliers)},
      {"frontend.min_fraction", OBJSLAM_DOUBLE(frontend.min_hypothesis_fraction)},
      {"frontend.ransac_iterations", OBJSLAM_INT(frontend.ransac.max_iterations)},
      {"backend.tau", OBJSLAM_DOUBLE(backend.tau)},
      {"backend.huber_delta", OBJSLAM_DOUBLE(backend.huber_delta)},
      {"backend.max_iters", OBJSLAM_INT(backend.max_iters)},
      {"backend.rel_tol", OBJSLAM_DOUBLE(backend.rel_tol)},
      {"backend.initial_lambda", OBJSLAM_DOUBLE(backend.initial_lambda)},
      {"backend.schedule_every", OBJSLAM_INT(backend.schedule_every)},
      {"camera.fx", OBJSLAM_DOUBLE(camera.fx)},
      {"camera.fy", OBJSLAM_DOUBLE(camera.fy)},
      {"camera.cx", OBJSLAM_DOUBLE(camera.cx)},
      {"camera.cy", OBJSLAM_DOUBLE(camera.cy)},
      {"camera.width", OBJSLAM_INT(camera.width)},
      {"camera.height", OBJSLAM_INT(camera.height)},
  };
  return table;
}

#undef OBJSLAM_DOUBLE
#undef OBJSLAM_INT
#undef OBJSLAM_BOOL

}  // namespace

void apply_config_value(const std::string& key, const std::string& value, RunConfig& cfg) {
  for (const auto& [k, f] : fields()) {
    if (k == key) {
      f.set(cfg, key, value);
      return;
    }
  }
  throw Error(ErrorCode::kParseError, "unknown config key '" + key + "'");
}

void apply_config_text(const std::string& text, RunConfig& cfg) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kParseError, "line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    try {
      apply_config_value(key, value, cfg);
    } catch (const Error& e) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(n) + ": " + e.what());
    }
  }
}

std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, f] : fields()) j[k] = f.get(cfg);
  return j;
}

// ---------------------------------------------------------------------------
// Models and scenes

Eigen::Matrix3d default_canonical_rotation() {
  // Front (+x) faces the camera, up (+z) points to the top of the image.
  Eigen::Matrix3d r;
  r << 0, 1, 0,
       0, 0, -1,
       -1, 0, 0;
  return r;
}

namespace {

ObjectModel asymmetric_model(int index, int first_id) {
  Rng rng = make_rng(0x6d6f64656cULL, static_cast<std::uint64_t>(index));
  std::uniform_real_distribution<double> j(-0.012, 0.012);
  std::uniform_real_distribution<double> size(0.03, 0.06);
  const double a = size(rng), b = size(rng), h = 0.04 + size(rng);
  ObjectModel m;
  for (int k = 0; k < 8; ++k) {
    const double sx = (k & 1) ? a : -a;
    const double sy = (k & 2) ? b : -b;
    const double z = (k & 4) ? h : 0.0;
    // Shear the top face so no rotation maps the box onto itself.
    const double shear = (k & 4) ? 0.3 * a : 0.0;
    m.keypoints.emplace_back(sx + shear + j(rng), sy + j(rng), z + 0.5 * j(rng) + 0.01);
    m.valid_indices.push_back(first_id + k);
  }
  return m;
}

ObjectModel clamp_model(int first_id) {
  ObjectModel m;
  m.keypoints = {{0.05, 0.02, 0.01}, {-0.05, -0.02, 0.01}, {0.04, -0.03, 0.04}, {-0.04, 0.03, 0.04},
                 {0.015, 0.06, 0.02}, {-0.015, -0.06, 0.02}, {0.02, 0.01, 0.07}, {-0.02, -0.01, 0.07}};
  m.symmetries = discretize_axis_symmetry(Eigen::Vector3d::UnitZ(), 2);
  for (int k = 0; k < 8; ++k) m.valid_indices.push_back(first_id + k);
  return m;
}

ObjectModel cross_model(int first_id) {
  ObjectModel m;
  for (int k = 0; k < 4; ++k) {
    const double a = std::numbers::pi / 2 * k;
    m.keypoints.emplace_back(0.065 * std::cos(a), 0.065 * std::sin(a), 0.01);
    m.keypoints.emplace_back(0.03 * std::cos(a + 0.5), 0.03 * std::sin(a + 0.5), 0.06);
  }
  m.symmetries = discretize_axis_symmetry(Eigen::Vector3d::UnitZ(), 4);
  for (int k = 0; k < 8; ++k) m.valid_indices.push_back(first_id + k);
  return m;
}

ObjectModel bowl_model(int first_id) {
  ObjectModel m;
  for (int k = 0; k < 8; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 8.0 + 0.1 * k;
    const double r = (k % 2) ? 0.07 : 0.045;
    m.keypoints.emplace_back(r * std::cos(a), r * std::sin(a), (k % 2) ? 0.06 : 0.015);
  }
  m.symmetries = discretize_axis_symmetry(Eigen::Vector3d::UnitZ(), 64);
  for (int k = 0; k < 8; ++k) m.valid_indices.push_back(first_id + k);
  // The keypoints sample a surface of revolution; score against the full rings.
  for (int k = 0; k < 128; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 128.0;
    m.metric_points.emplace_back(0.045 * std::cos(a), 0.045 * std::sin(a), 0.015);
    m.metric_points.emplace_back(0.07 * std::cos(a), 0.07 * std::sin(a), 0.06);
  }
  return m;
}

ObjectModel block_model(int first_id) {
  ObjectModel m;
  for (int k = 0; k < 8; ++k) {
    m.keypoints.emplace_back((k & 1) ? 0.06 : -0.06, (k & 2) ? 0.025 : -0.025, (k & 4) ? 0.045 : 0.01);
  }
  m.symmetries = discretize_axis_symmetry(Eigen::Vector3d::UnitZ(), 2);
  for (int k = 0; k < 8; ++k) m.valid_indices.push_back(first_id + k);
  return m;
}

RigidTransform look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  const Eigen::Vector3d z = (target - eye).normalized();
  const Eigen::Vector3d x = z.cross(Eigen::Vector3d::UnitZ()).normalized();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return RigidTransform(r, eye).inverse();
}

std::vector<RigidTransform> make_trajectory(const RunConfig& cfg) {
  const SceneSpec& s = cfg.scene;
  const Eigen::Vector3d target(0, 0, 0.03);
  std::vector<RigidTransform> cams;
  Rng rng = make_rng(cfg.seed, 0, 0, 11);
  std::normal_distribution<double> n01;
  const double denom = s.frames > 1 ? static_cast<double>(s.frames - 1) : 1.0;
  double yaw = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  double radius = s.orbit_radius, height = s.camera_height;
  for (int j = 0; j < s.frames; ++j) {
    double a = yaw, r = s.orbit_radius, h = s.camera_height;
    switch (s.trajectory) {
      case TrajectoryType::kOrbit:
        a = yaw + s.turns * 2.0 * std::numbers::pi * j / denom;
        break;
      case TrajectoryType::kArc:
        a = yaw + (2.0 * std::numbers::pi / 3.0) * j / denom;
        break;
      case TrajectoryType::kRandomWalk:
        if (j > 0) {
          yaw += 0.08 + 0.05 * n01(rng);
          radius = std::clamp(radius + 0.02 * n01(rng), s.table_radius + 0.4, s.orbit_radius + 0.2);
          height = std::clamp(height + 0.02 * n01(rng), 0.3, 0.8);
        }
        a = yaw;
        r = radius;
        h = height;
        break;
    }
    cams.push_back(look_at({r * std::cos(a), r * std::sin(a), h}, target));
  }
  return cams;
}

bool fully_visible(const ObjectModel& m, const RigidTransform& cam_from_obj, const CameraModel& cam) {
  for (const auto& p : m.keypoints) {
    auto uv = try_project(cam, cam_from_obj * p);
    if (!uv || !cam.in_image(*uv)) return false;
  }
  return true;
}

}  // namespace

ModelMap builtin_models(int num_objects, int num_symmetric) {
  ModelMap out;
  const int n_asym = num_objects - num_symmetric;
  for (int i = 0; i < num_objects; ++i) {
    ObjectModel m;
    const int first_id = 100 * i;
    if (i < n_asym) {
      m = asymmetric_model(i, first_id);
      m.object_id = "asym" + std::to_string(i);
    } else {
      const int s = i - n_asym;
      switch (s % 4) {
        case 0: m = clamp_model(first_id); m.object_id = "clamp"; break;
        case 1: m = cross_model(first_id); m.object_id = "cross"; break;
        case 2: m = bowl_model(first_id); m.object_id = "bowl"; break;
        default: m = block_model(first_id); m.object_id = "block"; break;
      }
      m.object_id += std::to_string(i);
      m.is_symmetric = true;
    }
    m.canonical_rotation = default_canonical_rotation();
    m.validate();
    out[m.object_id] = m;
  }
  return out;
}

double visibility_fraction(const GroundTruth& gt, const std::string& object_id) {
  const ObjectModel& m = gt.models.at(object_id);
  const RigidTransform& to = gt.objects.at(object_id);
  int n = 0;
  for (const auto& tc : gt.cameras) n += fully_visible(m, tc * to, gt.camera);
  return gt.cameras.empty() ? 0.0 : static_cast<double>(n) / gt.cameras.size();
}

GroundTruth generate_scene(const RunConfig& cfg) {
  cfg.validate();
  GroundTruth gt;
  gt.camera = cfg.camera;
  gt.models = builtin_models(cfg.scene.num_objects, cfg.scene.num_symmetric);
  gt.cameras = make_trajectory(cfg);
  const double margin = 0.07;
  const double place_radius = std::max(cfg.scene.table_radius - margin, 0.0);
  for (int attempt = 1; attempt <= 100; ++attempt) {
    Rng rng = make_rng(cfg.seed, static_cast<std::uint64_t>(attempt), 0, 12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    gt.objects.clear();
    std::vector<Eigen::Vector2d> placed;
    bool ok = true;
    for (const auto& [id, m] : gt.models) {
      bool found = false;
      for (int tries = 0; tries < 2000 && !found; ++tries) {
        const double r = place_radius * std::sqrt(u(rng));
        const double a = 2.0 * std::numbers::pi * u(rng);
        const Eigen::Vector2d xy(r * std::cos(a), r * std::sin(a));
        // Keep a shrinking gap between footprints.
        const double gap = tries < 1000 ? 0.13 : 0.10;
        found = std::all_of(placed.begin(), placed.end(), [&](const auto& q) { return (q - xy).norm() >= gap; });
        if (found) {
          placed.push_back(xy);
          const double yaw = 2.0 * std::numbers::pi * u(rng);
          gt.objects[id] = RigidTransform(axis_angle(Eigen::Vector3d::UnitZ(), yaw), {xy.x(), xy.y(), 0.0});
        }
      }
      if (!found) {
        ok = false;
        break;
      }
    }
    if (ok) {
      for (const auto& [id, m] : gt.models) ok = ok && visibility_fraction(gt, id) >= 0.5;
    }
    if (ok) {
      gt.attempts = attempt;
      return gt;
    }
  }
  throw Error(ErrorCode::kInfeasibleScene, "no placement keeps every object visible in half the frames");
}

nlohmann::json scene_to_json(const GroundTruth& gt) {
  nlohmann::json j;
  j["camera"] = gt.camera;
  j["models"] = nlohmann::json::array();
  for (const auto& [id, m] : gt.models) j["models"].push_back(m);
  j["objects"] = nlohmann::json::object();
  for (const auto& [id, t] : gt.objects) j["objects"][id] = t;
  j["cameras"] = gt.cameras;
  j["attempts"] = gt.attempts;
  return j;
}

GroundTruth scene_from_json(const nlohmann::json& j) {
  try {
    GroundTruth gt;
    gt.camera = j.at("camera").get<CameraModel>();
    for (const auto& m : j.at("models")) {
      ObjectModel model = m.get<ObjectModel>();
      model.validate();
      gt.models[model.object_id] = model;
    }
    for (const auto& [id, t] : j.at("objects").items()) gt.objects[id] = t.get<RigidTransform>();
    gt.cameras = j.at("cameras").get<std::vector<RigidTransform>>();
    gt.attempts = j.value("attempts", 0);
    for (const auto& [id, m] : gt.models)
      if (!gt.objects.count(id)) throw Error(ErrorCode::kParseError, "object " + id + " has no pose");
    return gt;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("scene: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Simulation

SceneSimulator::SceneSimulator(const GroundTruth& gt, const RunConfig& cfg) : gt_(gt), cfg_(cfg) {}

std::uint64_t SceneSimulator::object_index(const std::string& id) const {
  return static_cast<std::uint64_t>(std::distance(gt_.models.begin(), gt_.models.find(id)));
}

void SceneSimulator::record(int j, const std::string& id, const SimulatedDetections& sim) {
  for (std::size_t k = 0; k < sim.detections.size(); ++k) {
    const KeypointDetection& d = sim.detections[k];
    residuals_.push_back(d.coord - sim.exact[k]);
    covs_.push_back(d.cov);
    if (sim.outlier[k]) outliers_.emplace(j, id, d.keypoint_id, d.coord.x(), d.coord.y());
  }
}

bool SceneSimulator::is_injected_outlier(const Measurement& m) const {
  return outliers_.count({m.frame, m.object, m.keypoint, m.coord.x(), m.coord.y()}) != 0;
}

FrameInput SceneSimulator::frame(int j) {
  FrameInput f;
  f.frame_id = j;
  const RigidTransform& tc = gt_.cameras.at(j);
  for (const auto& [id, m] : gt_.models) {
    const std::uint64_t idx = object_index(id);
    const RigidTransform& to = gt_.objects.at(id);
    try {
      Rng box_rng = make_rng(cfg_.seed, static_cast<std::uint64_t>(j), idx, 1);
      const BoundingBox box = simulate_bbox(m, tc, to, gt_.camera, cfg_.scene.bbox_jitter, box_rng);
      Rng rng = make_rng(cfg_.seed, static_cast<std::uint64_t>(j), idx, 2);
      const SimulatedDetections sim = simulate_detection(m, tc, to, gt_.camera, std::nullopt, cfg_.noise, rng, box);
      record(j, id, sim);
      boxes_[{j, id}] = box;
      f.objects.push_back({id, box, sim.detections});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotVisible) throw;
    }
  }
  if (cfg_.external_poses) f.external_cam_pose = tc * gt_.cameras.front().inverse();
  return f;
}

std::optional<ObjectObservation> SceneSimulator::detect_with_prior(int j, const std::string& object_id,
                                                                   const PriorDetection& prior) {
  auto box = boxes_.find({j, object_id});
  if (box == boxes_.end()) return std::nullopt;
  Rng rng = make_rng(cfg_.seed, static_cast<std::uint64_t>(j), object_index(object_id), 3);
  try {
    const SimulatedDetections sim = simulate_detection(gt_.models.at(object_id), gt_.cameras.at(j),
                                                       gt_.objects.at(object_id), gt_.camera, prior, cfg_.noise, rng,
                                                       box->second);
    record(j, object_id, sim);
    return ObjectObservation{object_id, box->second, sim.detections};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNotVisible) throw;
    return std::nullopt;
  }
}

std::string DetectionDump::to_jsonl() const {
  std::string out;
  for (const auto& f : frames) {
    nlohmann::json j = f;
    nlohmann::json priors = nlohmann::json::array();
    for (auto it = prior_detections.lower_bound({f.frame_id, ""}); it != prior_detections.end() && it->first.first == f.frame_id; ++it) {
      priors.push_back(it->second);
    }
    j["prior_detections"] = priors;
    out += j.dump() + "\n";
  }
  return out;
}

DetectionDump DetectionDump::from_jsonl(const std::string& text) {
  DetectionDump d;
  try {
    for (const auto& j : parse_jsonl(text)) {
      FrameInput f = j.get<FrameInput>();
      if (j.contains("prior_detections")) {
        for (const auto& p : j["prior_detections"]) {
          ObjectObservation o = p.get<ObjectObservation>();
          d.prior_detections[{f.frame_id, o.object_id}] = o;
        }
      }
      d.frames.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("detection dump: ") + e.what());
  }
  return d;
}

// ---------------------------------------------------------------------------
// Scoring

std::vector<PoseErrorSample> score_scene(const SceneState& scene, const GroundTruth& gt, const VisibilitySet& visible) {
  std::vector<PoseErrorSample> out;
  for (const auto& [j, id] : visible) {
    const ObjectModel& m = gt.models.at(id);
    const RigidTransform truth = gt.cameras.at(j) * gt.objects.at(id);
    if (scene.has_camera(j) && scene.has_object(id)) {
      const RigidTransform est = scene.camera(j) * scene.object(id);
      out.push_back(pose_errors(m, &est, truth));
    } else {
      out.push_back(pose_errors(m, nullptr, truth));
    }
  }
  return out;
}

SceneState oracle_scene(const SceneState& tracked, const GroundTruth& gt, const RunConfig& cfg) {
  SceneState s = tracked;
  if (!s.gauge_frame()) return s;
  const RigidTransform& g = gt.cameras.at(*s.gauge_frame());
  const RigidTransform g_inv = g.inverse();
  for (const auto& [f, t] : tracked.cameras())
    if (f != *s.gauge_frame()) s.mutable_camera(f) = gt.cameras.at(f) * g_inv;
  // Symmetric objects start at the equivalent ground-truth pose nearest the
  // tracked one, since their stored labels follow the tracker's branch.
  for (const auto& [id, t] : tracked.objects()) {
    const ObjectModel& m = gt.models.at(id);
    RigidTransform best = g * gt.objects.at(id);
    double best_angle = rotation_angle_between(best.rotation, t.rotation);
    for (const auto& sym : m.symmetries) {
      const RigidTransform cand = g * gt.objects.at(id) * sym;
      const double a = rotation_angle_between(cand.rotation, t.rotation);
      if (a < best_angle) {
        best = cand;
        best_angle = a;
      }
    }
    s.mutable_object(id) = best;
  }
  classify_inliers(s, gt.models, gt.camera, cfg.backend);
  optimize_global(s, gt.models, gt.camera, cfg.backend);
  return s;
}

std::vector<SpreadStat> measurement_spread(const SceneState& scene, const ModelMap& models, const CameraModel& cam,
                                           const std::function<bool(const Measurement&)>& select) {
  std::map<std::string, std::map<int, std::vector<Eigen::Vector3d>>> pts;
  for (const auto& meas : scene.measurements()) {
    if (!select(meas) || !scene.has_camera(meas.frame) || !scene.has_object(meas.object)) continue;
    auto mit = models.find(meas.object);
    if (mit == models.end() || !mit->second.is_symmetric) continue;
    auto p = model_point(models, meas.object, meas.keypoint);
    if (!p) continue;
    const RigidTransform& tc = scene.camera(meas.frame);
    const double z = (tc * (scene.object(meas.object) * *p)).z();
    if (!(z > kMinDepth)) continue;
    const Eigen::Vector3d ray((meas.coord.x() - cam.cx) / cam.fx, (meas.coord.y() - cam.cy) / cam.fy, 1.0);
    pts[meas.object][meas.keypoint].push_back(tc.inverse() * (z * ray));
  }
  std::vector<SpreadStat> out;
  for (const auto& [id, per_kp] : pts) {
    SpreadStat s;
    s.object_id = id;
    s.diameter = models.at(id).diameter();
    double sum = 0.0;
    for (const auto& [kp, v] : per_kp) {
      double worst = 0.0;
      for (std::size_t a = 0; a < v.size(); ++a)
        for (std::size_t b = a + 1; b < v.size(); ++b) worst = std::max(worst, (v[a] - v[b]).norm());
      sum += worst;
      s.max_spread = std::max(s.max_spread, worst);
      ++s.keypoints;
    }
    s.mean_spread = s.keypoints ? sum / s.keypoints : 0.0;
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

nlohmann::json RunReport::to_json(bool include_timing) const {
  nlohmann::json j;
  j["config"] = config_to_json(config);
  j["metrics"] = objslam::to_json(table);
  j["symmetric_metrics"] = objslam::to_json(symmetric_table);
  j["calibration"] = objslam::to_json(calibration);
  j["frames"] = {{"tracked", frames_tracked}, {"external", frames_external}, {"dropped", frames_dropped}};
  j["measurements"] = {{"stored", measurements}, {"inliers", inliers}};
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : backend_runs) {
    runs.push_back({{"iterations", r.iterations}, {"initial_cost", r.initial_cost}, {"final_cost", r.final_cost},
                    {"converged", r.converged}, {"active_residuals", r.active_residuals}});
  }
  j["backend"] = runs;
  auto spread_json = [](const std::vector<SpreadStat>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& s : v) {
      a.push_back({{"object", s.object_id}, {"mean_spread", s.mean_spread}, {"max_spread", s.max_spread},
                   {"diameter", s.diameter}, {"keypoints", s.keypoints}});
    }
    return a;
  };
  j["symmetric_spread"] = {{"inliers", spread_json(spread)}, {"labels", spread_json(label_spread)}};
  if (include_timing) j["timing"] = {{"seconds", seconds}};
  return j;
}

std::string RunReport::trace_csv() const {
  std::ostringstream os;
  os << "run,iteration,cost,lambda,step_norm,accepted\n";
  for (std::size_t r = 0; r < backend_runs.size(); ++r) {
    for (const auto& it : backend_runs[r].trace) {
      os << r << ',' << it.iteration << ',' << fmt(it.cost) << ',' << fmt(it.lambda) << ',' << fmt(it.step_norm) << ','
         << (it.accepted ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

namespace {

using FrameSource = std::function<FrameInput(int)>;
using PriorSource = std::function<std::optional<ObjectObservation>(int, const std::string&, const PriorDetection&)>;
using OutlierOracle = std::function<bool(const Measurement&)>;

// Single-view baseline: PnP plus refinement per frame and object.
std::optional<RigidTransform> single_view_estimate(const ObjectModel& m, const ObjectObservation& obs,
                                                   const RunConfig& cfg, const CameraModel& cam, int frame,
                                                   std::uint64_t idx) {
  std::vector<Correspondence> corrs;
  for (const auto& d : obs.detections) {
    const int k = m.local_index(d.keypoint_id);
    if (k >= 0 && d.mask_score >= cfg.frontend.mask_threshold) corrs.push_back({m.keypoints[k], d.coord, d.cov});
  }
  RansacConfig rc = cfg.frontend.ransac;
  rc.tau = cfg.frontend.tau;
  Rng seed_rng = make_rng(cfg.seed, static_cast<std::uint64_t>(frame), idx, 7);
  rc.seed = seed_rng();
  try {
    const PnPResult r = ransac_pnp(corrs, cam, rc);
    std::vector<std::uint8_t> active(corrs.size(), 0);
    for (int i : r.inlier_ids) active[i] = 1;
    LmOptions opts = cfg.frontend.local_lm;
    opts.huber_knee = cfg.frontend.tau;
    return refine_single_view(r.pose, corrs, cam, opts, active).pose;
  } catch (const Error&) {
    return std::nullopt;
  }
}

PipelineOutput run_with(const RunConfig& cfg, const GroundTruth& gt, const FrameSource& frames,
                        const PriorSource& priors, const OutlierOracle& injected) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  PipelineOutput out;
  RunReport& rep = out.report;
  rep.config = cfg;
  const int n_frames = static_cast<int>(gt.cameras.size());

  if (cfg.single_view_only) {
    for (int j = 0; j < n_frames; ++j) {
      const FrameInput f = frames(j);
      out.dump.frames.push_back(f);
      for (const auto& obs : f.objects) {
        out.visible.emplace_back(j, obs.object_id);
        const ObjectModel& m = gt.models.at(obs.object_id);
        const auto idx = static_cast<std::uint64_t>(std::distance(gt.models.begin(), gt.models.find(obs.object_id)));
        const auto est = single_view_estimate(m, obs, cfg, gt.camera, j, idx);
        const RigidTransform truth = gt.cameras.at(j) * gt.objects.at(obs.object_id);
        rep.samples.push_back(pose_errors(m, est ? &*est : nullptr, truth));
      }
      ++rep.frames_tracked;
    }
  } else {
    FrontendConfig fcfg = cfg.frontend;
    SlamSystem sys(gt.models, gt.camera, fcfg, cfg.backend);
    for (int j = 0; j < n_frames; ++j) {
      const FrameInput f = frames(j);
      out.dump.frames.push_back(f);
      for (const auto& obs : f.objects) out.visible.emplace_back(j, obs.object_id);
      PriorDetector det = [&](const std::string& id, const PriorDetection& prior) {
        auto o = priors(j, id, prior);
        if (o) out.dump.prior_detections[{j, id}] = *o;
        return o;
      };
      const FrameResult fr = sys.process_frame(f, det);
      switch (fr.status) {
        case FrameStatus::kTracked: ++rep.frames_tracked; break;
        case FrameStatus::kExternalPose: ++rep.frames_external; break;
        case FrameStatus::kDropped: ++rep.frames_dropped; break;
      }
    }
    sys.finish();
    out.scene = sys.scene();
    rep.backend_runs = sys.backend_runs();
    rep.samples = score_scene(out.scene, gt, out.visible);
    rep.measurements = static_cast<int>(out.scene.measurements().size());
    for (const auto& m : out.scene.measurements()) rep.inliers += m.inlier;
    rep.spread = measurement_spread(out.scene, gt.models, gt.camera, [](const Measurement& m) { return m.inlier; });
    rep.label_spread =
        measurement_spread(out.scene, gt.models, gt.camera, [&](const Measurement& m) { return !injected(m); });
  }

  rep.table = score_table(rep.samples);
  std::vector<PoseErrorSample> sym;
  for (const auto& s : rep.samples)
    if (gt.models.at(s.object_id).is_symmetric) sym.push_back(s);
  rep.symmetric_table = score_table(sym);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace

PipelineOutput run_pipeline(const RunConfig& cfg, const GroundTruth& gt) {
  SceneSimulator sim(gt, cfg);
  PipelineOutput out = run_with(
      cfg, gt, [&](int j) { return sim.frame(j); },
      [&](int j, const std::string& id, const PriorDetection& p) { return sim.detect_with_prior(j, id, p); },
      [&](const Measurement& m) { return sim.is_injected_outlier(m); });
  out.report.calibration = calibration_report(sim.residuals(), sim.reported_covs());
  return out;
}

PipelineOutput replay_pipeline(const RunConfig& cfg, const GroundTruth& gt, const DetectionDump& dump) {
  std::map<int, const FrameInput*> by_frame;
  for (const auto& f : dump.frames) by_frame[f.frame_id] = &f;
  return run_with(
      cfg, gt,
      [&](int j) {
        auto it = by_frame.find(j);
        if (it == by_frame.end()) {
          FrameInput empty;
          empty.frame_id = j;
          return empty;
        }
        return *it->second;
      },
      [&](int j, const std::string& id, const PriorDetection&) -> std::optional<ObjectObservation> {
        auto it = dump.prior_detections.find({j, id});
        if (it == dump.prior_detections.end()) return std::nullopt;
        return it->second;
      },
      // A dump does not say which pixels were corrupted.
      [](const Measurement&) { return false; });
}

}  // namespace objslam
