#include "objslam/io.hpp"

#include <fstream>
#include <sstream>

#include <Eigen/Geometry>

#include "objslam/error.hpp"

namespace objslam {

namespace {

nlohmann::json vec(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
nlohmann::json vec(const Eigen::Vector2d& v) { return {v.x(), v.y()}; }

Eigen::Vector3d vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::kParseError, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Eigen::Vector2d vec2(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::kParseError, "expected a 2-vector");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

void to_json(nlohmann::json& j, const RigidTransform& t) {
  const Eigen::Quaterniond q(t.rotation);
  j = {{"q", {q.w(), q.x(), q.y(), q.z()}}, {"t", vec(t.translation)}};
}

void from_json(const nlohmann::json& j, RigidTransform& t) {
  const auto& q = j.at("q");
  if (!q.is_array() || q.size() != 4) throw Error(ErrorCode::kParseError, "pose quaternion needs 4 entries");
  Eigen::Quaterniond quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
  if (quat.norm() < 1e-12) throw Error(ErrorCode::kParseError, "zero quaternion");
  t.rotation = quat.normalized().toRotationMatrix();
  t.translation = vec3(j.at("t"));
}

void to_json(nlohmann::json& j, const CameraModel& c) {
  j = {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height}};
}

void from_json(const nlohmann::json& j, CameraModel& c) {
  c.fx = j.at("fx");
  c.fy = j.at("fy");
  c.cx = j.at("cx");
  c.cy = j.at("cy");
  c.width = j.at("width");
  c.height = j.at("height");
}

void to_json(nlohmann::json& j, const BoundingBox& b) { j = {b.x0, b.y0, b.w, b.h}; }

void from_json(const nlohmann::json& j, BoundingBox& b) {
  if (!j.is_array() || j.size() != 4) throw Error(ErrorCode::kParseError, "bbox needs [x0, y0, w, h]");
  b = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

void to_json(nlohmann::json& j, const KeypointDetection& d) {
  j = {{"id", d.keypoint_id},
       {"uv", vec(d.coord)},
       {"cov", {d.cov(0, 0), d.cov(0, 1), d.cov(1, 1)}},
       {"mask", d.mask_score}};
}

void from_json(const nlohmann::json& j, KeypointDetection& d) {
  d.keypoint_id = j.at("id");
  d.coord = vec2(j.at("uv"));
  const auto& c = j.at("cov");
  if (!c.is_array() || c.size() != 3) throw Error(ErrorCode::kParseError, "cov needs [xx, xy, yy]");
  d.cov << c[0].get<double>(), c[1].get<double>(), c[1].get<double>(), c[2].get<double>();
  d.mask_score = j.value("mask", 1.0);
}

void to_json(nlohmann::json& j, const ObjectObservation& o) {
  j = {{"object", o.object_id}, {"detections", o.detections}};
  if (o.bbox) j["bbox"] = *o.bbox;
}

void from_json(const nlohmann::json& j, ObjectObservation& o) {
  o.object_id = j.at("object");
  o.detections = j.at("detections").get<std::vector<KeypointDetection>>();
  o.bbox.reset();
  if (j.contains("bbox")) o.bbox = j["bbox"].get<BoundingBox>();
}

void to_json(nlohmann::json& j, const FrameInput& f) {
  j = {{"frame", f.frame_id}, {"objects", f.objects}};
  if (f.external_cam_pose) j["external_cam_pose"] = *f.external_cam_pose;
}

void from_json(const nlohmann::json& j, FrameInput& f) {
  f.frame_id = j.at("frame");
  f.objects = j.at("objects").get<std::vector<ObjectObservation>>();
  f.external_cam_pose.reset();
  if (j.contains("external_cam_pose")) f.external_cam_pose = j["external_cam_pose"].get<RigidTransform>();
}

void to_json(nlohmann::json& j, const ObjectModel& m) {
  nlohmann::json kps = nlohmann::json::array();
  for (const auto& p : m.keypoints) kps.push_back(vec(p));
  Eigen::Matrix3d r = m.canonical_rotation;
  j = {{"id", m.object_id},
       {"keypoints", kps},
       {"valid_indices", m.valid_indices},
       {"symmetries", m.symmetries},
       {"canonical_rotation", {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2)}},
       {"symmetric", m.is_symmetric}};
  if (!m.metric_points.empty()) {
    nlohmann::json mp = nlohmann::json::array();
    for (const auto& p : m.metric_points) mp.push_back(vec(p));
    j["metric_points"] = mp;
  }
}

void from_json(const nlohmann::json& j, ObjectModel& m) {
  m.object_id = j.at("id");
  m.keypoints.clear();
  for (const auto& p : j.at("keypoints")) m.keypoints.push_back(vec3(p));
  m.valid_indices = j.at("valid_indices").get<std::vector<int>>();
  m.symmetries = j.value("symmetries", std::vector<RigidTransform>{RigidTransform::identity()});
  m.canonical_rotation = Eigen::Matrix3d::Identity();
  if (j.contains("canonical_rotation")) {
    const auto& r = j["canonical_rotation"];
    if (!r.is_array() || r.size() != 9) throw Error(ErrorCode::kParseError, "canonical_rotation needs 9 entries");
    for (int k = 0; k < 9; ++k) m.canonical_rotation(k / 3, k % 3) = r[k].get<double>();
  }
  m.is_symmetric = j.value("symmetric", m.symmetries.size() > 1);
  m.metric_points.clear();
  if (j.contains("metric_points"))
    for (const auto& p : j["metric_points"]) m.metric_points.push_back(vec3(p));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

std::vector<nlohmann::json> parse_jsonl(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace objslam
