#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "objslam/frontend.hpp"
#include "objslam/symmetry.hpp"

namespace objslam {

// Poses are stored as {"q": [w, x, y, z], "t": [x, y, z]}.
void to_json(nlohmann::json& j, const RigidTransform& t);
void from_json(const nlohmann::json& j, RigidTransform& t);
void to_json(nlohmann::json& j, const CameraModel& c);
void from_json(const nlohmann::json& j, CameraModel& c);
void to_json(nlohmann::json& j, const BoundingBox& b);
void from_json(const nlohmann::json& j, BoundingBox& b);
void to_json(nlohmann::json& j, const KeypointDetection& d);
void from_json(const nlohmann::json& j, KeypointDetection& d);
void to_json(nlohmann::json& j, const ObjectObservation& o);
void from_json(const nlohmann::json& j, ObjectObservation& o);
void to_json(nlohmann::json& j, const FrameInput& f);
void from_json(const nlohmann::json& j, FrameInput& f);
void to_json(nlohmann::json& j, const ObjectModel& m);
void from_json(const nlohmann::json& j, ObjectModel& m);

/// Throws IoError.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// One JSON value per line; blank lines skipped. Throws ParseError with the line number.
std::vector<nlohmann::json> parse_jsonl(const std::string& text);

}  // namespace objslam
