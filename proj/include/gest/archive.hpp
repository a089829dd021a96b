#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "gest/motion_features.hpp"
#include "gest/motion_io.hpp"

namespace gest::archive {

nlohmann::json skeleton_to_json(const Skeleton& skeleton);
Skeleton skeleton_from_json(const nlohmann::json& j);

nlohmann::json norm_to_json(const NormStats& norm);
NormStats norm_from_json(const nlohmann::json& j);

nlohmann::json vec_to_json(const Vec& v);
Vec vec_from_json(const nlohmann::json& j);

// Throws Error("format") unless j["format"] == expected.
void check_format(const nlohmann::json& j, const std::string& expected);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace gest::archive
