#include "gest/archive.hpp"

#include <fstream>
#include <sstream>

#include "gest/error.hpp"

namespace gest::archive {

namespace {

const char* kChannelNames[] = {"Xposition", "Yposition", "Zposition", "Xrotation", "Yrotation", "Zrotation"};

}  // namespace

nlohmann::json skeleton_to_json(const Skeleton& skeleton) {
  nlohmann::json joints = nlohmann::json::array();
  for (const auto& j : skeleton.joints()) {
    nlohmann::json o;
    o["name"] = j.name;
    o["parent"] = j.parent ? nlohmann::json(*j.parent) : nlohmann::json(nullptr);
    o["offset"] = {j.offset.x(), j.offset.y(), j.offset.z()};
    std::vector<std::string> ch;
    for (auto c : j.channels) ch.emplace_back(kChannelNames[static_cast<int>(c)]);
    o["channels"] = ch;
    o["end_site"] = j.end_site;
    joints.push_back(std::move(o));
  }
  return joints;
}

Skeleton skeleton_from_json(const nlohmann::json& j) {
  std::vector<Joint> joints;
  for (const auto& o : j) {
    Joint joint;
    joint.name = o.at("name").get<std::string>();
    if (!o.at("parent").is_null()) joint.parent = o.at("parent").get<int>();
    const auto off = o.at("offset").get<std::vector<double>>();
    require(off.size() == 3, "format", "joint offset must have 3 values");
    joint.offset = Vec3(off[0], off[1], off[2]);
    for (const auto& name : o.at("channels").get<std::vector<std::string>>()) {
      int k = 0;
      while (k < 6 && name != kChannelNames[k]) ++k;
      require(k < 6, "format", "unknown channel '" + name + "'");
      joint.channels.push_back(static_cast<ChannelKind>(k));
    }
    joint.end_site = o.at("end_site").get<bool>();
    joints.push_back(std::move(joint));
  }
  return Skeleton(std::move(joints));
}

nlohmann::json vec_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec vec_from_json(const nlohmann::json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(data.data(), static_cast<Eigen::Index>(data.size()));
}

nlohmann::json norm_to_json(const NormStats& norm) {
  return {{"mean", vec_to_json(norm.mean)}, {"std", vec_to_json(norm.std)}};
}

NormStats norm_from_json(const nlohmann::json& j) {
  NormStats n;
  n.mean = vec_from_json(j.at("mean"));
  n.std = vec_from_json(j.at("std"));
  require(n.mean.size() == n.std.size(), "format", "normalization stats width mismatch");
  return n;
}

void check_format(const nlohmann::json& j, const std::string& expected) {
  const std::string found = j.contains("format") && j["format"].is_string() ? j["format"].get<std::string>() : "";
  require(found == expected, "format", "expected archive format '" + expected + "', found '" + found + "'");
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw Error("format", "'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write '" + path + "'");
  out << j.dump() << "\n";
}

}  // namespace gest::archive
