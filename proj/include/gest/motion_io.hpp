#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gest/types.hpp"

namespace gest {

enum class Axis { X = 0, Y = 1, Z = 2 };

enum class ChannelKind { Xposition, Yposition, Zposition, Xrotation, Yrotation, Zrotation };

struct Joint {
  std::string name;
  std::optional<int> parent;
  Vec3 offset = Vec3::Zero();  // centimeters
  // Declared channel list in file order; empty for end sites.
  std::vector<ChannelKind> channels;
  bool end_site = false;

  bool has_rotation() const;
  bool has_position() const;
  // Rotation axes in channel order (Euler composition order).
  std::array<Axis, 3> rotation_order() const;
};

class Skeleton {
 public:
  Skeleton() = default;
  explicit Skeleton(std::vector<Joint> joints);

  const std::vector<Joint>& joints() const { return joints_; }
  std::size_t size() const { return joints_.size(); }
  const Joint& operator[](std::size_t i) const { return joints_[i]; }

  std::optional<int> find(std::string_view name) const;
  // Throws if the topological, single-root, or unique-name invariants fail.
  void validate() const;

 private:
  std::vector<Joint> joints_;
};

struct Frame {
  // Local translation per joint. For joints without position channels this is
  // the rest offset; index 0 holds the root translation.
  std::vector<Vec3> translations;
  std::vector<Quat> rotations;

  const Vec3& root_translation() const { return translations.front(); }
  Vec3& root_translation() { return translations.front(); }
};

struct MotionClip {
  Skeleton skeleton;
  double fps = 30.0;
  std::vector<Frame> frames;

  std::size_t frame_count() const { return frames.size(); }
  double duration() const { return frames.empty() ? 0.0 : (frames.size() - 1) / fps; }
  void validate() const;
};

// Builds a frame at rest pose (identity rotations, rest offsets).
Frame rest_frame(const Skeleton& skeleton);

// Rotation for intrinsic Euler angles (degrees) applied in `order`.
Quat euler_to_quat(const std::array<double, 3>& degrees, const std::array<Axis, 3>& order);
// Inverse of euler_to_quat with the outer angles in (-180, 180] and the
// middle angle in [-90, 90].
std::array<double, 3> quat_to_euler(const Quat& q, const std::array<Axis, 3>& order);

MotionClip parse_bvh(std::string_view text);
std::string write_bvh(const MotionClip& clip);
MotionClip resample(const MotionClip& clip, double target_fps);

MotionClip read_bvh_file(const std::string& path);
void write_bvh_file(const std::string& path, const MotionClip& clip);

// World-space joint positions for one frame (Y-up, centimeters).
std::vector<Vec3> forward_kinematics(const Skeleton& skeleton, const Frame& frame);

}  // namespace gest
