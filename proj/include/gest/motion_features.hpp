#pragma once

#include <string>
#include <vector>

#include "gest/motion_io.hpp"
#include "gest/types.hpp"

namespace gest {

// Column layout of a feature matrix: one 6-wide rotation block per listed
// joint (in listed order) followed by the 3-wide root delta block.
struct FeatureLayout {
  std::vector<std::string> joints;

  int rotation_offset(std::size_t block) const { return static_cast<int>(6 * block); }
  int root_offset() const { return static_cast<int>(6 * joints.size()); }
  int dims() const { return static_cast<int>(6 * joints.size() + 3); }

  // Every joint that carries rotation channels, in skeleton order.
  static FeatureLayout from_skeleton(const Skeleton& skeleton);

  bool operator==(const FeatureLayout&) const = default;
};

struct FeatureSequence {
  Mat data;  // T x D
  double fps = 30.0;
  FeatureLayout layout;

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index dims() const { return data.cols(); }
};

struct NormStats {
  Vec mean;
  Vec std;
};

enum class NormDirection { Forward, Inverse };

struct FootContactParams {
  double height_threshold = 5.0;  // cm
  double speed_threshold = 20.0;  // cm/s
  int blend_window = 3;           // frames
  std::vector<std::string> foot_names{"Foot", "Toe"};
  int up_axis = 1;

  void validate() const;
};

// 6D encoding: first two columns of the rotation matrix, column-major.
Eigen::Matrix<double, 6, 1> rotation_to_6d(const Quat& q);
// Gram-Schmidt re-orthonormalization of a (possibly noisy) 6D block.
Mat3 rotation_matrix_from_6d(const Eigen::Ref<const Eigen::Matrix<double, 6, 1>>& v);
Quat rotation_from_6d(const Eigen::Ref<const Eigen::Matrix<double, 6, 1>>& v);

FeatureSequence clip_to_features(const MotionClip& clip, const FeatureLayout& layout);
MotionClip features_to_clip(const FeatureSequence& features, const Skeleton& skeleton, const Vec3& root_start);

NormStats compute_norm_stats(const std::vector<FeatureSequence>& corpus);
FeatureSequence apply_normalization(const FeatureSequence& seq, const NormStats& stats, NormDirection direction);

MotionClip fix_foot_sliding(const MotionClip& clip, const FootContactParams& params);

}  // namespace gest
