#include "gest/motion_features.hpp"

#include <algorithm>
#include <cmath>

#include "gest/error.hpp"

namespace gest {

namespace {

constexpr double kStdFloor = 1e-6;

std::vector<int> resolve_layout(const FeatureLayout& layout, const Skeleton& skeleton) {
  std::vector<int> idx;
  idx.reserve(layout.joints.size());
  for (const auto& name : layout.joints) {
    auto j = skeleton.find(name);
    require(j.has_value(), "invalid_argument", "layout joint '" + name + "' not in skeleton");
    idx.push_back(*j);
  }
  return idx;
}

}  // namespace

FeatureLayout FeatureLayout::from_skeleton(const Skeleton& skeleton) {
  FeatureLayout layout;
  for (const auto& j : skeleton.joints()) {
    if (j.has_rotation()) layout.joints.push_back(j.name);
  }
  return layout;
}

void FootContactParams::validate() const {
  require(height_threshold > 0 && speed_threshold > 0 && blend_window > 0, "invalid_argument",
          "foot contact thresholds must be positive");
  require(up_axis >= 0 && up_axis < 3, "invalid_argument", "up axis must be 0, 1 or 2");
}

Eigen::Matrix<double, 6, 1> rotation_to_6d(const Quat& q) {
  const Mat3 r = q.normalized().toRotationMatrix();
  Eigen::Matrix<double, 6, 1> v;
  v << r.col(0), r.col(1);
  return v;
}

Mat3 rotation_matrix_from_6d(const Eigen::Ref<const Eigen::Matrix<double, 6, 1>>& v) {
  Vec3 a = v.head<3>();
  Vec3 b = v.tail<3>();
  if (a.norm() < 1e-12) a = Vec3::UnitX();
  const Vec3 c0 = a.normalized();
  Vec3 c1 = b - c0.dot(b) * c0;
  if (c1.norm() < 1e-12) {
    // Degenerate second column: pick any direction orthogonal to c0.
    c1 = c0.unitOrthogonal();
  }
  c1.normalize();
  Mat3 r;
  r.col(0) = c0;
  r.col(1) = c1;
  r.col(2) = c0.cross(c1);
  return r;
}

Quat rotation_from_6d(const Eigen::Ref<const Eigen::Matrix<double, 6, 1>>& v) {
  return Quat(rotation_matrix_from_6d(v)).normalized();
}

FeatureSequence clip_to_features(const MotionClip& clip, const FeatureLayout& layout) {
  clip.validate();
  const auto idx = resolve_layout(layout, clip.skeleton);
  const auto t_count = static_cast<Eigen::Index>(clip.frames.size());
  FeatureSequence seq;
  seq.fps = clip.fps;
  seq.layout = layout;
  seq.data = Mat::Zero(t_count, layout.dims());
  for (Eigen::Index t = 0; t < t_count; ++t) {
    const Frame& f = clip.frames[t];
    for (std::size_t b = 0; b < idx.size(); ++b) {
      seq.data.row(t).segment<6>(layout.rotation_offset(b)) = rotation_to_6d(f.rotations[idx[b]]).transpose();
    }
    if (t > 0) {
      seq.data.row(t).segment<3>(layout.root_offset()) =
          (f.root_translation() - clip.frames[t - 1].root_translation()).transpose();
    }
  }
  return seq;
}

MotionClip features_to_clip(const FeatureSequence& features, const Skeleton& skeleton, const Vec3& root_start) {
  require(features.dims() == features.layout.dims(), "shape",
          "feature width " + std::to_string(features.dims()) + " does not match layout width " +
              std::to_string(features.layout.dims()));
  require(features.frames() >= 1, "shape", "feature sequence has no frames");
  const auto idx = resolve_layout(features.layout, skeleton);
  MotionClip clip;
  clip.skeleton = skeleton;
  clip.fps = features.fps;
  clip.frames.reserve(features.frames());
  Vec3 root = root_start;
  for (Eigen::Index t = 0; t < features.frames(); ++t) {
    Frame f = rest_frame(skeleton);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      Eigen::Matrix<double, 6, 1> v = features.data.row(t).segment<6>(features.layout.rotation_offset(b)).transpose();
      f.rotations[idx[b]] = rotation_from_6d(v);
    }
    if (t > 0) root += features.data.row(t).segment<3>(features.layout.root_offset()).transpose();
    f.root_translation() = root;
    clip.frames.push_back(std::move(f));
  }
  return clip;
}

NormStats compute_norm_stats(const std::vector<FeatureSequence>& corpus) {
  require(!corpus.empty(), "invalid_argument", "cannot compute normalization stats of an empty corpus");
  const Eigen::Index d = corpus.front().dims();
  Vec sum = Vec::Zero(d);
  double count = 0;
  for (const auto& s : corpus) {
    require(s.dims() == d, "shape", "inconsistent feature width in corpus");
    sum += s.data.colwise().sum().transpose();
    count += static_cast<double>(s.frames());
  }
  require(count > 0, "invalid_argument", "corpus has no frames");
  NormStats stats;
  stats.mean = sum / count;
  Vec sq = Vec::Zero(d);
  for (const auto& s : corpus) {
    sq += (s.data.rowwise() - stats.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  }
  stats.std = (sq / count).array().sqrt().max(kStdFloor);
  return stats;
}

FeatureSequence apply_normalization(const FeatureSequence& seq, const NormStats& stats, NormDirection direction) {
  require(seq.dims() == stats.mean.size() && seq.dims() == stats.std.size(), "shape",
          "normalization stats do not match feature width");
  FeatureSequence out = seq;
  if (direction == NormDirection::Forward) {
    out.data = ((seq.data.rowwise() - stats.mean.transpose()).array().rowwise() / stats.std.transpose().array()).matrix();
  } else {
    out.data = ((seq.data.array().rowwise() * stats.std.transpose().array()).rowwise() + stats.mean.transpose().array()).matrix();
  }
  return out;
}

MotionClip fix_foot_sliding(const MotionClip& clip, const FootContactParams& params) {
  params.validate();
  clip.validate();
  const Skeleton& sk = clip.skeleton;

  std::vector<int> feet;
  for (std::size_t i = 0; i < sk.size(); ++i) {
    for (const auto& key : params.foot_names) {
      if (sk[i].name.find(key) != std::string::npos) {
        feet.push_back(static_cast<int>(i));
        break;
      }
    }
  }
  require(!feet.empty(), "invalid_argument", "no foot joints found in skeleton");

  const std::size_t n = clip.frames.size();
  std::vector<std::vector<Vec3>> world(n);
  for (std::size_t t = 0; t < n; ++t) world[t] = forward_kinematics(sk, clip.frames[t]);

  std::vector<Vec3> shift_sum(n, Vec3::Zero());
  std::vector<double> shift_weight(n, 0.0);
  const int w = params.blend_window;

  for (int foot : feet) {
    std::vector<bool> contact(n, false);
    for (std::size_t t = 0; t < n; ++t) {
      const Vec3& p = world[t][foot];
      Vec3 v = Vec3::Zero();
      if (n > 1) v = (t == 0 ? world[1][foot] - p : p - world[t - 1][foot]) * clip.fps;
      contact[t] = p[params.up_axis] < params.height_threshold && v.norm() < params.speed_threshold;
    }
    std::size_t t = 0;
    while (t < n) {
      if (!contact[t]) {
        ++t;
        continue;
      }
      const std::size_t start = t;
      while (t < n && contact[t]) ++t;
      const std::size_t end = t;  // exclusive
      if (static_cast<int>(end - start) < w) continue;
      const Vec3 anchor = world[start][foot];
      for (std::size_t k = start; k < end; ++k) {
        shift_sum[k] += anchor - world[k][foot];
        shift_weight[k] += 1.0;
      }
      const Vec3 exit_shift = anchor - world[end - 1][foot];
      for (int k = 1; k <= w && end - 1 + k < n; ++k) {
        const double alpha = 1.0 - static_cast<double>(k) / (w + 1);
        shift_sum[end - 1 + k] += alpha * exit_shift;
        shift_weight[end - 1 + k] += 1.0;
      }
    }
  }

  MotionClip out = clip;
  for (std::size_t t = 0; t < n; ++t) {
    if (shift_weight[t] > 0) out.frames[t].root_translation() += shift_sum[t] / shift_weight[t];
  }
  return out;
}

}  // namespace gest
