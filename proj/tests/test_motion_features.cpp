#include <doctest.h>

#include "gest/error.hpp"
#include "gest/motion_features.hpp"
#include "test_util.hpp"

using namespace gest;
using namespace gest::testing;

namespace {

MotionClip identity_clip(int frames) {
  MotionClip clip;
  clip.skeleton = small_skeleton();
  clip.fps = 30.0;
  clip.frames.assign(frames, rest_frame(clip.skeleton));
  return clip;
}

FeatureSequence make_seq(const Mat& data) {
  FeatureSequence s;
  s.data = data;
  return s;
}

}  // namespace

TEST_SUITE("motion_features") {
  TEST_CASE("identity clip gives canonical 6D blocks and zero root deltas") {
    const MotionClip clip = identity_clip(4);
    const FeatureLayout layout = FeatureLayout::from_skeleton(clip.skeleton);
    CHECK(layout.joints == std::vector<std::string>{"Hips", "Spine", "LeftFoot"});
    const FeatureSequence f = clip_to_features(clip, layout);
    REQUIRE(f.dims() == 6 * 3 + 3);
    Eigen::Matrix<double, 1, 6> canon;
    canon << 1, 0, 0, 0, 1, 0;
    for (Eigen::Index t = 0; t < f.frames(); ++t) {
      for (int b = 0; b < 3; ++b) CHECK(f.data.row(t).segment<6>(6 * b) == canon);
      CHECK(f.data.row(t).tail<3>().isZero());
    }
  }

  TEST_CASE("root moving +1 cm in x per frame") {
    MotionClip clip = identity_clip(5);
    for (int t = 0; t < 5; ++t) clip.frames[t].root_translation() = Vec3(t, 0, 0);
    const FeatureSequence f = clip_to_features(clip, FeatureLayout::from_skeleton(clip.skeleton));
    CHECK(f.data.row(0).tail<3>().isZero());
    for (int t = 1; t < 5; ++t) CHECK(f.data.row(t).tail<3>() == Eigen::RowVector3d(1, 0, 0));
  }

  TEST_CASE("90 degrees about Z encodes as (0,1,0,-1,0,0)") {
    const auto v = rotation_to_6d(Quat(Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ())));
    Eigen::Matrix<double, 6, 1> expected;
    expected << 0, 1, 0, -1, 0, 0;
    CHECK((v - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("layout joint missing from skeleton is an error") {
    FeatureLayout layout;
    layout.joints = {"Nope"};
    CHECK_THROWS_AS(clip_to_features(identity_clip(2), layout), Error);
  }

  TEST_CASE("features_to_clip inverts clip_to_features") {
    const MotionClip clip = random_clip(small_skeleton(), 30, 30.0, 11);
    const FeatureLayout layout = FeatureLayout::from_skeleton(clip.skeleton);
    const MotionClip back = features_to_clip(clip_to_features(clip, layout), clip.skeleton,
                                             clip.frames.front().root_translation());
    for (std::size_t t = 0; t < clip.frames.size(); ++t) {
      for (std::size_t j = 0; j < clip.skeleton.size(); ++j) {
        if (!clip.skeleton[j].has_rotation()) continue;
        CHECK(quat_distance(back.frames[t].rotations[j], clip.frames[t].rotations[j]) < 1e-5);
      }
      CHECK((back.frames[t].root_translation() - clip.frames[t].root_translation()).norm() < 1e-9);
    }
  }

  TEST_CASE("root deltas accumulate from root_start") {
    FeatureSequence f;
    f.layout.joints = {"Hips"};
    f.data = Mat::Zero(3, 9);
    f.data.row(0).head<6>() << 1, 0, 0, 0, 1, 0;
    f.data.row(1) = f.data.row(0);
    f.data.row(2) = f.data.row(0);
    f.data(1, 6) = 1;
    f.data(2, 6) = 1;
    const MotionClip clip = features_to_clip(f, small_skeleton(), Vec3(5, 0, 0));
    CHECK(clip.frames[0].root_translation().x() == 5);
    CHECK(clip.frames[1].root_translation().x() == 6);
    CHECK(clip.frames[2].root_translation().x() == 7);
    CHECK(quat_distance(clip.frames[0].rotations[0], Quat::Identity()) < 1e-12);
    f.data = Mat::Zero(3, 8);
    CHECK_THROWS_AS(features_to_clip(f, small_skeleton(), Vec3::Zero()), Error);
  }

  TEST_CASE("10,000 random rotations survive the 6D round trip") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 10000; ++i) {
      const Quat q = random_quat(rng);
      REQUIRE(quat_distance(rotation_from_6d(rotation_to_6d(q)), q) < 1e-5);
    }
  }

  TEST_CASE("Gram-Schmidt output is orthonormal under perturbation") {
    std::mt19937_64 rng(2);
    for (double scale : {1e-3, 1e-2, 0.1}) {
      std::uniform_real_distribution<double> u(-scale, scale);
      for (int i = 0; i < 500; ++i) {
        Eigen::Matrix<double, 6, 1> v = rotation_to_6d(random_quat(rng));
        for (int k = 0; k < 6; ++k) v[k] += u(rng);
        const Mat3 r = rotation_matrix_from_6d(v);
        REQUIRE((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6);
        REQUIRE(r.determinant() == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("norm stats use the population convention with a floor") {
    Mat c = Mat::Constant(4, 2, 3.0);
    NormStats s = compute_norm_stats({make_seq(c)});
    CHECK(s.mean[0] == 3.0);
    CHECK(s.std[0] == 1e-6);

    Mat two(2, 1);
    two << 0, 2;
    s = compute_norm_stats({make_seq(two)});
    CHECK(s.mean[0] == 1.0);
    CHECK(s.std[0] == 1.0);
    CHECK_THROWS_AS(compute_norm_stats({}), Error);
  }

  TEST_CASE("normalization forward and inverse are mutual inverses") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(2.0, 5.0);
    Mat x(50, 7);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    const FeatureSequence seq = make_seq(x);
    const NormStats s = compute_norm_stats({seq});
    const FeatureSequence fwd = apply_normalization(seq, s, NormDirection::Forward);
    CHECK(fwd.data.colwise().mean().cwiseAbs().maxCoeff() < 1e-9);
    const Vec sd = fwd.data.array().square().colwise().mean().sqrt();
    CHECK((sd.array() - 1.0).abs().maxCoeff() < 1e-9);
    const FeatureSequence back = apply_normalization(fwd, s, NormDirection::Inverse);
    CHECK((back.data - x).cwiseAbs().maxCoeff() < 1e-9);

    Mat m(1, 7);
    m.row(0) = s.mean.transpose();
    CHECK(apply_normalization(make_seq(m), s, NormDirection::Forward).data.cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(apply_normalization(make_seq(Mat::Zero(2, 3)), s, NormDirection::Forward), Error);
  }

  TEST_CASE("feet above the threshold leave the clip unchanged") {
    MotionClip clip = identity_clip(10);
    for (int t = 0; t < 10; ++t) clip.frames[t].root_translation() = Vec3(0.5 * t, 200, 0);
    const MotionClip out = fix_foot_sliding(clip, {});
    for (int t = 0; t < 10; ++t) CHECK(out.frames[t].root_translation() == clip.frames[t].root_translation());
  }

  TEST_CASE("planted foot under a drifting root is pinned") {
    // LeftFoot sits 80 cm below the root and its end site 5 cm lower.
    MotionClip clip = identity_clip(10);
    for (int t = 0; t < 10; ++t) clip.frames[t].root_translation() = Vec3(0.5 * t, 84, 0);
    FootContactParams params;
    const MotionClip out = fix_foot_sliding(clip, params);
    const int foot = *clip.skeleton.find("LeftFoot_End");
    const Vec3 first = forward_kinematics(out.skeleton, out.frames[0])[foot];
    for (int t = 0; t < 10; ++t) {
      CHECK((forward_kinematics(out.skeleton, out.frames[t])[foot] - first).norm() < 0.01);
      for (std::size_t j = 0; j < clip.skeleton.size(); ++j) {
        CHECK(out.frames[t].rotations[j].coeffs() == clip.frames[t].rotations[j].coeffs());
      }
    }
  }

  TEST_CASE("contact runs shorter than the blend window are skipped") {
    MotionClip clip = identity_clip(9);
    for (int t = 0; t < 9; ++t) clip.frames[t].root_translation() = Vec3(0, t == 4 ? 84 : 200, 0);
    // Vertical motion makes frame 4 fast; use a high speed threshold so it is a 1-frame contact.
    FootContactParams params;
    params.speed_threshold = 1e9;
    const MotionClip out = fix_foot_sliding(clip, params);
    for (int t = 0; t < 9; ++t) CHECK(out.frames[t].root_translation() == clip.frames[t].root_translation());
  }

  TEST_CASE("skeleton without feet is an error") {
    MotionClip clip = identity_clip(3);
    FootContactParams params;
    params.foot_names = {"Paw"};
    CHECK_THROWS_AS(fix_foot_sliding(clip, params), Error);
  }
}
