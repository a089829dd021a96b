#include <doctest.h>

#include <fstream>
#include <sstream>

#include "gest/error.hpp"
#include "gest/motion_io.hpp"
#include "test_util.hpp"

using namespace gest;
using namespace gest::testing;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kSingleJoint =
    "HIERARCHY\nROOT Hips\n{\n  OFFSET 0 0 0\n  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation "
    "Yrotation\n  End Site\n  {\n    OFFSET 0 10 0\n  }\n}\nMOTION\nFrames: 1\nFrame Time: 0.033333\n0 0 0 0 0 0\n";

}  // namespace

TEST_SUITE("motion_io") {
  TEST_CASE("zero channels parse to identity and zero translation") {
    const MotionClip clip = parse_bvh(kSingleJoint);
    REQUIRE(clip.frames.size() == 1);
    CHECK(clip.skeleton.size() == 2);
    CHECK(clip.skeleton[1].end_site);
    CHECK(clip.skeleton[1].name == "Hips_End");
    CHECK(quat_distance(clip.frames[0].rotations[0], Quat::Identity()) < 1e-12);
    CHECK(clip.frames[0].root_translation().norm() == 0.0);
    CHECK(clip.fps == doctest::Approx(30.0).epsilon(1e-4));
  }

  TEST_CASE("root rotated 90 degrees about Z") {
    const std::string text =
        "HIERARCHY\nROOT Hips\n{\n  OFFSET 0 0 0\n  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation "
        "Yrotation\n  JOINT Chest\n  {\n    OFFSET 0 10 0\n    CHANNELS 3 Zrotation Xrotation Yrotation\n    End "
        "Site\n    {\n      OFFSET 0 5 0\n    }\n  }\n}\nMOTION\nFrames: 1\nFrame Time: 0.033333\n0 0 0 90 0 0 0 0 0\n";
    const MotionClip clip = parse_bvh(text);
    const Quat& q = clip.frames[0].rotations[0];
    const double s = std::sqrt(0.5);
    CHECK(quat_distance(q, Quat(s, 0, 0, s)) < 1e-9);
  }

  TEST_CASE("frame-count mismatch is an error") {
    std::string text = "HIERARCHY\nROOT Hips\n{\n  OFFSET 0 0 0\n  CHANNELS 3 Zrotation Xrotation Yrotation\n  End "
                       "Site\n  {\n    OFFSET 0 1 0\n  }\n}\nMOTION\nFrames: 10\nFrame Time: 0.1\n";
    for (int i = 0; i < 9; ++i) text += "0 0 0\n";
    CHECK_THROWS_AS(parse_bvh(text), ParseError);
  }

  TEST_CASE("syntax errors report the line number") {
    const std::string text = "HIERARCHY\nROOT Hips\n{\n  OFFSET 0 0 zero\n}\n";
    try {
      parse_bvh(text);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 4);
      CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    }
  }

  TEST_CASE("unsupported channel counts are rejected") {
    const std::string text = "HIERARCHY\nROOT Hips\n{\n  OFFSET 0 0 0\n  CHANNELS 2 Zrotation Xrotation\n}\n"
                             "MOTION\nFrames: 1\nFrame Time: 0.1\n0 0\n";
    CHECK_THROWS_AS(parse_bvh(text), Error);
  }

  TEST_CASE("random 60-frame clip round-trips within 1e-4") {
    const MotionClip clip = random_clip(small_skeleton(), 60, 30.0, 7);
    const MotionClip back = parse_bvh(write_bvh(clip));
    REQUIRE(back.frames.size() == 60);
    for (std::size_t f = 0; f < 60; ++f) {
      for (std::size_t j = 0; j < clip.skeleton.size(); ++j) {
        CHECK(quat_distance(back.frames[f].rotations[j], clip.frames[f].rotations[j]) < 1e-4);
        CHECK((back.frames[f].translations[j] - clip.frames[f].translations[j]).cwiseAbs().maxCoeff() < 1e-4);
      }
    }
  }

  TEST_CASE("identity clip writes zero rotation channels and a 6-decimal frame time") {
    MotionClip clip;
    clip.skeleton = small_skeleton();
    clip.fps = 30.0;
    clip.frames.assign(2, rest_frame(clip.skeleton));
    const std::string text = write_bvh(clip);
    CHECK(text.find("Frame Time: 0.033333\n") != std::string::npos);
    CHECK(text.find('\r') == std::string::npos);
    for (double v : motion_numbers(text)) CHECK(v == 0.0);
    CHECK(text.find("-0.000000") == std::string::npos);
  }

  TEST_CASE("resample to the same fps is the identity") {
    const MotionClip clip = random_clip(small_skeleton(), 20, 30.0, 3);
    const MotionClip out = resample(clip, 30.0);
    REQUIRE(out.frames.size() == clip.frames.size());
    for (std::size_t f = 0; f < out.frames.size(); ++f) {
      CHECK(out.frames[f].root_translation() == clip.frames[f].root_translation());
      for (std::size_t j = 0; j < clip.skeleton.size(); ++j) {
        CHECK(quat_distance(out.frames[f].rotations[j], clip.frames[f].rotations[j]) < 1e-6);
      }
    }
  }

  TEST_CASE("slerp midpoint of identity and 90 degrees about Z is 45 degrees") {
    MotionClip clip;
    clip.skeleton = small_skeleton();
    clip.fps = 1.0;
    clip.frames.assign(2, rest_frame(clip.skeleton));
    clip.frames[1].rotations[0] = Quat(Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()));
    const MotionClip out = resample(clip, 2.0);
    REQUIRE(out.frames.size() == 3);
    const Quat expected(Eigen::AngleAxisd(std::numbers::pi / 4, Vec3::UnitZ()));
    CHECK(quat_distance(out.frames[1].rotations[0], expected) < 1e-9);
  }

  TEST_CASE("120 fps to 60 fps preserves duration") {
    const MotionClip clip = random_clip(small_skeleton(), 120, 120.0, 5);
    const MotionClip out = resample(clip, 60.0);
    CHECK(std::abs(static_cast<int>(out.frames.size()) - 60) <= 1);
    CHECK(std::abs(out.duration() - clip.duration()) <= 1.0 / 60.0);
    CHECK_THROWS_AS(resample(clip, 0.0), Error);
  }

  TEST_CASE("golden files parse, round-trip channel-exact and re-serialize stably") {
    for (const char* name : {"two_joint.bvh", "mixed_orders.bvh", "crlf_six_channel.bvh"}) {
      CAPTURE(name);
      const std::string original = read_text(data_path(name));
      const MotionClip clip = parse_bvh(original);
      clip.skeleton.validate();
      const std::string written = write_bvh(clip);
      const auto a = motion_numbers(original);
      const auto b = motion_numbers(written);
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-4);
      CHECK(write_bvh(parse_bvh(written)) == written);
    }
  }

  TEST_CASE("forward kinematics follows offsets and rotations") {
    MotionClip clip;
    clip.skeleton = small_skeleton();
    Frame f = rest_frame(clip.skeleton);
    f.root_translation() = Vec3(1, 2, 3);
    f.rotations[0] = Quat(Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()));
    const auto p = forward_kinematics(clip.skeleton, f);
    // Spine offset (0,10,0) rotated 90 degrees about Z lands on -X.
    CHECK((p[1] - Vec3(-9, 2, 3)).norm() < 1e-9);
  }

  TEST_CASE("skeleton invariants") {
    CHECK_THROWS_AS(Skeleton({make_joint("a", std::nullopt, Vec3::Zero()), make_joint("a", 0, Vec3::Zero())}), Error);
    CHECK_THROWS_AS(Skeleton({make_joint("a", std::nullopt, Vec3::Zero()), make_joint("b", std::nullopt, Vec3::Zero())}),
                    Error);
    CHECK_THROWS_AS(Skeleton({make_joint("a", std::nullopt, Vec3::Zero()), make_joint("b", 1, Vec3::Zero())}), Error);
  }
}
