#include <doctest.h>

#include <cmath>

#include "gest/error.hpp"
#include "gest/metrics.hpp"
#include "test_util.hpp"

using namespace gest;
using namespace gest::testing;

namespace {

GaussianFit fit(std::initializer_list<double> mean, std::initializer_list<double> diag) {
  GaussianFit g;
  g.mean = Vec::Map(std::data(mean), static_cast<Eigen::Index>(mean.size()));
  const Vec d = Vec::Map(std::data(diag), static_cast<Eigen::Index>(diag.size()));
  g.cov = d.asDiagonal();
  return g;
}

// Spine spins about Z with angular speed speed(t) (rad/s).
template <class F>
MotionClip spinning_clip(double seconds, double fps, F speed) {
  MotionClip clip;
  clip.skeleton = small_skeleton();
  clip.fps = fps;
  const int n = static_cast<int>(std::lround(seconds * fps)) + 1;
  double angle = 0.0;
  for (int f = 0; f < n; ++f) {
    Frame fr = rest_frame(clip.skeleton);
    fr.rotations[1] = Quat(Eigen::AngleAxisd(angle, Vec3::UnitZ()));
    clip.frames.push_back(std::move(fr));
    angle += speed((f + 0.5) / fps) / fps;
  }
  return clip;
}

WindowSet subspace_windows(int n, int window, int dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  const int in = window * dims;
  Mat basis(2, in);
  for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = g(rng);
  WindowSet w;
  w.window = window;
  w.dims = dims;
  w.data.resize(n, in);
  for (int i = 0; i < n; ++i) w.data.row(i) = g(rng) * basis.row(0) + g(rng) * basis.row(1);
  return w;
}

FeatureAeConfig small_ae(int latent) {
  FeatureAeConfig c;
  c.latent = latent;
  c.hidden = 16;
  c.steps = 1500;
  c.learning_rate = 1e-2;
  return c;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("1-D Frechet closed form") {
    CHECK(frechet_distance(fit({0}, {1}), fit({1}, {4})) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(frechet_distance(fit({0.5}, {2}), fit({0.5}, {2})) < 1e-8);
  }

  TEST_CASE("isotropic Frechet distance equals the dimension") {
    for (int z : {1, 3, 8}) {
      GaussianFit a{Vec::Zero(z), Mat::Identity(z, z)};
      GaussianFit b{Vec::Zero(z), 4.0 * Mat::Identity(z, z)};
      CHECK(frechet_distance(a, b) == doctest::Approx(z).epsilon(1e-10));
    }
  }

  TEST_CASE("Frechet distance is symmetric and rejects bad input") {
    std::mt19937_64 rng(1);
    const Mat x = nn::random_normal(50, 4, 1.0, rng);
    const Mat y = nn::random_normal(60, 4, 2.0, rng);
    const GaussianFit a = fit_gaussian(x);
    const GaussianFit b = fit_gaussian(y);
    CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-9));
    CHECK(frechet_distance(a, a) < 1e-8);
    CHECK_THROWS_AS(frechet_distance(a, fit({0}, {1})), Error);
    GaussianFit bad = a;
    bad.cov(0, 0) = -1.0;
    CHECK_THROWS_AS(frechet_distance(bad, b), Error);
    CHECK_THROWS_AS(fit_gaussian(Mat::Zero(1, 3)), Error);
  }

  TEST_CASE("Gaussian fit uses the population covariance plus ridge") {
    Mat s(2, 1);
    s << 0, 2;
    const GaussianFit g = fit_gaussian(s);
    CHECK(g.mean[0] == 1.0);
    CHECK(g.cov(0, 0) == doctest::Approx(1.0 + 1e-6).epsilon(1e-12));
  }

  TEST_CASE("autoencoder recovers a rank-2 subspace") {
    const WindowSet w = subspace_windows(200, 5, 4, 2);
    const FeatureAutoencoder ae = train_feature_autoencoder(w, small_ae(2), 3);
    CHECK(autoencoder_mse(ae, w) < 1e-3);
    const FeatureAutoencoder again = train_feature_autoencoder(w, small_ae(2), 3);
    CHECK(again.final_loss == ae.final_loss);
    const FeatureAutoencoder back = FeatureAutoencoder::from_json(ae.to_json());
    CHECK(back.encode(w.data) == ae.encode(w.data));
  }

  TEST_CASE("autoencoder contract errors") {
    const WindowSet w = subspace_windows(200, 2, 3, 4);
    CHECK_THROWS_AS(FeatureAutoencoder(small_ae(6), 2, 3, 1), Error);
    const WindowSet few = subspace_windows(50, 2, 3, 4);
    CHECK_THROWS_AS(train_feature_autoencoder(few, small_ae(2), 1), Error);
  }

  TEST_CASE("fgd of identical sets is zero and grows with an offset") {
    const WindowSet w = subspace_windows(200, 5, 4, 5);
    FeatureAeConfig c = small_ae(4);
    c.steps = 200;
    const FeatureAutoencoder ae = train_feature_autoencoder(w, c, 6);
    const double same = fgd(w, w, ae);
    CHECK(same < 1e-6);
    WindowSet shifted = w;
    shifted.data.array() += 5.0;
    CHECK(fgd(w, shifted, ae) > same);
    WindowSet one = w;
    one.data = w.data.topRows(1);
    CHECK_THROWS_AS(fgd(w, one, ae), Error);
  }

  TEST_CASE("make_windows cuts non-overlapping windows") {
    FeatureSequence s;
    s.data = Mat::Zero(95, 3);
    for (Eigen::Index t = 0; t < 95; ++t) s.data.row(t).setConstant(static_cast<double>(t));
    const WindowSet w = make_windows({s}, 30, 30);
    CHECK(w.count() == 3);
    CHECK(w.data.cols() == 90);
    CHECK(w.data(1, 0) == 30.0);
    CHECK(make_windows({s}, 30, 5).count() == 14);
  }

  TEST_CASE("beat_align examples") {
    const BeatList a{{0.5, 1.0, 1.7}};
    CHECK(beat_align(a, a) == 1.0);
    CHECK(std::abs(beat_align(BeatList{{1.1}}, BeatList{{1.0}}, 0.1) - std::exp(-0.5)) < 1e-9);
    CHECK(beat_align(BeatList{{10.0}}, BeatList{{1.0}}, 0.1) < 1e-5);
    CHECK(beat_align(BeatList{}, a) == 0.0);
    CHECK(beat_align(a, BeatList{}) == 0.0);
    const BeatList m{{0.52, 1.03, 1.64}};
    const BeatList ms{{3.52, 4.03, 4.64}};
    const BeatList as{{3.5, 4.0, 4.7}};
    CHECK(beat_align(m, a) == doctest::Approx(beat_align(ms, as)).epsilon(1e-9));
  }

  TEST_CASE("diversity examples") {
    const auto one = [](double v) { return Mat::Constant(1, 1, v); };
    CHECK(diversity({one(0), one(3)}) == 3.0);
    CHECK(diversity({one(0), one(3), one(6)}) == doctest::Approx(4.0));
    CHECK(diversity({one(6), one(0), one(3)}) == doctest::Approx(4.0));
    CHECK(diversity({one(0), one(6), one(12)}) == doctest::Approx(8.0));
    CHECK(diversity({one(2), one(2), one(2)}) == 0.0);
    CHECK_THROWS_AS(diversity(std::vector<Mat>{one(0)}), Error);
    CHECK_THROWS_AS(diversity({one(0), Mat::Zero(2, 1)}), Error);
  }

  TEST_CASE("constant clip has no motion beats") {
    const MotionClip c = spinning_clip(2.0, 30.0, [](double) { return 0.0; });
    CHECK(motion_beats(c).times.empty());
    const MotionClip steady = spinning_clip(2.0, 30.0, [](double) { return 1.0; });
    CHECK(motion_beats(steady).times.empty());
    CHECK_THROWS_AS(motion_beats(spinning_clip(0.2, 30.0, [](double) { return 1.0; })), Error);
  }

  TEST_CASE("oscillation with pauses every 0.5 s") {
    const double fps = 30.0;
    const MotionClip c =
        spinning_clip(3.0, fps, [](double t) { return 2.0 * (1.0 - std::cos(2.0 * std::numbers::pi * t / 0.5)); });
    const BeatList b = motion_beats(c);
    CHECK(b.times.size() >= 5);
    for (double t : b.times) {
      CHECK(std::abs(t - 0.5 * std::round(t / 0.5)) <= 1.0 / fps + 1e-9);
    }
  }

  TEST_CASE("single pause at 1.0 s") {
    const MotionClip c = spinning_clip(2.0, 30.0, [](double t) {
      const double u = (t - 1.0) / 0.1;
      return 1.0 - std::exp(-u * u);
    });
    const BeatList b = motion_beats(c);
    REQUIRE(b.times.size() == 1);
    CHECK(std::abs(b.times[0] - 1.0) <= 0.05);
  }

  TEST_CASE("report renders JSON and a table") {
    EvalReport r;
    r.generated.fgd = 1.5;
    r.config_hash = "abcd";
    const nlohmann::json j = r.to_json();
    CHECK(j.at("generated").at("fgd") == 1.5);
    CHECK(j.at("sigma") == 0.1);
    const std::string t = r.to_table();
    CHECK(t.find("FGD") != std::string::npos);
    CHECK(t.find("BeatAlign") != std::string::npos);
    CHECK(t.find("Diversity") != std::string::npos);
    CHECK(t.find("Ground Truth") != std::string::npos);
  }
}
