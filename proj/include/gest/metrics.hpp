#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gest/audio.hpp"
#include "gest/motion_features.hpp"
#include "gest/nn.hpp"

namespace gest {

// Flattened feature windows, one per row (N x W*D).
struct WindowSet {
  Mat data;
  int window = 30;
  int dims = 0;

  Eigen::Index count() const { return data.rows(); }
};

// Windows of `window` frames every `stride` frames; clips shorter than one
// window contribute nothing.
WindowSet make_windows(const std::vector<FeatureSequence>& seqs, int window, int stride);

struct FeatureAeConfig {
  int latent = 16;
  int hidden = 128;
  int steps = 1500;
  int batch = 32;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static FeatureAeConfig from_json(const nlohmann::json& j);
};

// Window -> z and back. Each side is a linear map plus a one-hidden-layer
// GELU correction, applied to inputs standardized with the training stats.
class FeatureAutoencoder {
 public:
  FeatureAutoencoder() = default;
  FeatureAutoencoder(FeatureAeConfig config, int window, int dims, std::uint64_t seed);

  const FeatureAeConfig& config() const { return config_; }
  int window() const { return window_; }
  int dims() const { return dims_; }
  int input_size() const { return window_ * dims_; }
  nn::ParamSet& params() { return params_; }

  Vec mean;
  Vec std;
  double final_loss = 0;
  std::string config_hash;

  Mat encode(const Mat& windows) const;
  Mat reconstruct(const Mat& windows) const;
  // Graph over standardized inputs; returns the standardized reconstruction.
  ad::Var reconstruct_graph(const ad::Var& x) const;

  nlohmann::json to_json() const;
  static FeatureAutoencoder from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static FeatureAutoencoder load(const std::string& path);

 private:
  ad::Var encode_graph(const ad::Var& x) const;

  FeatureAeConfig config_;
  int window_ = 0;
  int dims_ = 0;
  nn::ParamSet params_;
  nn::Linear enc_lin_, enc_h_, enc_o_;
  nn::Linear dec_lin_, dec_h_, dec_o_;
};

FeatureAutoencoder train_feature_autoencoder(const WindowSet& windows, const FeatureAeConfig& config,
                                             std::uint64_t seed);
// Mean squared reconstruction error in the original feature units.
double autoencoder_mse(const FeatureAutoencoder& ae, const WindowSet& windows);

struct GaussianFit {
  Vec mean;
  Mat cov;
};

// Population covariance plus ridge * I.
GaussianFit fit_gaussian(const Mat& samples, double ridge = 1e-6);
double frechet_distance(const GaussianFit& a, const GaussianFit& b);
double fgd(const WindowSet& real, const WindowSet& generated, const FeatureAutoencoder& ae);

// Per-frame mean joint angular speed (rad/s) from centred differences.
std::vector<double> angular_speed(const MotionClip& clip);
// Frame-time local minima of the smoothed mean joint angular speed.
BeatList motion_beats(const MotionClip& clip);
double beat_align(const BeatList& motion, const BeatList& audio, double sigma = 0.1);
double diversity(const std::vector<Mat>& samples);
double diversity(const WindowSet& windows);

struct EvalRow {
  std::string name;
  double fgd = 0;
  double beat_align = 0;
  double diversity = 0;
};

struct EvalReport {
  EvalRow ground_truth{"Ground Truth"};
  EvalRow generated{"Generated"};
  double sigma = 0.1;
  int window = 30;
  int stride = 30;
  int clips = 0;
  long real_windows = 0;
  long generated_windows = 0;
  std::string config_hash;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

}  // namespace gest
