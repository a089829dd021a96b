#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gest/motion_features.hpp"
#include "gest/motion_io.hpp"
#include "gest/nn.hpp"

namespace gest {

struct RvqConfig {
  int codebook_size = 64;
  int latent_channels = 64;
  int hidden_channels = 64;
  int depth = 4;
  int downsample = 8;
  int attn_layers = 2;
  int attn_heads = 4;
  double beta = 0.25;
  double ema_decay = 0.99;
  double dead_threshold = 1.0;  // minimum hits per monitoring window
  int dead_window = 100;        // steps
  double learning_rate = 2e-4;
  double weight_decay = 0.0;
  int warmup_steps = -1;  // < 0: 5% of total_steps
  int total_steps = 2000;
  int batch_sequences = 8;
  int batch_frames = 64;
  double grad_clip = 1.0;

  void validate() const;
  int resolved_warmup() const;
  nlohmann::json to_json() const;
  static RvqConfig from_json(const nlohmann::json& j);
};

struct Codebook {
  Mat entries;      // K x C
  Vec ema_counts;   // K
  Mat ema_sums;     // K x C
  Vec usage;        // hits since the last dead-code check

  Codebook() = default;
  explicit Codebook(Mat init);
  Eigen::Index size() const { return entries.rows(); }
  Eigen::Index channels() const { return entries.cols(); }
};

struct QuantizeResult {
  CodeMatrix codes;              // S x L
  Mat quantized;                 // S x C, sum of per_level in level order
  std::vector<Mat> residuals;    // e_1 .. e_{L+1}
  std::vector<Mat> per_level;    // q_l(e_l)
};

// Nearest entry per row; ties go to the lowest index.
std::vector<int> nearest_codes(const Mat& x, const Mat& entries);

QuantizeResult quantize_residual(const Mat& latents, std::span<const Codebook> codebooks);

struct RvqLossTerms {
  double total = 0;
  double rec = 0;
  double commit = 0;
  double codebook = 0;
};

// Squared-error terms are averaged over elements. total = rec + commit; the
// codebook term is reported but not trained (entries follow the EMA).
RvqLossTerms rvq_loss(const Mat& target, const Mat& reconstruction, std::span<const Mat> residuals,
                      std::span<const Mat> per_level, double beta);

constexpr double kEmaEpsilon = 1e-5;

// Encoder latents and codebook entries live on a fixed-point grid of this
// step, so residual sums and differences are exact in double precision
// (for magnitudes below 2^23).
constexpr double kLatentGrid = 0x1p-30;
Mat snap_to_grid(const Mat& x);

void ema_update(Codebook& codebook, const Mat& latents, std::span<const int> codes, double decay);
// Entries with usage < threshold are replaced by uniformly sampled rows of
// batch_latents and their EMA state reset. Returns the number replaced.
int reinit_dead_codes(Codebook& codebook, const Mat& batch_latents, double threshold, std::mt19937_64& rng);

struct MotionTokens {
  CodeMatrix codes;  // S x L
  double fps_latent = 0;
  Vec3 root_start = Vec3::Zero();
  int pad = 0;  // frames appended before encoding, stripped on decode
};

struct RvqTrainLog {
  struct Row {
    int step;
    double rec;
    double commit;
    std::vector<double> usage_entropy;
  };
  std::vector<Row> rows;

  std::string to_csv() const;
};

class RvqModel {
 public:
  RvqModel() = default;
  RvqModel(RvqConfig config, FeatureLayout layout, NormStats norm, double fps, std::uint64_t seed);

  const RvqConfig& config() const { return config_; }
  const FeatureLayout& layout() const { return layout_; }
  const NormStats& norm() const { return norm_; }
  double fps() const { return fps_; }
  std::vector<Codebook>& codebooks() { return codebooks_; }
  const std::vector<Codebook>& codebooks() const { return codebooks_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  // Skeleton and reference root used by detokenize when rebuilding clips.
  std::optional<Skeleton> skeleton;
  Vec3 reference_root = Vec3::Zero();
  std::string config_hash;

  // Normalized features (T x D, T divisible by downsample) -> S x C.
  Mat encode(const Mat& features) const;
  // S x C -> (S * downsample) x D normalized features.
  Mat decode(const Mat& quantized) const;

  ad::Var encode_graph(const ad::Var& x) const;
  ad::Var decode_graph(const ad::Var& z) const;

  void zero_parameters();

  nlohmann::json to_json() const;
  static RvqModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static RvqModel load(const std::string& path);

 private:
  void build(std::uint64_t seed);

  RvqConfig config_;
  FeatureLayout layout_;
  NormStats norm_;
  double fps_ = 30.0;
  nn::ParamSet params_;
  std::vector<Codebook> codebooks_;

  struct Encoder {
    nn::Conv1d in;
    std::vector<nn::Conv1d> down;
    nn::Linear to_latent;
    std::vector<nn::TransformerBlock> blocks;
    nn::Linear out;
  } enc_;
  struct Decoder {
    nn::Linear in;
    std::vector<nn::TransformerBlock> blocks;
    nn::Linear to_hidden;
    std::vector<nn::Conv1d> up;
    nn::Conv1d out;
  } dec_;
};

RvqModel train_rvq(const std::vector<FeatureSequence>& corpus, const RvqConfig& config, std::uint64_t seed,
                   RvqTrainLog* log = nullptr);

// Mean squared error of the normalized reconstruction using the first
// `levels` codebooks (all when levels <= 0).
double reconstruction_mse(const RvqModel& model, const std::vector<FeatureSequence>& corpus, int levels = 0);

// Right-pads by repeating the last row up to a multiple of `multiple`.
Mat pad_to_multiple(const Mat& data, int multiple, int* pad_out = nullptr);

MotionTokens tokenize(const RvqModel& model, const MotionClip& clip);
MotionClip detokenize(const RvqModel& model, const MotionTokens& tokens);

}  // namespace gest
