#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gest/nn.hpp"
#include "gest/types.hpp"

namespace gest {

enum class Task { MotionCompletion, AudioCompletion, AudioToMotion, TextAudioToMotion };
enum class Stage { Pretrain, Sft };

const char* task_name(Task t);
const char* stage_name(Stage s);
Stage parse_stage(const std::string& s);

// Unified vocabulary: [text bytes][audio codes][motion codes][control].
// Level l code k of a modality maps to base + l * K + k.
struct VocabLayout {
  int text_size = 256;
  int audio_codebook = 64;
  int audio_levels = 2;
  int motion_codebook = 64;
  int motion_levels = 4;

  enum Control { BOS = 0, EOS, SEP_AUDIO, SEP_TEXT, SEP_MOTION, PAD, kControlCount };

  int text_base() const { return 0; }
  int audio_base() const { return text_size; }
  int motion_base() const { return audio_base() + audio_codebook * audio_levels; }
  int control_base() const { return motion_base() + motion_codebook * motion_levels; }
  int total() const { return control_base() + kControlCount; }
  int control(Control c) const { return control_base() + static_cast<int>(c); }

  int audio_id(int level, int code) const { return audio_base() + level * audio_codebook + code; }
  int motion_id(int level, int code) const { return motion_base() + level * motion_codebook + code; }
  bool is_text(int id) const { return id >= text_base() && id < audio_base(); }
  bool is_audio(int id) const { return id >= audio_base() && id < motion_base(); }
  bool is_motion(int id) const { return id >= motion_base() && id < control_base(); }

  void validate() const;
  nlohmann::json to_json() const;
  static VocabLayout from_json(const nlohmann::json& j);
  bool operator==(const VocabLayout&) const = default;
};

struct TrainingExample {
  Task task = Task::AudioToMotion;
  std::vector<int> ids;
  // mask[i] selects the prediction of ids[i] from ids[0..i-1]; mask[0] is 0.
  std::vector<unsigned char> loss_mask;
};

// Layout: [BOS][SEP_TEXT text]?[SEP_AUDIO audio]?[SEP_MOTION motion]?[EOS],
// code matrices flattened time-major, level-minor. Audio completion carries no
// motion section and motion completion no audio section. context == 0
// disables the length check.
TrainingExample serialize_example(const VocabLayout& vocab, Task task, const CodeMatrix* audio,
                                  const std::string* text, const CodeMatrix* motion, std::size_t context = 0);

struct DecodedExample {
  Task task = Task::AudioToMotion;
  std::optional<std::string> text;
  std::optional<CodeMatrix> audio;
  std::optional<CodeMatrix> motion;
};

DecodedExample deserialize_example(const VocabLayout& vocab, const std::vector<int>& ids);

// Mean over masked positions of -log softmax(logits[i])[targets[i]].
double nll_loss(const Mat& logits, const std::vector<int>& targets, const std::vector<unsigned char>& mask);

struct LmConfig {
  int layers = 4;
  int heads = 4;
  int width = 128;
  int context = 1024;
  int mlp_ratio = 4;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  int epochs = 3;
  int batch_size = 4;
  double warmup_fraction = 0.05;
  double grad_clip = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static LmConfig from_json(const nlohmann::json& j);
};

class LmModel {
 public:
  LmModel() = default;
  LmModel(VocabLayout vocab, LmConfig config, std::uint64_t seed);

  const VocabLayout& vocab() const { return vocab_; }
  const LmConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  Stage stage = Stage::Pretrain;
  std::string config_hash;

  // n x vocab logits for an input of n ids.
  ad::Var logits_graph(const std::vector<int>& ids) const;
  Mat logits(const std::vector<int>& ids) const;
  // Logits of the final position only.
  Eigen::RowVectorXd next_logits(const std::vector<int>& ids) const;

  nlohmann::json to_json() const;
  static LmModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static LmModel load(const std::string& path);

 private:
  ad::Var hidden_graph(const std::vector<int>& ids) const;

  VocabLayout vocab_;
  LmConfig config_;
  nn::ParamSet params_;
  ad::Var tok_emb_;
  ad::Var pos_emb_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_f_;
  nn::Linear head_;
};

struct LmTrainLog {
  double initial_loss = 0;
  std::vector<double> epoch_loss;
};

// Mean masked NLL of one example under teacher forcing.
ad::Var example_loss(const LmModel& model, const TrainingExample& ex);
// Token-weighted mean NLL over all masked positions of all examples.
double evaluate_nll(const LmModel& model, const std::vector<TrainingExample>& examples);

// Teacher-forced training. SFT requires `init` (a pretrained model) unless
// allow_scratch_sft is set, which reproduces the no-pretraining ablation.
LmModel train_lm(const std::vector<TrainingExample>& examples, Stage stage, const VocabLayout& vocab,
                 const LmConfig& config, std::uint64_t seed, const LmModel* init = nullptr,
                 LmTrainLog* log = nullptr, bool allow_scratch_sft = false);

struct Sampling {
  enum class Mode { Greedy, TopK } mode = Mode::Greedy;
  int k = 8;
  double temperature = 0.9;
};

// Decodes motion ids after SEP_MOTION until EOS or max_len ids. Only ids of
// the level due next (and EOS at timestep boundaries after the first) are
// allowed, so every output code is in range.
CodeMatrix generate(const LmModel& model, const CodeMatrix& audio, const std::string* text, const Sampling& sampling,
                    std::uint64_t seed, int max_len);

}  // namespace gest
