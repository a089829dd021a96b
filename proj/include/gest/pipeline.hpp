#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gest/config.hpp"
#include "gest/metrics.hpp"
#include "gest/seq_lm.hpp"

namespace gest {

// One clip of a tokens file.
struct TokenRecord {
  std::string id;
  std::string split;
  std::optional<std::string> prompt;
  std::optional<std::string> speaker;
  std::string config_hash;
  MotionTokens motion;
  int motion_codebook = 0;
  AudioTokens audio;
  int audio_codebook = 0;

  nlohmann::json to_json() const;
  static TokenRecord from_json(const nlohmann::json& j);
};

std::vector<TokenRecord> read_tokens(const std::string& path);
void write_tokens(const std::string& path, const std::vector<TokenRecord>& records);

VocabLayout vocab_for(const std::vector<TokenRecord>& records);
// Text used for a record's prompt, optionally prefixed with the speaker.
std::optional<std::string> prompt_text(const RunConfig& config, const TokenRecord& r);

// Pretrain: per clip motion completion, audio-to-motion and (optionally)
// audio completion. SFT: text+audio-to-motion when a prompt exists, else
// audio-to-motion.
std::vector<TrainingExample> build_examples(const RunConfig& config, const std::vector<TokenRecord>& records,
                                            Stage stage, const std::string& split);

// Exclusive `<path>.lock` for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const std::string& path);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::string lock_path_;
};

MotionClip load_clip(const std::string& path, double fps);

void cmd_synth(const RunConfig& config, const std::string& out_dir);
void cmd_train_rvq(const RunConfig& config, const std::string& manifest, const std::string& out);
void cmd_train_audio_vq(const RunConfig& config, const std::string& manifest, const std::string& out);
// Either audio_model or audio_tokens_jsonl supplies the audio codes.
void cmd_tokenize(const RunConfig& config, const std::string& manifest, const std::string& rvq_model,
                  const std::string& audio_model, const std::string& audio_tokens_jsonl, const std::string& out);
LmTrainLog cmd_train_lm(const RunConfig& config, const std::string& tokens, Stage stage, const std::string& init,
                        bool from_scratch, const std::string& out);

struct GenerateOptions {
  std::string lm_model;
  std::string rvq_model;
  std::string audio_model;
  std::string wav;
  std::optional<std::string> prompt;
  std::string out;
  bool fix_feet = true;
};
void cmd_generate(const RunConfig& config, const GenerateOptions& opts);

struct EvaluateOptions {
  std::string manifest;
  std::string generated_dir;
  std::string ae_model;      // load when set
  std::string ae_out;        // save the trained autoencoder when set
  std::string out;           // report JSON; the table goes to <out>.txt
  bool force = false;
};
EvalReport cmd_evaluate(const RunConfig& config, const EvaluateOptions& opts);

}  // namespace gest
