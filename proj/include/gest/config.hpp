#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gest/audio.hpp"
#include "gest/metrics.hpp"
#include "gest/motion_features.hpp"
#include "gest/rvq.hpp"
#include "gest/seq_lm.hpp"
#include "gest/synth.hpp"

namespace gest {

// Every tunable of a run. Text form is one `key = value` per line; `#` starts
// a comment. Unknown keys and malformed values are rejected.
struct RunConfig {
  std::uint64_t seed = 0;

  double motion_fps = 30.0;
  FootContactParams feet;

  RvqConfig rvq;

  MfccConfig mfcc;
  AudioVqConfig audio_vq;
  bool audio_resample = false;

  LmConfig lm;
  double sft_learning_rate = 5e-4;
  int sft_epochs = 3;
  bool pretrain_audio_completion = true;
  bool prompt_speaker = false;           // prefix prompts with "<speaker>: "
  std::string sampling_mode = "greedy";  // greedy | topk
  int top_k = 8;
  double temperature = 0.9;
  double max_len_factor = 1.2;

  double beat_sigma = 0.1;
  int fgd_window = 30;
  int fgd_stride = 30;
  int ae_train_stride = 5;
  FeatureAeConfig ae;

  SynthConfig synth;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  void validate() const;
  // Sorted `key = value` lines of every setting.
  std::string resolved() const;
  // 16 hex digits of FNV-1a over resolved().
  std::string hash() const;

  LmConfig sft_lm() const;
  Sampling sampling() const;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
};

std::string fnv1a_hex(const std::string& text);

}  // namespace gest
