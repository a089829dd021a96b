#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "gest/pipeline.hpp"

namespace gest::testing {

// Small enough to run the whole pipeline in seconds.
inline const char* kTinyConfig = R"(seed = 3
synth.clips = 10
synth.seconds = 6
synth.test_clips = 2
rvq.codebook_size = 16
rvq.latent_channels = 16
rvq.hidden_channels = 16
rvq.depth = 2
rvq.downsample = 4
rvq.attn_layers = 1
rvq.attn_heads = 2
rvq.total_steps = 100
rvq.batch_sequences = 4
rvq.batch_frames = 32
rvq.learning_rate = 2e-3
audio.codebook_size = 8
audio.depth = 1
audio.steps = 50
lm.layers = 1
lm.heads = 2
lm.width = 32
lm.context = 512
lm.epochs = 1
lm.sft_epochs = 1
metrics.ae_steps = 100
)";

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ToyRun {
  RunConfig config;
  std::string dir;
  std::string manifest;
  std::string rvq;
  std::string audio;
  std::string tokens;
  std::string pretrain;
  std::string sft;
};

// synth -> train-rvq -> train-audio-vq -> tokenize -> pretrain -> sft.
inline ToyRun run_toy_pipeline(const std::string& dir, const std::string& config_text = kTinyConfig) {
  ToyRun r;
  r.config = RunConfig::parse(config_text);
  r.dir = dir;
  const std::string corpus = dir + "/corpus";
  r.manifest = corpus + "/manifest.jsonl";
  r.rvq = dir + "/rvq.json";
  r.audio = dir + "/audio.json";
  r.tokens = dir + "/tokens.jsonl";
  r.pretrain = dir + "/pretrain.json";
  r.sft = dir + "/sft.json";
  cmd_synth(r.config, corpus);
  cmd_train_rvq(r.config, r.manifest, r.rvq);
  cmd_train_audio_vq(r.config, r.manifest, r.audio);
  cmd_tokenize(r.config, r.manifest, r.rvq, r.audio, "", r.tokens);
  cmd_train_lm(r.config, r.tokens, Stage::Pretrain, "", false, r.pretrain);
  cmd_train_lm(r.config, r.tokens, Stage::Sft, r.pretrain, false, r.sft);
  return r;
}

}  // namespace gest::testing
