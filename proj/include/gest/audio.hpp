#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gest/rvq.hpp"
#include "gest/types.hpp"

namespace gest {

struct Waveform {
  std::vector<double> samples;  // mono, [-1, 1]
  double sample_rate = 16000.0;

  double duration() const { return samples.size() / sample_rate; }
};

// RIFF PCM 16-bit; multi-channel input is downmixed by averaging.
Waveform read_wav(const std::string& path);
Waveform parse_wav(const std::vector<std::uint8_t>& bytes);
void write_wav(const std::string& path, const Waveform& wav);

Waveform resample_linear(const Waveform& wav, double target_rate);

struct MfccConfig {
  double sample_rate = 16000.0;
  double frame_ms = 40.0;
  double hop_ms = 20.0;
  int n_mels = 40;
  int n_coeffs = 13;
  double pre_emphasis = 0.97;

  int frame_length() const;
  int hop_length() const;
  double frame_rate() const { return 1000.0 / hop_ms; }
  void validate() const;
  nlohmann::json to_json() const;
  static MfccConfig from_json(const nlohmann::json& j);
};

// Frame t starts at sample t * hop; the final partial frames are zero padded
// so the frame count is floor(samples / hop).
int frame_count(std::size_t samples, const MfccConfig& cfg);

// frames x n_mels log mel magnitudes (log floor at 1e-10).
Mat log_mel_spectrogram(const Waveform& wav, const MfccConfig& cfg);
// frames x n_coeffs
Mat extract_mfcc(const Waveform& wav, const MfccConfig& cfg);

struct AudioVqConfig {
  int codebook_size = 64;
  int depth = 2;
  int steps = 500;
  int batch_frames = 256;
  double ema_decay = 0.99;
  double dead_threshold = 1.0;
  int dead_window = 50;

  void validate() const;
};

class AudioVqModel {
 public:
  MfccConfig mfcc;
  AudioVqConfig config;
  NormStats norm;
  std::vector<Codebook> codebooks;
  std::string config_hash;

  int codebook_size() const { return config.codebook_size; }
  int depth() const { return static_cast<int>(codebooks.size()); }

  nlohmann::json to_json() const;
  static AudioVqModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static AudioVqModel load(const std::string& path);
};

// Per-frame residual quantization of normalized MFCC frames (no temporal
// downsampling, identity encoder/decoder).
AudioVqModel train_audio_vq(const std::vector<Mat>& frames, const MfccConfig& mfcc, const AudioVqConfig& config,
                            std::uint64_t seed);
// Mean squared error in normalized MFCC space using the first `levels` codebooks.
double audio_vq_mse(const AudioVqModel& model, const std::vector<Mat>& frames, int levels = 0);

struct AudioTokens {
  std::string id;
  CodeMatrix codes;  // frames x levels
  double frame_rate = 50.0;
};

AudioTokens tokenize_audio(const AudioVqModel& model, const Waveform& wav, bool allow_resample = false);

std::string audio_tokens_to_jsonl(const std::vector<AudioTokens>& tokens);
std::vector<AudioTokens> audio_tokens_from_jsonl(const std::string& text);
nlohmann::json audio_tokens_to_json(const AudioTokens& t);
AudioTokens audio_tokens_from_json(const nlohmann::json& j);

struct BeatList {
  std::vector<double> times;  // seconds, strictly increasing
};

// Picks peaks of a smoothed curve above `threshold`, plateau-centred, at
// least `min_gap` frames apart (stronger peaks first). Used for both audio
// onsets and (negated) motion speed.
std::vector<int> pick_peaks(const std::vector<double>& curve, double threshold, int min_gap);
std::vector<double> moving_average3(const std::vector<double>& v);

BeatList detect_beats(const Waveform& wav, const MfccConfig& cfg = {});

}  // namespace gest
