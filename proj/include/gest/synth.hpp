#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gest/audio.hpp"
#include "gest/motion_io.hpp"

namespace gest {

struct SynthConfig {
  int clips = 10;
  double seconds = 8.0;
  double fps = 30.0;
  double sample_rate = 16000.0;
  double period_min = 0.8;  // seconds per full oscillation
  double period_max = 1.2;
  double large_amplitude = 60.0;  // degrees
  double small_amplitude = 20.0;
  int test_clips = 2;
  int speakers = 2;

  void validate() const;
};

// One procedurally generated clip. The active arm follows A sin^2(pi t / P),
// which pauses every P/2; the click track has a click at each pause.
struct SynthSample {
  std::string id;
  MotionClip clip;
  Waveform audio;
  std::string prompt;
  std::string speaker;
  bool large = false;
  double period = 1.0;
  std::string split;
};

Skeleton synth_skeleton();
// Deterministic in (config, seed, index).
SynthSample synth_sample(const SynthConfig& config, std::uint64_t seed, int index);
// Arm-raise clip for a given amplitude, hand ("left", "right", "both") and period.
MotionClip synth_clip(double seconds, double fps, double amplitude, const std::string& hand, double period);
Waveform click_track(double seconds, double sample_rate, double period_between_clicks, double first_click,
                     std::uint64_t noise_seed);

struct ManifestEntry {
  std::string id;
  std::string bvh_path;
  std::string wav_path;
  std::optional<std::string> prompt;
  std::optional<std::string> speaker;
  std::string split = "train";
};

// JSONL; relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// Writes <dir>/<id>.bvh, <dir>/<id>.wav and <dir>/manifest.jsonl.
std::vector<ManifestEntry> write_synth_corpus(const std::string& dir, const SynthConfig& config, std::uint64_t seed);

}  // namespace gest
