#include "gest/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gest/error.hpp"

namespace gest {

namespace fs = std::filesystem;

namespace {

using CK = ChannelKind;

const std::vector<CK> kRot{CK::Zrotation, CK::Xrotation, CK::Yrotation};

struct JointSpec {
  const char* name;
  const char* parent;
  Vec3 offset;
  bool end = false;
};

}  // namespace

void SynthConfig::validate() const {
  require(clips >= 1 && seconds >= 1.0 && fps > 0 && sample_rate >= 8000, "config", "invalid synth corpus size");
  require(period_min > 0 && period_max >= period_min, "config", "synth period range is invalid");
  require(large_amplitude > small_amplitude && small_amplitude > 0, "config",
          "synth large amplitude must exceed the small one");
  require(test_clips >= 0 && test_clips < clips, "config", "synth test_clips must leave training clips");
  require(speakers >= 1, "config", "synth needs at least one speaker");
}

Skeleton synth_skeleton() {
  const std::vector<JointSpec> specs{
      {"Hips", nullptr, {0, 0, 0}},
      {"Spine", "Hips", {0, 10, 0}},
      {"Chest", "Spine", {0, 20, 0}},
      {"Neck", "Chest", {0, 20, 0}},
      {"Head", "Neck", {0, 10, 0}},
      {"Head_End", "Head", {0, 15, 0}, true},
      {"LeftArm", "Chest", {15, 15, 0}},
      {"LeftForeArm", "LeftArm", {28, 0, 0}},
      {"LeftHand", "LeftForeArm", {25, 0, 0}},
      {"LeftHand_End", "LeftHand", {10, 0, 0}, true},
      {"RightArm", "Chest", {-15, 15, 0}},
      {"RightForeArm", "RightArm", {-28, 0, 0}},
      {"RightHand", "RightForeArm", {-25, 0, 0}},
      {"RightHand_End", "RightHand", {-10, 0, 0}, true},
      {"LeftUpLeg", "Hips", {9, 0, 0}},
      {"LeftLeg", "LeftUpLeg", {0, -45, 0}},
      {"LeftFoot", "LeftLeg", {0, -42, 0}},
      {"LeftFoot_End", "LeftFoot", {0, -5, 12}, true},
      {"RightUpLeg", "Hips", {-9, 0, 0}},
      {"RightLeg", "RightUpLeg", {0, -45, 0}},
      {"RightFoot", "RightLeg", {0, -42, 0}},
      {"RightFoot_End", "RightFoot", {0, -5, 12}, true},
  };
  std::vector<Joint> joints;
  for (const auto& s : specs) {
    Joint j;
    j.name = s.name;
    j.offset = s.offset;
    j.end_site = s.end;
    if (s.parent) {
      for (std::size_t i = 0; i < joints.size(); ++i) {
        if (joints[i].name == s.parent) j.parent = static_cast<int>(i);
      }
      if (!s.end) j.channels = kRot;
    } else {
      j.channels = {CK::Xposition, CK::Yposition, CK::Zposition, CK::Zrotation, CK::Xrotation, CK::Yrotation};
    }
    joints.push_back(std::move(j));
  }
  return Skeleton(std::move(joints));
}

MotionClip synth_clip(double seconds, double fps, double amplitude, const std::string& hand, double period) {
  require(hand == "left" || hand == "right" || hand == "both", "invalid_argument", "unknown hand '" + hand + "'");
  MotionClip clip;
  clip.skeleton = synth_skeleton();
  clip.fps = fps;
  const auto& sk = clip.skeleton;
  const auto idx = [&](const char* name) { return static_cast<std::size_t>(*sk.find(name)); };
  const std::array<Axis, 3> zxy{Axis::Z, Axis::X, Axis::Y};
  const bool left = hand != "right";
  const bool right = hand != "left";
  const int frames = static_cast<int>(std::lround(seconds * fps)) + 1;
  for (int f = 0; f < frames; ++f) {
    const double t = f / fps;
    const double s = std::sin(std::numbers::pi * t / period);
    const double phase = s * s;
    Frame fr = rest_frame(sk);
    fr.root_translation() = Vec3(0.0, 95.0, 0.0);
    fr.rotations[idx("Spine")] = euler_to_quat({0.0, 0.0, 0.08 * amplitude * phase}, zxy);
    fr.rotations[idx("Head")] = euler_to_quat({0.0, 0.05 * amplitude * phase, 0.0}, zxy);
    if (left) {
      fr.rotations[idx("LeftArm")] = euler_to_quat({amplitude * phase - 60.0, 0.0, 0.0}, zxy);
      fr.rotations[idx("LeftForeArm")] = euler_to_quat({0.5 * amplitude * phase, 0.0, 0.0}, zxy);
    } else {
      fr.rotations[idx("LeftArm")] = euler_to_quat({-60.0, 0.0, 0.0}, zxy);
    }
    if (right) {
      fr.rotations[idx("RightArm")] = euler_to_quat({60.0 - amplitude * phase, 0.0, 0.0}, zxy);
      fr.rotations[idx("RightForeArm")] = euler_to_quat({-0.5 * amplitude * phase, 0.0, 0.0}, zxy);
    } else {
      fr.rotations[idx("RightArm")] = euler_to_quat({60.0, 0.0, 0.0}, zxy);
    }
    clip.frames.push_back(std::move(fr));
  }
  return clip;
}

Waveform click_track(double seconds, double sample_rate, double period_between_clicks, double first_click,
                     std::uint64_t noise_seed) {
  require(period_between_clicks > 0, "invalid_argument", "click period must be positive");
  Waveform w;
  w.sample_rate = sample_rate;
  const auto n = static_cast<std::size_t>(std::lround(seconds * sample_rate));
  w.samples.assign(n, 0.0);
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, 0.005);
  for (auto& v : w.samples) v = noise(rng);
  const auto burst = static_cast<std::size_t>(0.01 * sample_rate);
  for (double c = first_click; c < seconds; c += period_between_clicks) {
    const auto start = static_cast<std::size_t>(std::lround(c * sample_rate));
    for (std::size_t i = 0; i < burst && start + i < n; ++i) {
      const double t = i / sample_rate;
      w.samples[start + i] += 0.8 * std::exp(-t / 0.003) * std::sin(2.0 * std::numbers::pi * 1000.0 * t);
    }
  }
  for (auto& v : w.samples) v = std::clamp(v, -1.0, 1.0);
  return w;
}

SynthSample synth_sample(const SynthConfig& config, std::uint64_t seed, int index) {
  config.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> period_dist(config.period_min, config.period_max);
  static const char* kHands[] = {"left", "right", "both"};

  SynthSample s;
  char id[32];
  std::snprintf(id, sizeof id, "clip%03d", index);
  s.id = id;
  s.period = period_dist(rng);
  s.large = index % 2 == 0;
  const std::string hand = kHands[(index / 2) % 3];
  const double amplitude = s.large ? config.large_amplitude : config.small_amplitude;
  s.clip = synth_clip(config.seconds, config.fps, amplitude, hand, s.period);
  s.audio = click_track(config.seconds, config.sample_rate, s.period / 2.0, 0.0, rng());
  s.prompt = std::string(s.large ? "large" : "small") + " gestures with " +
             (hand == "both" ? std::string("both hands") : "the " + hand + " hand");
  s.speaker = "speaker" + std::to_string(index % config.speakers);
  s.split = index >= config.clips - config.test_clips ? "test" : "train";
  return s;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "io", "cannot open manifest '" + path + "'");
  const fs::path dir = fs::path(path).parent_path();
  const auto resolve = [&](const std::string& p) {
    const fs::path fp(p);
    return (fp.is_absolute() ? fp : dir / fp).lexically_normal().string();
  };
  std::vector<ManifestEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.bvh_path = resolve(j.at("bvh_path").get<std::string>());
      e.wav_path = resolve(j.at("wav_path").get<std::string>());
      if (j.contains("prompt") && !j["prompt"].is_null()) e.prompt = j["prompt"].get<std::string>();
      if (j.contains("speaker") && !j["speaker"].is_null()) e.speaker = j["speaker"].get<std::string>();
      e.split = j.at("split").get<std::string>();
      require(e.split == "train" || e.split == "test", "format", "split must be train or test");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(line_no, std::string("manifest: ") + ex.what());
    } catch (const Error& ex) {
      throw ParseError(line_no, std::string("manifest: ") + ex.what());
    }
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "io", "cannot write manifest '" + path + "'");
  for (const auto& e : entries) {
    nlohmann::json j{{"id", e.id}, {"bvh_path", e.bvh_path}, {"wav_path", e.wav_path}};
    j["prompt"] = e.prompt ? nlohmann::json(*e.prompt) : nlohmann::json(nullptr);
    j["speaker"] = e.speaker ? nlohmann::json(*e.speaker) : nlohmann::json(nullptr);
    j["split"] = e.split;
    out << j.dump() << "\n";
  }
}

std::vector<ManifestEntry> write_synth_corpus(const std::string& dir, const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < config.clips; ++i) {
    const SynthSample s = synth_sample(config, seed, i);
    write_bvh_file((fs::path(dir) / (s.id + ".bvh")).string(), s.clip);
    write_wav((fs::path(dir) / (s.id + ".wav")).string(), s.audio);
    entries.push_back({s.id, s.id + ".bvh", s.id + ".wav", s.prompt, s.speaker, s.split});
  }
  write_manifest((fs::path(dir) / "manifest.jsonl").string(), entries);
  return entries;
}

}  // namespace gest
