#include "gest/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <variant>

#include "gest/error.hpp"

namespace gest {

namespace {

using FieldPtr = std::variant<int*, double*, bool*, std::uint64_t*, std::string*, std::vector<std::string>*>;

std::map<std::string, FieldPtr> fields(RunConfig& c) {
  return {
      {"seed", &c.seed},
      {"motion.fps", &c.motion_fps},
      {"motion.foot_height", &c.feet.height_threshold},
      {"motion.foot_speed", &c.feet.speed_threshold},
      {"motion.foot_blend", &c.feet.blend_window},
      {"motion.foot_names", &c.feet.foot_names},
      {"motion.up_axis", &c.feet.up_axis},
      {"rvq.codebook_size", &c.rvq.codebook_size},
      {"rvq.latent_channels", &c.rvq.latent_channels},
      {"rvq.hidden_channels", &c.rvq.hidden_channels},
      {"rvq.depth", &c.rvq.depth},
      {"rvq.downsample", &c.rvq.downsample},
      {"rvq.attn_layers", &c.rvq.attn_layers},
      {"rvq.attn_heads", &c.rvq.attn_heads},
      {"rvq.beta", &c.rvq.beta},
      {"rvq.ema_decay", &c.rvq.ema_decay},
      {"rvq.dead_threshold", &c.rvq.dead_threshold},
      {"rvq.dead_window", &c.rvq.dead_window},
      {"rvq.learning_rate", &c.rvq.learning_rate},
      {"rvq.weight_decay", &c.rvq.weight_decay},
      {"rvq.warmup_steps", &c.rvq.warmup_steps},
      {"rvq.total_steps", &c.rvq.total_steps},
      {"rvq.batch_sequences", &c.rvq.batch_sequences},
      {"rvq.batch_frames", &c.rvq.batch_frames},
      {"rvq.grad_clip", &c.rvq.grad_clip},
      {"audio.sample_rate", &c.mfcc.sample_rate},
      {"audio.frame_ms", &c.mfcc.frame_ms},
      {"audio.hop_ms", &c.mfcc.hop_ms},
      {"audio.n_mels", &c.mfcc.n_mels},
      {"audio.n_coeffs", &c.mfcc.n_coeffs},
      {"audio.pre_emphasis", &c.mfcc.pre_emphasis},
      {"audio.resample", &c.audio_resample},
      {"audio.codebook_size", &c.audio_vq.codebook_size},
      {"audio.depth", &c.audio_vq.depth},
      {"audio.steps", &c.audio_vq.steps},
      {"audio.batch_frames", &c.audio_vq.batch_frames},
      {"audio.ema_decay", &c.audio_vq.ema_decay},
      {"audio.dead_threshold", &c.audio_vq.dead_threshold},
      {"audio.dead_window", &c.audio_vq.dead_window},
      {"lm.layers", &c.lm.layers},
      {"lm.heads", &c.lm.heads},
      {"lm.width", &c.lm.width},
      {"lm.context", &c.lm.context},
      {"lm.mlp_ratio", &c.lm.mlp_ratio},
      {"lm.learning_rate", &c.lm.learning_rate},
      {"lm.weight_decay", &c.lm.weight_decay},
      {"lm.epochs", &c.lm.epochs},
      {"lm.batch_size", &c.lm.batch_size},
      {"lm.warmup_fraction", &c.lm.warmup_fraction},
      {"lm.grad_clip", &c.lm.grad_clip},
      {"lm.sft_learning_rate", &c.sft_learning_rate},
      {"lm.sft_epochs", &c.sft_epochs},
      {"lm.pretrain_audio_completion", &c.pretrain_audio_completion},
      {"lm.prompt_speaker", &c.prompt_speaker},
      {"lm.sampling", &c.sampling_mode},
      {"lm.top_k", &c.top_k},
      {"lm.temperature", &c.temperature},
      {"lm.max_len_factor", &c.max_len_factor},
      {"metrics.beat_sigma", &c.beat_sigma},
      {"metrics.fgd_window", &c.fgd_window},
      {"metrics.fgd_stride", &c.fgd_stride},
      {"metrics.ae_train_stride", &c.ae_train_stride},
      {"metrics.ae_latent", &c.ae.latent},
      {"metrics.ae_hidden", &c.ae.hidden},
      {"metrics.ae_steps", &c.ae.steps},
      {"metrics.ae_batch", &c.ae.batch},
      {"metrics.ae_learning_rate", &c.ae.learning_rate},
      {"synth.clips", &c.synth.clips},
      {"synth.seconds", &c.synth.seconds},
      {"synth.fps", &c.synth.fps},
      {"synth.sample_rate", &c.synth.sample_rate},
      {"synth.period_min", &c.synth.period_min},
      {"synth.period_max", &c.synth.period_max},
      {"synth.large_amplitude", &c.synth.large_amplitude},
      {"synth.small_amplitude", &c.synth.small_amplitude},
      {"synth.test_clips", &c.synth.test_clips},
      {"synth.speakers", &c.synth.speakers},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  require(r.ec == std::errc() && r.ptr == end, "config", "invalid value '" + v + "' for " + key);
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest text that reads back to the same value.
  for (int p = 1; p <= 17; ++p) {
    char shortbuf[64];
    std::snprintf(shortbuf, sizeof shortbuf, "%.*g", p, v);
    if (std::strtod(shortbuf, nullptr) == v) return shortbuf;
  }
  return buf;
}

}  // namespace

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  auto f = fields(*this);
  const auto it = f.find(key);
  require(it != f.end(), "config", "unknown config key '" + key + "'");
  const std::string v = trim(raw);
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, int>) {
          *p = parse_number<int>(key, v);
        } else if constexpr (std::is_same_v<T, double>) {
          *p = parse_number<double>(key, v);
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          *p = parse_number<std::uint64_t>(key, v);
        } else if constexpr (std::is_same_v<T, bool>) {
          require(v == "true" || v == "false", "config", "expected true or false for " + key);
          *p = v == "true";
        } else if constexpr (std::is_same_v<T, std::string>) {
          *p = v;
        } else {
          p->clear();
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) p->push_back(item);
          }
        }
      },
      it->second);
}

std::string RunConfig::get(const std::string& key) const {
  auto f = fields(const_cast<RunConfig&>(*this));
  const auto it = f.find(key);
  require(it != f.end(), "config", "unknown config key '" + key + "'");
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          return format_double(*p);
        } else if constexpr (std::is_same_v<T, bool>) {
          return *p ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          return *p;
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
          std::string out;
          for (std::size_t i = 0; i < p->size(); ++i) out += (i ? "," : "") + (*p)[i];
          return out;
        } else {
          return std::to_string(*p);
        }
      },
      it->second);
}

std::vector<std::string> RunConfig::keys() {
  RunConfig c;
  std::vector<std::string> out;
  for (const auto& [k, _] : fields(c)) out.push_back(k);
  return out;
}

void RunConfig::validate() const {
  require(motion_fps > 0, "config", "motion.fps must be positive");
  feet.validate();
  rvq.validate();
  mfcc.validate();
  audio_vq.validate();
  lm.validate();
  sft_lm().validate();
  require(sampling_mode == "greedy" || sampling_mode == "topk", "config", "lm.sampling must be greedy or topk");
  require(top_k >= 1 && temperature > 0, "config", "lm.top_k and lm.temperature must be positive");
  require(max_len_factor > 0, "config", "lm.max_len_factor must be positive");
  require(beat_sigma > 0, "config", "metrics.beat_sigma must be positive");
  require(fgd_window >= 1 && fgd_stride >= 1 && ae_train_stride >= 1, "config",
          "metrics windows and strides must be positive");
  ae.validate();
  synth.validate();
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const auto& k : keys()) out += k + " = " + get(k) + "\n";
  return out;
}

std::string RunConfig::hash() const { return fnv1a_hex(resolved()); }

LmConfig RunConfig::sft_lm() const {
  LmConfig c = lm;
  c.learning_rate = sft_learning_rate;
  c.epochs = sft_epochs;
  return c;
}

Sampling RunConfig::sampling() const {
  Sampling s;
  s.mode = sampling_mode == "topk" ? Sampling::Mode::TopK : Sampling::Mode::Greedy;
  s.k = top_k;
  s.temperature = temperature;
  return s;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key = value");
    try {
      c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw Error("config", "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "io", "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace gest
