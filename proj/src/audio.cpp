#include "gest/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <sstream>

#include <unsupported/Eigen/FFT>

#include "gest/archive.hpp"
#include "gest/error.hpp"

namespace gest {

namespace {

constexpr double kLogFloor = 1e-10;
constexpr const char* kFormat = "audio-vq-v1";

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

int next_pow2(int v) {
  int n = 1;
  while (n < v) n <<= 1;
  return n;
}

Mat mel_filterbank(int n_mels, int nfft, double sample_rate) {
  const int bins = nfft / 2 + 1;
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(mel_hi * i / (n_mels + 1));
  Mat fb = Mat::Zero(bins, n_mels);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = k * sample_rate / nfft;
      const double w = std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid));
      fb(k, m) = std::max(0.0, w);
    }
  }
  return fb;
}

Mat dct2_ortho(int n_in, int n_out) {
  Mat d(n_in, n_out);
  for (int k = 0; k < n_out; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n_in) : std::sqrt(2.0 / n_in);
    for (int n = 0; n < n_in; ++n) d(n, k) = s * std::cos(std::numbers::pi * k * (n + 0.5) / n_in);
  }
  return d;
}

Mat normalize_rows(const Mat& x, const NormStats& norm) {
  return ((x.rowwise() - norm.mean.transpose()).array().rowwise() / norm.std.transpose().array()).matrix();
}

}  // namespace

Waveform parse_wav(const std::vector<std::uint8_t>& b) {
  require(b.size() >= 12 && std::memcmp(b.data(), "RIFF", 4) == 0 && std::memcmp(b.data() + 8, "WAVE", 4) == 0,
          "format", "not a RIFF/WAVE file");
  std::size_t pos = 12;
  int channels = 0;
  int bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= b.size()) {
    const std::uint32_t size = read_u32(b.data() + pos + 4);
    const std::uint8_t* body = b.data() + pos + 8;
    require(pos + 8 + size <= b.size(), "format", "truncated WAV chunk");
    if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
      require(size >= 16, "format", "short fmt chunk");
      const std::uint16_t fmt = read_u16(body);
      channels = read_u16(body + 2);
      rate = read_u32(body + 4);
      bits = read_u16(body + 14);
      require(fmt == 1 || fmt == 0xFFFE, "format", "only PCM WAV is supported");
      require(bits == 16, "format", "only 16-bit PCM WAV is supported");
      require(channels >= 1 && rate > 0, "format", "invalid WAV channel count or sample rate");
      have_fmt = true;
    } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
      require(have_fmt, "format", "WAV data chunk precedes fmt chunk");
      const std::size_t frames = size / (2u * static_cast<unsigned>(channels));
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
          const auto raw = static_cast<std::int16_t>(read_u16(body + 2 * (i * channels + c)));
          acc += raw / 32768.0;
        }
        w.samples[i] = acc / channels;
      }
      return w;
    }
    pos += 8 + size + (size & 1u);
  }
  throw Error("format", "WAV file has no data chunk");
}

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open WAV file '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_wav(bytes);
}

void write_wav(const std::string& path, const Waveform& wav) {
  const auto n = static_cast<std::uint32_t>(wav.samples.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(wav.sample_rate));
  std::string out;
  out.reserve(44 + 2 * n);
  out += "RIFF";
  put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, rate);
  put_u32(out, rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, 2 * n);
  for (double s : wav.samples) {
    const long v = std::lround(std::clamp(s, -1.0, 1.0) * 32767.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("io", "cannot write WAV file '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

Waveform resample_linear(const Waveform& wav, double target_rate) {
  require(target_rate > 0, "invalid_argument", "target sample rate must be positive");
  if (target_rate == wav.sample_rate || wav.samples.empty()) {
    Waveform w = wav;
    w.sample_rate = target_rate;
    return w;
  }
  const std::size_t n_out = static_cast<std::size_t>(std::floor(wav.duration() * target_rate));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(std::max<std::size_t>(1, n_out));
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double u = i * wav.sample_rate / target_rate;
    const auto i0 = std::min(static_cast<std::size_t>(u), wav.samples.size() - 1);
    const auto i1 = std::min(i0 + 1, wav.samples.size() - 1);
    const double a = u - static_cast<double>(i0);
    out.samples[i] = (1.0 - a) * wav.samples[i0] + a * wav.samples[i1];
  }
  return out;
}

int MfccConfig::frame_length() const { return static_cast<int>(std::lround(sample_rate * frame_ms / 1000.0)); }
int MfccConfig::hop_length() const { return static_cast<int>(std::lround(sample_rate * hop_ms / 1000.0)); }

void MfccConfig::validate() const {
  require(sample_rate > 0, "config", "audio sample rate must be positive");
  require(frame_ms > 0 && hop_ms > 0 && hop_length() >= 1 && frame_length() >= 2, "config",
          "audio frame and hop must be positive");
  require(n_mels >= 1 && n_coeffs >= 1 && n_coeffs <= n_mels, "config", "need 1 <= n_coeffs <= n_mels");
}

nlohmann::json MfccConfig::to_json() const {
  return {{"sample_rate", sample_rate}, {"frame_ms", frame_ms}, {"hop_ms", hop_ms},
          {"n_mels", n_mels}, {"n_coeffs", n_coeffs}, {"pre_emphasis", pre_emphasis}};
}

MfccConfig MfccConfig::from_json(const nlohmann::json& j) {
  MfccConfig c;
  c.sample_rate = j.at("sample_rate");
  c.frame_ms = j.at("frame_ms");
  c.hop_ms = j.at("hop_ms");
  c.n_mels = j.at("n_mels");
  c.n_coeffs = j.at("n_coeffs");
  c.pre_emphasis = j.at("pre_emphasis");
  c.validate();
  return c;
}

int frame_count(std::size_t samples, const MfccConfig& cfg) {
  return static_cast<int>(samples / static_cast<std::size_t>(cfg.hop_length()));
}

Mat log_mel_spectrogram(const Waveform& wav, const MfccConfig& cfg) {
  cfg.validate();
  require(std::abs(wav.sample_rate - cfg.sample_rate) < 1e-9, "invalid_argument",
          "waveform sample rate does not match feature config");
  const int flen = cfg.frame_length();
  const int hop = cfg.hop_length();
  require(wav.samples.size() >= static_cast<std::size_t>(flen), "invalid_argument",
          "waveform shorter than one analysis frame");
  const int frames = frame_count(wav.samples.size(), cfg);
  const int nfft = next_pow2(flen);

  std::vector<double> emph(wav.samples.size());
  emph[0] = wav.samples[0];
  for (std::size_t i = 1; i < emph.size(); ++i) emph[i] = wav.samples[i] - cfg.pre_emphasis * wav.samples[i - 1];

  std::vector<double> window(flen);
  for (int i = 0; i < flen; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (flen - 1));

  const Mat fb = mel_filterbank(cfg.n_mels, nfft, cfg.sample_rate);
  Eigen::FFT<double> fft;
  std::vector<double> buf(nfft);
  std::vector<std::complex<double>> spec;
  Mat mag(1, nfft / 2 + 1);
  Mat out(frames, cfg.n_mels);
  for (int t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const std::size_t start = static_cast<std::size_t>(t) * hop;
    for (int i = 0; i < flen; ++i) {
      if (start + i < emph.size()) buf[i] = emph[start + i] * window[i];
    }
    fft.fwd(spec, buf);
    for (int k = 0; k <= nfft / 2; ++k) mag(0, k) = std::abs(spec[k]);
    out.row(t) = (mag * fb).array().max(kLogFloor).log().matrix();
  }
  return out;
}

Mat extract_mfcc(const Waveform& wav, const MfccConfig& cfg) {
  const Mat logmel = log_mel_spectrogram(wav, cfg);
  return logmel * dct2_ortho(cfg.n_mels, cfg.n_coeffs);
}

void AudioVqConfig::validate() const {
  require(codebook_size >= 2, "config", "audio codebook size must be >= 2");
  require(depth >= 1, "config", "audio depth must be >= 1");
  require(steps >= 1 && batch_frames >= 1, "config", "audio VQ steps and batch must be positive");
  require(ema_decay > 0 && ema_decay < 1, "config", "audio EMA decay must lie in (0, 1)");
  require(dead_threshold >= 1 && dead_window >= 1, "config", "invalid audio dead-code settings");
}

nlohmann::json AudioVqModel::to_json() const {
  nlohmann::json j;
  j["format"] = kFormat;
  j["mfcc"] = mfcc.to_json();
  j["config"] = {{"codebook_size", config.codebook_size}, {"depth", config.depth}, {"steps", config.steps},
                 {"batch_frames", config.batch_frames}, {"ema_decay", config.ema_decay},
                 {"dead_threshold", config.dead_threshold}, {"dead_window", config.dead_window}};
  j["norm"] = archive::norm_to_json(norm);
  nlohmann::json cbs = nlohmann::json::array();
  for (const auto& cb : codebooks) {
    cbs.push_back({{"entries", nn::mat_to_json(cb.entries)},
                   {"ema_counts", archive::vec_to_json(cb.ema_counts)},
                   {"ema_sums", nn::mat_to_json(cb.ema_sums)}});
  }
  j["codebooks"] = std::move(cbs);
  j["config_hash"] = config_hash;
  return j;
}

AudioVqModel AudioVqModel::from_json(const nlohmann::json& j) {
  archive::check_format(j, kFormat);
  AudioVqModel m;
  m.mfcc = MfccConfig::from_json(j.at("mfcc"));
  const auto& c = j.at("config");
  m.config.codebook_size = c.at("codebook_size");
  m.config.depth = c.at("depth");
  m.config.steps = c.at("steps");
  m.config.batch_frames = c.at("batch_frames");
  m.config.ema_decay = c.at("ema_decay");
  m.config.dead_threshold = c.at("dead_threshold");
  m.config.dead_window = c.at("dead_window");
  m.config.validate();
  m.norm = archive::norm_from_json(j.at("norm"));
  for (const auto& cb : j.at("codebooks")) {
    Codebook book(nn::mat_from_json(cb.at("entries")));
    book.ema_counts = archive::vec_from_json(cb.at("ema_counts"));
    book.ema_sums = nn::mat_from_json(cb.at("ema_sums"));
    m.codebooks.push_back(std::move(book));
  }
  require(static_cast<int>(m.codebooks.size()) == m.config.depth, "format", "audio codebook count mismatch");
  m.config_hash = j.value("config_hash", "");
  return m;
}

void AudioVqModel::save(const std::string& path) const { archive::write_json_file(path, to_json()); }
AudioVqModel AudioVqModel::load(const std::string& path) { return from_json(archive::read_json_file(path)); }

AudioVqModel train_audio_vq(const std::vector<Mat>& frames, const MfccConfig& mfcc, const AudioVqConfig& config,
                            std::uint64_t seed) {
  config.validate();
  mfcc.validate();
  require(!frames.empty(), "invalid_argument", "audio VQ corpus is empty");

  std::vector<FeatureSequence> seqs;
  std::vector<std::pair<std::size_t, Eigen::Index>> index;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    require(frames[i].cols() == frames.front().cols(), "shape", "inconsistent MFCC width in corpus");
    FeatureSequence s;
    s.data = frames[i];
    seqs.push_back(std::move(s));
    for (Eigen::Index r = 0; r < frames[i].rows(); ++r) index.emplace_back(i, r);
  }
  require(!index.empty(), "invalid_argument", "audio VQ corpus has no frames");

  AudioVqModel model;
  model.mfcc = mfcc;
  model.config = config;
  model.norm = compute_norm_stats(seqs);
  std::vector<Mat> normalized;
  for (const auto& f : frames) normalized.push_back(normalize_rows(f, model.norm));

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, index.size() - 1);
  const Eigen::Index width = frames.front().cols();
  auto sample = [&]() {
    Mat b(config.batch_frames, width);
    for (int i = 0; i < config.batch_frames; ++i) {
      const auto [s, r] = index[pick(rng)];
      b.row(i) = normalized[s].row(r);
    }
    return b;
  };

  for (int l = 0; l < config.depth; ++l) model.codebooks.emplace_back(Mat::Zero(config.codebook_size, width));
  {
    Mat e = sample();
    for (auto& cb : model.codebooks) {
      reinit_dead_codes(cb, e, 1.0, rng);
      const auto codes = nearest_codes(e, cb.entries);
      for (Eigen::Index i = 0; i < e.rows(); ++i) e.row(i) -= cb.entries.row(codes[i]);
    }
  }

  for (int step = 0; step < config.steps; ++step) {
    const QuantizeResult q = quantize_residual(sample(), model.codebooks);
    for (int l = 0; l < config.depth; ++l) {
      std::vector<int> codes(static_cast<std::size_t>(q.codes.rows()));
      for (Eigen::Index i = 0; i < q.codes.rows(); ++i) codes[i] = q.codes(i, l);
      ema_update(model.codebooks[l], q.residuals[l], codes, config.ema_decay);
      if ((step + 1) % config.dead_window == 0 && step + 1 < config.steps) {
        reinit_dead_codes(model.codebooks[l], q.residuals[l], config.dead_threshold, rng);
      }
    }
  }
  return model;
}

double audio_vq_mse(const AudioVqModel& model, const std::vector<Mat>& frames, int levels) {
  const std::size_t use = levels <= 0 ? model.codebooks.size()
                                      : std::min<std::size_t>(levels, model.codebooks.size());
  std::span<const Codebook> books(model.codebooks.data(), use);
  double sq = 0.0;
  double n = 0.0;
  for (const auto& f : frames) {
    const Mat x = normalize_rows(f, model.norm);
    const QuantizeResult q = quantize_residual(x, books);
    sq += (x - q.quantized).squaredNorm();
    n += static_cast<double>(x.size());
  }
  require(n > 0, "invalid_argument", "no frames to evaluate");
  return sq / n;
}

AudioTokens tokenize_audio(const AudioVqModel& model, const Waveform& wav, bool allow_resample) {
  Waveform w = wav;
  if (std::abs(wav.sample_rate - model.mfcc.sample_rate) > 1e-9) {
    require(allow_resample, "invalid_argument",
            "waveform sample rate " + std::to_string(wav.sample_rate) + " does not match audio tokenizer rate " +
                std::to_string(model.mfcc.sample_rate));
    w = resample_linear(wav, model.mfcc.sample_rate);
  }
  const Mat x = normalize_rows(extract_mfcc(w, model.mfcc), model.norm);
  AudioTokens t;
  t.codes = quantize_residual(x, model.codebooks).codes;
  t.frame_rate = model.mfcc.frame_rate();
  return t;
}

nlohmann::json audio_tokens_to_json(const AudioTokens& t) {
  nlohmann::json codes = nlohmann::json::array();
  for (Eigen::Index r = 0; r < t.codes.rows(); ++r) {
    std::vector<int> row(t.codes.row(r).data(), t.codes.row(r).data() + t.codes.cols());
    codes.push_back(row);
  }
  return {{"id", t.id}, {"frame_rate", t.frame_rate}, {"codes", std::move(codes)}};
}

AudioTokens audio_tokens_from_json(const nlohmann::json& j) {
  AudioTokens t;
  t.id = j.at("id").get<std::string>();
  t.frame_rate = j.at("frame_rate").get<double>();
  require(t.frame_rate > 0, "format", "audio token frame rate must be positive");
  const auto rows = j.at("codes").get<std::vector<std::vector<int>>>();
  require(!rows.empty(), "format", "audio token record has no codes");
  t.codes.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].size() == rows.front().size(), "format", "ragged audio code matrix");
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      require(rows[r][c] >= 0, "format", "negative audio code");
      t.codes(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return t;
}

std::string audio_tokens_to_jsonl(const std::vector<AudioTokens>& tokens) {
  std::string out;
  for (const auto& t : tokens) out += audio_tokens_to_json(t).dump() + "\n";
  return out;
}

std::vector<AudioTokens> audio_tokens_from_jsonl(const std::string& text) {
  std::vector<AudioTokens> out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(audio_tokens_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(n, std::string("bad audio token record: ") + e.what());
    }
  }
  return out;
}

std::vector<double> moving_average3(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double s = v[i];
    int n = 1;
    if (i > 0) {
      s += v[i - 1];
      ++n;
    }
    if (i + 1 < v.size()) {
      s += v[i + 1];
      ++n;
    }
    out[i] = s / n;
  }
  return out;
}

std::vector<int> pick_peaks(const std::vector<double>& curve, double threshold, int min_gap) {
  const int n = static_cast<int>(curve.size());
  std::vector<int> candidates;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && curve[j + 1] == curve[i]) ++j;
    const bool left = i == 0 || curve[i - 1] < curve[i];
    const bool right = j == n - 1 || curve[j + 1] < curve[i];
    if (left && right && !(i == 0 && j == n - 1) && curve[i] > threshold) {
      candidates.push_back((i + j) / 2);
    }
    i = j + 1;
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) { return curve[a] > curve[b]; });
  std::vector<int> accepted;
  for (int c : candidates) {
    bool ok = true;
    for (int a : accepted) ok = ok && std::abs(a - c) >= min_gap;
    if (ok) accepted.push_back(c);
  }
  std::sort(accepted.begin(), accepted.end());
  return accepted;
}

BeatList detect_beats(const Waveform& wav, const MfccConfig& base) {
  require(wav.duration() >= 0.5, "invalid_argument", "need at least 0.5 s of audio for beat detection");
  MfccConfig cfg = base;
  cfg.sample_rate = wav.sample_rate;
  const Mat logmel = log_mel_spectrogram(wav, cfg);
  std::vector<double> env(static_cast<std::size_t>(logmel.rows()), 0.0);
  for (Eigen::Index t = 1; t < logmel.rows(); ++t) {
    env[t] = (logmel.row(t) - logmel.row(t - 1)).array().max(0.0).mean();
  }
  const auto smooth = moving_average3(env);
  const double mean = std::accumulate(smooth.begin(), smooth.end(), 0.0) / smooth.size();
  double var = 0.0;
  for (double v : smooth) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / smooth.size());
  BeatList beats;
  if (sd <= 0.0) return beats;
  const double hop_s = cfg.hop_ms / 1000.0;
  const int gap = std::max(1, static_cast<int>(std::ceil(0.1 / hop_s - 1e-9)));
  // env[t] reflects audio that entered during the last hop of frame t. Each
  // smoothed peak is refined to the raw maximum inside the smoothing support.
  const int last = static_cast<int>(env.size()) - 1;
  for (int t : pick_peaks(smooth, mean + sd, gap)) {
    int best = t;
    for (int k = std::max(1, t - 1); k <= std::min(last, t + 1); ++k) {
      if (env[k] > env[best]) best = k;
    }
    beats.times.push_back(best * hop_s + cfg.frame_ms / 1000.0 - hop_s / 2.0);
  }
  return beats;
}

}  // namespace gest
