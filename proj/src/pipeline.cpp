#include "gest/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "gest/archive.hpp"
#include "gest/error.hpp"

namespace gest {

namespace fs = std::filesystem;

namespace {

nlohmann::json codes_to_json(const CodeMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    rows.push_back(std::vector<int>(m.row(r).data(), m.row(r).data() + m.cols()));
  }
  return rows;
}

CodeMatrix codes_from_json(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<int>>>();
  require(!rows.empty(), "format", "empty code matrix");
  CodeMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].size() == rows.front().size(), "format", "ragged code matrix");
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

void require_file(const std::string& path, const char* what) {
  require(!path.empty(), "invalid_argument", std::string("missing ") + what + " path");
  require(fs::exists(path), "io", std::string(what) + " '" + path + "' does not exist");
}

void log_config(const RunConfig& config) {
  spdlog::info("config hash {}", config.hash());
  std::istringstream lines(config.resolved());
  std::string line;
  while (std::getline(lines, line)) spdlog::debug("  {}", line);
}

std::vector<ManifestEntry> manifest_split(const std::string& manifest, const std::string& split) {
  require_file(manifest, "manifest");
  std::vector<ManifestEntry> out;
  for (auto& e : read_manifest(manifest)) {
    if (e.split == split) out.push_back(std::move(e));
  }
  require(!out.empty(), "invalid_argument", "manifest has no " + split + " clips");
  return out;
}

Waveform load_wav(const RunConfig& config, const std::string& path) {
  Waveform w = read_wav(path);
  if (std::abs(w.sample_rate - config.mfcc.sample_rate) > 1e-9) {
    require(config.audio_resample, "invalid_argument",
            "'" + path + "' is sampled at " + std::to_string(w.sample_rate) + " Hz, expected " +
                std::to_string(config.mfcc.sample_rate) + " (set audio.resample = true to convert)");
    w = resample_linear(w, config.mfcc.sample_rate);
  }
  return w;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "io", "cannot write '" + path + "'");
  out << text;
}

}  // namespace

nlohmann::json TokenRecord::to_json() const {
  nlohmann::json j;
  j["id"] = id;
  j["split"] = split;
  j["prompt"] = prompt ? nlohmann::json(*prompt) : nlohmann::json(nullptr);
  j["speaker"] = speaker ? nlohmann::json(*speaker) : nlohmann::json(nullptr);
  j["config_hash"] = config_hash;
  j["motion"] = {{"codes", codes_to_json(motion.codes)},
                 {"fps_latent", motion.fps_latent},
                 {"root_start", {motion.root_start.x(), motion.root_start.y(), motion.root_start.z()}},
                 {"pad", motion.pad},
                 {"codebook_size", motion_codebook},
                 {"levels", motion.codes.cols()}};
  nlohmann::json a = audio_tokens_to_json(audio);
  a["codebook_size"] = audio_codebook;
  j["audio"] = std::move(a);
  return j;
}

TokenRecord TokenRecord::from_json(const nlohmann::json& j) {
  TokenRecord r;
  r.id = j.at("id").get<std::string>();
  r.split = j.at("split").get<std::string>();
  if (!j.at("prompt").is_null()) r.prompt = j["prompt"].get<std::string>();
  if (!j.at("speaker").is_null()) r.speaker = j["speaker"].get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  const auto& m = j.at("motion");
  r.motion.codes = codes_from_json(m.at("codes"));
  r.motion.fps_latent = m.at("fps_latent");
  const auto root = m.at("root_start").get<std::vector<double>>();
  require(root.size() == 3, "format", "root_start must have 3 components");
  r.motion.root_start = Vec3(root[0], root[1], root[2]);
  r.motion.pad = m.at("pad");
  r.motion_codebook = m.at("codebook_size");
  require(m.at("levels").get<int>() == r.motion.codes.cols(), "format", "motion level count mismatch");
  r.audio = audio_tokens_from_json(j.at("audio"));
  r.audio_codebook = j.at("audio").at("codebook_size");
  return r;
}

std::vector<TokenRecord> read_tokens(const std::string& path) {
  require_file(path, "tokens file");
  std::ifstream in(path);
  std::vector<TokenRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(TokenRecord::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("tokens: ") + e.what());
    }
  }
  require(!out.empty(), "format", "tokens file '" + path + "' is empty");
  return out;
}

void write_tokens(const std::string& path, const std::vector<TokenRecord>& records) {
  std::string text;
  for (const auto& r : records) text += r.to_json().dump() + "\n";
  write_text(path, text);
}

VocabLayout vocab_for(const std::vector<TokenRecord>& records) {
  require(!records.empty(), "invalid_argument", "no token records");
  VocabLayout v;
  const auto& f = records.front();
  v.audio_codebook = f.audio_codebook;
  v.audio_levels = static_cast<int>(f.audio.codes.cols());
  v.motion_codebook = f.motion_codebook;
  v.motion_levels = static_cast<int>(f.motion.codes.cols());
  for (const auto& r : records) {
    require(r.audio_codebook == v.audio_codebook && r.audio.codes.cols() == v.audio_levels &&
                r.motion_codebook == v.motion_codebook && r.motion.codes.cols() == v.motion_levels,
            "format", "token records disagree on codebook shapes");
  }
  v.validate();
  return v;
}

std::optional<std::string> prompt_text(const RunConfig& config, const TokenRecord& r) {
  if (!r.prompt || r.prompt->empty()) return std::nullopt;
  if (config.prompt_speaker && r.speaker) return *r.speaker + ": " + *r.prompt;
  return r.prompt;
}

std::vector<TrainingExample> build_examples(const RunConfig& config, const std::vector<TokenRecord>& records,
                                            Stage stage, const std::string& split) {
  const VocabLayout vocab = vocab_for(records);
  const auto context = static_cast<std::size_t>(config.lm.context);
  std::vector<TrainingExample> out;
  for (const auto& r : records) {
    if (r.split != split) continue;
    if (stage == Stage::Pretrain) {
      out.push_back(serialize_example(vocab, Task::MotionCompletion, nullptr, nullptr, &r.motion.codes, context));
      out.push_back(serialize_example(vocab, Task::AudioToMotion, &r.audio.codes, nullptr, &r.motion.codes, context));
      if (config.pretrain_audio_completion) {
        out.push_back(serialize_example(vocab, Task::AudioCompletion, &r.audio.codes, nullptr, nullptr, context));
      }
    } else {
      const auto text = prompt_text(config, r);
      if (text) {
        out.push_back(
            serialize_example(vocab, Task::TextAudioToMotion, &r.audio.codes, &*text, &r.motion.codes, context));
      } else {
        out.push_back(
            serialize_example(vocab, Task::AudioToMotion, &r.audio.codes, nullptr, &r.motion.codes, context));
      }
    }
  }
  return out;
}

OutputLock::OutputLock(const std::string& path) : lock_path_(path + ".lock") {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) throw Error("locked", "output '" + path + "' is being written by another command");
    throw Error("io", "cannot create lock file '" + lock_path_ + "': " + std::strerror(errno));
  }
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(lock_path_, ec);
}

MotionClip load_clip(const std::string& path, double fps) {
  require_file(path, "motion file");
  MotionClip clip = read_bvh_file(path);
  if (std::abs(clip.fps - fps) > 1e-3 * fps) clip = resample(clip, fps);
  return clip;
}

void cmd_synth(const RunConfig& config, const std::string& out_dir) {
  require(!out_dir.empty(), "invalid_argument", "missing output directory");
  OutputLock lock(out_dir);
  const auto entries = write_synth_corpus(out_dir, config.synth, config.seed);
  spdlog::info("wrote {} synthetic clips to {}", entries.size(), out_dir);
}

void cmd_train_rvq(const RunConfig& config, const std::string& manifest, const std::string& out) {
  log_config(config);
  OutputLock lock(out);
  std::vector<FeatureSequence> corpus;
  std::optional<Skeleton> skeleton;
  FeatureLayout layout;
  Vec3 root_sum = Vec3::Zero();
  const auto entries = manifest_split(manifest, "train");
  for (const auto& e : entries) {
    const MotionClip clip = load_clip(e.bvh_path, config.motion_fps);
    if (!skeleton) {
      skeleton = clip.skeleton;
      layout = FeatureLayout::from_skeleton(clip.skeleton);
    }
    require(FeatureLayout::from_skeleton(clip.skeleton) == layout, "shape",
            "clip '" + e.id + "' uses a different skeleton");
    corpus.push_back(clip_to_features(clip, layout));
    root_sum += clip.frames.front().root_translation();
  }
  RvqTrainLog log;
  RvqModel model = train_rvq(corpus, config.rvq, config.seed, &log);
  model.skeleton = skeleton;
  model.reference_root = root_sum / static_cast<double>(entries.size());
  model.config_hash = config.hash();
  model.save(out);
  write_text(out + ".log.csv", log.to_csv());
  spdlog::info("rvq model written to {} (train mse {:.6g})", out, reconstruction_mse(model, corpus));
}

void cmd_train_audio_vq(const RunConfig& config, const std::string& manifest, const std::string& out) {
  log_config(config);
  OutputLock lock(out);
  std::vector<Mat> frames;
  for (const auto& e : manifest_split(manifest, "train")) {
    require_file(e.wav_path, "audio file");
    frames.push_back(extract_mfcc(load_wav(config, e.wav_path), config.mfcc));
  }
  AudioVqModel model = train_audio_vq(frames, config.mfcc, config.audio_vq, config.seed);
  model.config_hash = config.hash();
  model.save(out);
  spdlog::info("audio tokenizer written to {} (mse {:.6g})", out, audio_vq_mse(model, frames));
}

void cmd_tokenize(const RunConfig& config, const std::string& manifest, const std::string& rvq_model,
                  const std::string& audio_model, const std::string& audio_tokens_jsonl, const std::string& out) {
  log_config(config);
  require_file(manifest, "manifest");
  require_file(rvq_model, "rvq model");
  require(audio_model.empty() != audio_tokens_jsonl.empty(), "invalid_argument",
          "pass exactly one of an audio model or precomputed audio tokens");
  OutputLock lock(out);
  const RvqModel rvq = RvqModel::load(rvq_model);
  std::optional<AudioVqModel> avq;
  std::map<std::string, AudioTokens> precomputed;
  int audio_codebook = 0;
  if (!audio_model.empty()) {
    require_file(audio_model, "audio model");
    avq = AudioVqModel::load(audio_model);
    audio_codebook = avq->codebook_size();
  } else {
    require_file(audio_tokens_jsonl, "audio tokens");
    std::ifstream in(audio_tokens_jsonl);
    std::stringstream ss;
    ss << in.rdbuf();
    for (auto& t : audio_tokens_from_jsonl(ss.str())) {
      for (Eigen::Index i = 0; i < t.codes.size(); ++i) audio_codebook = std::max(audio_codebook, t.codes.data()[i] + 1);
      precomputed[t.id] = std::move(t);
    }
  }

  std::vector<TokenRecord> records;
  for (const auto& e : read_manifest(manifest)) {
    TokenRecord r;
    r.id = e.id;
    r.split = e.split;
    r.prompt = e.prompt;
    r.speaker = e.speaker;
    r.config_hash = config.hash();
    r.motion = tokenize(rvq, load_clip(e.bvh_path, rvq.fps()));
    r.motion_codebook = rvq.config().codebook_size;
    if (avq) {
      require_file(e.wav_path, "audio file");
      r.audio = tokenize_audio(*avq, read_wav(e.wav_path), config.audio_resample);
    } else {
      const auto it = precomputed.find(e.id);
      require(it != precomputed.end(), "invalid_argument", "no precomputed audio tokens for clip '" + e.id + "'");
      r.audio = it->second;
    }
    r.audio.id = e.id;
    r.audio_codebook = audio_codebook;
    records.push_back(std::move(r));
  }
  write_tokens(out, records);
  spdlog::info("tokenized {} clips into {}", records.size(), out);
}

LmTrainLog cmd_train_lm(const RunConfig& config, const std::string& tokens, Stage stage, const std::string& init,
                        bool from_scratch, const std::string& out) {
  log_config(config);
  const auto records = read_tokens(tokens);
  const VocabLayout vocab = vocab_for(records);
  std::optional<LmModel> base;
  if (stage == Stage::Sft && !from_scratch) {
    require(!init.empty(), "invalid_argument", "sft needs --init <pretrained model> (or --from-scratch)");
    require_file(init, "initial model");
    base = LmModel::load(init);
  } else if (!init.empty()) {
    require_file(init, "initial model");
    base = LmModel::load(init);
  }
  OutputLock lock(out);
  const auto examples = build_examples(config, records, stage, "train");
  require(!examples.empty(), "invalid_argument", "no training examples in the train split");
  const LmConfig lm = stage == Stage::Sft ? config.sft_lm() : config.lm;
  LmTrainLog log;
  LmModel model = train_lm(examples, stage, vocab, lm, config.seed, base ? &*base : nullptr, &log, from_scratch);
  model.config_hash = config.hash();
  model.save(out);

  nlohmann::json jlog{{"stage", stage_name(stage)}, {"initial_loss", log.initial_loss},
                      {"epoch_loss", log.epoch_loss}, {"config_hash", model.config_hash}};
  const auto val = build_examples(config, records, stage, "test");
  if (!val.empty()) jlog["validation_nll"] = evaluate_nll(model, val);
  write_text(out + ".log.json", jlog.dump(2) + "\n");
  spdlog::info("lm ({}) written to {}", stage_name(stage), out);
  return log;
}

void cmd_generate(const RunConfig& config, const GenerateOptions& opts) {
  log_config(config);
  require_file(opts.lm_model, "lm model");
  require_file(opts.rvq_model, "rvq model");
  require_file(opts.audio_model, "audio model");
  require_file(opts.wav, "audio file");
  require(!opts.out.empty(), "invalid_argument", "missing output path");
  OutputLock lock(opts.out);

  const LmModel lm = LmModel::load(opts.lm_model);
  const RvqModel rvq = RvqModel::load(opts.rvq_model);
  const AudioVqModel avq = AudioVqModel::load(opts.audio_model);
  require(lm.vocab().motion_codebook == rvq.config().codebook_size && lm.vocab().motion_levels == rvq.config().depth,
          "format", "lm vocabulary does not match the motion tokenizer");
  require(lm.vocab().audio_codebook == avq.codebook_size() && lm.vocab().audio_levels == avq.depth(), "format",
          "lm vocabulary does not match the audio tokenizer");

  const AudioTokens audio = tokenize_audio(avq, read_wav(opts.wav), config.audio_resample);
  const double seconds = audio.codes.rows() / audio.frame_rate;
  const double fps_latent = rvq.fps() / rvq.config().downsample;
  const int steps = std::max(1, static_cast<int>(std::ceil(config.max_len_factor * seconds * fps_latent - 1e-9)));
  std::optional<std::string> text = opts.prompt;
  if (text && text->empty()) text.reset();

  MotionTokens tokens;
  tokens.codes = generate(lm, audio.codes, text ? &*text : nullptr, config.sampling(), config.seed,
                          steps * lm.vocab().motion_levels);
  tokens.fps_latent = fps_latent;
  tokens.root_start = rvq.reference_root;
  MotionClip clip = detokenize(rvq, tokens);
  const auto max_frames = static_cast<std::size_t>(std::lround(seconds * rvq.fps())) + 1;
  if (clip.frames.size() > max_frames) clip.frames.resize(max_frames);
  if (opts.fix_feet) clip = fix_foot_sliding(clip, config.feet);
  write_bvh_file(opts.out, clip);

  nlohmann::json meta{{"config_hash", config.hash()},  {"lm_hash", lm.config_hash},
                      {"rvq_hash", rvq.config_hash},    {"audio_hash", avq.config_hash},
                      {"seed", config.seed},            {"prompt", text ? nlohmann::json(*text) : nlohmann::json()},
                      {"fix_feet", opts.fix_feet},      {"motion_steps", tokens.codes.rows()}};
  write_text(opts.out + ".meta.json", meta.dump(2) + "\n");
  spdlog::info("generated {} frames into {}", clip.frames.size(), opts.out);
}

EvalReport cmd_evaluate(const RunConfig& config, const EvaluateOptions& opts) {
  log_config(config);
  require(!opts.generated_dir.empty() && fs::is_directory(opts.generated_dir), "io",
          "generated directory '" + opts.generated_dir + "' does not exist");
  std::optional<OutputLock> lock;
  if (!opts.out.empty()) lock.emplace(opts.out);

  const auto test = manifest_split(opts.manifest, "test");
  std::set<std::string> hashes;
  std::vector<FeatureSequence> real_seqs;
  std::vector<FeatureSequence> gen_seqs;
  double gt_align = 0.0;
  double gen_align = 0.0;
  FeatureLayout layout;
  for (const auto& e : test) {
    const MotionClip real = load_clip(e.bvh_path, config.motion_fps);
    const fs::path gen_path = fs::path(opts.generated_dir) / (e.id + ".bvh");
    const MotionClip gen = load_clip(gen_path.string(), config.motion_fps);
    const fs::path meta = gen_path.string() + ".meta.json";
    if (fs::exists(meta)) hashes.insert(archive::read_json_file(meta.string()).at("config_hash").get<std::string>());
    if (real_seqs.empty()) layout = FeatureLayout::from_skeleton(real.skeleton);
    require(FeatureLayout::from_skeleton(gen.skeleton) == layout, "shape",
            "generated clip '" + e.id + "' uses a different skeleton");
    real_seqs.push_back(clip_to_features(real, layout));
    gen_seqs.push_back(clip_to_features(gen, layout));
    require_file(e.wav_path, "audio file");
    const BeatList audio_beats = detect_beats(load_wav(config, e.wav_path), config.mfcc);
    gt_align += beat_align(motion_beats(real), audio_beats, config.beat_sigma);
    gen_align += beat_align(motion_beats(gen), audio_beats, config.beat_sigma);
  }

  FeatureAutoencoder ae;
  if (!opts.ae_model.empty()) {
    require_file(opts.ae_model, "autoencoder");
    ae = FeatureAutoencoder::load(opts.ae_model);
  } else {
    std::vector<FeatureSequence> train;
    for (const auto& e : manifest_split(opts.manifest, "train")) {
      train.push_back(clip_to_features(load_clip(e.bvh_path, config.motion_fps), layout));
    }
    ae = train_feature_autoencoder(make_windows(train, config.fgd_window, config.ae_train_stride), config.ae,
                                   config.seed);
    ae.config_hash = config.hash();
    if (!opts.ae_out.empty()) ae.save(opts.ae_out);
  }
  if (!ae.config_hash.empty()) hashes.insert(ae.config_hash);
  require(hashes.size() <= 1 || opts.force, "config",
          "inputs were produced by " + std::to_string(hashes.size()) + " different configs (use --force to override)");
  require(ae.window() == config.fgd_window, "config", "autoencoder window does not match metrics.fgd_window");

  const WindowSet real_w = make_windows(real_seqs, config.fgd_window, config.fgd_stride);
  const WindowSet gen_w = make_windows(gen_seqs, config.fgd_window, config.fgd_stride);
  EvalReport report;
  report.sigma = config.beat_sigma;
  report.window = config.fgd_window;
  report.stride = config.fgd_stride;
  report.clips = static_cast<int>(test.size());
  report.real_windows = real_w.count();
  report.generated_windows = gen_w.count();
  report.config_hash = config.hash();
  report.ground_truth.fgd = fgd(real_w, real_w, ae);
  report.ground_truth.beat_align = gt_align / test.size();
  report.ground_truth.diversity = diversity(real_w);
  report.generated.fgd = fgd(real_w, gen_w, ae);
  report.generated.beat_align = gen_align / test.size();
  report.generated.diversity = diversity(gen_w);
  if (!opts.out.empty()) {
    write_text(opts.out, report.to_json().dump(2) + "\n");
    write_text(opts.out + ".txt", report.to_table());
  }
  return report;
}

}  // namespace gest
