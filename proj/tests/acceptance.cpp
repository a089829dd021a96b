// Acceptance checks: one PASS/FAIL line per criterion. Criteria 7 and 9 are
// soft: their failures are reported but do not change the exit status.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>

#include <spdlog/spdlog.h>

#include "gest/audio.hpp"
#include "gest/error.hpp"
#include "gest/metrics.hpp"
#include "gest/motion_features.hpp"
#include "gest/pipeline.hpp"
#include "gest/rvq.hpp"
#include "gest/seq_lm.hpp"
#include "gest/synth.hpp"
#include "gradcheck.hpp"
#include "pipeline_fixture.hpp"
#include "test_util.hpp"

using namespace gest;
using namespace gest::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- 1 ---------------------------------------------------------------------

Outcome telescoping() {
  const auto t0 = Clock::now();
  RvqConfig c;
  c.codebook_size = 16;
  c.latent_channels = 8;
  c.hidden_channels = 16;
  c.depth = 4;
  c.downsample = 4;
  c.attn_layers = 1;
  c.attn_heads = 2;
  const Skeleton sk = synth_skeleton();
  const FeatureLayout layout = FeatureLayout::from_skeleton(sk);
  NormStats norm;
  norm.mean = Vec::Zero(layout.dims());
  norm.std = Vec::Ones(layout.dims());
  const RvqModel model(c, layout, norm, 30.0, 11);
  std::mt19937_64 rng(12);
  int failures = 0;
  for (int batch = 0; batch < 1000; ++batch) {
    const Mat x = nn::random_normal(16, layout.dims(), 1.0 + batch % 5, rng);
    const Mat z = model.encode(x);
    const QuantizeResult q = quantize_residual(z, model.codebooks());
    Mat level_sum = Mat::Zero(z.rows(), z.cols());
    for (const auto& p : q.per_level) level_sum += p;
    const bool ok = level_sum == q.quantized && z - q.quantized == q.residuals.back() &&
                    q.quantized + q.residuals.back() == z;
    if (!ok) ++failures;
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 10.0,
          std::to_string(failures) + "/1000 batches inexact, " + fmt("%.2f s", secs) + " (limit 10 s)"};
}

// ---- 2 ---------------------------------------------------------------------

std::vector<FeatureSequence> four_pose_corpus() {
  const Skeleton sk = synth_skeleton();
  const FeatureLayout layout = FeatureLayout::from_skeleton(sk);
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> angle(-40.0, 40.0);
  std::vector<Frame> poses;
  for (int p = 0; p < 4; ++p) {
    Frame f = rest_frame(sk);
    f.root_translation() = Vec3(0, 95, 0);
    for (std::size_t j = 0; j < sk.size(); ++j) {
      if (sk[j].has_rotation()) f.rotations[j] = euler_to_quat({angle(rng), angle(rng), angle(rng)}, {Axis::Z, Axis::X, Axis::Y});
    }
    poses.push_back(f);
  }
  std::vector<FeatureSequence> corpus;
  for (int i = 0; i < 8; ++i) {
    MotionClip clip;
    clip.skeleton = sk;
    clip.fps = 30.0;
    clip.frames.assign(64, poses[i % 4]);
    corpus.push_back(clip_to_features(clip, layout));
  }
  return corpus;
}

RvqConfig toy_rvq_config(int depth) {
  RvqConfig c;
  c.codebook_size = 8;
  c.depth = depth;
  c.latent_channels = 32;
  c.hidden_channels = 32;
  c.attn_layers = 1;
  c.attn_heads = 4;
  c.total_steps = 2000;
  c.batch_sequences = 4;
  c.batch_frames = 64;
  c.learning_rate = 1e-3;
  return c;
}

int active_codes(const RvqModel& m, const std::vector<FeatureSequence>& corpus) {
  std::set<int> used;
  for (const auto& s : corpus) {
    const Mat x = apply_normalization(s, m.norm(), NormDirection::Forward).data;
    const QuantizeResult q = quantize_residual(m.encode(pad_to_multiple(x, m.config().downsample)), m.codebooks());
    for (Eigen::Index i = 0; i < q.codes.rows(); ++i) used.insert(q.codes(i, 0));
  }
  return static_cast<int>(used.size());
}

Outcome toy_rvq() {
  const auto t0 = Clock::now();
  const auto corpus = four_pose_corpus();
  const RvqModel one = train_rvq(corpus, toy_rvq_config(1), 5);
  const double mse1 = reconstruction_mse(one, corpus);
  const int active = active_codes(one, corpus);
  const RvqModel four = train_rvq(corpus, toy_rvq_config(4), 5);
  const double mse_l4 = reconstruction_mse(four, corpus, 4);
  const double mse_l1 = reconstruction_mse(four, corpus, 1);
  const double secs = seconds_since(t0);
  const bool ok = mse1 < 1e-2 && active >= 4 && mse_l4 <= mse1 && mse_l4 <= mse_l1 && secs < 300.0;
  return {ok, "L=1 mse " + fmt("%.3g", mse1) + " (limit 1e-2), active codes " + std::to_string(active) +
                  " (min 4), L=4 model mse " + fmt("%.3g", mse_l4) + " (its first level alone " + fmt("%.3g", mse_l1) +
                  "), " + fmt("%.1f s", secs) + " (limit 300 s)"};
}

// ---- 3 ---------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  RvqConfig c;
  c.codebook_size = 4;
  c.latent_channels = 4;
  c.hidden_channels = 3;
  c.depth = 1;
  c.downsample = 2;
  c.attn_layers = 1;
  c.attn_heads = 1;
  const Skeleton sk = small_skeleton();
  const FeatureLayout layout = FeatureLayout::from_skeleton(sk);
  NormStats norm;
  norm.mean = Vec::Zero(layout.dims());
  norm.std = Vec::Ones(layout.dims());
  RvqModel rvq(c, layout, norm, 30.0, 5);
  std::mt19937_64 rng(6);
  const Mat x = nn::random_normal(8, layout.dims(), 1.0, rng);
  const GradCheckResult r1 = gradient_check(
      rvq.params(),
      [&] {
        ad::Var in = ad::constant(x);
        return ad::mse(rvq.decode_graph(rvq.encode_graph(in)), in);
      },
      1e-4);

  VocabLayout v;
  v.text_size = 16;
  v.audio_codebook = 2;
  v.audio_levels = 2;
  v.motion_codebook = 2;
  v.motion_levels = 2;
  LmConfig lc;
  lc.layers = 1;
  lc.heads = 2;
  lc.width = 8;
  lc.context = 16;
  LmModel lm(v, lc, 7);
  TrainingExample ex;
  ex.ids = {v.control(VocabLayout::BOS), v.control(VocabLayout::SEP_TEXT), 3, v.control(VocabLayout::SEP_AUDIO),
            v.audio_id(0, 1), v.audio_id(1, 0), v.control(VocabLayout::SEP_MOTION), v.motion_id(0, 1),
            v.motion_id(1, 0), v.control(VocabLayout::EOS)};
  ex.loss_mask = {0, 0, 0, 0, 0, 0, 0, 1, 1, 1};
  const GradCheckResult r2 = gradient_check(lm.params(), [&] { return example_loss(lm, ex); });
  const double secs = seconds_since(t0);
  const bool ok = r1.params <= 1000 && r2.params <= 2000 && r1.relative_error < 1e-4 && r2.relative_error < 1e-3 &&
                  secs < 60.0;
  return {ok, "enc/dec (" + std::to_string(r1.params) + " params) rel " + fmt("%.2e", r1.relative_error) +
                  " (limit 1e-4), transformer (" + std::to_string(r2.params) + " params) rel " +
                  fmt("%.2e", r2.relative_error) + " (limit 1e-3), " + fmt("%.1f s", secs) + " (limit 60 s)"};
}

// ---- 4 ---------------------------------------------------------------------

Outcome frechet() {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> mu(-3.0, 3.0);
  std::uniform_real_distribution<double> sd(0.1, 3.0);
  std::uniform_int_distribution<int> dim(1, 8);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int z = i < 30 ? 1 : dim(rng);
    GaussianFit a{Vec(z), Mat::Zero(z, z)};
    GaussianFit b{Vec(z), Mat::Zero(z, z)};
    double closed = 0.0;
    for (int k = 0; k < z; ++k) {
      a.mean[k] = mu(rng);
      b.mean[k] = mu(rng);
      const double sa = sd(rng);
      const double sb = sd(rng);
      a.cov(k, k) = sa * sa;
      b.cov(k, k) = sb * sb;
      closed += (a.mean[k] - b.mean[k]) * (a.mean[k] - b.mean[k]) + (sa - sb) * (sa - sb);
    }
    worst = std::max(worst, std::abs(frechet_distance(a, b) - closed));
  }

  double worst_self = 0.0;
  for (int s = 0; s < 3; ++s) {
    WindowSet w;
    w.window = 10;
    w.dims = 3;
    w.data = nn::random_normal(150, 30, 1.0 + s, rng);
    FeatureAeConfig c;
    c.latent = 8;
    c.hidden = 32;
    c.steps = 200;
    const FeatureAutoencoder ae = train_feature_autoencoder(w, c, 40 + s);
    worst_self = std::max(worst_self, fgd(w, w, ae));
    WindowSet half = w;
    half.data = w.data.topRows(20);
    worst_self = std::max(worst_self, fgd(half, half, ae));
  }
  return {worst <= 1e-8 && worst_self < 1e-6,
          "max closed-form error " + fmt("%.2e", worst) + " (limit 1e-8), max fgd(X,X) " + fmt("%.2e", worst_self) +
              " (limit 1e-6)"};
}

// ---- 5 ---------------------------------------------------------------------

Outcome beats() {
  const BeatList list{{0.4, 0.9, 1.3, 2.2}};
  const double same = beat_align(list, list, 0.1);
  const double offset = beat_align(BeatList{{1.1}}, BeatList{{1.0}}, 0.1);
  const double offset_err = std::abs(offset - std::exp(-0.5));

  const double period = 0.5;
  const double first = 0.25;
  const double duration = 5.0;
  const Waveform w = click_track(duration, 16000, period, first, 51);
  const BeatList detected = detect_beats(w);
  std::vector<double> truth;
  for (double t = first; t < duration; t += period) truth.push_back(t);
  double err = 0.0;
  for (double t : truth) {
    double best = 1e9;
    for (double d : detected.times) best = std::min(best, std::abs(d - t));
    err += best;
  }
  err /= truth.size();
  const bool ok = same == 1.0 && offset_err <= 1e-9 && detected.times.size() == truth.size() && err <= 0.020;
  return {ok, "identical " + fmt("%.17g", same) + ", sigma offset error " + fmt("%.1e", offset_err) + ", " +
                  std::to_string(detected.times.size()) + "/" + std::to_string(truth.size()) +
                  " clicks detected, mean error " + fmt("%.1f ms", 1000 * err) + " (limit 20 ms)"};
}

// ---- 6 ---------------------------------------------------------------------

Outcome memorization() {
  const auto t0 = Clock::now();
  SynthConfig sc;
  sc.seconds = 3.0;
  const SynthSample s = synth_sample(sc, 61, 0);
  const FeatureLayout layout = FeatureLayout::from_skeleton(s.clip.skeleton);
  const FeatureSequence feats = clip_to_features(s.clip, layout);

  RvqConfig rc;
  rc.codebook_size = 16;
  rc.latent_channels = 16;
  rc.hidden_channels = 16;
  rc.depth = 2;
  rc.attn_layers = 1;
  rc.attn_heads = 2;
  rc.total_steps = 300;
  rc.batch_sequences = 2;
  rc.learning_rate = 2e-3;
  RvqModel rvq = train_rvq({feats}, rc, 62);
  rvq.skeleton = s.clip.skeleton;
  const MotionTokens motion = tokenize(rvq, s.clip);

  MfccConfig mfcc;
  AudioVqConfig ac;
  ac.codebook_size = 8;
  ac.depth = 1;
  ac.steps = 100;
  const AudioVqModel avq = train_audio_vq({extract_mfcc(s.audio, mfcc)}, mfcc, ac, 63);
  const AudioTokens audio = tokenize_audio(avq, s.audio);

  VocabLayout v;
  v.audio_codebook = ac.codebook_size;
  v.audio_levels = ac.depth;
  v.motion_codebook = rc.codebook_size;
  v.motion_levels = rc.depth;
  const TrainingExample ex = serialize_example(v, Task::AudioToMotion, &audio.codes, nullptr, &motion.codes);
  LmConfig lc;
  lc.layers = 2;
  lc.heads = 2;
  lc.width = 32;
  lc.context = 256;
  lc.learning_rate = 3e-3;
  lc.weight_decay = 0.0;
  lc.epochs = 3;
  lc.batch_size = 4;
  const LmModel lm = train_lm(std::vector<TrainingExample>(200, ex), Stage::Sft, v, lc, 64, nullptr, nullptr, true);
  const CodeMatrix generated =
      generate(lm, audio.codes, nullptr, {}, 0, static_cast<int>(motion.codes.size()) + rc.depth);
  const bool exact = generated == motion.codes;

  // Both errors are normalized feature MSE of a rebuilt clip against the
  // original: one from the generated codes, one from the tokenizer round trip.
  const Mat target = apply_normalization(feats, rvq.norm(), NormDirection::Forward).data;
  const auto clip_error = [&](const CodeMatrix& codes) -> double {
    MotionTokens t = motion;
    t.codes = codes;
    const FeatureSequence back = clip_to_features(detokenize(rvq, t), layout);
    if (back.frames() != feats.frames()) return INFINITY;
    return (apply_normalization(back, rvq.norm(), NormDirection::Forward).data - target).squaredNorm() /
           static_cast<double>(target.size());
  };
  const double gen_err = clip_error(generated);
  const double rvq_err = clip_error(motion.codes);
  const double secs = seconds_since(t0);
  const bool ok = exact && gen_err <= rvq_err && secs < 600.0;
  return {ok, std::string(exact ? "tokens reproduced exactly" : "tokens differ") + " (" +
                  std::to_string(motion.codes.rows()) + "x" + std::to_string(motion.codes.cols()) +
                  "), clip error " + fmt("%.4g", gen_err) + " vs rvq round-trip error " + fmt("%.4g", rvq_err) +
                  " (decoder-space mse " + fmt("%.4g", reconstruction_mse(rvq, {feats})) + "), " +
                  fmt("%.1f s", secs) + " (limit 600 s)"};
}

// ---- 7 and 9 share one pipeline run per seed --------------------------------

const char* kSoftConfig = R"(synth.clips = 50
synth.seconds = 3
synth.test_clips = 2
rvq.codebook_size = 32
rvq.latent_channels = 32
rvq.hidden_channels = 32
rvq.depth = 2
rvq.downsample = 4
rvq.attn_layers = 1
rvq.attn_heads = 4
rvq.total_steps = 600
rvq.batch_sequences = 4
rvq.batch_frames = 64
rvq.learning_rate = 2e-3
audio.codebook_size = 16
audio.depth = 1
audio.steps = 200
lm.layers = 2
lm.heads = 4
lm.width = 48
lm.context = 512
lm.epochs = 4
lm.batch_size = 2
lm.learning_rate = 2e-3
lm.sft_learning_rate = 2e-3
lm.sft_epochs = 6
metrics.ae_steps = 100
)";

struct SoftRun {
  double nll_pretrained = 0;
  double nll_scratch = 0;
  double speed_large = 0;
  double speed_small = 0;
};

double mean_speed(const std::string& bvh) {
  const auto s = angular_speed(parse_bvh(read_file(bvh)));
  double sum = 0.0;
  for (double v : s) sum += v;
  return sum / s.size();
}

SoftRun soft_run(int seed, const std::string& dir) {
  const std::string text = std::string(kSoftConfig) + "seed = " + std::to_string(seed) + "\n";
  const ToyRun run = run_toy_pipeline(dir, text);
  const std::string scratch = dir + "/sft_scratch.json";
  cmd_train_lm(run.config, run.tokens, Stage::Sft, "", true, scratch);
  const auto records = read_tokens(run.tokens);
  const auto val = build_examples(run.config, records, Stage::Sft, "test");
  SoftRun r;
  r.nll_pretrained = evaluate_nll(LmModel::load(run.sft), val);
  r.nll_scratch = evaluate_nll(LmModel::load(scratch), val);

  const auto entries = read_manifest(run.manifest);
  const ManifestEntry* test = nullptr;
  for (const auto& e : entries) {
    if (e.split == "test") {
      test = &e;
      break;
    }
  }
  GenerateOptions g;
  g.lm_model = run.sft;
  g.rvq_model = run.rvq;
  g.audio_model = run.audio;
  g.wav = test->wav_path;
  g.prompt = "large gestures with both hands";
  g.out = dir + "/large.bvh";
  cmd_generate(run.config, g);
  g.prompt = "small gestures with both hands";
  g.out = dir + "/small.bvh";
  cmd_generate(run.config, g);
  r.speed_large = mean_speed(dir + "/large.bvh");
  r.speed_small = mean_speed(dir + "/small.bvh");
  return r;
}

std::vector<SoftRun> soft_runs() {
  std::vector<SoftRun> runs;
  for (int seed = 1; seed <= 5; ++seed) {
    runs.push_back(soft_run(seed, scratch_dir("acceptance_soft_" + std::to_string(seed))));
  }
  return runs;
}

Outcome pretraining(const std::vector<SoftRun>& runs) {
  int wins = 0;
  std::string detail;
  for (const auto& r : runs) {
    if (r.nll_pretrained <= r.nll_scratch) ++wins;
    detail += " " + fmt("%.3f", r.nll_pretrained) + "/" + fmt("%.3f", r.nll_scratch);
  }
  return {wins >= 4, std::to_string(wins) + "/5 seeds with pretrained <= scratch validation NLL (min 4);" + detail};
}

Outcome prompting(const std::vector<SoftRun>& runs) {
  int wins = 0;
  std::string detail;
  for (const auto& r : runs) {
    if (r.speed_large > r.speed_small) ++wins;
    detail += " " + fmt("%.3f", r.speed_large) + "/" + fmt("%.3f", r.speed_small);
  }
  return {wins >= 4, std::to_string(wins) + "/5 seeds with large > small mean angular speed (min 4);" + detail};
}

// ---- 8 ---------------------------------------------------------------------

Outcome determinism() {
  double worst = 0.0;
  bool stable = true;
  for (const char* name : {"two_joint.bvh", "mixed_orders.bvh", "crlf_six_channel.bvh"}) {
    const std::string original = read_file(data_path(name));
    const std::string written = write_bvh(parse_bvh(original));
    const auto a = motion_numbers(original);
    const auto b = motion_numbers(written);
    if (a.size() != b.size()) return {false, std::string(name) + ": channel count changed"};
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    stable = stable && write_bvh(parse_bvh(written)) == written;
  }

  const ToyRun run = run_toy_pipeline(scratch_dir("acceptance_generate"));
  const auto entries = read_manifest(run.manifest);
  GenerateOptions g;
  g.lm_model = run.sft;
  g.rvq_model = run.rvq;
  g.audio_model = run.audio;
  g.wav = entries.back().wav_path;
  g.prompt = entries.back().prompt;
  RunConfig sampled = run.config;
  sampled.sampling_mode = "topk";
  g.out = run.dir + "/a.bvh";
  cmd_generate(sampled, g);
  g.out = run.dir + "/b.bvh";
  cmd_generate(sampled, g);
  const bool same = read_file(run.dir + "/a.bvh") == read_file(run.dir + "/b.bvh") &&
                    read_file(run.dir + "/a.bvh.meta.json") == read_file(run.dir + "/b.bvh.meta.json");
  return {worst <= 1e-4 && stable && same, "golden max channel error " + fmt("%.1e", worst) +
                                               " (limit 1e-4), re-serialization " + (stable ? "stable" : "unstable") +
                                               ", generate outputs " + (same ? "byte-identical" : "differ")};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  struct Criterion {
    int id;
    const char* name;
    bool soft;
    std::function<Outcome()> run;
  };
  std::vector<SoftRun> soft;
  const auto ensure_soft = [&]() -> const std::vector<SoftRun>& {
    if (soft.empty()) soft = soft_runs();
    return soft;
  };
  const std::vector<Criterion> criteria{
      {1, "rvq telescoping identity", false, telescoping},
      {2, "toy rvq training", false, toy_rvq},
      {3, "finite-difference gradients", false, gradients},
      {4, "frechet distance", false, frechet},
      {5, "beat alignment and detection", false, beats},
      {6, "end-to-end memorization", false, memorization},
      {7, "pretraining helps sft", true, [&] { return pretraining(ensure_soft()); }},
      {8, "bvh round trip and generate determinism", false, determinism},
      {9, "prompt conditioning", true, [&] { return prompting(ensure_soft()); }},
  };
  std::ofstream report("acceptance_report.txt");
  int hard_failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const char* tag = o.pass ? "PASS" : (c.soft ? "SOFT-FAIL" : "FAIL");
    char line[2048];
    std::snprintf(line, sizeof line, "[%s] %d %s: %s\n", tag, c.id, c.name, o.detail.c_str());
    std::fputs(line, stdout);
    std::fflush(stdout);
    report << line << std::flush;
    if (!o.pass && !c.soft) ++hard_failures;
  }
  std::printf("%d hard failure(s)\n", hard_failures);
  report << hard_failures << " hard failure(s)\n";
  return hard_failures == 0 ? 0 : 1;
}
