#include "gest/rvq.hpp"

#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "gest/archive.hpp"
#include "gest/error.hpp"

namespace gest {

namespace {

constexpr const char* kFormat = "rvq-v1";

int log2_exact(int v) {
  int n = 0;
  while ((1 << n) < v) ++n;
  return (1 << n) == v ? n : -1;
}

double entropy(const Vec& counts) {
  const double total = counts.sum();
  if (total <= 0) return 0.0;
  double h = 0.0;
  for (Eigen::Index i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0) {
      const double p = counts[i] / total;
      h -= p * std::log(p);
    }
  }
  return h;
}

Mat stack_rows(const std::vector<Mat>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Mat out(rows, parts.empty() ? 0 : parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

}  // namespace

void RvqConfig::validate() const {
  require(codebook_size >= 2, "config", "rvq codebook size must be >= 2");
  require(latent_channels >= 1 && hidden_channels >= 1, "config", "rvq channel counts must be positive");
  require(depth >= 1, "config", "rvq depth must be >= 1");
  require(downsample >= 1 && log2_exact(downsample) >= 0, "config", "rvq downsample must be a power of two");
  require(attn_layers >= 0, "config", "rvq attention layer count must be >= 0");
  require(attn_heads >= 1 && latent_channels % attn_heads == 0, "config",
          "rvq latent channels must be divisible by attention heads");
  require(beta > 0, "config", "rvq commitment weight must be positive");
  require(ema_decay > 0 && ema_decay < 1, "config", "rvq EMA decay must lie in (0, 1)");
  require(dead_threshold >= 1, "config", "rvq dead-code threshold must be >= 1");
  require(dead_window >= 1, "config", "rvq dead-code window must be >= 1");
  require(learning_rate > 0, "config", "rvq learning rate must be positive");
  require(total_steps >= 1, "config", "rvq total steps must be >= 1");
  require(batch_sequences >= 1 && batch_frames >= downsample, "config", "rvq batch shape too small");
}

int RvqConfig::resolved_warmup() const {
  return warmup_steps >= 0 ? warmup_steps : std::max(1, total_steps / 20);
}

nlohmann::json RvqConfig::to_json() const {
  return {{"codebook_size", codebook_size}, {"latent_channels", latent_channels},
          {"hidden_channels", hidden_channels}, {"depth", depth},
          {"downsample", downsample}, {"attn_layers", attn_layers},
          {"attn_heads", attn_heads}, {"beta", beta},
          {"ema_decay", ema_decay}, {"dead_threshold", dead_threshold},
          {"dead_window", dead_window}, {"learning_rate", learning_rate},
          {"weight_decay", weight_decay}, {"warmup_steps", warmup_steps},
          {"total_steps", total_steps}, {"batch_sequences", batch_sequences},
          {"batch_frames", batch_frames}, {"grad_clip", grad_clip}};
}

RvqConfig RvqConfig::from_json(const nlohmann::json& j) {
  RvqConfig c;
  c.codebook_size = j.at("codebook_size");
  c.latent_channels = j.at("latent_channels");
  c.hidden_channels = j.at("hidden_channels");
  c.depth = j.at("depth");
  c.downsample = j.at("downsample");
  c.attn_layers = j.at("attn_layers");
  c.attn_heads = j.at("attn_heads");
  c.beta = j.at("beta");
  c.ema_decay = j.at("ema_decay");
  c.dead_threshold = j.at("dead_threshold");
  c.dead_window = j.at("dead_window");
  c.learning_rate = j.at("learning_rate");
  c.weight_decay = j.at("weight_decay");
  c.warmup_steps = j.at("warmup_steps");
  c.total_steps = j.at("total_steps");
  c.batch_sequences = j.at("batch_sequences");
  c.batch_frames = j.at("batch_frames");
  c.grad_clip = j.at("grad_clip");
  c.validate();
  return c;
}

Mat snap_to_grid(const Mat& x) {
  return x.unaryExpr([](double v) { return std::nearbyint(v / kLatentGrid) * kLatentGrid; });
}

Codebook::Codebook(Mat init)
    : entries(snap_to_grid(init)),
      ema_counts(Vec::Ones(entries.rows())),
      ema_sums(entries),
      usage(Vec::Zero(entries.rows())) {}

std::vector<int> nearest_codes(const Mat& x, const Mat& entries) {
  require(x.cols() == entries.cols(), "shape", "latent width does not match codebook width");
  require(entries.rows() >= 1, "shape", "empty codebook");
  std::vector<int> codes(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    double best_d = (entries.row(0) - x.row(i)).squaredNorm();
    for (Eigen::Index k = 1; k < entries.rows(); ++k) {
      const double d = (entries.row(k) - x.row(i)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    codes[static_cast<std::size_t>(i)] = best;
  }
  return codes;
}

QuantizeResult quantize_residual(const Mat& latents, std::span<const Codebook> codebooks) {
  require(!codebooks.empty(), "invalid_argument", "no codebooks");
  const Eigen::Index s = latents.rows();
  const auto levels = static_cast<Eigen::Index>(codebooks.size());
  QuantizeResult r;
  r.codes.resize(s, levels);
  r.quantized = Mat::Zero(s, latents.cols());
  r.residuals.reserve(codebooks.size() + 1);
  r.per_level.reserve(codebooks.size());
  r.residuals.push_back(latents);
  for (Eigen::Index l = 0; l < levels; ++l) {
    const Mat& e = r.residuals.back();
    const auto codes = nearest_codes(e, codebooks[l].entries);
    Mat q(s, latents.cols());
    for (Eigen::Index i = 0; i < s; ++i) {
      r.codes(i, l) = codes[i];
      q.row(i) = codebooks[l].entries.row(codes[i]);
    }
    r.quantized += q;
    r.residuals.push_back(e - q);
    r.per_level.push_back(std::move(q));
  }
  return r;
}

RvqLossTerms rvq_loss(const Mat& target, const Mat& reconstruction, std::span<const Mat> residuals,
                      std::span<const Mat> per_level, double beta) {
  require(target.rows() == reconstruction.rows() && target.cols() == reconstruction.cols(), "shape",
          "reconstruction shape differs from target");
  require(per_level.size() <= residuals.size(), "shape", "more quantized levels than residuals");
  RvqLossTerms t;
  t.rec = (target - reconstruction).squaredNorm() / static_cast<double>(target.size());
  double sq = 0.0;
  for (std::size_t l = 0; l < per_level.size(); ++l) {
    require(residuals[l].rows() == per_level[l].rows() && residuals[l].cols() == per_level[l].cols(), "shape",
            "residual and quantized shapes differ at level " + std::to_string(l));
    sq += (residuals[l] - per_level[l]).squaredNorm() / static_cast<double>(residuals[l].size());
  }
  t.commit = beta * sq;
  t.codebook = sq;
  t.total = t.rec + t.commit;
  return t;
}

void ema_update(Codebook& cb, const Mat& latents, std::span<const int> codes, double decay) {
  require(decay > 0 && decay < 1, "invalid_argument", "EMA decay must lie in (0, 1)");
  require(static_cast<Eigen::Index>(codes.size()) == latents.rows(), "shape", "one code per latent row required");
  const Eigen::Index k = cb.size();
  Vec hits = Vec::Zero(k);
  Mat sums = Mat::Zero(k, cb.channels());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    require(codes[i] >= 0 && codes[i] < k, "shape", "code out of range in EMA update");
    hits[codes[i]] += 1.0;
    sums.row(codes[i]) += latents.row(static_cast<Eigen::Index>(i));
  }
  cb.ema_counts = decay * cb.ema_counts + (1.0 - decay) * hits;
  cb.ema_sums = decay * cb.ema_sums + (1.0 - decay) * sums;
  cb.usage += hits;

  // Laplace smoothing keeps the division finite for codes that stop being hit.
  const double n = cb.ema_counts.sum();
  Vec smoothed = (cb.ema_counts.array() + kEmaEpsilon) / (n + static_cast<double>(k) * kEmaEpsilon) * n;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (hits[i] > 0) cb.entries.row(i) = snap_to_grid(cb.ema_sums.row(i) / std::max(smoothed[i], kEmaEpsilon));
  }
}

int reinit_dead_codes(Codebook& cb, const Mat& batch_latents, double threshold, std::mt19937_64& rng) {
  require(threshold >= 1, "invalid_argument", "dead-code threshold must be >= 1");
  require(batch_latents.rows() >= 1, "invalid_argument", "empty batch for dead-code re-initialization");
  std::uniform_int_distribution<Eigen::Index> pick(0, batch_latents.rows() - 1);
  int replaced = 0;
  for (Eigen::Index i = 0; i < cb.size(); ++i) {
    if (cb.usage[i] < threshold) {
      cb.entries.row(i) = snap_to_grid(batch_latents.row(pick(rng)));
      cb.ema_counts[i] = 1.0;
      cb.ema_sums.row(i) = cb.entries.row(i);
      ++replaced;
    }
  }
  cb.usage.setZero();
  return replaced;
}

std::string RvqTrainLog::to_csv() const {
  std::ostringstream out;
  out << "step,rec,commit";
  const std::size_t levels = rows.empty() ? 0 : rows.front().usage_entropy.size();
  for (std::size_t l = 0; l < levels; ++l) out << ",usage_entropy_l" << (l + 1);
  out << "\n";
  out.precision(9);
  for (const auto& r : rows) {
    out << r.step << "," << r.rec << "," << r.commit;
    for (double h : r.usage_entropy) out << "," << h;
    out << "\n";
  }
  return out.str();
}

RvqModel::RvqModel(RvqConfig config, FeatureLayout layout, NormStats norm, double fps, std::uint64_t seed)
    : config_(std::move(config)), layout_(std::move(layout)), norm_(std::move(norm)), fps_(fps) {
  config_.validate();
  require(norm_.mean.size() == layout_.dims(), "shape", "normalization stats do not match layout");
  build(seed);
}

void RvqModel::build(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int d = layout_.dims();
  const int h = config_.hidden_channels;
  const int c = config_.latent_channels;
  const int n_down = log2_exact(config_.downsample);

  enc_.in = nn::Conv1d::create(params_, "enc.in", d, h, 3, 1, 1, rng);
  enc_.down.clear();
  for (int i = 0; i < n_down; ++i) {
    enc_.down.push_back(nn::Conv1d::create(params_, "enc.down" + std::to_string(i), h, h, 4, 2, 1, rng));
  }
  enc_.to_latent = nn::Linear::create(params_, "enc.to_latent", h, c, rng);
  enc_.blocks.clear();
  for (int i = 0; i < config_.attn_layers; ++i) {
    enc_.blocks.push_back(nn::TransformerBlock::create(params_, "enc.block" + std::to_string(i), c,
                                                       config_.attn_heads, 2, false, rng));
  }
  enc_.out = nn::Linear::create(params_, "enc.out", c, c, rng);

  dec_.in = nn::Linear::create(params_, "dec.in", c, c, rng);
  dec_.blocks.clear();
  for (int i = 0; i < config_.attn_layers; ++i) {
    dec_.blocks.push_back(nn::TransformerBlock::create(params_, "dec.block" + std::to_string(i), c,
                                                       config_.attn_heads, 2, false, rng));
  }
  dec_.to_hidden = nn::Linear::create(params_, "dec.to_hidden", c, h, rng);
  dec_.up.clear();
  for (int i = 0; i < n_down; ++i) {
    dec_.up.push_back(nn::Conv1d::create(params_, "dec.up" + std::to_string(i), h, h, 3, 1, 1, rng));
  }
  dec_.out = nn::Conv1d::create(params_, "dec.out", h, d, 3, 1, 1, rng);

  codebooks_.clear();
  for (int l = 0; l < config_.depth; ++l) {
    codebooks_.emplace_back(nn::random_normal(config_.codebook_size, c, 1.0, rng));
  }
}

ad::Var RvqModel::encode_graph(const ad::Var& x) const {
  require(x.cols() == layout_.dims(), "shape",
          "feature width " + std::to_string(x.cols()) + " does not match layout width " +
              std::to_string(layout_.dims()));
  require(x.rows() % config_.downsample == 0 && x.rows() > 0, "shape",
          "frame count must be a positive multiple of the downsample rate");
  ad::Var h = ad::gelu(enc_.in(x));
  for (const auto& conv : enc_.down) h = ad::gelu(conv(h));
  ad::Var z = enc_.to_latent(h);
  if (!enc_.blocks.empty()) {
    z = ad::add(z, ad::constant(nn::sinusoidal_positions(z.rows(), z.cols())));
    for (const auto& b : enc_.blocks) z = b(z);
  }
  ad::Var out = enc_.out(z);
  return ad::straight_through(out, snap_to_grid(out.value()));
}

ad::Var RvqModel::decode_graph(const ad::Var& z) const {
  require(z.cols() == config_.latent_channels, "shape", "latent width does not match model channels");
  require(z.rows() >= 1, "shape", "cannot decode an empty latent sequence");
  ad::Var h = dec_.in(z);
  if (!dec_.blocks.empty()) {
    h = ad::add(h, ad::constant(nn::sinusoidal_positions(h.rows(), h.cols())));
    for (const auto& b : dec_.blocks) h = b(h);
  }
  h = ad::gelu(dec_.to_hidden(h));
  for (const auto& conv : dec_.up) h = ad::gelu(conv(ad::upsample_rows(h, 2)));
  return dec_.out(h);
}

Mat RvqModel::encode(const Mat& features) const {
  ad::NoGradGuard guard;
  return encode_graph(ad::constant(features)).value();
}

Mat RvqModel::decode(const Mat& quantized) const {
  ad::NoGradGuard guard;
  return decode_graph(ad::constant(quantized)).value();
}

void RvqModel::zero_parameters() {
  for (const auto& e : params_.entries()) e.var.node()->value.setZero();
}

nlohmann::json RvqModel::to_json() const {
  nlohmann::json j;
  j["format"] = kFormat;
  j["config"] = config_.to_json();
  j["layout"] = layout_.joints;
  j["norm"] = archive::norm_to_json(norm_);
  j["fps"] = fps_;
  j["params"] = params_.to_json();
  nlohmann::json cbs = nlohmann::json::array();
  for (const auto& cb : codebooks_) {
    cbs.push_back({{"entries", nn::mat_to_json(cb.entries)},
                   {"ema_counts", archive::vec_to_json(cb.ema_counts)},
                   {"ema_sums", nn::mat_to_json(cb.ema_sums)}});
  }
  j["codebooks"] = std::move(cbs);
  j["skeleton"] = skeleton ? archive::skeleton_to_json(*skeleton) : nlohmann::json(nullptr);
  j["reference_root"] = {reference_root.x(), reference_root.y(), reference_root.z()};
  j["config_hash"] = config_hash;
  return j;
}

RvqModel RvqModel::from_json(const nlohmann::json& j) {
  archive::check_format(j, kFormat);
  FeatureLayout layout;
  layout.joints = j.at("layout").get<std::vector<std::string>>();
  RvqModel m(RvqConfig::from_json(j.at("config")), layout, archive::norm_from_json(j.at("norm")),
             j.at("fps").get<double>(), 0);
  m.params_.load_json(j.at("params"));
  const auto& cbs = j.at("codebooks");
  require(cbs.size() == m.codebooks_.size(), "format", "codebook count does not match config depth");
  for (std::size_t l = 0; l < cbs.size(); ++l) {
    Codebook& cb = m.codebooks_[l];
    cb.entries = nn::mat_from_json(cbs[l].at("entries"));
    cb.ema_counts = archive::vec_from_json(cbs[l].at("ema_counts"));
    cb.ema_sums = nn::mat_from_json(cbs[l].at("ema_sums"));
    cb.usage = Vec::Zero(cb.entries.rows());
    require(cb.entries.rows() == m.config_.codebook_size && cb.entries.cols() == m.config_.latent_channels,
            "format", "codebook shape does not match config");
  }
  if (!j.at("skeleton").is_null()) m.skeleton = archive::skeleton_from_json(j.at("skeleton"));
  const auto root = j.at("reference_root").get<std::vector<double>>();
  m.reference_root = Vec3(root.at(0), root.at(1), root.at(2));
  m.config_hash = j.value("config_hash", "");
  return m;
}

void RvqModel::save(const std::string& path) const { archive::write_json_file(path, to_json()); }

RvqModel RvqModel::load(const std::string& path) { return from_json(archive::read_json_file(path)); }

Mat pad_to_multiple(const Mat& data, int multiple, int* pad_out) {
  require(data.rows() >= 1, "shape", "cannot pad an empty sequence");
  const Eigen::Index rem = data.rows() % multiple;
  const int pad = rem == 0 ? 0 : static_cast<int>(multiple - rem);
  if (pad_out) *pad_out = pad;
  if (pad == 0) return data;
  Mat out(data.rows() + pad, data.cols());
  out.topRows(data.rows()) = data;
  for (int i = 0; i < pad; ++i) out.row(data.rows() + i) = data.row(data.rows() - 1);
  return out;
}

namespace {

struct Batch {
  std::vector<Mat> windows;
};

Batch sample_batch(const std::vector<Mat>& corpus, const RvqConfig& cfg, std::mt19937_64& rng) {
  const int frames = (cfg.batch_frames / cfg.downsample) * cfg.downsample;
  Batch b;
  std::uniform_int_distribution<std::size_t> pick_seq(0, corpus.size() - 1);
  for (int i = 0; i < cfg.batch_sequences; ++i) {
    const Mat& s = corpus[pick_seq(rng)];
    if (s.rows() <= frames) {
      Mat w = s;
      if (w.rows() < frames) {
        Mat padded(frames, s.cols());
        padded.topRows(s.rows()) = s;
        for (Eigen::Index r = s.rows(); r < frames; ++r) padded.row(r) = s.row(s.rows() - 1);
        w = std::move(padded);
      }
      b.windows.push_back(std::move(w));
    } else {
      std::uniform_int_distribution<Eigen::Index> pick_off(0, s.rows() - frames);
      b.windows.push_back(s.middleRows(pick_off(rng), frames));
    }
  }
  return b;
}

}  // namespace

RvqModel train_rvq(const std::vector<FeatureSequence>& corpus, const RvqConfig& config, std::uint64_t seed,
                   RvqTrainLog* log) {
  config.validate();
  require(!corpus.empty(), "invalid_argument", "rvq training corpus is empty");
  const FeatureLayout layout = corpus.front().layout;
  for (const auto& s : corpus) {
    require(s.dims() == layout.dims(), "shape", "inconsistent feature width in rvq corpus");
    require(s.frames() >= 1, "invalid_argument", "empty sequence in rvq corpus");
  }

  const NormStats norm = compute_norm_stats(corpus);
  std::vector<Mat> normalized;
  normalized.reserve(corpus.size());
  for (const auto& s : corpus) normalized.push_back(apply_normalization(s, norm, NormDirection::Forward).data);

  RvqModel model(config, layout, norm, corpus.front().fps, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  nn::AdamW opt(0.9, 0.999, 1e-8, config.weight_decay);
  auto& codebooks = model.codebooks();
  const int levels = config.depth;

  // Seed every codebook from the first batch's residuals.
  {
    Batch b = sample_batch(normalized, config, rng);
    std::vector<Mat> z;
    for (const auto& w : b.windows) z.push_back(model.encode(w));
    Mat e = stack_rows(z);
    for (int l = 0; l < levels; ++l) {
      codebooks[l].usage.setZero();
      reinit_dead_codes(codebooks[l], e, 1.0, rng);
      const auto codes = nearest_codes(e, codebooks[l].entries);
      for (Eigen::Index i = 0; i < e.rows(); ++i) e.row(i) -= codebooks[l].entries.row(codes[i]);
    }
  }

  const int warmup = config.resolved_warmup();
  for (int step = 0; step < config.total_steps; ++step) {
    Batch batch = sample_batch(normalized, config, rng);
    model.params().zero_grad();

    ad::Var total;
    double rec_sum = 0.0;
    double commit_sum = 0.0;
    std::vector<std::vector<Mat>> level_latents(levels);
    std::vector<std::vector<int>> level_codes(levels);

    for (const auto& window : batch.windows) {
      ad::Var x = ad::constant(window);
      ad::Var z = model.encode_graph(x);
      QuantizeResult q = quantize_residual(z.value(), codebooks);
      ad::Var recon = model.decode_graph(ad::straight_through(z, q.quantized));
      ad::Var rec = ad::mse(recon, x);
      ad::Var loss = rec;
      Mat prefix = Mat::Zero(z.rows(), z.cols());
      double commit_plain = 0.0;
      for (int l = 0; l < levels; ++l) {
        ad::Var e_l = ad::sub(z, ad::constant(prefix));
        ad::Var c = ad::scale(ad::mse(e_l, ad::constant(q.per_level[l])), config.beta);
        commit_plain += c.scalar();
        loss = ad::add(loss, c);
        prefix += q.per_level[l];
        level_latents[l].push_back(q.residuals[l]);
        for (Eigen::Index i = 0; i < q.codes.rows(); ++i) level_codes[l].push_back(q.codes(i, l));
      }
      rec_sum += rec.scalar();
      commit_sum += commit_plain;
      total = total ? ad::add(total, loss) : loss;
    }
    const double inv_b = 1.0 / static_cast<double>(batch.windows.size());
    ad::Var loss = ad::scale(total, inv_b);
    if (!std::isfinite(loss.scalar())) {
      throw Error("numeric", "non-finite rvq loss at step " + std::to_string(step));
    }
    ad::backward(loss);
    const double gn = model.params().grad_norm();
    if (config.grad_clip > 0 && gn > config.grad_clip) model.params().scale_grads(config.grad_clip / gn);
    opt.step(model.params(), nn::cosine_lr(step, config.total_steps, warmup, config.learning_rate));

    RvqTrainLog::Row row{step, rec_sum * inv_b, commit_sum * inv_b, {}};
    for (int l = 0; l < levels; ++l) {
      Mat lat = stack_rows(level_latents[l]);
      Vec hits = Vec::Zero(config.codebook_size);
      for (int c : level_codes[l]) hits[c] += 1.0;
      row.usage_entropy.push_back(entropy(hits));
      ema_update(codebooks[l], lat, level_codes[l], config.ema_decay);
      if ((step + 1) % config.dead_window == 0 && step + 1 < config.total_steps) {
        reinit_dead_codes(codebooks[l], lat, config.dead_threshold, rng);
      }
    }
    if (log) log->rows.push_back(std::move(row));
    if (step % 200 == 0) spdlog::debug("rvq step {} rec {:.5f} commit {:.5f}", step, rec_sum * inv_b, commit_sum * inv_b);
  }
  return model;
}

double reconstruction_mse(const RvqModel& model, const std::vector<FeatureSequence>& corpus, int levels) {
  require(!corpus.empty(), "invalid_argument", "empty evaluation corpus");
  const auto& all = model.codebooks();
  const std::size_t use = levels <= 0 ? all.size() : std::min<std::size_t>(levels, all.size());
  std::span<const Codebook> books(all.data(), use);
  double sq = 0.0;
  double count = 0.0;
  for (const auto& s : corpus) {
    const Mat x = apply_normalization(s, model.norm(), NormDirection::Forward).data;
    int pad = 0;
    const Mat padded = pad_to_multiple(x, model.config().downsample, &pad);
    const QuantizeResult q = quantize_residual(model.encode(padded), books);
    const Mat recon = model.decode(q.quantized).topRows(x.rows());
    sq += (recon - x).squaredNorm();
    count += static_cast<double>(x.size());
  }
  return sq / count;
}

MotionTokens tokenize(const RvqModel& model, const MotionClip& clip) {
  require(std::abs(clip.fps - model.fps()) <= 1e-3 * model.fps(), "invalid_argument",
          "clip fps " + std::to_string(clip.fps) + " does not match tokenizer fps " + std::to_string(model.fps()) +
              "; resample first");
  const FeatureSequence f = apply_normalization(clip_to_features(clip, model.layout()), model.norm(),
                                                NormDirection::Forward);
  MotionTokens t;
  const Mat padded = pad_to_multiple(f.data, model.config().downsample, &t.pad);
  t.codes = quantize_residual(model.encode(padded), model.codebooks()).codes;
  t.fps_latent = model.fps() / model.config().downsample;
  t.root_start = clip.frames.front().root_translation();
  return t;
}

MotionClip detokenize(const RvqModel& model, const MotionTokens& tokens) {
  require(model.skeleton.has_value(), "invalid_argument", "tokenizer has no skeleton to rebuild clips");
  const auto& books = model.codebooks();
  require(tokens.codes.rows() >= 1, "shape", "no motion tokens");
  require(tokens.codes.cols() == static_cast<Eigen::Index>(books.size()), "shape",
          "token level count does not match tokenizer depth");
  Mat z = Mat::Zero(tokens.codes.rows(), model.config().latent_channels);
  for (Eigen::Index l = 0; l < tokens.codes.cols(); ++l) {
    for (Eigen::Index s = 0; s < tokens.codes.rows(); ++s) {
      const int c = tokens.codes(s, l);
      require(c >= 0 && c < model.config().codebook_size, "shape",
              "motion code " + std::to_string(c) + " out of range");
      z.row(s) += books[l].entries.row(c);
    }
  }
  Mat decoded = model.decode(z);
  const Eigen::Index keep = std::max<Eigen::Index>(1, decoded.rows() - tokens.pad);
  FeatureSequence f;
  f.data = decoded.topRows(keep);
  f.fps = model.fps();
  f.layout = model.layout();
  f = apply_normalization(f, model.norm(), NormDirection::Inverse);
  return features_to_clip(f, *model.skeleton, tokens.root_start);
}

}  // namespace gest
