#include "gest/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "gest/archive.hpp"
#include "gest/error.hpp"

namespace gest {

namespace {

constexpr const char* kAeFormat = "fgd-ae-v1";

Mat standardize(const Mat& x, const Vec& mean, const Vec& std) {
  return (x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
}

// Symmetric PSD square root's eigenvalues with tolerance-based clamping.
Vec psd_eigenvalues(const Mat& m, const char* what) {
  const Mat sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, "numeric", std::string("eigendecomposition failed for ") + what);
  Vec ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    require(ev[i] >= -1e-8 * scale, "numeric", std::string(what) + " is not positive semidefinite");
    ev[i] = std::max(ev[i], 0.0);
  }
  return ev;
}

Mat psd_sqrt(const Mat& m) {
  const Mat sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  require(es.info() == Eigen::Success, "numeric", "eigendecomposition failed for covariance");
  Vec ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    require(ev[i] >= -1e-8 * scale, "numeric", "covariance is not positive semidefinite");
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void check_fit(const GaussianFit& g) {
  require(g.cov.rows() == g.mean.size() && g.cov.cols() == g.mean.size(), "shape",
          "gaussian fit covariance does not match its mean");
  require((g.cov - g.cov.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, g.cov.cwiseAbs().maxCoeff()),
          "numeric", "gaussian fit covariance is not symmetric");
}

double angle_between(const Quat& a, const Quat& b) {
  const double d = std::min(1.0, std::abs(a.coeffs().dot(b.coeffs())));
  return 2.0 * std::acos(d);
}

}  // namespace

WindowSet make_windows(const std::vector<FeatureSequence>& seqs, int window, int stride) {
  require(window >= 1 && stride >= 1, "config", "window and stride must be positive");
  require(!seqs.empty(), "invalid_argument", "no sequences to window");
  WindowSet ws;
  ws.window = window;
  ws.dims = static_cast<int>(seqs.front().dims());
  std::vector<Eigen::Matrix<double, 1, Eigen::Dynamic>> rows;
  for (const auto& s : seqs) {
    require(s.dims() == ws.dims, "shape", "feature sequences have different widths");
    for (Eigen::Index start = 0; start + window <= s.frames(); start += stride) {
      const Mat block = s.data.middleRows(start, window);
      rows.emplace_back(Eigen::Map<const Eigen::Matrix<double, 1, Eigen::Dynamic>>(block.data(), block.size()));
    }
  }
  ws.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(window) * ws.dims);
  for (std::size_t i = 0; i < rows.size(); ++i) ws.data.row(static_cast<Eigen::Index>(i)) = rows[i];
  return ws;
}

void FeatureAeConfig::validate() const {
  require(latent >= 1 && hidden >= 1, "config", "autoencoder sizes must be positive");
  require(steps >= 1 && batch >= 1 && learning_rate > 0, "config", "invalid autoencoder training settings");
}

nlohmann::json FeatureAeConfig::to_json() const {
  return {{"latent", latent}, {"hidden", hidden}, {"steps", steps}, {"batch", batch},
          {"learning_rate", learning_rate}, {"weight_decay", weight_decay}};
}

FeatureAeConfig FeatureAeConfig::from_json(const nlohmann::json& j) {
  FeatureAeConfig c;
  c.latent = j.at("latent");
  c.hidden = j.at("hidden");
  c.steps = j.at("steps");
  c.batch = j.at("batch");
  c.learning_rate = j.at("learning_rate");
  c.weight_decay = j.at("weight_decay");
  c.validate();
  return c;
}

FeatureAutoencoder::FeatureAutoencoder(FeatureAeConfig config, int window, int dims, std::uint64_t seed)
    : config_(config), window_(window), dims_(dims) {
  config_.validate();
  require(window >= 1 && dims >= 1, "shape", "autoencoder window shape must be positive");
  const int in = input_size();
  require(config_.latent < in, "config",
          "autoencoder latent size " + std::to_string(config_.latent) + " must be below the window size " +
              std::to_string(in));
  std::mt19937_64 rng(seed);
  enc_lin_ = nn::Linear::create(params_, "enc.lin", in, config_.latent, rng);
  enc_h_ = nn::Linear::create(params_, "enc.h", in, config_.hidden, rng);
  enc_o_ = nn::Linear::create(params_, "enc.o", config_.hidden, config_.latent, rng, 0.1);
  dec_lin_ = nn::Linear::create(params_, "dec.lin", config_.latent, in, rng);
  dec_h_ = nn::Linear::create(params_, "dec.h", config_.latent, config_.hidden, rng);
  dec_o_ = nn::Linear::create(params_, "dec.o", config_.hidden, in, rng, 0.1);
  mean = Vec::Zero(in);
  std = Vec::Ones(in);
}

ad::Var FeatureAutoencoder::encode_graph(const ad::Var& x) const {
  return ad::add(enc_lin_(x), enc_o_(ad::gelu(enc_h_(x))));
}

ad::Var FeatureAutoencoder::reconstruct_graph(const ad::Var& x) const {
  const ad::Var z = encode_graph(x);
  return ad::add(dec_lin_(z), dec_o_(ad::gelu(dec_h_(z))));
}

Mat FeatureAutoencoder::encode(const Mat& windows) const {
  require(windows.cols() == input_size(), "shape",
          "window width " + std::to_string(windows.cols()) + " does not match the autoencoder (" +
              std::to_string(input_size()) + ")");
  ad::NoGradGuard guard;
  return encode_graph(ad::constant(standardize(windows, mean, std))).value();
}

Mat FeatureAutoencoder::reconstruct(const Mat& windows) const {
  require(windows.cols() == input_size(), "shape", "window width does not match the autoencoder");
  ad::NoGradGuard guard;
  const Mat r = reconstruct_graph(ad::constant(standardize(windows, mean, std))).value();
  return (r.array().rowwise() * std.transpose().array()).matrix().rowwise() + mean.transpose();
}

nlohmann::json FeatureAutoencoder::to_json() const {
  return {{"format", kAeFormat},         {"config", config_.to_json()},         {"window", window_},
          {"dims", dims_},               {"mean", archive::vec_to_json(mean)},  {"std", archive::vec_to_json(std)},
          {"final_loss", final_loss},    {"params", params_.to_json()},         {"config_hash", config_hash}};
}

FeatureAutoencoder FeatureAutoencoder::from_json(const nlohmann::json& j) {
  archive::check_format(j, kAeFormat);
  FeatureAutoencoder ae(FeatureAeConfig::from_json(j.at("config")), j.at("window"), j.at("dims"), 0);
  ae.params_.load_json(j.at("params"));
  ae.mean = archive::vec_from_json(j.at("mean"));
  ae.std = archive::vec_from_json(j.at("std"));
  require(ae.mean.size() == ae.input_size() && ae.std.size() == ae.input_size(), "format",
          "autoencoder statistics have the wrong size");
  ae.final_loss = j.at("final_loss");
  ae.config_hash = j.value("config_hash", "");
  return ae;
}

void FeatureAutoencoder::save(const std::string& path) const { archive::write_json_file(path, to_json()); }
FeatureAutoencoder FeatureAutoencoder::load(const std::string& path) {
  return from_json(archive::read_json_file(path));
}

FeatureAutoencoder train_feature_autoencoder(const WindowSet& windows, const FeatureAeConfig& config,
                                             std::uint64_t seed) {
  require(windows.count() >= 100, "invalid_argument",
          "autoencoder training needs at least 100 windows, got " + std::to_string(windows.count()));
  FeatureAutoencoder ae(config, windows.window, windows.dims, seed);
  require(windows.data.cols() == ae.input_size(), "shape", "window data width does not match window x dims");
  ae.mean = windows.data.colwise().mean().transpose();
  ae.std = ((windows.data.rowwise() - ae.mean.transpose()).array().square().colwise().mean().sqrt())
               .transpose()
               .max(1e-6);
  const Mat x = standardize(windows.data, ae.mean, ae.std);

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<Eigen::Index> pick(0, x.rows() - 1);
  nn::AdamW opt(0.9, 0.999, 1e-8, config.weight_decay);
  const long warmup = static_cast<long>(std::floor(0.05 * config.steps));
  const int batch = static_cast<int>(std::min<Eigen::Index>(config.batch, x.rows()));
  Mat xb(batch, x.cols());
  for (int step = 0; step < config.steps; ++step) {
    for (int b = 0; b < batch; ++b) xb.row(b) = x.row(pick(rng));
    ae.params().zero_grad();
    const ad::Var in = ad::constant(xb);
    const ad::Var loss = ad::mse(ae.reconstruct_graph(in), in);
    require(std::isfinite(loss.scalar()), "numeric", "non-finite autoencoder loss at step " + std::to_string(step));
    ad::backward(loss);
    const double gn = ae.params().grad_norm();
    if (gn > 1.0) ae.params().scale_grads(1.0 / gn);
    opt.step(ae.params(), nn::cosine_lr(step, config.steps, warmup, config.learning_rate));
  }
  {
    ad::NoGradGuard guard;
    const ad::Var in = ad::constant(x);
    ae.final_loss = ad::mse(ae.reconstruct_graph(in), in).scalar();
  }
  spdlog::debug("feature autoencoder final loss {:.6g}", ae.final_loss);
  return ae;
}

double autoencoder_mse(const FeatureAutoencoder& ae, const WindowSet& windows) {
  require(windows.count() >= 1, "invalid_argument", "no windows");
  return (ae.reconstruct(windows.data) - windows.data).array().square().mean();
}

GaussianFit fit_gaussian(const Mat& samples, double ridge) {
  require(samples.rows() >= 2, "invalid_argument", "a gaussian fit needs at least 2 samples");
  GaussianFit g;
  g.mean = samples.colwise().mean().transpose();
  const Mat centered = samples.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / static_cast<double>(samples.rows());
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  g.cov.diagonal().array() += ridge;
  return g;
}

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
  require(a.mean.size() == b.mean.size(), "shape",
          "gaussian dimensions differ (" + std::to_string(a.mean.size()) + " vs " + std::to_string(b.mean.size()) +
              ")");
  check_fit(a);
  check_fit(b);
  // Tr((Sa Sb)^1/2) equals Tr((Sa^1/2 Sb Sa^1/2)^1/2), whose argument is symmetric.
  const Mat sa = psd_sqrt(a.cov);
  const Vec ev = psd_eigenvalues(sa * b.cov * sa, "covariance product");
  const double tr_sqrt = ev.array().sqrt().sum();
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

double fgd(const WindowSet& real, const WindowSet& generated, const FeatureAutoencoder& ae) {
  require(real.count() >= 2 && generated.count() >= 2, "invalid_argument",
          "fgd needs at least 2 windows per set (got " + std::to_string(real.count()) + " and " +
              std::to_string(generated.count()) + ")");
  return frechet_distance(fit_gaussian(ae.encode(real.data)), fit_gaussian(ae.encode(generated.data)));
}

std::vector<double> angular_speed(const MotionClip& clip) {
  std::vector<std::size_t> joints;
  for (std::size_t j = 0; j < clip.skeleton.size(); ++j) {
    if (clip.skeleton[j].has_rotation()) joints.push_back(j);
  }
  require(!joints.empty(), "invalid_argument", "clip has no rotating joints");
  require(clip.frames.size() >= 2, "invalid_argument", "angular speed needs at least 2 frames");
  const std::size_t n = clip.frames.size();
  std::vector<double> speed(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t lo = t == 0 ? 0 : t - 1;
    const std::size_t hi = t + 1 == n ? t : t + 1;
    double s = 0.0;
    for (std::size_t j : joints) s += angle_between(clip.frames[lo].rotations[j], clip.frames[hi].rotations[j]);
    speed[t] = s / joints.size() * clip.fps / static_cast<double>(hi - lo);
  }
  return speed;
}

BeatList motion_beats(const MotionClip& clip) {
  require(clip.duration() >= 0.5 - 1e-9, "invalid_argument", "need at least 0.5 s of motion for motion beats");
  const std::vector<double> speed = angular_speed(clip);
  const auto smooth = moving_average3(speed);
  const double mean = std::accumulate(smooth.begin(), smooth.end(), 0.0) / smooth.size();
  double var = 0.0;
  for (double v : smooth) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / smooth.size());
  BeatList beats;
  if (sd <= 1e-12) return beats;
  std::vector<double> neg(smooth.size());
  std::transform(smooth.begin(), smooth.end(), neg.begin(), [](double v) { return -v; });
  const int gap = std::max(1, static_cast<int>(std::ceil(0.1 * clip.fps - 1e-9)));
  for (int t : pick_peaks(neg, -(mean - 0.5 * sd), gap)) beats.times.push_back(t / clip.fps);
  return beats;
}

double beat_align(const BeatList& motion, const BeatList& audio, double sigma) {
  require(sigma > 0, "invalid_argument", "beat alignment sigma must be positive");
  if (motion.times.empty() || audio.times.empty()) return 0.0;
  double sum = 0.0;
  for (double t : motion.times) {
    double best = std::numeric_limits<double>::infinity();
    for (double s : audio.times) best = std::min(best, (t - s) * (t - s));
    sum += std::exp(-best / (2.0 * sigma * sigma));
  }
  return sum / static_cast<double>(motion.times.size());
}

double diversity(const std::vector<Mat>& samples) {
  require(samples.size() >= 2, "invalid_argument", "diversity needs at least 2 samples");
  for (const auto& s : samples) {
    require(s.rows() == samples.front().rows() && s.cols() == samples.front().cols(), "shape",
            "diversity samples differ in shape");
  }
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j, ++pairs) sum += (samples[i] - samples[j]).norm();
  }
  return sum / static_cast<double>(pairs);
}

double diversity(const WindowSet& windows) {
  std::vector<Mat> rows;
  rows.reserve(static_cast<std::size_t>(windows.count()));
  for (Eigen::Index i = 0; i < windows.count(); ++i) rows.emplace_back(windows.data.row(i));
  return diversity(rows);
}

nlohmann::json EvalReport::to_json() const {
  auto row = [](const EvalRow& r) {
    return nlohmann::json{{"fgd", r.fgd}, {"beat_align", r.beat_align}, {"diversity", r.diversity}};
  };
  return {{"ground_truth", row(ground_truth)}, {"generated", row(generated)},
          {"fgd", generated.fgd},              {"beat_align", generated.beat_align},
          {"diversity", generated.diversity},  {"sigma", sigma},
          {"window", window},                  {"stride", stride},
          {"clips", clips},                    {"real_windows", real_windows},
          {"generated_windows", generated_windows}, {"config_hash", config_hash}};
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(14) << "Method" << std::right << std::setw(12) << "FGD ↓" << std::setw(16)
     << "BeatAlign →" << std::setw(16) << "Diversity →" << "\n";
  for (const EvalRow* r : {&ground_truth, &generated}) {
    os << std::left << std::setw(14) << r->name << std::right << std::setw(10) << r->fgd << std::setw(14)
       << r->beat_align << std::setw(14) << r->diversity << "\n";
  }
  os << "sigma=" << sigma << "s window=" << window << " stride=" << stride << " clips=" << clips
     << " windows=" << real_windows << "/" << generated_windows << " config=" << config_hash << "\n";
  return os.str();
}

}  // namespace gest
