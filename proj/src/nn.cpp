#include "gest/nn.hpp"

#include <cmath>
#include <numbers>

#include "gest/error.hpp"

namespace gest::nn {

Var ParamSet::add(const std::string& name, Mat init, bool decay) {
  for (const auto& e : entries_) require(e.name != name, "invalid_argument", "duplicate parameter '" + name + "'");
  Var v = ad::parameter(std::move(init));
  entries_.push_back({name, v, decay});
  return v;
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.var.value().size());
  return n;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_) e.var.node()->zero_grad();
}

double ParamSet::grad_norm() const {
  double s = 0.0;
  for (const auto& e : entries_) {
    if (e.var.node()->grad.size() != 0) s += e.var.node()->grad.squaredNorm();
  }
  return std::sqrt(s);
}

void ParamSet::scale_grads(double s) {
  for (auto& e : entries_) {
    if (e.var.node()->grad.size() != 0) e.var.node()->grad *= s;
  }
}

nlohmann::json ParamSet::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& e : entries_) j[e.name] = mat_to_json(e.var.value());
  return j;
}

void ParamSet::load_json(const nlohmann::json& j) {
  for (auto& e : entries_) {
    require(j.contains(e.name), "format", "archive is missing parameter '" + e.name + "'");
    Mat m = mat_from_json(j.at(e.name));
    require(m.rows() == e.var.rows() && m.cols() == e.var.cols(), "format",
            "parameter '" + e.name + "' has the wrong shape in archive");
    e.var.mutable_value() = std::move(m);
  }
}

Mat random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear Linear::create(ParamSet& ps, const std::string& name, int in, int out, std::mt19937_64& rng, double gain) {
  Linear l;
  l.weight = ps.add(name + ".weight", random_normal(in, out, gain / std::sqrt(static_cast<double>(in)), rng), true);
  l.bias = ps.add(name + ".bias", Mat::Zero(1, out), false);
  return l;
}

LayerNorm LayerNorm::create(ParamSet& ps, const std::string& name, int width) {
  LayerNorm ln;
  ln.gamma = ps.add(name + ".gamma", Mat::Ones(1, width), false);
  ln.beta = ps.add(name + ".beta", Mat::Zero(1, width), false);
  return ln;
}

Conv1d Conv1d::create(ParamSet& ps, const std::string& name, int in, int out, int kernel, int stride, int pad,
                      std::mt19937_64& rng) {
  Conv1d c;
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  const double fan_in = static_cast<double>(kernel * in);
  c.weight = ps.add(name + ".weight", random_normal(kernel * in, out, 1.0 / std::sqrt(fan_in), rng), true);
  c.bias = ps.add(name + ".bias", Mat::Zero(1, out), false);
  return c;
}

TransformerBlock TransformerBlock::create(ParamSet& ps, const std::string& name, int width, int heads,
                                          int mlp_ratio, bool causal, std::mt19937_64& rng) {
  require(heads >= 1 && width % heads == 0, "config", "attention width must be divisible by head count");
  TransformerBlock b;
  b.heads = heads;
  b.causal = causal;
  b.ln1 = LayerNorm::create(ps, name + ".ln1", width);
  b.qkv = Linear::create(ps, name + ".qkv", width, 3 * width, rng);
  b.proj = Linear::create(ps, name + ".proj", width, width, rng, 0.5);
  b.ln2 = LayerNorm::create(ps, name + ".ln2", width);
  b.fc1 = Linear::create(ps, name + ".fc1", width, mlp_ratio * width, rng);
  b.fc2 = Linear::create(ps, name + ".fc2", mlp_ratio * width, width, rng, 0.5);
  return b;
}

Var TransformerBlock::operator()(const Var& x) const {
  const Eigen::Index width = x.cols();
  const Eigen::Index hd = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Var qkv_out = qkv(ln1(x));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Var q = ad::slice_cols(qkv_out, h * hd, hd);
    Var k = ad::slice_cols(qkv_out, width + h * hd, hd);
    Var v = ad::slice_cols(qkv_out, 2 * width + h * hd, hd);
    Var att = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), scale), causal);
    outs.push_back(ad::matmul(att, v));
  }
  Var attn = heads == 1 ? outs[0] : ad::concat_cols(outs);
  Var h1 = ad::add(x, proj(attn));
  return ad::add(h1, fc2(ad::gelu(fc1(ln2(h1)))));
}

Mat sinusoidal_positions(Eigen::Index length, Eigen::Index width) {
  Mat pe(length, width);
  for (Eigen::Index t = 0; t < length; ++t) {
    for (Eigen::Index i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      pe(t, i) = (i % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
    }
  }
  return pe;
}

double cosine_lr(long step, long total_steps, long warmup_steps, double base_lr) {
  if (warmup_steps > 0 && step < warmup_steps) return base_lr * static_cast<double>(step + 1) / warmup_steps;
  const long span = std::max(1L, total_steps - warmup_steps);
  const double progress = std::clamp(static_cast<double>(step - warmup_steps) / span, 0.0, 1.0);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(const ParamSet& params, double lr) {
  const auto& entries = params.entries();
  if (m_.empty()) {
    for (const auto& e : entries) {
      m_.push_back(Mat::Zero(e.var.rows(), e.var.cols()));
      v_.push_back(Mat::Zero(e.var.rows(), e.var.cols()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ad::Node* node = entries[i].var.node();
    if (node->grad.size() == 0) continue;
    const Mat& g = node->grad;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    if (entries[i].decay && weight_decay_ > 0) node->value *= (1.0 - lr * weight_decay_);
    node->value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

nlohmann::json mat_to_json(const Mat& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = std::vector<double>(m.data(), m.data() + m.size());
  return j;
}

Mat mat_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  require(static_cast<Eigen::Index>(data.size()) == rows * cols, "format", "matrix data length mismatch");
  Mat m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

}  // namespace gest::nn
