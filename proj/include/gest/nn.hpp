#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gest/autodiff.hpp"

namespace gest::nn {

using ad::Var;

// Named trainable tensors of one model. Names are unique and stable so that
// archives can be loaded by name.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Var var;
    bool decay;
  };

  Var add(const std::string& name, Mat init, bool decay);
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t count() const;
  void zero_grad();
  double grad_norm() const;
  void scale_grads(double s);

  nlohmann::json to_json() const;
  void load_json(const nlohmann::json& j);

 private:
  std::vector<Entry> entries_;
};

Mat random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);

struct Linear {
  Var weight;  // in x out
  Var bias;    // 1 x out

  static Linear create(ParamSet& ps, const std::string& name, int in, int out, std::mt19937_64& rng,
                       double gain = 1.0);
  Var operator()(const Var& x) const { return ad::add_row(ad::matmul(x, weight), bias); }
};

struct LayerNorm {
  Var gamma;
  Var beta;

  static LayerNorm create(ParamSet& ps, const std::string& name, int width);
  Var operator()(const Var& x) const { return ad::layer_norm(x, gamma, beta); }
};

struct Conv1d {
  Var weight;
  Var bias;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  static Conv1d create(ParamSet& ps, const std::string& name, int in, int out, int kernel, int stride, int pad,
                       std::mt19937_64& rng);
  Var operator()(const Var& x) const { return ad::conv1d(x, weight, bias, kernel, stride, pad); }
};

// Pre-norm transformer block: x + MHA(LN(x)), then x + MLP(LN(x)).
struct TransformerBlock {
  LayerNorm ln1;
  LayerNorm ln2;
  Linear qkv;
  Linear proj;
  Linear fc1;
  Linear fc2;
  int heads = 1;
  bool causal = false;

  static TransformerBlock create(ParamSet& ps, const std::string& name, int width, int heads, int mlp_ratio,
                                 bool causal, std::mt19937_64& rng);
  Var operator()(const Var& x) const;
};

Mat sinusoidal_positions(Eigen::Index length, Eigen::Index width);

// Linear warmup to base_lr, then cosine decay to zero at total_steps.
double cosine_lr(long step, long total_steps, long warmup_steps, double base_lr);

// Decoupled weight decay Adam.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.01)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(const ParamSet& params, double lr);

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
};

nlohmann::json mat_to_json(const Mat& m);
Mat mat_from_json(const nlohmann::json& j);

}  // namespace gest::nn
