#include "gest/seq_lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "gest/archive.hpp"
#include "gest/error.hpp"

namespace gest {

namespace {

constexpr const char* kFormat = "lm-v1";

void append_codes(std::vector<int>& ids, const CodeMatrix& codes, int base, int codebook, int levels,
                  const char* what) {
  require(codes.rows() >= 1, "invalid_argument", std::string(what) + " tokens are empty");
  require(codes.cols() == levels, "shape",
          std::string(what) + " tokens have " + std::to_string(codes.cols()) + " levels, vocabulary expects " +
              std::to_string(levels));
  for (Eigen::Index t = 0; t < codes.rows(); ++t) {
    for (Eigen::Index l = 0; l < codes.cols(); ++l) {
      const int c = codes(t, l);
      require(c >= 0 && c < codebook, "shape", std::string(what) + " code " + std::to_string(c) + " out of range");
      ids.push_back(base + static_cast<int>(l) * codebook + c);
    }
  }
}

CodeMatrix unflatten(const std::vector<int>& ids, int base, int codebook, int levels, const char* what) {
  require(!ids.empty() && ids.size() % static_cast<std::size_t>(levels) == 0, "format",
          std::string(what) + " section length is not a multiple of the level count");
  CodeMatrix m(static_cast<Eigen::Index>(ids.size() / levels), levels);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int level = static_cast<int>(i % levels);
    const int code = ids[i] - base - level * codebook;
    require(code >= 0 && code < codebook, "format", std::string(what) + " id has the wrong level");
    m(static_cast<Eigen::Index>(i / levels), level) = code;
  }
  return m;
}

}  // namespace

const char* task_name(Task t) {
  switch (t) {
    case Task::MotionCompletion: return "motion_completion";
    case Task::AudioCompletion: return "audio_completion";
    case Task::AudioToMotion: return "audio_to_motion";
    case Task::TextAudioToMotion: return "text_audio_to_motion";
  }
  return "";
}

const char* stage_name(Stage s) { return s == Stage::Pretrain ? "pretrain" : "sft"; }

Stage parse_stage(const std::string& s) {
  if (s == "pretrain") return Stage::Pretrain;
  if (s == "sft") return Stage::Sft;
  throw Error("config", "unknown training stage '" + s + "' (expected pretrain or sft)");
}

void VocabLayout::validate() const {
  require(text_size >= 0, "config", "text vocabulary size must be >= 0");
  require(audio_codebook >= 1 && audio_levels >= 1, "config", "audio vocabulary must be non-empty");
  require(motion_codebook >= 1 && motion_levels >= 1, "config", "motion vocabulary must be non-empty");
}

nlohmann::json VocabLayout::to_json() const {
  return {{"text_size", text_size}, {"audio_codebook", audio_codebook}, {"audio_levels", audio_levels},
          {"motion_codebook", motion_codebook}, {"motion_levels", motion_levels}};
}

VocabLayout VocabLayout::from_json(const nlohmann::json& j) {
  VocabLayout v;
  v.text_size = j.at("text_size");
  v.audio_codebook = j.at("audio_codebook");
  v.audio_levels = j.at("audio_levels");
  v.motion_codebook = j.at("motion_codebook");
  v.motion_levels = j.at("motion_levels");
  v.validate();
  return v;
}

TrainingExample serialize_example(const VocabLayout& vocab, Task task, const CodeMatrix* audio,
                                  const std::string* text, const CodeMatrix* motion, std::size_t context) {
  const bool wants_text = task == Task::TextAudioToMotion;
  const bool wants_audio = task != Task::MotionCompletion;
  const bool wants_motion = task != Task::AudioCompletion;
  if (wants_text) {
    require(text != nullptr && !text->empty(), "invalid_argument",
            "text_audio_to_motion needs a non-empty prompt (use audio_to_motion without one)");
  }
  require(!wants_audio || audio != nullptr, "invalid_argument", std::string(task_name(task)) + " needs audio tokens");
  require(!wants_motion || motion != nullptr, "invalid_argument",
          std::string(task_name(task)) + " needs motion tokens");

  TrainingExample ex;
  ex.task = task;
  ex.ids.push_back(vocab.control(VocabLayout::BOS));
  if (wants_text) {
    ex.ids.push_back(vocab.control(VocabLayout::SEP_TEXT));
    for (unsigned char ch : *text) {
      require(ch < vocab.text_size, "invalid_argument", "prompt byte outside the text vocabulary");
      ex.ids.push_back(vocab.text_base() + ch);
    }
  }
  if (wants_audio) {
    ex.ids.push_back(vocab.control(VocabLayout::SEP_AUDIO));
    append_codes(ex.ids, *audio, vocab.audio_base(), vocab.audio_codebook, vocab.audio_levels, "audio");
  }
  // Targets start right after the separator of the trained section.
  std::size_t first_target = 0;
  if (wants_motion) {
    ex.ids.push_back(vocab.control(VocabLayout::SEP_MOTION));
    first_target = ex.ids.size();
    append_codes(ex.ids, *motion, vocab.motion_base(), vocab.motion_codebook, vocab.motion_levels, "motion");
  } else {
    first_target = 2;  // after BOS, SEP_AUDIO
  }
  ex.ids.push_back(vocab.control(VocabLayout::EOS));
  require(context == 0 || ex.ids.size() <= context, "invalid_argument",
          "example of " + std::to_string(ex.ids.size()) + " tokens exceeds context length " + std::to_string(context));

  ex.loss_mask.assign(ex.ids.size(), 0);
  for (std::size_t i = first_target; i < ex.ids.size(); ++i) ex.loss_mask[i] = 1;
  return ex;
}

DecodedExample deserialize_example(const VocabLayout& vocab, const std::vector<int>& ids) {
  require(ids.size() >= 3 && ids.front() == vocab.control(VocabLayout::BOS) &&
              ids.back() == vocab.control(VocabLayout::EOS),
          "format", "example must start with BOS and end with EOS");
  DecodedExample d;
  std::size_t i = 1;
  const std::size_t end = ids.size() - 1;
  auto take_section = [&](auto pred) {
    std::vector<int> out;
    while (i < end && pred(ids[i])) out.push_back(ids[i++]);
    return out;
  };
  if (ids[i] == vocab.control(VocabLayout::SEP_TEXT)) {
    ++i;
    auto bytes = take_section([&](int id) { return vocab.is_text(id); });
    require(!bytes.empty(), "format", "empty text section");
    d.text = std::string(bytes.begin(), bytes.end());
  }
  if (i < end && ids[i] == vocab.control(VocabLayout::SEP_AUDIO)) {
    ++i;
    d.audio = unflatten(take_section([&](int id) { return vocab.is_audio(id); }), vocab.audio_base(),
                        vocab.audio_codebook, vocab.audio_levels, "audio");
  }
  if (i < end && ids[i] == vocab.control(VocabLayout::SEP_MOTION)) {
    ++i;
    d.motion = unflatten(take_section([&](int id) { return vocab.is_motion(id); }), vocab.motion_base(),
                         vocab.motion_codebook, vocab.motion_levels, "motion");
  }
  require(i == end, "format", "unexpected token in example at position " + std::to_string(i));
  if (d.text) {
    require(d.audio && d.motion, "format", "text examples must carry audio and motion");
    d.task = Task::TextAudioToMotion;
  } else if (d.audio && d.motion) {
    d.task = Task::AudioToMotion;
  } else if (d.motion) {
    d.task = Task::MotionCompletion;
  } else {
    require(d.audio.has_value(), "format", "example carries no modality");
    d.task = Task::AudioCompletion;
  }
  return d;
}

double nll_loss(const Mat& logits, const std::vector<int>& targets, const std::vector<unsigned char>& mask) {
  ad::NoGradGuard guard;
  return ad::cross_entropy(ad::constant(logits), targets, mask).scalar();
}

void LmConfig::validate() const {
  require(layers >= 1 && heads >= 1 && width >= 1 && width % heads == 0, "config",
          "lm width must be divisible by heads and sizes positive");
  require(context >= 4, "config", "lm context must be >= 4");
  require(mlp_ratio >= 1, "config", "lm mlp ratio must be >= 1");
  require(learning_rate > 0 && epochs >= 1 && batch_size >= 1, "config", "invalid lm training settings");
  require(warmup_fraction >= 0 && warmup_fraction < 1, "config", "lm warmup fraction must lie in [0, 1)");
}

nlohmann::json LmConfig::to_json() const {
  return {{"layers", layers}, {"heads", heads}, {"width", width}, {"context", context},
          {"mlp_ratio", mlp_ratio}, {"learning_rate", learning_rate}, {"weight_decay", weight_decay},
          {"epochs", epochs}, {"batch_size", batch_size}, {"warmup_fraction", warmup_fraction},
          {"grad_clip", grad_clip}};
}

LmConfig LmConfig::from_json(const nlohmann::json& j) {
  LmConfig c;
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.width = j.at("width");
  c.context = j.at("context");
  c.mlp_ratio = j.at("mlp_ratio");
  c.learning_rate = j.at("learning_rate");
  c.weight_decay = j.at("weight_decay");
  c.epochs = j.at("epochs");
  c.batch_size = j.at("batch_size");
  c.warmup_fraction = j.at("warmup_fraction");
  c.grad_clip = j.at("grad_clip");
  c.validate();
  return c;
}

LmModel::LmModel(VocabLayout vocab, LmConfig config, std::uint64_t seed)
    : vocab_(vocab), config_(config) {
  vocab_.validate();
  config_.validate();
  std::mt19937_64 rng(seed);
  const int w = config_.width;
  tok_emb_ = params_.add("tok_emb", nn::random_normal(vocab_.total(), w, 0.02 * std::sqrt(128.0 / w), rng), true);
  pos_emb_ = params_.add("pos_emb", nn::random_normal(config_.context, w, 0.01, rng), false);
  for (int i = 0; i < config_.layers; ++i) {
    blocks_.push_back(nn::TransformerBlock::create(params_, "block" + std::to_string(i), w, config_.heads,
                                                   config_.mlp_ratio, true, rng));
  }
  ln_f_ = nn::LayerNorm::create(params_, "ln_f", w);
  head_ = nn::Linear::create(params_, "head", w, vocab_.total(), rng);
}

ad::Var LmModel::hidden_graph(const std::vector<int>& ids) const {
  require(!ids.empty(), "invalid_argument", "empty input sequence");
  require(static_cast<int>(ids.size()) <= config_.context, "invalid_argument",
          "sequence of " + std::to_string(ids.size()) + " tokens exceeds context " + std::to_string(config_.context));
  std::vector<int> pos(ids.size());
  std::iota(pos.begin(), pos.end(), 0);
  ad::Var h = ad::add(ad::embedding(tok_emb_, ids), ad::embedding(pos_emb_, pos));
  for (const auto& b : blocks_) h = b(h);
  return ln_f_(h);
}

ad::Var LmModel::logits_graph(const std::vector<int>& ids) const { return head_(hidden_graph(ids)); }

Mat LmModel::logits(const std::vector<int>& ids) const {
  ad::NoGradGuard guard;
  return logits_graph(ids).value();
}

Eigen::RowVectorXd LmModel::next_logits(const std::vector<int>& ids) const {
  ad::NoGradGuard guard;
  ad::Var h = hidden_graph(ids);
  ad::Var last = ad::slice_rows(h, h.rows() - 1, 1);
  return head_(last).value().row(0);
}

nlohmann::json LmModel::to_json() const {
  return {{"format", kFormat},          {"vocab", vocab_.to_json()},  {"config", config_.to_json()},
          {"stage", stage_name(stage)}, {"params", params_.to_json()}, {"config_hash", config_hash}};
}

LmModel LmModel::from_json(const nlohmann::json& j) {
  archive::check_format(j, kFormat);
  LmModel m(VocabLayout::from_json(j.at("vocab")), LmConfig::from_json(j.at("config")), 0);
  m.params_.load_json(j.at("params"));
  m.stage = parse_stage(j.at("stage").get<std::string>());
  m.config_hash = j.value("config_hash", "");
  return m;
}

void LmModel::save(const std::string& path) const { archive::write_json_file(path, to_json()); }
LmModel LmModel::load(const std::string& path) { return from_json(archive::read_json_file(path)); }

ad::Var example_loss(const LmModel& model, const TrainingExample& ex) {
  require(ex.ids.size() == ex.loss_mask.size() && ex.ids.size() >= 2, "shape", "malformed training example");
  std::vector<int> input(ex.ids.begin(), ex.ids.end() - 1);
  std::vector<int> targets(ex.ids.begin() + 1, ex.ids.end());
  std::vector<unsigned char> mask(ex.loss_mask.begin() + 1, ex.loss_mask.end());
  return ad::cross_entropy(model.logits_graph(input), targets, mask);
}

double evaluate_nll(const LmModel& model, const std::vector<TrainingExample>& examples) {
  require(!examples.empty(), "invalid_argument", "no examples to evaluate");
  ad::NoGradGuard guard;
  double total = 0.0;
  double count = 0.0;
  for (const auto& ex : examples) {
    double n = 0;
    for (std::size_t i = 1; i < ex.loss_mask.size(); ++i) n += ex.loss_mask[i] ? 1.0 : 0.0;
    total += example_loss(model, ex).scalar() * n;
    count += n;
  }
  return total / count;
}

LmModel train_lm(const std::vector<TrainingExample>& examples, Stage stage, const VocabLayout& vocab,
                 const LmConfig& config, std::uint64_t seed, const LmModel* init, LmTrainLog* log,
                 bool allow_scratch_sft) {
  config.validate();
  require(!examples.empty(), "invalid_argument", "no training examples");
  require(stage == Stage::Pretrain || init != nullptr || allow_scratch_sft, "invalid_argument",
          "sft stage requires a pretrained model (or explicitly training from scratch)");

  if (init) {
    require(init->vocab() == vocab, "config", "initial model was trained with a different vocabulary layout");
  }
  // A copy of `init` would share its parameter nodes, so rebuild and load.
  LmModel model(vocab, init ? init->config() : config, seed);
  if (init) {
    model.params().load_json(init->params().to_json());
    model.config_hash = init->config_hash;
  }
  model.stage = stage;
  for (const auto& ex : examples) {
    require(static_cast<int>(ex.ids.size()) - 1 <= model.config().context, "invalid_argument",
            "training example longer than model context");
  }

  if (log) log->initial_loss = evaluate_nll(model, examples);

  std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
  nn::AdamW opt(0.9, 0.999, 1e-8, config.weight_decay);
  const long steps_per_epoch = static_cast<long>((examples.size() + config.batch_size - 1) / config.batch_size);
  const long total_steps = steps_per_epoch * config.epochs;
  const long warmup = static_cast<long>(std::floor(config.warmup_fraction * total_steps));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);

  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      model.params().zero_grad();
      ad::Var total;
      for (std::size_t i = start; i < stop; ++i) {
        ad::Var l = example_loss(model, examples[order[i]]);
        total = total ? ad::add(total, l) : l;
      }
      ad::Var loss = ad::scale(total, 1.0 / static_cast<double>(stop - start));
      if (!std::isfinite(loss.scalar())) {
        throw Error("numeric", "non-finite lm loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      }
      ad::backward(loss);
      const double gn = model.params().grad_norm();
      if (config.grad_clip > 0 && gn > config.grad_clip) model.params().scale_grads(config.grad_clip / gn);
      opt.step(model.params(), nn::cosine_lr(step, total_steps, warmup, config.learning_rate));
      epoch_sum += loss.scalar() * static_cast<double>(stop - start);
      ++step;
    }
    const double mean = epoch_sum / static_cast<double>(order.size());
    if (log) log->epoch_loss.push_back(mean);
    spdlog::debug("lm {} epoch {} loss {:.5f}", stage_name(stage), epoch, mean);
  }
  return model;
}

CodeMatrix generate(const LmModel& model, const CodeMatrix& audio, const std::string* text, const Sampling& sampling,
                    std::uint64_t seed, int max_len) {
  const VocabLayout& v = model.vocab();
  const int levels = v.motion_levels;
  require(max_len >= levels, "invalid_argument", "max_len must cover at least one motion timestep");

  std::vector<int> ids{v.control(VocabLayout::BOS)};
  if (text && !text->empty()) {
    ids.push_back(v.control(VocabLayout::SEP_TEXT));
    for (unsigned char ch : *text) {
      require(ch < v.text_size, "invalid_argument", "prompt byte outside the text vocabulary");
      ids.push_back(v.text_base() + ch);
    }
  }
  ids.push_back(v.control(VocabLayout::SEP_AUDIO));
  append_codes(ids, audio, v.audio_base(), v.audio_codebook, v.audio_levels, "audio");
  ids.push_back(v.control(VocabLayout::SEP_MOTION));
  require(static_cast<int>(ids.size()) + levels <= model.config().context, "invalid_argument",
          "prompt of " + std::to_string(ids.size()) + " tokens leaves no room to generate within the context");

  std::mt19937_64 rng(seed);
  const int eos = v.control(VocabLayout::EOS);
  std::vector<int> out;
  while (static_cast<int>(out.size()) < max_len && static_cast<int>(ids.size()) < model.config().context) {
    const int level = static_cast<int>(out.size()) % levels;
    const Eigen::RowVectorXd logits = model.next_logits(ids);
    std::vector<int> allowed;
    allowed.reserve(v.motion_codebook + 1);
    for (int k = 0; k < v.motion_codebook; ++k) allowed.push_back(v.motion_id(level, k));
    if (level == 0 && !out.empty()) allowed.push_back(eos);

    int chosen = allowed.front();
    if (sampling.mode == Sampling::Mode::Greedy) {
      double best = -std::numeric_limits<double>::infinity();
      for (int id : allowed) {
        if (logits[id] > best) {
          best = logits[id];
          chosen = id;
        }
      }
    } else {
      require(sampling.k >= 1 && sampling.temperature > 0, "invalid_argument", "invalid top-k sampling settings");
      std::vector<int> ranked = allowed;
      std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) { return logits[a] > logits[b]; });
      ranked.resize(std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(sampling.k)));
      std::vector<double> w(ranked.size());
      const double top = logits[ranked.front()];
      for (std::size_t i = 0; i < ranked.size(); ++i) w[i] = std::exp((logits[ranked[i]] - top) / sampling.temperature);
      std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
      chosen = ranked[dist(rng)];
    }
    if (chosen == eos) break;
    out.push_back(chosen);
    ids.push_back(chosen);
  }

  const Eigen::Index steps = static_cast<Eigen::Index>(out.size()) / levels;
  require(steps >= 1, "numeric", "generation produced no complete motion timestep");
  CodeMatrix codes(steps, levels);
  for (Eigen::Index s = 0; s < steps; ++s) {
    for (int l = 0; l < levels; ++l) codes(s, l) = out[s * levels + l] - v.motion_id(l, 0);
  }
  return codes;
}

}  // namespace gest
