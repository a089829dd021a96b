// Command-line front end: one subcommand per pipeline stage.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "gest/error.hpp"
#include "gest/pipeline.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_logger_st("gesticulate");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("GESTICULATE_LOG")) {
    const auto level = spdlog::level::from_str(env);
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

std::string single_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"Audio- and text-driven gesture generation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string manifest;
  std::string out;
  bool force = false;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Run configuration (key = value lines)");
  app.add_option("--seed", seed, "Override the configured seed");
  app.add_option("--manifest", manifest, "Dataset manifest (JSONL)");
  app.add_option("--out", out, "Output path");
  app.add_flag("--force", force, "Accept inputs produced by different configs");
  app.add_option("--set", overrides, "Override a config key (key=value)");

  auto* synth = app.add_subcommand("synth", "Write a synthetic clip/audio/prompt corpus and its manifest");

  auto* train_rvq = app.add_subcommand("train-rvq", "Train the motion tokenizer");

  auto* train_avq = app.add_subcommand("train-audio-vq", "Train the audio tokenizer");

  std::string rvq_path;
  std::string audio_model;
  std::string audio_tokens;
  auto* tokenize = app.add_subcommand("tokenize", "Tokenize motion and audio of every manifest clip");
  tokenize->add_option("--rvq", rvq_path, "Motion tokenizer model")->required();
  tokenize->add_option("--audio-model", audio_model, "Audio tokenizer model");
  tokenize->add_option("--audio-tokens", audio_tokens, "Precomputed audio tokens (JSONL)");

  std::string tokens_path;
  std::string stage = "pretrain";
  std::string init;
  bool from_scratch = false;
  auto* train_lm = app.add_subcommand("train-lm", "Train the sequence model");
  train_lm->add_option("--tokens", tokens_path, "Tokens file from `tokenize`")->required();
  train_lm->add_option("--stage", stage, "pretrain or sft")->check(CLI::IsMember({"pretrain", "sft"}));
  train_lm->add_option("--init", init, "Model to continue from (required for sft)");
  train_lm->add_flag("--from-scratch", from_scratch, "Run sft without a pretrained model");

  gest::GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Generate a BVH clip for a waveform");
  generate->add_option("--lm", gen.lm_model, "Sequence model")->required();
  generate->add_option("--rvq", gen.rvq_model, "Motion tokenizer model")->required();
  generate->add_option("--audio-model", gen.audio_model, "Audio tokenizer model")->required();
  generate->add_option("--wav", gen.wav, "Input speech (16-bit PCM WAV)")->required();
  generate->add_option("--prompt", gen.prompt, "Optional text prompt");
  generate->add_flag("--fix-feet,!--no-fix-feet", gen.fix_feet, "Apply foot-contact cleanup (default on)");

  gest::EvaluateOptions eval;
  auto* evaluate = app.add_subcommand("evaluate", "Score generated clips against the manifest test split");
  evaluate->add_option("--generated", eval.generated_dir, "Directory with <id>.bvh per test clip")->required();
  evaluate->add_option("--ae", eval.ae_model, "Feature autoencoder to use instead of training one");
  evaluate->add_option("--ae-out", eval.ae_out, "Save the trained feature autoencoder here");

  auto* show_config = app.add_subcommand("config", "Print the fully resolved configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << single_line(e.what()) << "\n";
    return 2;
  }

  try {
    gest::RunConfig config = config_path.empty() ? gest::RunConfig{} : gest::RunConfig::load(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw gest::Error("config", "--set expects key=value, got '" + kv + "'");
      config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) config.seed = *seed;
    config.validate();

    const auto need_out = [&] {
      if (out.empty()) throw gest::Error("invalid_argument", "--out is required");
    };
    if (*synth) {
      need_out();
      gest::cmd_synth(config, out);
    } else if (*train_rvq) {
      need_out();
      gest::cmd_train_rvq(config, manifest, out);
    } else if (*train_avq) {
      need_out();
      gest::cmd_train_audio_vq(config, manifest, out);
    } else if (*tokenize) {
      need_out();
      gest::cmd_tokenize(config, manifest, rvq_path, audio_model, audio_tokens, out);
    } else if (*train_lm) {
      need_out();
      gest::cmd_train_lm(config, tokens_path, gest::parse_stage(stage), init, from_scratch, out);
    } else if (*generate) {
      need_out();
      gen.out = out;
      gest::cmd_generate(config, gen);
    } else if (*evaluate) {
      eval.manifest = manifest;
      eval.out = out;
      eval.force = force;
      const gest::EvalReport report = gest::cmd_evaluate(config, eval);
      std::cout << report.to_table();
    } else if (*show_config) {
      std::cout << config.resolved() << "# hash " << config.hash() << "\n";
    }
  } catch (const gest::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << single_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << single_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
