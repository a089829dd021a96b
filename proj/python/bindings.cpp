#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gest/audio.hpp"
#include "gest/config.hpp"
#include "gest/error.hpp"
#include "gest/metrics.hpp"
#include "gest/motion_features.hpp"
#include "gest/motion_io.hpp"
#include "gest/pipeline.hpp"
#include "gest/rvq.hpp"
#include "gest/synth.hpp"

namespace py = pybind11;
using namespace gest;

namespace {

Waveform make_wave(const std::vector<double>& samples, double rate) {
  Waveform w;
  w.samples = samples;
  w.sample_rate = rate;
  return w;
}

FeatureSequence features_of(const MotionClip& clip) {
  return clip_to_features(clip, FeatureLayout::from_skeleton(clip.skeleton));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Co-speech gesture pipeline: BVH motion, tokenizers, sequence model and metrics";

  static py::exception<Error> error(m, "GestError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), (e.kind() + ": " + e.what()).c_str());
    }
  });

  // motion_io
  py::class_<MotionClip>(m, "MotionClip")
      .def_readwrite("fps", &MotionClip::fps)
      .def_property_readonly("frame_count", &MotionClip::frame_count)
      .def_property_readonly("duration", &MotionClip::duration)
      .def_property_readonly("joint_names",
                             [](const MotionClip& c) {
                               std::vector<std::string> names;
                               for (const auto& j : c.skeleton.joints()) names.push_back(j.name);
                               return names;
                             })
      .def("root_positions",
           [](const MotionClip& c) {
             Mat out(static_cast<Eigen::Index>(c.frames.size()), 3);
             for (std::size_t f = 0; f < c.frames.size(); ++f) out.row(f) = c.frames[f].root_translation().transpose();
             return out;
           })
      .def("to_bvh", [](const MotionClip& c) { return write_bvh(c); });
  m.def("parse_bvh", [](const std::string& text) { return parse_bvh(text); }, py::arg("text"));
  m.def("read_bvh", &read_bvh_file, py::arg("path"));
  m.def("write_bvh", &write_bvh_file, py::arg("path"), py::arg("clip"));
  m.def("resample", &resample, py::arg("clip"), py::arg("target_fps"));

  // motion_features
  m.def("clip_to_features", [](const MotionClip& c) { return features_of(c).data; }, py::arg("clip"),
        "Per-frame 6D joint rotations followed by root velocity (T x D).");
  m.def(
      "features_to_clip",
      [](const Mat& data, const MotionClip& reference) {
        FeatureSequence s;
        s.data = data;
        s.fps = reference.fps;
        s.layout = FeatureLayout::from_skeleton(reference.skeleton);
        return features_to_clip(s, reference.skeleton, reference.frames.front().root_translation());
      },
      py::arg("features"), py::arg("reference"), "Rebuild a clip on the reference skeleton and start position.");
  m.def(
      "fix_foot_sliding", [](const MotionClip& c) { return fix_foot_sliding(c, FootContactParams{}); },
      py::arg("clip"));
  m.def("angular_speed", &angular_speed, py::arg("clip"));
  m.def(
      "motion_beats", [](const MotionClip& c) { return motion_beats(c).times; }, py::arg("clip"));

  // rvq
  py::class_<RvqModel>(m, "RvqModel")
      .def_static("load", &RvqModel::load, py::arg("path"))
      .def_property_readonly("depth", [](const RvqModel& r) { return r.config().depth; })
      .def_property_readonly("codebook_size", [](const RvqModel& r) { return r.config().codebook_size; })
      .def_property_readonly("downsample", [](const RvqModel& r) { return r.config().downsample; })
      .def("tokenize", [](const RvqModel& r, const MotionClip& c) { return CodeMatrix(tokenize(r, c).codes); })
      .def(
          "reconstruct",
          [](const RvqModel& r, const MotionClip& c) { return detokenize(r, tokenize(r, c)); },
          "Tokenize and decode a clip.")
      .def("reconstruction_mse",
           [](const RvqModel& r, const MotionClip& c, int levels) {
             return reconstruction_mse(r, {features_of(c)}, levels);
           },
           py::arg("clip"), py::arg("levels") = 0);
  m.def(
      "quantize_residual",
      [](const Mat& latents, const std::vector<Mat>& codebooks) {
        std::vector<Codebook> books;
        for (const auto& e : codebooks) books.emplace_back(e);
        const QuantizeResult r = quantize_residual(latents, books);
        return py::make_tuple(CodeMatrix(r.codes), r.quantized, r.residuals.back());
      },
      py::arg("latents"), py::arg("codebooks"), "Returns (codes, quantized, final residual).");

  // audio
  m.def(
      "read_wav",
      [](const std::string& path) {
        const Waveform w = read_wav(path);
        return py::make_tuple(w.samples, w.sample_rate);
      },
      py::arg("path"), "Returns (mono samples, sample rate).");
  m.def(
      "write_wav",
      [](const std::string& path, const std::vector<double>& samples, double rate) {
        write_wav(path, make_wave(samples, rate));
      },
      py::arg("path"), py::arg("samples"), py::arg("sample_rate") = 16000.0);
  m.def(
      "mfcc",
      [](const std::vector<double>& samples, double rate) {
        MfccConfig cfg;
        cfg.sample_rate = rate;
        return extract_mfcc(make_wave(samples, rate), cfg);
      },
      py::arg("samples"), py::arg("sample_rate") = 16000.0);
  m.def(
      "detect_beats",
      [](const std::vector<double>& samples, double rate) {
        MfccConfig cfg;
        cfg.sample_rate = rate;
        return detect_beats(make_wave(samples, rate), cfg).times;
      },
      py::arg("samples"), py::arg("sample_rate") = 16000.0);
  m.def(
      "click_track",
      [](double seconds, double rate, double period, double first, std::uint64_t seed) {
        return click_track(seconds, rate, period, first, seed).samples;
      },
      py::arg("seconds"), py::arg("sample_rate"), py::arg("period"), py::arg("first_click"), py::arg("noise_seed") = 0);
  py::class_<AudioVqModel>(m, "AudioVqModel")
      .def_static("load", &AudioVqModel::load, py::arg("path"))
      .def_property_readonly("depth", &AudioVqModel::depth)
      .def_property_readonly("codebook_size", &AudioVqModel::codebook_size)
      .def(
          "tokenize",
          [](const AudioVqModel& a, const std::vector<double>& samples, double rate) {
            return CodeMatrix(tokenize_audio(a, make_wave(samples, rate)).codes);
          },
          py::arg("samples"), py::arg("sample_rate") = 16000.0);

  // metrics
  m.def(
      "frechet_distance",
      [](const Vec& mean_a, const Mat& cov_a, const Vec& mean_b, const Mat& cov_b) {
        return frechet_distance(GaussianFit{mean_a, cov_a}, GaussianFit{mean_b, cov_b});
      },
      py::arg("mean_a"), py::arg("cov_a"), py::arg("mean_b"), py::arg("cov_b"));
  m.def(
      "fit_gaussian",
      [](const Mat& samples, double ridge) {
        const GaussianFit g = fit_gaussian(samples, ridge);
        return py::make_tuple(g.mean, g.cov);
      },
      py::arg("samples"), py::arg("ridge") = 1e-6, "Returns (mean, covariance).");
  m.def(
      "beat_align",
      [](const std::vector<double>& motion, const std::vector<double>& audio, double sigma) {
        return beat_align(BeatList{motion}, BeatList{audio}, sigma);
      },
      py::arg("motion_beats"), py::arg("audio_beats"), py::arg("sigma") = 0.1);
  m.def(
      "diversity", [](const std::vector<Mat>& samples) { return diversity(samples); }, py::arg("samples"));

  // pipeline
  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", &RunConfig::parse, py::arg("text"))
      .def_static("load", &RunConfig::load, py::arg("path"))
      .def_static("keys", &RunConfig::keys)
      .def("get", &RunConfig::get, py::arg("key"))
      .def("set", &RunConfig::set, py::arg("key"), py::arg("value"))
      .def("validate", &RunConfig::validate)
      .def("resolved", &RunConfig::resolved)
      .def("hash", &RunConfig::hash);
  m.def("synth", &cmd_synth, py::arg("config"), py::arg("out_dir"));
  m.def("train_rvq", &cmd_train_rvq, py::arg("config"), py::arg("manifest"), py::arg("out"));
  m.def("train_audio_vq", &cmd_train_audio_vq, py::arg("config"), py::arg("manifest"), py::arg("out"));
  m.def(
      "tokenize",
      [](const RunConfig& c, const std::string& manifest, const std::string& rvq, const std::string& audio,
         const std::string& out) { cmd_tokenize(c, manifest, rvq, audio, "", out); },
      py::arg("config"), py::arg("manifest"), py::arg("rvq"), py::arg("audio_model"), py::arg("out"));
  m.def(
      "train_lm",
      [](const RunConfig& c, const std::string& tokens, const std::string& stage, const std::string& init,
         bool from_scratch, const std::string& out) {
        const LmTrainLog log = cmd_train_lm(c, tokens, parse_stage(stage), init, from_scratch, out);
        return log.epoch_loss;
      },
      py::arg("config"), py::arg("tokens"), py::arg("stage"), py::arg("init") = "", py::arg("from_scratch") = false,
      py::arg("out"), "Returns the mean training loss of each epoch.");
  m.def(
      "generate",
      [](const RunConfig& c, const std::string& lm, const std::string& rvq, const std::string& audio,
         const std::string& wav, std::optional<std::string> prompt, const std::string& out, bool fix_feet) {
        GenerateOptions o;
        o.lm_model = lm;
        o.rvq_model = rvq;
        o.audio_model = audio;
        o.wav = wav;
        o.prompt = std::move(prompt);
        o.out = out;
        o.fix_feet = fix_feet;
        cmd_generate(c, o);
      },
      py::arg("config"), py::arg("lm"), py::arg("rvq"), py::arg("audio_model"), py::arg("wav"),
      py::arg("prompt") = py::none(), py::arg("out"), py::arg("fix_feet") = true);
  m.def(
      "evaluate",
      [](const RunConfig& c, const std::string& manifest, const std::string& generated, const std::string& out,
         bool force) {
        EvaluateOptions o;
        o.manifest = manifest;
        o.generated_dir = generated;
        o.out = out;
        o.force = force;
        return cmd_evaluate(c, o).to_json().dump();
      },
      py::arg("config"), py::arg("manifest"), py::arg("generated"), py::arg("out") = "", py::arg("force") = false,
      "Returns the report as a JSON string.");
}
