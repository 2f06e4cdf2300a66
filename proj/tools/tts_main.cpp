#include <cstdint>
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "tts/error.hpp"
#include "tts/pipeline.hpp"

namespace {

std::string single_line(std::string s) {
  for (char& c : s)
    if (c == '\n') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"parametric speech synthesizer"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "project configuration file");
  uint64_t seed = 0;
  bool seed_given = false;
  app.add_option("--seed", seed, "override the command's random seed")
      ->each([&](const std::string&) { seed_given = true; });

  std::string in_path, out_path, corpus_dir, target_name;
  bool natural_durations = false;
  int n_utterances = 0;

  CLI::App* analyze = app.add_subcommand("analyze", "waveform to frame file");
  analyze->add_option("input", in_path, "WAV file")->required();
  analyze->add_option("output", out_path, "frame file")->required();

  CLI::App* train = app.add_subcommand("train", "fit a model on a corpus");
  train->add_option("corpus", corpus_dir, "corpus directory")->required();
  train->add_option("target", target_name, "duration or acoustic")
      ->required()
      ->check(CLI::IsMember({"duration", "acoustic"}));
  train->add_option("output", out_path, "model file")->required();

  CLI::App* synth = app.add_subcommand("synth", "labels to waveform");
  synth->add_option("labels", in_path, "phone label file")->required();
  synth->add_option("output", out_path, "WAV file")->required();
  synth->add_flag("--natural-durations", natural_durations,
                  "use the labelled durations verbatim");

  CLI::App* spectrogram =
      app.add_subcommand("spectrogram", "waveform to PGM image");
  spectrogram->add_option("input", in_path, "WAV file")->required();
  spectrogram->add_option("output", out_path, "PGM file")->required();

  CLI::App* quantize =
      app.add_subcommand("quantize", "checkpoint to 8-bit deployment model");
  quantize->add_option("input", in_path, "model checkpoint")->required();
  quantize->add_option("output", out_path, "quantized model")->required();

  CLI::App* gen =
      app.add_subcommand("gen-corpus", "write a synthetic corpus directory");
  gen->add_option("output", out_path, "corpus directory")->required();
  gen->add_option("count", n_utterances, "number of utterances")->required();

  for (CLI::App* sub : {analyze, train, synth, spectrogram, quantize, gen})
    sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    tts::ProjectConfig cfg = config_path.empty()
                                 ? tts::default_project_config()
                                 : tts::load_project_config(config_path);
    if (seed_given) {
      cfg.duration_training.seed = seed;
      cfg.acoustic_training.seed = seed;
      cfg.synthesis_noise_seed = seed;
    }

    if (*analyze) {
      tts::AnalyzeReport r = tts::cmd_analyze(in_path, out_path, cfg);
      std::printf("frames: %d\n", r.n_frames);
    } else if (*train) {
      tts::TrainTarget target = target_name == "duration"
                                    ? tts::TrainTarget::kDuration
                                    : tts::TrainTarget::kAcoustic;
      tts::TrainReport r = tts::cmd_train(corpus_dir, target, out_path, cfg);
      std::printf("utterances: %zu\n", r.n_utterances);
      std::printf("frames: %zu\n", r.n_frames);
      std::printf("baseline loss: %.6g\n", r.baseline_loss);
      std::printf("final loss: %.6g\n", r.loss_history.back());
      std::printf("model: %s\n", out_path.c_str());
      std::printf("loss report: %s\n", r.loss_csv_path.c_str());
    } else if (*synth) {
      tts::SynthReport r =
          tts::cmd_synth(in_path, out_path, cfg, natural_durations);
      std::printf("durations: %s\n",
                  r.natural_durations ? "natural" : "predicted");
      std::printf("frames: %d\n", r.n_frames);
      std::printf("seconds: %.3f\n", r.seconds);
      std::printf("wav: %s\n", out_path.c_str());
    } else if (*spectrogram) {
      tts::SpectrogramReport r = tts::cmd_spectrogram(in_path, out_path, cfg);
      std::printf("image: %dx%d\n", r.width, r.height);
      std::printf("pgm: %s\n", out_path.c_str());
    } else if (*quantize) {
      tts::QuantizeReport r = tts::cmd_quantize(in_path, out_path, cfg);
      std::printf("topology: %s\n", r.topology.c_str());
      std::printf("bytes: %zu\n", r.file_bytes);
      std::printf("joint bytes: %zu\n", r.joint_bytes);
      if (r.over_budget)
        std::fprintf(stderr,
                     "warning: joint quantized size %zu bytes is not under "
                     "the 102400 byte budget\n",
                     r.joint_bytes);
    } else if (*gen) {
      uint64_t corpus_seed = seed_given ? seed : 1;
      tts::GenCorpusReport r =
          tts::cmd_gen_corpus(out_path, n_utterances, corpus_seed, cfg);
      std::printf("utterances: %d\n", r.n_utterances);
      std::printf("dir: %s\n", out_path.c_str());
    }
  } catch (const tts::Error& e) {
    std::fprintf(stderr, "error:%s: %s\n", e.code_name(),
                 single_line(e.what()).c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error:internal: %s\n",
                 single_line(e.what()).c_str());
    return 1;
  }
  return 0;
}
