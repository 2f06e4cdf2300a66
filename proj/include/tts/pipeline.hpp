#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tts/acoustic_model.hpp"
#include "tts/corpus.hpp"
#include "tts/duration_model.hpp"
#include "tts/netgraph.hpp"
#include "tts/phones.hpp"
#include "tts/vocoder.hpp"

namespace tts {

// Global settings, read from one INI-style text file. Sections and keys are
// fixed; unknown ones are configuration errors. Global constants ([audio])
// are pushed down into the net and encoder configs at parse time.
struct ProjectConfig {
  int sample_rate = 16000;
  int lpc_order = 10;
  double frame_ms = 10.0;
  double f0_clamp = 400.0;

  double silence_threshold_db = -40.0;
  double target_power_db = -25.0;

  DurationNetConfig duration_net;
  TrainingSchedule duration_training;
  PhoneticNetConfig acoustic_net;
  TrainingSchedule acoustic_training;

  std::vector<double> duration_loss_weights;  // 1 entry
  std::vector<double> acoustic_loss_weights;  // lpc_order + 3 entries

  std::string duration_model_path = "duration.nnbg";
  std::string acoustic_model_path = "acoustic.nnbg";

  uint64_t synthesis_noise_seed = 0x6b43a9b5d2f8c11dull;

  int frame_len() const;
  double frame_s() const { return frame_ms / 1000.0; }
  AnalysisParams analysis() const;
  SynthesisParams synthesis() const;
};

ProjectConfig default_project_config();

// Throws kParse on malformed lines, kConfig on unknown or invalid settings.
ProjectConfig parse_project_config(const std::string& text);
ProjectConfig load_project_config(const std::string& path);
std::string serialize_project_config(const ProjectConfig& cfg);

void check_project_config(const ProjectConfig& cfg);

// ---- corpus directories ----

// A corpus directory holds per-utterance triples: <stem>.wav, <stem>.phn,
// <stem>.syn. Stems are processed in sorted order; every unusable triple
// contributes one "stem: reason" entry instead of aborting the scan.
struct CorpusLoad {
  std::vector<std::string> names;
  std::vector<Utterance> utterances;  // parallel to names
  std::vector<std::string> errors;
};

CorpusLoad load_corpus_dir(const std::string& dir, const PhoneSet& phones,
                           const ProjectConfig& cfg);

// Vocoder analysis of each utterance, parallelized per file.
std::vector<std::vector<AcousticFrame>> analyze_corpus(
    const std::vector<Utterance>& corpus, const AnalysisParams& params);

// ---- commands ----

struct AnalyzeReport {
  int n_frames = 0;
};

AnalyzeReport cmd_analyze(const std::string& wav_path,
                          const std::string& out_path,
                          const ProjectConfig& cfg);

enum class TrainTarget { kDuration, kAcoustic };

struct TrainReport {
  size_t n_utterances = 0;
  size_t n_frames = 0;
  double baseline_loss = 0.0;  // constant-mean predictor, same units as loss
  std::vector<double> loss_history;
  std::string loss_csv_path;
};

TrainReport cmd_train(const std::string& corpus_dir, TrainTarget target,
                      const std::string& model_out, const ProjectConfig& cfg);

struct SynthReport {
  int n_frames = 0;
  double seconds = 0.0;
  bool natural_durations = false;
};

// labels_path names a phone label file; the syntax file is the sibling with
// extension ".syn". With natural_durations the labelled segment lengths are
// used verbatim; otherwise the duration net supplies them and the syntax
// annotation is remapped onto the predicted grid.
SynthReport cmd_synth(const std::string& labels_path,
                      const std::string& out_wav, const ProjectConfig& cfg,
                      bool natural_durations);

// Row 0 is the top of the image (Nyquist); row height-1 is 0 Hz. Dark means
// high energy; the gray scale spans 50 dB below the image-wide peak.
struct SpectrogramImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major

  uint8_t at(int row, int col) const {
    return pixels[size_t(row) * size_t(width) + size_t(col)];
  }
};

// 25 ms Hamming window, 5 ms hop, 512-point transform (257 one-sided bins).
SpectrogramImage render_spectrogram(const std::vector<double>& samples,
                                    int sample_rate);

void write_pgm(const std::string& path, const SpectrogramImage& image);

struct SpectrogramReport {
  int width = 0;
  int height = 0;
};

SpectrogramReport cmd_spectrogram(const std::string& wav_path,
                                  const std::string& out_path,
                                  const ProjectConfig& cfg);

struct QuantizeReport {
  std::string topology;  // "duration" or "acoustic"
  size_t file_bytes = 0;
  size_t joint_bytes = 0;  // this file plus the other reference topology
  bool over_budget = false;
  bool already_quantized = false;
};

// The input checkpoint is matched to a reference topology by weight digest.
// An already-quantized input is copied through byte for byte.
QuantizeReport cmd_quantize(const std::string& model_in,
                            const std::string& model_out,
                            const ProjectConfig& cfg);

// Exact on-disk size of a quantized model file for this graph.
size_t quantized_model_file_bytes(const Graph& g, size_t norm_dims);

struct GenCorpusReport {
  int n_utterances = 0;
  std::vector<std::string> names;
};

GenCorpusReport cmd_gen_corpus(const std::string& out_dir, int n_utterances,
                               uint64_t seed, const ProjectConfig& cfg);

// ---- duration grid remapping ----

// Rebuilds the segment list with the given per-segment durations (seconds,
// whole-frame multiples), keeping phones and order.
std::vector<PhoneSegment> segments_with_durations(
    const std::vector<PhoneSegment>& segments,
    const std::vector<double>& seconds, int sample_rate, double frame_s);

// Maps every annotation position from the `from` grid onto the `to` grid:
// shared segment boundaries map exactly, interior positions linearly.
SyntacticAnnotation remap_syntax(const SyntacticAnnotation& syntax,
                                 const std::vector<PhoneSegment>& from,
                                 const std::vector<PhoneSegment>& to);

}  // namespace tts
