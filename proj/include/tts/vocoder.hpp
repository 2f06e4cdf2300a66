#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tts {

// Parameters of one 10 ms frame. Power is dB relative to full scale.
// Unvoiced frames carry f0 equal to the configured clamp value and a
// voicing boundary of zero.
struct AcousticFrame {
  std::vector<double> lsf;  // strictly increasing, radians in (0, pi)
  double f0 = 0.0;
  double power_db = 0.0;
  double voicing_boundary = 0.0;  // Hz
  bool voiced = false;
};

// Predictor in the convention A(z) = 1 - sum a_k z^-k.
struct LpcModel {
  std::vector<double> coefficients;
  double gain = 0.0;
};

struct AnalysisParams {
  int sample_rate = 16000;
  int order = 10;
  int frame_len = 160;    // 10 ms hop
  int window_len = 400;   // 25 ms Hamming window
  int pitch_window_len = 640;  // needs two periods at f0_min
  double f0_min = 60.0;
  double f0_max = 350.0;
  double f0_clamp = 400.0;
  double voicing_threshold = 0.5;
  double silence_floor_db = -60.0;
  int n_bands = 8;
  double harmonicity_threshold = 0.5;
};

struct SynthesisParams {
  int sample_rate = 16000;
  int frame_len = 160;
  int subframes_per_frame = 4;  // 2.5 ms coefficient update
  double f0_clamp = 400.0;
  uint64_t noise_seed = 0x6b43a9b5d2f8c11dull;
};

std::vector<double> autocorrelate(const std::vector<double>& block, int order);

struct LevinsonResult {
  LpcModel model;
  std::vector<double> reflections;
};

LevinsonResult levinson_durbin(const std::vector<double>& r, int order);

std::vector<double> lpc_to_lsf(const std::vector<double>& coefficients);

std::vector<double> lsf_to_lpc(const std::vector<double>& lsf);

struct F0Estimate {
  double f0 = 0.0;
  bool voiced = false;
  double periodicity = 0.0;
};

F0Estimate estimate_f0(const std::vector<double>& block,
                       const AnalysisParams& params);

// Voiced frames only; callers map unvoiced frames to 0 themselves.
double estimate_voicing_boundary(const std::vector<double>& block, double f0,
                                 const AnalysisParams& params);

std::vector<AcousticFrame> analyze(const std::vector<double>& samples,
                                   const AnalysisParams& params);

std::vector<double> synthesize(const std::vector<AcousticFrame>& frames,
                               const SynthesisParams& params);

// Binary parameter-track files ("AFRM").
void write_frames(const std::string& path, const std::vector<AcousticFrame>& frames,
                  int sample_rate, int order);

struct FrameFile {
  int sample_rate = 0;
  int order = 0;
  std::vector<AcousticFrame> frames;
};

FrameFile read_frames(const std::string& path, double f0_clamp = 400.0);

}  // namespace tts
