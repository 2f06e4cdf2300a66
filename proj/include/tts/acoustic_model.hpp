#pragma once

#include <vector>

#include "tts/corpus.hpp"
#include "tts/encoding.hpp"
#include "tts/netgraph.hpp"
#include "tts/phones.hpp"
#include "tts/vocoder.hpp"

namespace tts {

// Per-frame acoustic parameter predictor: time-delay windows over the phone
// stream for identity and articulatory features, coded timing/distance
// streams, a feedback buffer of recent outputs, and a merge trunk emitting
// the normalized parameter vector (order LSFs + f0 + power + boundary).
struct PhoneticNetConfig {
  TapSchedule taps;  // empty = the standard window over window_ms
  double window_ms = 300.0;
  int phone_hidden = 28;   // main phone-identity bank
  int phone_aux = 8;       // second phone-identity bank
  int feature_hidden = 20;  // main articulatory-feature bank
  int feature_aux = 6;      // second articulatory-feature bank
  int trunk1 = 128;
  int trunk2 = 64;
  int recurrent_depth = 2;
  int lpc_order = 10;
  double f0_min = 60.0;
  double f0_clamp = 400.0;
  double lsf_min_gap = 0.005;  // radians
  uint64_t seed = 2;
  FrameEncoderConfig encoder;
};

// The schedule actually used: cfg.taps, or the default window when empty.
TapSchedule phonetic_taps(const PhoneticNetConfig& cfg);

GraphSpec phonetic_net_spec(const PhoneticNetConfig& cfg, const PhoneSet& phones);
Graph build_phonetic_net(const PhoneticNetConfig& cfg, const PhoneSet& phones);

// Raw (un-normalized) parameter vector of one frame, and its inverse with
// the output repaired onto the AcousticFrame invariants.
std::vector<double> frame_to_raw(const AcousticFrame& frame);
AcousticFrame raw_to_frame(const std::vector<double>& raw,
                           const PhoneticNetConfig& cfg, int sample_rate);

// Per-frame raw target rows for one utterance; validates that the label
// grid and the analysis agree on the frame count.
std::vector<std::vector<double>> acoustic_targets(
    const Utterance& utt, const std::vector<AcousticFrame>& analyzed,
    const PhoneticNetConfig& cfg);

// Step inputs for one utterance's frame grid, split into the net's four
// streams (tap phones, tap features, timing codes, distance codes).
std::vector<StepInputs> acoustic_inputs(const Utterance& utt,
                                        const PhoneSet& phones,
                                        const PhoneticNetConfig& cfg);

struct AcousticDataset {
  Dataset data;        // one sequence per utterance, one step per frame
  Normalization norm;  // fitted on the raw parameter rows
};

AcousticDataset assemble_acoustic_dataset(
    const std::vector<Utterance>& corpus,
    const std::vector<std::vector<AcousticFrame>>& analyzed,
    const PhoneSet& phones, const PhoneticNetConfig& cfg);

// Sequential prediction over the utterance's frame grid; every returned
// frame satisfies the AcousticFrame invariants.
std::vector<AcousticFrame> predict_frames(const Utterance& utt,
                                          const Graph& net,
                                          const Normalization& norm,
                                          const PhoneSet& phones,
                                          const PhoneticNetConfig& cfg);

// Saliency ranges for the tap windows: one range per tap per stream,
// labelled "tap<offset>_phone" / "tap<offset>_features".
std::vector<TapRange> acoustic_tap_ranges(const PhoneticNetConfig& cfg,
                                          const PhoneSet& phones);

}  // namespace tts
