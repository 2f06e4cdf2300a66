#pragma once

#include <vector>

#include "tts/corpus.hpp"
#include "tts/encoding.hpp"
#include "tts/netgraph.hpp"
#include "tts/phones.hpp"

namespace tts {

// Per-segment log-duration predictor: a phone-identity stream through a
// shift register for context, a per-segment prosodic stream, and a
// teacher-forced feedback buffer of recent outputs.
struct DurationNetConfig {
  int context = 3;  // segments each side of center
  int hidden1 = 64;
  int hidden2 = 32;
  int hidden3 = 16;
  int recurrent_depth = 2;
  uint64_t seed = 1;
  SegmentEncoderConfig encoder;
};

GraphSpec duration_net_spec(const DurationNetConfig& cfg, const PhoneSet& phones);
Graph build_duration_net(const DurationNetConfig& cfg, const PhoneSet& phones);

// Natural log of the segment duration in seconds.
double duration_target(const PhoneSegment& seg, int sample_rate);

// Round to the nearest whole frame, at least one.
int duration_frames(double seconds, double frame_s);

// Step inputs for one utterance, one step per segment: stream 1 carries the
// phone one-hot advanced by the context depth so the shift register is
// centered on the segment being predicted; stream 2 carries that segment's
// prosodic features.
std::vector<StepInputs> duration_inputs(const Utterance& utt,
                                        const PhoneSet& phones,
                                        const DurationNetConfig& cfg);

struct DurationDataset {
  Dataset data;        // one sequence per utterance
  Normalization norm;  // fitted on the raw log-duration targets
};

DurationDataset assemble_duration_dataset(const std::vector<Utterance>& corpus,
                                          const PhoneSet& phones,
                                          const DurationNetConfig& cfg);

// Durations in seconds, quantized to whole frames (minimum one).
std::vector<double> predict_durations(const Utterance& utt, const Graph& net,
                                      const Normalization& norm,
                                      const PhoneSet& phones,
                                      const DurationNetConfig& cfg,
                                      double frame_s = 0.010);

}  // namespace tts
