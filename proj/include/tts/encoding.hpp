#pragma once

#include <string>
#include <vector>

#include "tts/corpus.hpp"
#include "tts/phones.hpp"

namespace tts {

enum class FieldKind { kBinary, kOneOfN, kBarCode, kScalar, kFeatures };

struct FieldSpec {
  std::string name;
  int offset = 0;
  int width = 0;
  FieldKind kind = FieldKind::kBinary;
};

// Field map for an encoder's output; the single source of truth for widths.
class Layout {
 public:
  void add(const std::string& name, int width, FieldKind kind);
  int width() const { return width_; }
  const std::vector<FieldSpec>& fields() const { return fields_; }
  const FieldSpec& field(const std::string& name) const;
  bool has_field(const std::string& name) const;

  // Throws on any per-field invariant violation (1-of-n, bar code shape,
  // scalar range, declared total width).
  void check(const std::vector<double>& values) const;

 private:
  std::vector<FieldSpec> fields_;
  int width_ = 0;
};

struct FeatureVector {
  std::vector<double> values;
  Layout layout;
};

struct TapSchedule {
  std::vector<int> offsets;  // frame units, strictly increasing, contains 0
};

std::vector<double> one_of_n(int index, int n);
std::vector<double> bar_code(int value, int max_value);
std::vector<double> phone_features(const std::string& phone,
                                   const PhoneSet& phones);

struct SegmentEncoderConfig {
  int neighbor_context = 3;    // segments either side
  int distance_saturation = 7;  // bar-code ceiling, segment units
  int word_level_max = 15;
};

Layout segment_layout(const PhoneSet& phones, const SegmentEncoderConfig& cfg);

FeatureVector encode_segment(int segment_index,
                             const std::vector<PhoneSegment>& segments,
                             const SyntacticAnnotation& syntax,
                             const PhoneSet& phones,
                             const SegmentEncoderConfig& cfg);

struct FrameEncoderConfig {
  int sample_rate = 16000;
  int frame_len = 160;
  // geometric grids; a bar code counts the thresholds at or below the value
  std::vector<double> duration_thresholds_ms = {14, 20, 28, 40, 57, 80, 113,
                                                160};
  std::vector<int> distance_thresholds_frames = {1, 2, 4, 8, 16, 32, 64};
};

Layout frame_layout(const PhoneSet& phones, const TapSchedule& taps,
                    const FrameEncoderConfig& cfg);

FeatureVector encode_frame(int frame_index,
                           const std::vector<FrameLabel>& frame_labels,
                           const std::vector<PhoneSegment>& segments,
                           const SyntacticAnnotation& syntax,
                           const PhoneSet& phones, const TapSchedule& taps,
                           const FrameEncoderConfig& cfg);

TapSchedule default_tap_schedule(double window_ms, double frame_ms);

}  // namespace tts
