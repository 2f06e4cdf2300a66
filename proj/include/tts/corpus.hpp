#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tts/phones.hpp"

namespace tts {

// One labelled phonetic interval. Sample indices, end exclusive.
struct PhoneSegment {
  int64_t start = 0;
  int64_t end = 0;
  std::string phone;

  int64_t length() const { return end - start; }
};

enum class Stress { kNone = 0, kPrimary = 1, kSecondary = 2 };
enum class WordClass { kFunction = 0, kContent = 1 };

struct Span {
  int64_t start = 0;
  int64_t end = 0;
};

struct WordSpan {
  int64_t start = 0;
  int64_t end = 0;
  WordClass word_class = WordClass::kContent;
  int level = 0;  // 0..15, bar-coded downstream
};

struct TobiMark {
  int64_t position = 0;
  std::string label;
};

struct SyntacticAnnotation {
  std::vector<Span> syllables;
  std::vector<Stress> stress;  // parallel to syllables
  std::vector<WordSpan> words;
  std::vector<Span> phrases;
  std::vector<Span> clauses;
  std::vector<Span> sentences;
  std::vector<TobiMark> tobi_marks;
};

struct Utterance {
  std::vector<double> samples;  // mono, full-scale [-1, 1]
  int sample_rate = 0;
  std::vector<PhoneSegment> segments;
  SyntacticAnnotation syntax;
};

// ---- label parsing ----

// TIMIT .phn convention: one "start end label" per line.
std::vector<PhoneSegment> parse_phone_labels(const std::string& text,
                                             const PhoneSet& phones);

std::string serialize_phone_labels(const std::vector<PhoneSegment>& segments);

// Line-based records: SYL/WRD/PHR/CLS/SEN spans plus TOBI marks.
// n_samples > 0 additionally enforces that every span lies inside the
// utterance; pass 0 when the waveform length is not known yet.
SyntacticAnnotation parse_syntax_labels(const std::string& text,
                                        int64_t n_samples = 0);

std::string serialize_syntax_labels(const SyntacticAnnotation& syntax);

// Throws a structural Error if the assembled utterance breaks any invariant.
void validate_utterance(const Utterance& utt, const PhoneSet& phones);

// ---- waveform preparation ----

// Scales the waveform by one global gain so the average power over
// non-silent 10 ms frames equals target_power (linear mean square in
// full-scale units). A frame is silent when its power falls more than
// |silence_threshold_db| below the utterance's peak frame power.
// All-zero input is returned unchanged.
std::vector<double> normalize_power(const std::vector<double>& samples,
                                    int sample_rate,
                                    double silence_threshold_db,
                                    double target_power);

// ---- frame alignment ----

struct FrameLabel {
  int frame = 0;
  int segment = 0;      // index into the segment list
  std::string phone;
  double fraction = 0;  // position of the frame center within the segment, [0,1)
};

// One record per whole frame of [0, last end); a frame belongs to the
// segment containing its center sample (half-open intervals).
std::vector<FrameLabel> align_frames(const std::vector<PhoneSegment>& segments,
                                     int frame_len);

// ---- synthetic corpus ----

// Per-phone generation rule: fixed duration and a fixed acoustic target.
struct PhoneRule {
  int duration_frames = 0;
  bool voiced = false;
  double f0 = 0.0;           // Hz; ignored when unvoiced
  double power_db = -30.0;   // dB relative to full scale
  double voicing_boundary = 0.0;  // Hz; 0 for unvoiced
  std::vector<double> lsf;   // radians, strictly increasing in (0, pi)
};

struct Rulebook {
  std::map<std::string, PhoneRule> rules;
  std::vector<std::string> sentence_consonants;
  std::vector<std::string> sentence_vowels;
  std::string silence_phone = "h#";
  int stressed_vowel_bonus_frames = 2;

  const PhoneRule& rule(const std::string& phone) const;

  static Rulebook built_in_default(int lpc_order, int sample_rate);
};

struct SynthesisParams;  // vocoder.hpp

// Deterministic given the seed. Segment durations follow the rulebook
// exactly; audio is the vocoder's rendering of the rulebook parameters.
std::vector<Utterance> generate_synthetic_corpus(uint64_t seed, int n_utterances,
                                                 const Rulebook& rulebook,
                                                 const PhoneSet& phones,
                                                 const SynthesisParams& synth);

}  // namespace tts
