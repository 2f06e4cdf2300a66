#include "tts/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "tts/error.hpp"
#include "tts/util.hpp"
#include "tts/vocoder.hpp"

namespace tts {
namespace {

int64_t parse_sample_index(const std::string& token, int line_no) {
  size_t used = 0;
  int64_t v = 0;
  try {
    v = std::stoll(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != token.size())
    throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) +
                                       ": expected integer, got \"" + token +
                                       "\"");
  return v;
}

std::string attr_value(const std::string& token, const std::string& key,
                       int line_no) {
  const std::string prefix = key + "=";
  if (token.rfind(prefix, 0) != 0)
    throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) +
                                       ": expected " + prefix + "..., got \"" +
                                       token + "\"");
  return token.substr(prefix.size());
}

bool contains(const Span& outer, int64_t start, int64_t end) {
  return outer.start <= start && end <= outer.end;
}

void validate_syntax(const SyntacticAnnotation& syn, int64_t n_samples) {
  auto check_span = [&](int64_t s, int64_t e, const char* what) {
    if (s < 0 || s >= e)
      throw Error(ErrorCode::kStructural,
                  std::string(what) + " span must satisfy 0 <= start < end");
    if (n_samples > 0 && e > n_samples)
      throw Error(ErrorCode::kStructural,
                  std::string(what) + " span extends past the waveform");
  };
  for (const auto& s : syn.syllables) check_span(s.start, s.end, "syllable");
  for (const auto& w : syn.words) check_span(w.start, w.end, "word");
  for (const auto& p : syn.phrases) check_span(p.start, p.end, "phrase");
  for (const auto& c : syn.clauses) check_span(c.start, c.end, "clause");
  for (const auto& s : syn.sentences) check_span(s.start, s.end, "sentence");
  if (syn.stress.size() != syn.syllables.size())
    throw Error(ErrorCode::kStructural,
                "stress list length differs from syllable count");
  for (const auto& syl : syn.syllables) {
    int owners = 0;
    for (const auto& w : syn.words)
      if (contains({w.start, w.end}, syl.start, syl.end)) ++owners;
    if (owners != 1)
      throw Error(ErrorCode::kStructural,
                  "syllable at " + std::to_string(syl.start) +
                      " lies within " + std::to_string(owners) +
                      " word spans, expected exactly 1");
  }
  for (const auto& w : syn.words) {
    int owners = 0;
    for (const auto& s : syn.sentences)
      if (contains(s, w.start, w.end)) ++owners;
    if (owners != 1)
      throw Error(ErrorCode::kStructural,
                  "word at " + std::to_string(w.start) + " lies within " +
                      std::to_string(owners) + " sentence spans, expected "
                      "exactly 1");
  }
  for (const auto& t : syn.tobi_marks)
    if (t.position < 0 || (n_samples > 0 && t.position > n_samples))
      throw Error(ErrorCode::kStructural, "prosodic mark outside the waveform");
}

// Stable all-pole polynomial from conjugate pole pairs placed at the two
// formants plus broad filler pairs; returns predictor coefficients.
std::vector<double> formant_predictor(double f1_hz, double f2_hz, int order,
                                      int sample_rate) {
  if (order < 6)
    throw Error(ErrorCode::kArgument, "formant predictor needs order >= 6");
  std::vector<std::pair<double, double>> pairs;  // (freq_hz, radius)
  pairs.emplace_back(f1_hz, 0.95);
  pairs.emplace_back(f2_hz, 0.95);
  const int n_fill = order / 2 - 2;
  const double nyquist = sample_rate / 2.0;
  for (int i = 0; i < n_fill; ++i)
    pairs.emplace_back(2500.0 + (nyquist - 3000.0) * i / std::max(1, n_fill - 1),
                       0.6);
  std::vector<double> poly{1.0};
  for (const auto& [freq, radius] : pairs) {
    const double theta = 2.0 * std::numbers::pi * freq / sample_rate;
    std::vector<double> quad{1.0, -2.0 * radius * std::cos(theta),
                             radius * radius};
    std::vector<double> next(poly.size() + 2, 0.0);
    for (size_t i = 0; i < poly.size(); ++i)
      for (size_t j = 0; j < 3; ++j) next[i + j] += poly[i] * quad[j];
    poly = std::move(next);
  }
  if (order % 2 == 1) {
    std::vector<double> next(poly.size() + 1, 0.0);
    for (size_t i = 0; i < poly.size(); ++i) {
      next[i] += poly[i];
      next[i + 1] += poly[i] * -0.3;
    }
    poly = std::move(next);
  }
  std::vector<double> a(order);
  for (int k = 1; k <= order; ++k) a[k - 1] = -poly[k];
  return a;
}

std::vector<double> flat_lsf(int order) {
  std::vector<double> lsf(order);
  for (int k = 1; k <= order; ++k)
    lsf[k - 1] = std::numbers::pi * k / (order + 1);
  return lsf;
}

}  // namespace

std::vector<PhoneSegment> parse_phone_labels(const std::string& text,
                                             const PhoneSet& phones) {
  std::vector<PhoneSegment> segments;
  int line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    auto tokens = split_ws(line);
    if (tokens.size() != 3)
      throw Error(ErrorCode::kParse,
                  "line " + std::to_string(line_no) +
                      ": expected \"start end label\", got \"" + line + "\"");
    PhoneSegment seg;
    seg.start = parse_sample_index(tokens[0], line_no);
    seg.end = parse_sample_index(tokens[1], line_no);
    seg.phone = tokens[2];
    if (seg.start < 0 || seg.start >= seg.end)
      throw Error(ErrorCode::kStructural,
                  "line " + std::to_string(line_no) +
                      ": segment must satisfy 0 <= start < end");
    if (!segments.empty() && seg.start != segments.back().end)
      throw Error(ErrorCode::kStructural,
                  "line " + std::to_string(line_no) +
                      ": segment start " + std::to_string(seg.start) +
                      " does not continue previous end " +
                      std::to_string(segments.back().end));
    phones.index_of(seg.phone);
    segments.push_back(std::move(seg));
  }
  return segments;
}

std::string serialize_phone_labels(const std::vector<PhoneSegment>& segments) {
  std::string out;
  for (const auto& s : segments) {
    out += std::to_string(s.start);
    out += ' ';
    out += std::to_string(s.end);
    out += ' ';
    out += s.phone;
    out += '\n';
  }
  return out;
}

SyntacticAnnotation parse_syntax_labels(const std::string& text,
                                        int64_t n_samples) {
  SyntacticAnnotation syn;
  int line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    auto tokens = split_ws(line);
    const std::string& kind = tokens[0];
    auto need = [&](size_t n) {
      if (tokens.size() != n)
        throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) +
                                           ": malformed " + kind + " record");
    };
    if (kind == "SYL") {
      need(4);
      Span s{parse_sample_index(tokens[1], line_no),
             parse_sample_index(tokens[2], line_no)};
      const std::string code = attr_value(tokens[3], "stress", line_no);
      if (code != "0" && code != "1" && code != "2")
        throw Error(ErrorCode::kStructural, "line " + std::to_string(line_no) +
                                                ": unknown stress code \"" +
                                                code + "\"");
      syn.syllables.push_back(s);
      syn.stress.push_back(static_cast<Stress>(code[0] - '0'));
    } else if (kind == "WRD") {
      need(5);
      WordSpan w;
      w.start = parse_sample_index(tokens[1], line_no);
      w.end = parse_sample_index(tokens[2], line_no);
      const std::string cls = attr_value(tokens[3], "class", line_no);
      if (cls == "function")
        w.word_class = WordClass::kFunction;
      else if (cls == "content")
        w.word_class = WordClass::kContent;
      else
        throw Error(ErrorCode::kStructural, "line " + std::to_string(line_no) +
                                                ": unknown word class \"" +
                                                cls + "\"");
      const std::string level = attr_value(tokens[4], "level", line_no);
      w.level = static_cast<int>(parse_sample_index(level, line_no));
      if (w.level < 0 || w.level > 15)
        throw Error(ErrorCode::kStructural,
                    "line " + std::to_string(line_no) +
                        ": word level must lie in 0..15");
      syn.words.push_back(w);
    } else if (kind == "PHR" || kind == "CLS" || kind == "SEN") {
      need(3);
      Span s{parse_sample_index(tokens[1], line_no),
             parse_sample_index(tokens[2], line_no)};
      if (kind == "PHR")
        syn.phrases.push_back(s);
      else if (kind == "CLS")
        syn.clauses.push_back(s);
      else
        syn.sentences.push_back(s);
    } else if (kind == "TOBI") {
      need(3);
      syn.tobi_marks.push_back(
          {parse_sample_index(tokens[1], line_no), tokens[2]});
    } else {
      throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) +
                                         ": unknown record type \"" + kind +
                                         "\"");
    }
  }
  validate_syntax(syn, n_samples);
  return syn;
}

std::string serialize_syntax_labels(const SyntacticAnnotation& syn) {
  std::string out;
  for (size_t i = 0; i < syn.syllables.size(); ++i) {
    out += "SYL " + std::to_string(syn.syllables[i].start) + ' ' +
           std::to_string(syn.syllables[i].end) +
           " stress=" + std::to_string(static_cast<int>(syn.stress[i])) + '\n';
  }
  for (const auto& w : syn.words) {
    out += "WRD " + std::to_string(w.start) + ' ' + std::to_string(w.end) +
           " class=" +
           (w.word_class == WordClass::kFunction ? "function" : "content") +
           " level=" + std::to_string(w.level) + '\n';
  }
  for (const auto& p : syn.phrases)
    out += "PHR " + std::to_string(p.start) + ' ' + std::to_string(p.end) + '\n';
  for (const auto& c : syn.clauses)
    out += "CLS " + std::to_string(c.start) + ' ' + std::to_string(c.end) + '\n';
  for (const auto& s : syn.sentences)
    out += "SEN " + std::to_string(s.start) + ' ' + std::to_string(s.end) + '\n';
  for (const auto& t : syn.tobi_marks)
    out += "TOBI " + std::to_string(t.position) + ' ' + t.label + '\n';
  return out;
}

void validate_utterance(const Utterance& utt, const PhoneSet& phones) {
  if (utt.segments.empty())
    throw Error(ErrorCode::kStructural, "utterance has no phone segments");
  int64_t prev_end = utt.segments.front().start;
  if (prev_end < 0)
    throw Error(ErrorCode::kStructural, "first segment starts before sample 0");
  for (const auto& seg : utt.segments) {
    if (seg.start != prev_end || seg.start >= seg.end)
      throw Error(ErrorCode::kStructural,
                  "segments must be contiguous with start < end");
    phones.index_of(seg.phone);
    prev_end = seg.end;
  }
  if (prev_end > static_cast<int64_t>(utt.samples.size()))
    throw Error(ErrorCode::kStructural,
                "last segment extends past the waveform");
  validate_syntax(utt.syntax, static_cast<int64_t>(utt.samples.size()));
}

std::vector<double> normalize_power(const std::vector<double>& samples,
                                    int sample_rate,
                                    double silence_threshold_db,
                                    double target_power) {
  if (samples.empty())
    throw Error(ErrorCode::kArgument, "cannot normalize an empty waveform");
  if (silence_threshold_db >= 0.0)
    throw Error(ErrorCode::kArgument, "silence threshold must be negative");
  const int frame_len = sample_rate / 100;
  const int n = static_cast<int>(samples.size());

  struct FrameInfo {
    double energy;
    int count;
  };
  std::vector<FrameInfo> frames;
  for (int start = 0; start < n; start += frame_len) {
    int count = std::min(frame_len, n - start);
    double energy = 0.0;
    for (int i = 0; i < count; ++i)
      energy += samples[start + i] * samples[start + i];
    frames.push_back({energy, count});
  }
  double peak = 0.0;
  for (const auto& f : frames) peak = std::max(peak, f.energy / f.count);
  if (peak <= 0.0) return samples;

  const double threshold = peak * std::pow(10.0, silence_threshold_db / 10.0);
  double energy = 0.0;
  int64_t count = 0;
  for (const auto& f : frames) {
    if (f.energy / f.count >= threshold) {
      energy += f.energy;
      count += f.count;
    }
  }
  const double gain = std::sqrt(target_power / (energy / count));
  std::vector<double> out(samples);
  for (auto& v : out) v *= gain;
  return out;
}

std::vector<FrameLabel> align_frames(const std::vector<PhoneSegment>& segments,
                                     int frame_len) {
  if (frame_len <= 0)
    throw Error(ErrorCode::kArgument, "frame length must be positive");
  std::vector<FrameLabel> out;
  if (segments.empty()) return out;
  const int64_t total = segments.back().end;
  const int64_t n_frames = total / frame_len;
  size_t seg = 0;
  for (int64_t f = 0; f < n_frames; ++f) {
    const int64_t center = f * frame_len + frame_len / 2;
    while (seg + 1 < segments.size() && center >= segments[seg].end) ++seg;
    const auto& s = segments[seg];
    FrameLabel rec;
    rec.frame = static_cast<int>(f);
    rec.segment = static_cast<int>(seg);
    rec.phone = s.phone;
    rec.fraction = static_cast<double>(center - s.start) / (s.end - s.start);
    out.push_back(std::move(rec));
  }
  return out;
}

const PhoneRule& Rulebook::rule(const std::string& phone) const {
  auto it = rules.find(phone);
  if (it == rules.end())
    throw Error(ErrorCode::kCorpus, "no generation rule for phone " + phone);
  return it->second;
}

Rulebook Rulebook::built_in_default(int lpc_order, int sample_rate) {
  Rulebook rb;
  auto add = [&](const std::string& phone, int frames, bool voiced, double f0,
                 double power_db, double boundary, double f1, double f2) {
    PhoneRule r;
    r.duration_frames = frames;
    r.voiced = voiced;
    r.f0 = f0;
    r.power_db = power_db;
    r.voicing_boundary = boundary;
    r.lsf = lpc_to_lsf(formant_predictor(f1, f2, lpc_order, sample_rate));
    rb.rules[phone] = r;
  };
  const double nyq = sample_rate / 2.0;
  PhoneRule silence;
  silence.duration_frames = 8;
  silence.voiced = false;
  silence.power_db = -55.0;
  silence.lsf = flat_lsf(lpc_order);
  rb.rules["h#"] = silence;

  add("s", 6, false, 0.0, -33.0, 0.0, 5500.0, 6800.0);
  add("sh", 6, false, 0.0, -35.0, 0.0, 2500.0, 5000.0);
  add("f", 6, false, 0.0, -38.0, 0.0, 4000.0, 6200.0);
  add("m", 6, true, 110.0, -30.0, nyq, 250.0, 2200.0);
  add("n", 6, true, 112.0, -30.0, nyq, 250.0, 1700.0);
  add("aa", 12, true, 120.0, -25.0, nyq, 700.0, 1200.0);
  add("iy", 12, true, 130.0, -25.0, nyq, 300.0, 2300.0);
  add("uw", 12, true, 125.0, -25.0, nyq, 320.0, 900.0);
  add("ae", 12, true, 118.0, -25.0, nyq, 650.0, 1700.0);

  rb.sentence_consonants = {"s", "sh", "f", "m", "n"};
  rb.sentence_vowels = {"aa", "iy", "uw", "ae"};
  return rb;
}

std::vector<Utterance> generate_synthetic_corpus(uint64_t seed,
                                                 int n_utterances,
                                                 const Rulebook& rulebook,
                                                 const PhoneSet& phones,
                                                 const SynthesisParams& synth) {
  if (n_utterances <= 0)
    throw Error(ErrorCode::kArgument, "utterance count must be positive");
  std::vector<Utterance> corpus;
  corpus.reserve(n_utterances);
  Rng base(seed);

  for (int u = 0; u < n_utterances; ++u) {
    Rng rng = base.fork(static_cast<uint64_t>(u) + 1);
    Utterance utt;
    utt.sample_rate = synth.sample_rate;

    const int n_syl = rng.uniform_int(2, 6);
    struct Syllable {
      std::string consonant;
      std::string vowel;
      Stress stress;
    };
    std::vector<Syllable> syllables;
    for (int s = 0; s < n_syl; ++s) {
      Syllable syl;
      syl.consonant = rulebook.sentence_consonants[rng.uniform_int(
          0, static_cast<int>(rulebook.sentence_consonants.size()) - 1)];
      syl.vowel = rulebook.sentence_vowels[rng.uniform_int(
          0, static_cast<int>(rulebook.sentence_vowels.size()) - 1)];
      syl.stress = static_cast<Stress>(rng.uniform_int(0, 2));
      syllables.push_back(std::move(syl));
    }

    std::vector<AcousticFrame> track;
    int64_t cursor = 0;
    auto push_phone = [&](const std::string& phone, Stress stress) {
      const auto& rule = rulebook.rule(phone);
      int frames = rule.duration_frames;
      const bool is_vowel =
          std::find(rulebook.sentence_vowels.begin(),
                    rulebook.sentence_vowels.end(),
                    phone) != rulebook.sentence_vowels.end();
      if (is_vowel && stress == Stress::kPrimary)
        frames += rulebook.stressed_vowel_bonus_frames;
      PhoneSegment seg;
      seg.start = cursor;
      seg.end = cursor + static_cast<int64_t>(frames) * synth.frame_len;
      seg.phone = phone;
      cursor = seg.end;
      utt.segments.push_back(std::move(seg));
      for (int fidx = 0; fidx < frames; ++fidx) {
        AcousticFrame f;
        f.lsf = rule.lsf;
        f.voiced = rule.voiced;
        f.f0 = rule.voiced ? rule.f0 : synth.f0_clamp;
        f.power_db = rule.power_db;
        f.voicing_boundary = rule.voiced ? rule.voicing_boundary : 0.0;
        track.push_back(std::move(f));
      }
    };

    push_phone(rulebook.silence_phone, Stress::kNone);
    std::vector<Span> syl_spans;
    for (const auto& syl : syllables) {
      int64_t start = cursor;
      push_phone(syl.consonant, syl.stress);
      push_phone(syl.vowel, syl.stress);
      syl_spans.push_back({start, cursor});
      utt.syntax.stress.push_back(syl.stress);
    }
    push_phone(rulebook.silence_phone, Stress::kNone);

    utt.syntax.syllables = syl_spans;
    for (const auto& span : syl_spans) {
      WordSpan w;
      w.start = span.start;
      w.end = span.end;
      w.word_class = rng.uniform_int(0, 1) == 0 ? WordClass::kFunction
                                                : WordClass::kContent;
      w.level = rng.uniform_int(0, 7);
      utt.syntax.words.push_back(w);
    }
    const int64_t speech_start = syl_spans.front().start;
    const int64_t speech_end = syl_spans.back().end;
    if (n_syl >= 4) {
      int64_t mid = syl_spans[n_syl / 2].start;
      utt.syntax.phrases.push_back({speech_start, mid});
      utt.syntax.phrases.push_back({mid, speech_end});
    } else {
      utt.syntax.phrases.push_back({speech_start, speech_end});
    }
    utt.syntax.clauses = utt.syntax.phrases;
    utt.syntax.sentences.push_back({speech_start, speech_end});
    static const char* kTones[] = {"H*", "L-L%", "H-H%"};
    for (const auto& p : utt.syntax.phrases)
      utt.syntax.tobi_marks.push_back({p.end, kTones[rng.uniform_int(0, 2)]});

    SynthesisParams utt_synth = synth;
    utt_synth.noise_seed = rng.next_u64();
    utt.samples = synthesize(track, utt_synth);
    validate_utterance(utt, phones);
    corpus.push_back(std::move(utt));
  }
  return corpus;
}

}  // namespace tts
