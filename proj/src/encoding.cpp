#include "tts/encoding.hpp"

#include <algorithm>
#include <cmath>

#include "tts/error.hpp"

namespace tts {
namespace {

void append(std::vector<double>& out, const std::vector<double>& slice) {
  out.insert(out.end(), slice.begin(), slice.end());
}

int count_thresholds_leq(const std::vector<double>& thresholds, double value) {
  int n = 0;
  for (double t : thresholds)
    if (t <= value) ++n;
  return n;
}

}  // namespace

void Layout::add(const std::string& name, int width, FieldKind kind) {
  if (width <= 0)
    throw Error(ErrorCode::kArgument, "field " + name + " needs width > 0");
  fields_.push_back({name, width_, width, kind});
  width_ += width;
}

const FieldSpec& Layout::field(const std::string& name) const {
  for (const auto& f : fields_)
    if (f.name == name) return f;
  throw Error(ErrorCode::kArgument, "layout has no field named " + name);
}

bool Layout::has_field(const std::string& name) const {
  for (const auto& f : fields_)
    if (f.name == name) return true;
  return false;
}

void Layout::check(const std::vector<double>& values) const {
  if (static_cast<int>(values.size()) != width_)
    throw Error(ErrorCode::kStructural,
                "vector length " + std::to_string(values.size()) +
                    " differs from layout width " + std::to_string(width_));
  for (const auto& f : fields_) {
    const double* v = values.data() + f.offset;
    auto fail = [&](const std::string& what) {
      throw Error(ErrorCode::kStructural, "field " + f.name + ": " + what);
    };
    switch (f.kind) {
      case FieldKind::kBinary:
      case FieldKind::kFeatures:
        for (int i = 0; i < f.width; ++i)
          if (v[i] != 0.0 && v[i] != 1.0) fail("entries must be 0 or 1");
        break;
      case FieldKind::kOneOfN: {
        int ones = 0;
        for (int i = 0; i < f.width; ++i) {
          if (v[i] != 0.0 && v[i] != 1.0) fail("entries must be 0 or 1");
          if (v[i] == 1.0) ++ones;
        }
        if (ones != 1) fail("expected exactly one active entry");
        break;
      }
      case FieldKind::kBarCode: {
        bool in_zeros = false;
        for (int i = 0; i < f.width; ++i) {
          if (v[i] != 0.0 && v[i] != 1.0) fail("entries must be 0 or 1");
          if (v[i] == 0.0) in_zeros = true;
          if (v[i] == 1.0 && in_zeros) fail("ones must form a leading run");
        }
        break;
      }
      case FieldKind::kScalar:
        for (int i = 0; i < f.width; ++i)
          if (v[i] < 0.0 || v[i] > 1.0) fail("entries must lie in [0,1]");
        break;
    }
  }
}

std::vector<double> one_of_n(int index, int n) {
  if (index < 0 || index >= n)
    throw Error(ErrorCode::kArgument,
                "one-of-n index " + std::to_string(index) +
                    " outside [0, " + std::to_string(n) + ")");
  std::vector<double> v(n, 0.0);
  v[index] = 1.0;
  return v;
}

std::vector<double> bar_code(int value, int max_value) {
  if (value < 0 || value > max_value)
    throw Error(ErrorCode::kArgument,
                "bar code value " + std::to_string(value) + " outside [0, " +
                    std::to_string(max_value) + "]");
  std::vector<double> v(max_value, 0.0);
  for (int i = 0; i < value; ++i) v[i] = 1.0;
  return v;
}

std::vector<double> phone_features(const std::string& phone,
                                   const PhoneSet& phones) {
  return phones.encode_features(phones.index_of(phone));
}

Layout segment_layout(const PhoneSet& phones, const SegmentEncoderConfig& cfg) {
  Layout l;
  l.add("phone", phones.size(), FieldKind::kOneOfN);
  l.add("features", PhoneSet::feature_width(), FieldKind::kFeatures);
  for (int k = -cfg.neighbor_context; k <= cfg.neighbor_context; ++k) {
    if (k == 0) continue;
    l.add("neighbor" + std::to_string(k), phones.size(), FieldKind::kOneOfN);
  }
  l.add("stress", 3, FieldKind::kOneOfN);
  l.add("word_class", 1, FieldKind::kBinary);
  l.add("word_level", cfg.word_level_max, FieldKind::kBarCode);
  for (const char* t : {"syllable", "word", "phrase", "clause", "sentence"}) {
    l.add(std::string(t) + "_left", cfg.distance_saturation,
          FieldKind::kBarCode);
    l.add(std::string(t) + "_right", cfg.distance_saturation,
          FieldKind::kBarCode);
  }
  return l;
}

FeatureVector encode_segment(int segment_index,
                             const std::vector<PhoneSegment>& segments,
                             const SyntacticAnnotation& syntax,
                             const PhoneSet& phones,
                             const SegmentEncoderConfig& cfg) {
  const int n = static_cast<int>(segments.size());
  if (segment_index < 0 || segment_index >= n)
    throw Error(ErrorCode::kArgument, "segment index out of range");
  FeatureVector fv;
  fv.layout = segment_layout(phones, cfg);
  auto& v = fv.values;
  v.reserve(fv.layout.width());

  const auto& seg = segments[segment_index];
  append(v, one_of_n(phones.index_of(seg.phone), phones.size()));
  append(v, phones.encode_features(phones.index_of(seg.phone)));
  for (int k = -cfg.neighbor_context; k <= cfg.neighbor_context; ++k) {
    if (k == 0) continue;
    int j = segment_index + k;
    int idx = (j >= 0 && j < n) ? phones.index_of(segments[j].phone)
                                : phones.pad_index();
    append(v, one_of_n(idx, phones.size()));
  }

  const int64_t center = (seg.start + seg.end) / 2;
  Stress stress = Stress::kNone;
  for (size_t s = 0; s < syntax.syllables.size(); ++s) {
    if (syntax.syllables[s].start <= center &&
        center < syntax.syllables[s].end) {
      stress = syntax.stress[s];
      break;
    }
  }
  append(v, one_of_n(static_cast<int>(stress), 3));

  double word_class = 0.0;
  int word_level = 0;
  for (const auto& w : syntax.words) {
    if (w.start <= center && center < w.end) {
      word_class = w.word_class == WordClass::kContent ? 1.0 : 0.0;
      word_level = std::min(w.level, cfg.word_level_max);
      break;
    }
  }
  v.push_back(word_class);
  append(v, bar_code(word_level, cfg.word_level_max));

  // distance unit: count of whole segments between this one and the edge
  auto segment_unit = [&](int64_t delta_samples, bool left) {
    int64_t edge = left ? center - delta_samples : center + delta_samples;
    int count = 0;
    for (int j = 0; j < n; ++j) {
      int64_t c = (segments[j].start + segments[j].end) / 2;
      if (j != segment_index &&
          ((left && c >= edge && c < center) ||
           (!left && c > center && c <= edge)))
        ++count;
    }
    return count;
  };

  auto encode_span_distances = [&](const auto& spans) {
    int left = cfg.distance_saturation;
    int right = cfg.distance_saturation;
    for (const auto& s : spans) {
      if (s.start <= center && center < s.end) {
        left = std::min(segment_unit(center - s.start, true),
                        cfg.distance_saturation);
        right = std::min(segment_unit(s.end - 1 - center, false),
                         cfg.distance_saturation);
        break;
      }
    }
    append(v, bar_code(left, cfg.distance_saturation));
    append(v, bar_code(right, cfg.distance_saturation));
  };

  encode_span_distances(syntax.syllables);
  encode_span_distances(syntax.words);
  encode_span_distances(syntax.phrases);
  encode_span_distances(syntax.clauses);
  encode_span_distances(syntax.sentences);
  return fv;
}

Layout frame_layout(const PhoneSet& phones, const TapSchedule& taps,
                    const FrameEncoderConfig& cfg) {
  Layout l;
  for (int offset : taps.offsets) {
    const std::string tag = "tap" + std::to_string(offset);
    l.add(tag + "_phone", phones.size(), FieldKind::kOneOfN);
    l.add(tag + "_features", PhoneSet::feature_width(), FieldKind::kFeatures);
  }
  l.add("duration", static_cast<int>(cfg.duration_thresholds_ms.size()),
        FieldKind::kBarCode);
  l.add("position", 1, FieldKind::kScalar);
  for (const char* t : {"syllable", "word", "phrase", "clause", "sentence"}) {
    l.add(std::string(t) + "_left",
          static_cast<int>(cfg.distance_thresholds_frames.size()),
          FieldKind::kBarCode);
    l.add(std::string(t) + "_right",
          static_cast<int>(cfg.distance_thresholds_frames.size()),
          FieldKind::kBarCode);
  }
  return l;
}

FeatureVector encode_frame(int frame_index,
                           const std::vector<FrameLabel>& frame_labels,
                           const std::vector<PhoneSegment>& segments,
                           const SyntacticAnnotation& syntax,
                           const PhoneSet& phones, const TapSchedule& taps,
                           const FrameEncoderConfig& cfg) {
  const int n_frames = static_cast<int>(frame_labels.size());
  if (frame_index < 0 || frame_index >= n_frames)
    throw Error(ErrorCode::kArgument, "frame index out of range");
  FeatureVector fv;
  fv.layout = frame_layout(phones, taps, cfg);
  auto& v = fv.values;
  v.reserve(fv.layout.width());

  for (int offset : taps.offsets) {
    int fi = frame_index + offset;
    int idx = (fi >= 0 && fi < n_frames)
                  ? phones.index_of(frame_labels[fi].phone)
                  : phones.pad_index();
    append(v, one_of_n(idx, phones.size()));
    append(v, phones.encode_features(idx));
  }

  const auto& rec = frame_labels[frame_index];
  const auto& seg = segments[rec.segment];
  const double duration_ms =
      1000.0 * static_cast<double>(seg.length()) / cfg.sample_rate;
  append(v, bar_code(count_thresholds_leq(cfg.duration_thresholds_ms,
                                          duration_ms),
                     static_cast<int>(cfg.duration_thresholds_ms.size())));
  v.push_back(rec.fraction);

  const int64_t center =
      static_cast<int64_t>(frame_index) * cfg.frame_len + cfg.frame_len / 2;
  const int dist_width = static_cast<int>(cfg.distance_thresholds_frames.size());
  auto log_bar = [&](int64_t frames_away, bool saturated) {
    if (saturated) return bar_code(dist_width, dist_width);
    int count = 0;
    for (int t : cfg.distance_thresholds_frames)
      if (t <= frames_away) ++count;
    return bar_code(count, dist_width);
  };
  auto encode_span_distances = [&](const auto& spans) {
    for (const auto& s : spans) {
      if (s.start <= center && center < s.end) {
        append(v, log_bar((center - s.start) / cfg.frame_len, false));
        append(v, log_bar((s.end - 1 - center) / cfg.frame_len, false));
        return;
      }
    }
    append(v, log_bar(0, true));
    append(v, log_bar(0, true));
  };
  encode_span_distances(syntax.syllables);
  encode_span_distances(syntax.words);
  encode_span_distances(syntax.phrases);
  encode_span_distances(syntax.clauses);
  encode_span_distances(syntax.sentences);
  return fv;
}

TapSchedule default_tap_schedule(double window_ms, double frame_ms) {
  if (window_ms < frame_ms)
    throw Error(ErrorCode::kArgument, "window narrower than one frame");
  // triangular-number ladder: dense near the center, sparse at the edges
  TapSchedule taps;
  std::vector<int> side;
  int step = 1, t = 0;
  while (true) {
    int next = t + step;
    if (next * frame_ms > window_ms / 2.0) break;
    side.push_back(next);
    t = next;
    ++step;
  }
  for (auto it = side.rbegin(); it != side.rend(); ++it)
    taps.offsets.push_back(-*it);
  taps.offsets.push_back(0);
  for (int o : side) taps.offsets.push_back(o);
  return taps;
}

}  // namespace tts
