#include "tts/acoustic_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tts/error.hpp"

namespace tts {

namespace {

double frame_ms_of(const FrameEncoderConfig& enc) {
  return 1000.0 * enc.frame_len / enc.sample_rate;
}

void check_config(const PhoneticNetConfig& cfg) {
  if (cfg.phone_hidden < 1 || cfg.phone_aux < 1 || cfg.feature_hidden < 1 ||
      cfg.feature_aux < 1 || cfg.trunk1 < 1 || cfg.trunk2 < 1 ||
      cfg.recurrent_depth < 1 || cfg.lpc_order < 1)
    throw Error(ErrorCode::kConfig, "bad phonetic net config");
}

}  // namespace

TapSchedule phonetic_taps(const PhoneticNetConfig& cfg) {
  TapSchedule taps = cfg.taps;
  if (taps.offsets.empty())
    taps = default_tap_schedule(cfg.window_ms, frame_ms_of(cfg.encoder));
  double frame_ms = frame_ms_of(cfg.encoder);
  double span =
      (taps.offsets.back() - taps.offsets.front()) * frame_ms;
  if (span > cfg.window_ms + 1e-9)
    throw Error(ErrorCode::kConfig,
                "tap schedule spans " + std::to_string(span) +
                    " ms, limit " + std::to_string(cfg.window_ms));
  return taps;
}

GraphSpec phonetic_net_spec(const PhoneticNetConfig& cfg, const PhoneSet& phones) {
  check_config(cfg);
  TapSchedule taps = phonetic_taps(cfg);
  const int n_taps = static_cast<int>(taps.offsets.size());
  const int phone_w = n_taps * phones.size();
  const int feat_w = n_taps * PhoneSet::feature_width();
  const int timing_w =
      static_cast<int>(cfg.encoder.duration_thresholds_ms.size()) + 1;
  const int dist_w =
      10 * static_cast<int>(cfg.encoder.distance_thresholds_frames.size());
  const int out_w = cfg.lpc_order + 3;
  std::string text =
      "[graph]\nseed = " + std::to_string(cfg.seed) +
      "\noutput = out\n"
      "[block in_tap_phones]\nkind = input\nwidth = " +
      std::to_string(phone_w) + "\n"
      "[block in_tap_feats]\nkind = input\nwidth = " + std::to_string(feat_w) +
      "\n"
      "[block in_timing]\nkind = input\nwidth = " + std::to_string(timing_w) +
      "\n"
      "[block in_dist]\nkind = input\nwidth = " + std::to_string(dist_w) + "\n"
      "[block b_phones_a]\nkind = dense\nwidth = " +
      std::to_string(cfg.phone_hidden) +
      "\nactivation = sigmoid\ninputs = in_tap_phones\n"
      "[block b_phones_b]\nkind = dense\nwidth = " +
      std::to_string(cfg.phone_aux) +
      "\nactivation = sigmoid\ninputs = in_tap_phones\n"
      "[block b_feats_a]\nkind = dense\nwidth = " +
      std::to_string(cfg.feature_hidden) +
      "\nactivation = sigmoid\ninputs = in_tap_feats\n"
      "[block b_feats_b]\nkind = dense\nwidth = " +
      std::to_string(cfg.feature_aux) +
      "\nactivation = sigmoid\ninputs = in_tap_feats\n"
      "[block t_timing]\nkind = transform\nfn = identity\ninputs = in_timing\n"
      "[block t_dist]\nkind = transform\nfn = identity\ninputs = in_dist\n"
      "[block rb]\nkind = recurrent_buffer\ndepth = " +
      std::to_string(cfg.recurrent_depth) +
      "\nteacher = true\ninputs = @out_tap\n"
      "[block trunk1]\nkind = dense\nwidth = " + std::to_string(cfg.trunk1) +
      "\nactivation = sigmoid\n"
      "inputs = b_phones_a, b_phones_b, b_feats_a, b_feats_b, t_timing, "
      "t_dist, rb\n"
      "[block trunk2]\nkind = dense\nwidth = " + std::to_string(cfg.trunk2) +
      "\nactivation = sigmoid\ninputs = trunk1\n"
      "[block od]\nkind = dense\nwidth = " + std::to_string(out_w) +
      "\nactivation = linear\ninputs = trunk2\n"
      "[block out_tap]\nkind = transform\nfn = identity\ninputs = od\n"
      "[block out]\nkind = output\ninputs = out_tap\n";
  return GraphSpec::parse(text);
}

Graph build_phonetic_net(const PhoneticNetConfig& cfg, const PhoneSet& phones) {
  return build_graph(phonetic_net_spec(cfg, phones));
}

std::vector<double> frame_to_raw(const AcousticFrame& frame) {
  std::vector<double> raw = frame.lsf;
  raw.push_back(frame.f0);
  raw.push_back(frame.power_db);
  raw.push_back(frame.voicing_boundary);
  return raw;
}

AcousticFrame raw_to_frame(const std::vector<double>& raw,
                           const PhoneticNetConfig& cfg, int sample_rate) {
  const int P = cfg.lpc_order;
  if (static_cast<int>(raw.size()) != P + 3)
    throw Error(ErrorCode::kArgument,
                "raw parameter vector has width " + std::to_string(raw.size()) +
                    ", expected " + std::to_string(P + 3));
  AcousticFrame f;
  f.lsf.assign(raw.begin(), raw.begin() + P);
  const double gap = cfg.lsf_min_gap;
  const double pi = std::acos(-1.0);
  // push-apart sweeps restore strict ordering inside (0, pi)
  f.lsf[0] = std::max(f.lsf[0], gap);
  for (int i = 1; i < P; ++i) f.lsf[i] = std::max(f.lsf[i], f.lsf[i - 1] + gap);
  f.lsf[P - 1] = std::min(f.lsf[P - 1], pi - gap);
  for (int i = P - 2; i >= 0; --i)
    f.lsf[i] = std::min(f.lsf[i], f.lsf[i + 1] - gap);
  f.f0 = std::clamp(raw[P], cfg.f0_min, cfg.f0_clamp);
  f.power_db = raw[P + 1];
  f.voicing_boundary = std::clamp(raw[P + 2], 0.0, sample_rate / 2.0);
  f.voiced = f.f0 < cfg.f0_clamp - 20.0;
  if (!f.voiced) {
    f.f0 = cfg.f0_clamp;
    f.voicing_boundary = 0.0;
  }
  return f;
}

std::vector<std::vector<double>> acoustic_targets(
    const Utterance& utt, const std::vector<AcousticFrame>& analyzed,
    const PhoneticNetConfig& cfg) {
  auto labels = align_frames(utt.segments, cfg.encoder.frame_len);
  if (labels.size() != analyzed.size())
    throw Error(ErrorCode::kCorpus,
                "labels imply " + std::to_string(labels.size()) +
                    " frames, analysis produced " +
                    std::to_string(analyzed.size()));
  std::vector<std::vector<double>> rows;
  rows.reserve(analyzed.size());
  for (const auto& f : analyzed) {
    if (static_cast<int>(f.lsf.size()) != cfg.lpc_order)
      throw Error(ErrorCode::kArgument,
                  "analysis order " + std::to_string(f.lsf.size()) +
                      " does not match configured order " +
                      std::to_string(cfg.lpc_order));
    rows.push_back(frame_to_raw(f));
  }
  return rows;
}

std::vector<StepInputs> acoustic_inputs(const Utterance& utt,
                                        const PhoneSet& phones,
                                        const PhoneticNetConfig& cfg) {
  TapSchedule taps = phonetic_taps(cfg);
  auto labels = align_frames(utt.segments, cfg.encoder.frame_len);
  std::vector<StepInputs> steps;
  steps.reserve(labels.size());
  for (size_t t = 0; t < labels.size(); ++t) {
    FeatureVector enc =
        encode_frame(static_cast<int>(t), labels, utt.segments, utt.syntax,
                     phones, taps, cfg.encoder);
    StepInputs in(4);
    for (int offset : taps.offsets) {
      const std::string tag = "tap" + std::to_string(offset);
      const FieldSpec& fp = enc.layout.field(tag + "_phone");
      in[0].insert(in[0].end(), enc.values.begin() + fp.offset,
                   enc.values.begin() + fp.offset + fp.width);
      const FieldSpec& ff = enc.layout.field(tag + "_features");
      in[1].insert(in[1].end(), enc.values.begin() + ff.offset,
                   enc.values.begin() + ff.offset + ff.width);
    }
    for (const char* name : {"duration", "position"}) {
      const FieldSpec& fs = enc.layout.field(name);
      in[2].insert(in[2].end(), enc.values.begin() + fs.offset,
                   enc.values.begin() + fs.offset + fs.width);
    }
    for (const char* t2 : {"syllable", "word", "phrase", "clause", "sentence"})
      for (const char* side : {"_left", "_right"}) {
        const FieldSpec& fs = enc.layout.field(std::string(t2) + side);
        in[3].insert(in[3].end(), enc.values.begin() + fs.offset,
                     enc.values.begin() + fs.offset + fs.width);
      }
    steps.push_back(std::move(in));
  }
  return steps;
}

AcousticDataset assemble_acoustic_dataset(
    const std::vector<Utterance>& corpus,
    const std::vector<std::vector<AcousticFrame>>& analyzed,
    const PhoneSet& phones, const PhoneticNetConfig& cfg) {
  if (corpus.empty()) throw Error(ErrorCode::kArgument, "empty corpus");
  if (corpus.size() != analyzed.size())
    throw Error(ErrorCode::kArgument, "corpus/analysis count mismatch");
  std::vector<std::vector<double>> all_rows;
  std::vector<std::vector<std::vector<double>>> per_utt;
  for (size_t u = 0; u < corpus.size(); ++u) {
    per_utt.push_back(acoustic_targets(corpus[u], analyzed[u], cfg));
    for (const auto& row : per_utt.back()) all_rows.push_back(row);
  }
  AcousticDataset out;
  out.norm = Normalization::fit(all_rows);
  out.data.reserve(corpus.size());
  for (size_t u = 0; u < corpus.size(); ++u) {
    Sequence seq;
    seq.inputs = acoustic_inputs(corpus[u], phones, cfg);
    for (const auto& row : per_utt[u]) seq.targets.push_back(out.norm.apply(row));
    out.data.push_back(std::move(seq));
  }
  return out;
}

std::vector<AcousticFrame> predict_frames(const Utterance& utt,
                                          const Graph& net,
                                          const Normalization& norm,
                                          const PhoneSet& phones,
                                          const PhoneticNetConfig& cfg) {
  auto steps = acoustic_inputs(utt, phones, cfg);
  GraphState st = make_state(net);
  std::vector<AcousticFrame> out;
  out.reserve(steps.size());
  for (size_t t = 0; t < steps.size(); ++t) {
    std::vector<double> y;
    try {
      y = forward_step(net, st, steps[t]);
    } catch (const Error& e) {
      throw Error(e.code(), "frame " + std::to_string(t) + ": " + e.what());
    }
    out.push_back(
        raw_to_frame(norm.invert(y), cfg, cfg.encoder.sample_rate));
  }
  return out;
}

std::vector<TapRange> acoustic_tap_ranges(const PhoneticNetConfig& cfg,
                                          const PhoneSet& phones) {
  TapSchedule taps = phonetic_taps(cfg);
  std::vector<TapRange> out;
  int k = 0;
  for (int offset : taps.offsets) {
    const std::string tag = "tap" + std::to_string(offset);
    out.push_back({tag + "_phone", "in_tap_phones", k * phones.size(),
                   phones.size()});
    out.push_back({tag + "_features", "in_tap_feats",
                   k * PhoneSet::feature_width(), PhoneSet::feature_width()});
    ++k;
  }
  return out;
}

}  // namespace tts
