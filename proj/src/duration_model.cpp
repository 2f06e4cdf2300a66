#include "tts/duration_model.hpp"

#include <cmath>
#include <string>

#include "tts/error.hpp"

namespace tts {

namespace {

const char* kProsodicFields[] = {"features",       "stress",
                                 "word_class",     "word_level",
                                 "syllable_left",  "syllable_right",
                                 "word_left",      "word_right",
                                 "phrase_left",    "phrase_right",
                                 "clause_left",    "clause_right",
                                 "sentence_left",  "sentence_right"};

int prosodic_width(const Layout& layout) {
  int w = 0;
  for (const char* f : kProsodicFields) w += layout.field(f).width;
  return w;
}

}  // namespace

GraphSpec duration_net_spec(const DurationNetConfig& cfg, const PhoneSet& phones) {
  if (cfg.context < 0 || cfg.hidden1 < 1 || cfg.hidden2 < 1 || cfg.hidden3 < 1 ||
      cfg.recurrent_depth < 1)
    throw Error(ErrorCode::kConfig, "bad duration net config");
  Layout layout = segment_layout(phones, cfg.encoder);
  int window = 2 * cfg.context + 1;
  std::string text =
      "[graph]\nseed = " + std::to_string(cfg.seed) +
      "\noutput = out\n"
      "[block in_ctx]\nkind = input\nwidth = " + std::to_string(phones.size()) +
      "\n"
      "[block in_seg]\nkind = input\nwidth = " +
      std::to_string(prosodic_width(layout)) + "\n"
      "[block ctx_window]\nkind = delay_line\ndepth = " +
      std::to_string(window) + "\ninputs = in_ctx\n"
      "[block rb]\nkind = recurrent_buffer\ndepth = " +
      std::to_string(cfg.recurrent_depth) +
      "\nteacher = true\ninputs = @out_tap\n"
      "[block h1]\nkind = dense\nwidth = " + std::to_string(cfg.hidden1) +
      "\nactivation = sigmoid\ninputs = ctx_window\n"
      "[block h2]\nkind = dense\nwidth = " + std::to_string(cfg.hidden2) +
      "\nactivation = sigmoid\ninputs = h1, in_seg, rb\n"
      "[block h3]\nkind = dense\nwidth = " + std::to_string(cfg.hidden3) +
      "\nactivation = sigmoid\ninputs = h2\n"
      "[block od]\nkind = dense\nwidth = 1\nactivation = linear\ninputs = h3\n"
      "[block out_tap]\nkind = transform\nfn = identity\ninputs = od\n"
      "[block out]\nkind = output\ninputs = out_tap\n";
  return GraphSpec::parse(text);
}

Graph build_duration_net(const DurationNetConfig& cfg, const PhoneSet& phones) {
  return build_graph(duration_net_spec(cfg, phones));
}

double duration_target(const PhoneSegment& seg, int sample_rate) {
  return std::log(static_cast<double>(seg.length()) / sample_rate);
}

int duration_frames(double seconds, double frame_s) {
  long f = std::lround(seconds / frame_s);
  return f < 1 ? 1 : static_cast<int>(f);
}

std::vector<StepInputs> duration_inputs(const Utterance& utt,
                                        const PhoneSet& phones,
                                        const DurationNetConfig& cfg) {
  const auto& segments = utt.segments;
  Layout layout = segment_layout(phones, cfg.encoder);
  std::vector<StepInputs> steps;
  steps.reserve(segments.size());
  const int n = static_cast<int>(segments.size());
  for (int t = 0; t < n; ++t) {
    // advanced stream: at step t the shift register holds phones
    // t-context .. t+context
    int ahead = t + cfg.context;
    int phone_idx = ahead < n ? phones.index_of(segments[ahead].phone)
                              : phones.pad_index();
    StepInputs in(2);
    in[0] = one_of_n(phone_idx, phones.size());
    FeatureVector enc =
        encode_segment(t, segments, utt.syntax, phones, cfg.encoder);
    in[1].reserve(prosodic_width(layout));
    for (const char* f : kProsodicFields) {
      const FieldSpec& fs = enc.layout.field(f);
      in[1].insert(in[1].end(), enc.values.begin() + fs.offset,
                   enc.values.begin() + fs.offset + fs.width);
    }
    steps.push_back(std::move(in));
  }
  return steps;
}

DurationDataset assemble_duration_dataset(const std::vector<Utterance>& corpus,
                                          const PhoneSet& phones,
                                          const DurationNetConfig& cfg) {
  if (corpus.empty()) throw Error(ErrorCode::kArgument, "empty corpus");
  std::vector<std::vector<double>> raw_rows;
  for (const auto& utt : corpus)
    for (const auto& seg : utt.segments)
      raw_rows.push_back({duration_target(seg, utt.sample_rate)});
  DurationDataset out;
  out.norm = Normalization::fit(raw_rows);
  out.data.reserve(corpus.size());
  for (const auto& utt : corpus) {
    Sequence seq;
    seq.inputs = duration_inputs(utt, phones, cfg);
    for (const auto& seg : utt.segments)
      seq.targets.push_back(
          out.norm.apply({duration_target(seg, utt.sample_rate)}));
    out.data.push_back(std::move(seq));
  }
  return out;
}

std::vector<double> predict_durations(const Utterance& utt, const Graph& net,
                                      const Normalization& norm,
                                      const PhoneSet& phones,
                                      const DurationNetConfig& cfg,
                                      double frame_s) {
  auto steps = duration_inputs(utt, phones, cfg);
  GraphState st = make_state(net);
  std::vector<double> out;
  out.reserve(steps.size());
  for (size_t t = 0; t < steps.size(); ++t) {
    std::vector<double> y;
    try {
      y = forward_step(net, st, steps[t]);
    } catch (const Error& e) {
      throw Error(e.code(),
                  "segment " + std::to_string(t) + ": " + e.what());
    }
    double seconds = std::exp(norm.invert(y)[0]);
    out.push_back(duration_frames(seconds, frame_s) * frame_s);
  }
  return out;
}

}  // namespace tts
