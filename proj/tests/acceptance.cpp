// Acceptance gate: one line per headline property, pass or fail.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "tts/acoustic_model.hpp"
#include "tts/corpus.hpp"
#include "tts/duration_model.hpp"
#include "tts/encoding.hpp"
#include "tts/error.hpp"
#include "tts/netgraph.hpp"
#include "tts/phones.hpp"
#include "tts/pipeline.hpp"
#include "tts/util.hpp"
#include "tts/vocoder.hpp"
#include "tts/wav.hpp"

using namespace tts;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

double elapsed(clk::time_point since) {
  return std::chrono::duration<double>(clk::now() - since).count();
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "tts_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

int g_failed = 0;
int g_total = 0;

void run(const std::string& name, const std::function<bool(std::string&)>& fn) {
  ++g_total;
  std::string detail;
  bool pass = false;
  try {
    pass = fn(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  if (!pass) ++g_failed;
  printf("%s %-22s %s\n", pass ? "PASS" : "FAIL", name.c_str(),
         detail.c_str());
  fflush(stdout);
}

// ---- shared signal builders ----

std::vector<double> sine_wave(double freq, int n, int sr) {
  std::vector<double> x(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    x[size_t(i)] =
        0.5 * std::sin(2.0 * std::numbers::pi * freq * double(i) / sr);
  return x;
}

std::vector<double> noise_wave(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(static_cast<size_t>(n));
  for (auto& s : x) s = 0.3 * (rng.uniform() * 2.0 - 1.0);
  return x;
}

// 120 Hz pulse train through two fixed resonators, peak-scaled.
std::vector<double> two_formant_vowel(int n, int sr) {
  std::vector<double> x(size_t(n), 0.0);
  double pos = 0.0;
  while (pos < double(n)) {
    x[size_t(pos)] += 1.0;
    pos += double(sr) / 120.0;
  }
  auto resonate = [&](double f, double bw) {
    double r = std::exp(-std::numbers::pi * bw / sr);
    double c = 2.0 * r * std::cos(2.0 * std::numbers::pi * f / sr);
    double y1 = 0.0, y2 = 0.0;
    for (auto& s : x) {
      double y = s + c * y1 - r * r * y2;
      y2 = y1;
      y1 = y;
      s = y;
    }
  };
  resonate(700.0, 110.0);
  resonate(1200.0, 130.0);
  double peak = 0.0;
  for (double s : x) peak = std::max(peak, std::abs(s));
  for (auto& s : x) s *= 0.5 / peak;
  return x;
}

void save_wav(const fs::path& path, const std::vector<double>& samples,
              int sr) {
  Audio a;
  a.sample_rate = sr;
  a.samples = samples;
  write_wav(path.string(), a);
}

// ---- independent DSP oracles ----

std::vector<double> toeplitz_solve(const std::vector<double>& r, int order) {
  std::vector<std::vector<double>> m(size_t(order),
                                     std::vector<double>(size_t(order) + 1));
  for (int i = 0; i < order; ++i) {
    for (int j = 0; j < order; ++j)
      m[size_t(i)][size_t(j)] = r[size_t(std::abs(i - j))];
    m[size_t(i)][size_t(order)] = r[size_t(i) + 1];
  }
  for (int col = 0; col < order; ++col) {
    int pivot = col;
    for (int row = col + 1; row < order; ++row)
      if (std::abs(m[size_t(row)][size_t(col)]) >
          std::abs(m[size_t(pivot)][size_t(col)]))
        pivot = row;
    std::swap(m[size_t(col)], m[size_t(pivot)]);
    for (int row = 0; row < order; ++row) {
      if (row == col) continue;
      double f = m[size_t(row)][size_t(col)] / m[size_t(col)][size_t(col)];
      for (int j = col; j <= order; ++j)
        m[size_t(row)][size_t(j)] -= f * m[size_t(col)][size_t(j)];
    }
  }
  std::vector<double> a(static_cast<size_t>(order));
  for (int i = 0; i < order; ++i)
    a[size_t(i)] = m[size_t(i)][size_t(order)] / m[size_t(i)][size_t(i)];
  return a;
}

std::vector<double> model_autocorrelation(const std::vector<double>& a,
                                          int n_lags) {
  const int order = int(a.size());
  std::vector<double> h(4096, 0.0);
  for (int n = 0; n < 4096; ++n) {
    double v = n == 0 ? 1.0 : 0.0;
    for (int k = 0; k < order && n - k - 1 >= 0; ++k)
      v += a[size_t(k)] * h[size_t(n - k - 1)];
    h[size_t(n)] = v;
  }
  std::vector<double> r(size_t(n_lags) + 1, 0.0);
  for (int k = 0; k <= n_lags; ++k)
    for (int n = 0; n + k < 4096; ++n)
      r[size_t(k)] += h[size_t(n)] * h[size_t(n + k)];
  return r;
}

std::vector<double> random_stable_predictor(Rng& rng, int order) {
  std::vector<double> a;
  for (int m = 1; m <= order; ++m) {
    double k = rng.uniform(-0.9, 0.9);
    std::vector<double> prev = a;
    a.resize(size_t(m));
    a[size_t(m) - 1] = k;
    for (int j = 1; j < m; ++j)
      a[size_t(j) - 1] = prev[size_t(j) - 1] - k * prev[size_t(m - 1 - j)];
  }
  return a;
}

// ---- random graphs for the gradient check ----

GraphSpec random_spec(Rng& rng, bool teacher) {
  int in_w = rng.uniform_int(2, 4);
  int h_w = rng.uniform_int(2, 4);
  int out_w = rng.uniform_int(1, 3);
  int dl_depth = rng.uniform_int(2, 3);
  int rb_depth = rng.uniform_int(1, 2);
  bool plain_recurrence = rng.uniform() < 0.5;
  std::string text =
      "[graph]\nseed = " + std::to_string(rng.next_u64() % 100000) +
      "\noutput = out\n"
      "[block in]\nkind = input\nwidth = " + std::to_string(in_w) + "\n"
      "[block dl]\nkind = delay_line\ndepth = " + std::to_string(dl_depth) +
      "\ninputs = in\n"
      "[block h1]\nkind = dense\nwidth = " + std::to_string(h_w) +
      "\nactivation = sigmoid\ninputs = in, dl" +
      (plain_recurrence ? ", @h2" : "") + "\n"
      "[block rb]\nkind = recurrent_buffer\ndepth = " +
      std::to_string(rb_depth) + (teacher ? "\nteacher = true" : "") +
      "\ninputs = @tap\n"
      "[block h2]\nkind = dense\nwidth = " + std::to_string(h_w) +
      "\nactivation = sigmoid\ninputs = h1, rb\n"
      "[block cat]\nkind = concat\ninputs = h2, in\n"
      "[block od]\nkind = dense\nwidth = " + std::to_string(out_w) +
      "\nactivation = linear\ninputs = cat\n"
      "[block tap]\nkind = transform\nfn = identity\ninputs = od\n"
      "[block out]\nkind = output\ninputs = tap\n";
  return GraphSpec::parse(text);
}

struct FdCase {
  Graph g;
  std::vector<StepInputs> inputs;
  std::vector<std::vector<double>> targets;
  std::vector<double> lw;
  bool teacher = false;
};

FdCase random_case(uint64_t trial) {
  Rng rng(0xacce97 + trial);
  FdCase c;
  c.teacher = trial % 2 == 1;
  c.g = build_graph(random_spec(rng, c.teacher));
  int T = rng.uniform_int(3, 5);
  int in_w = c.g.blocks[size_t(c.g.index_of("in"))].width;
  int out_w = c.g.blocks[size_t(c.g.output_block)].width;
  for (int t = 0; t < T; ++t) {
    StepInputs in(1);
    for (int i = 0; i < in_w; ++i) in[0].push_back(rng.uniform(-1, 1));
    c.inputs.push_back(in);
    std::vector<double> tgt;
    for (int i = 0; i < out_w; ++i) tgt.push_back(rng.uniform(0, 1));
    c.targets.push_back(tgt);
  }
  for (int i = 0; i < out_w; ++i) c.lw.push_back(rng.uniform(0.2, 2.0));
  return c;
}

double total_loss(const FdCase& c) {
  auto out = forward_sequence(c.g, c.inputs, c.teacher ? &c.targets : nullptr);
  double loss = 0.0;
  for (size_t t = 0; t < out.size(); ++t)
    loss += weighted_euclidean(out[t], c.targets[t], c.lw);
  return loss;
}

// ---- rulebook targets without the vocoder in the loop ----

std::vector<AcousticFrame> rule_track(const Utterance& utt, const Rulebook& rb,
                                      double f0_clamp, int frame_len) {
  std::vector<AcousticFrame> track;
  for (const auto& seg : utt.segments) {
    const PhoneRule& rule = rb.rule(seg.phone);
    int frames = int(seg.length() / frame_len);
    for (int i = 0; i < frames; ++i) {
      AcousticFrame f;
      f.lsf = rule.lsf;
      f.voiced = rule.voiced;
      f.f0 = rule.voiced ? rule.f0 : f0_clamp;
      f.power_db = rule.power_db;
      f.voicing_boundary = rule.voiced ? rule.voicing_boundary : 0.0;
      track.push_back(f);
    }
  }
  return track;
}

// ---- criteria ----

bool frame_rate(std::string& detail) {
  fs::path dir = fresh_dir("frame_rate");
  ProjectConfig cfg = default_project_config();
  int sr = cfg.sample_rate;
  save_wav(dir / "sine.wav", sine_wave(440.0, sr, sr), sr);
  save_wav(dir / "noise.wav", noise_wave(sr, 3), sr);
  save_wav(dir / "vowel.wav", two_formant_vowel(sr, sr), sr);

  double slowest = 0.0;
  bool all_100 = true;
  for (const char* name : {"sine", "noise", "vowel"}) {
    fs::path in = dir / (std::string(name) + ".wav");
    fs::path out = dir / (std::string(name) + ".afrm");
    auto t0 = clk::now();
    AnalyzeReport r = cmd_analyze(in.string(), out.string(), cfg);
    slowest = std::max(slowest, elapsed(t0));
    if (r.n_frames != 100 ||
        read_frames(out.string(), cfg.f0_clamp).frames.size() != 100)
      all_100 = false;
  }
  detail = fmt("3 distinct 1.000 s waveforms -> 100 frames each; slowest "
               "analysis %.2f s (limit 1 s)",
               slowest);
  return all_100 && slowest < 1.0;
}

bool weight_budget(std::string& detail) {
  fs::path dir = fresh_dir("weight_budget");
  ProjectConfig cfg = default_project_config();
  PhoneSet phones = PhoneSet::builtin();
  Graph dur = build_duration_net(cfg.duration_net, phones);
  Graph aco = build_phonetic_net(cfg.acoustic_net, phones);
  Normalization n1;
  n1.lo = {0.0};
  n1.hi = {1.0};
  Normalization n13;
  n13.lo.assign(13, 0.0);
  n13.hi.assign(13, 1.0);
  save_model((dir / "dur.nnbg").string(), dur, n1, false);
  save_model((dir / "aco.nnbg").string(), aco, n13, false);

  QuantizeReport qd = cmd_quantize((dir / "dur.nnbg").string(),
                                   (dir / "dur.q.nnbg").string(), cfg);
  QuantizeReport qa = cmd_quantize((dir / "aco.nnbg").string(),
                                   (dir / "aco.q.nnbg").string(), cfg);
  size_t on_disk = size_t(fs::file_size(dir / "dur.q.nnbg")) +
                   size_t(fs::file_size(dir / "aco.q.nnbg"));
  bool ok = qd.topology == "duration" && qa.topology == "acoustic" &&
            qd.joint_bytes == qa.joint_bytes && qd.joint_bytes == on_disk &&
            qd.joint_bytes < 102400 && !qd.over_budget && !qa.over_budget;
  detail = fmt("8-bit quantized duration %zu B + acoustic %zu B = %zu B "
               "(budget 102400)",
               qd.file_bytes, qa.file_bytes, qd.joint_bytes);
  return ok;
}

bool tap_span_locality(std::string& detail) {
  ProjectConfig cfg = default_project_config();
  PhoneSet phones = PhoneSet::builtin();
  TapSchedule taps = phonetic_taps(cfg.acoustic_net);
  int lo = taps.offsets.front(), hi = taps.offsets.back();
  double span_ms = (hi - lo) * cfg.frame_ms;

  // 30 six-frame segments; relabelling past the window must not leak in.
  const int frame_len = cfg.frame_len();
  std::vector<std::string> cycle = {"s", "aa", "m", "iy", "n", "uw"};
  std::vector<PhoneSegment> segments;
  for (int i = 0; i < 30; ++i)
    segments.push_back({int64_t(i) * 6 * frame_len,
                        int64_t(i + 1) * 6 * frame_len, cycle[size_t(i) % 6]});
  int64_t total = segments.back().end;
  SyntacticAnnotation syntax;
  for (int i = 0; i < 15; ++i) {
    syntax.syllables.push_back(
        {int64_t(i) * 12 * frame_len, int64_t(i + 1) * 12 * frame_len});
    syntax.stress.push_back(i % 2 ? Stress::kPrimary : Stress::kNone);
  }
  for (int i = 0; i < 5; ++i) {
    WordSpan w;
    w.start = int64_t(i) * 36 * frame_len;
    w.end = int64_t(i + 1) * 36 * frame_len;
    syntax.words.push_back(w);
  }
  syntax.phrases = {{0, total}};
  syntax.clauses = {{0, total}};
  syntax.sentences = {{0, total}};

  auto encode_at = [&](const std::vector<PhoneSegment>& segs,
                       const SyntacticAnnotation& syn, int frame) {
    auto labels = align_frames(segs, frame_len);
    return encode_frame(frame, labels, segs, syn, phones,
                        taps, cfg.acoustic_net.encoder)
        .values;
  };

  const int t = 92;  // segment 15; the +15 tap reads frame 107 in segment 17
  auto base = encode_at(segments, syntax, t);

  // 160 ms away: segment 18 starts at frame 108, one past the last tap.
  auto past_window = segments;
  past_window[18].phone = "ae";
  bool unchanged_far = encode_at(past_window, syntax, t) == base;

  // 150 ms away: segment 17 holds frame 107, still inside the window.
  auto inside_window = segments;
  inside_window[17].phone = "ae";
  bool changed_near = encode_at(inside_window, syntax, t) != base;

  // Boundary distances saturate: a sentence edge 88 frames out can move
  // a frame without touching the code.
  auto far_syntax = syntax;
  far_syntax.sentences = {{0, total - frame_len}};
  bool unchanged_saturated = encode_at(segments, far_syntax, t) == base;

  detail = fmt("default taps %+d..%+d frames span %.0f ms; relabel at 160 ms "
               "invisible, at 150 ms visible, saturated boundary shift "
               "invisible",
               lo, hi, span_ms);
  return span_ms == 300.0 && unchanged_far && changed_near &&
         unchanged_saturated;
}

bool f0_clamp(std::string& detail) {
  ProjectConfig cfg = default_project_config();
  cfg.f0_clamp = 371.0;  // a value nothing else uses
  PhoneSet phones = PhoneSet::builtin();
  Rulebook rb = Rulebook::built_in_default(cfg.lpc_order, cfg.sample_rate);
  auto corpus =
      generate_synthetic_corpus(91, 4, rb, phones, cfg.synthesis());

  AnalysisParams params = cfg.analysis();
  int unvoiced = 0, off = 0;
  for (const auto& utt : corpus)
    for (const auto& f : analyze(utt.samples, params))
      if (!f.voiced) {
        ++unvoiced;
        if (f.f0 != 371.0 || f.voicing_boundary != 0.0) ++off;
      }

  // Same invariant through the file pipeline.
  fs::path dir = fresh_dir("f0_clamp");
  save_wav(dir / "n.wav", noise_wave(cfg.sample_rate, 5), cfg.sample_rate);
  cmd_analyze((dir / "n.wav").string(), (dir / "n.afrm").string(), cfg);
  for (const auto& f :
       read_frames((dir / "n.afrm").string(), cfg.f0_clamp).frames)
    if (!f.voiced) {
      ++unvoiced;
      if (f.f0 != 371.0) ++off;
    }

  detail = fmt("%d unvoiced frames, every f0 == configured clamp 371 Hz "
               "exactly (%d off)",
               unvoiced, off);
  return unvoiced > 100 && off == 0;
}

bool dsp_oracles(std::string& detail) {
  auto t0 = clk::now();
  Rng rng(11);
  double worst_lev = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    int order = rng.uniform_int(1, 8);
    auto a_true = random_stable_predictor(rng, order);
    auto r = model_autocorrelation(a_true, order);
    auto fast = levinson_durbin(r, order).model.coefficients;
    auto dense = toeplitz_solve(r, order);
    for (int k = 0; k < order; ++k)
      worst_lev =
          std::max(worst_lev, std::abs(fast[size_t(k)] - dense[size_t(k)]));
  }

  Rng rng2(13);
  double worst_lsf = 0.0;
  bool ordered = true;
  for (int trial = 0; trial < 1000; ++trial) {
    int order = rng2.uniform_int(4, 16);
    auto a = random_stable_predictor(rng2, order);
    auto lsf = lpc_to_lsf(a);
    for (size_t i = 1; i < lsf.size(); ++i)
      if (lsf[i] <= lsf[i - 1]) ordered = false;
    auto back = lsf_to_lpc(lsf);
    for (int k = 0; k < order; ++k)
      worst_lsf =
          std::max(worst_lsf, std::abs(back[size_t(k)] - a[size_t(k)]));
  }
  double dt = elapsed(t0);
  detail = fmt("recursive vs dense solve max |err| %.1e (<1e-8, 1000 "
               "systems); lsf round trip max |err| %.1e (<1e-6, 1000 "
               "filters); %.1f s (limit 30)",
               worst_lev, worst_lsf, dt);
  return worst_lev < 1e-8 && worst_lsf < 1e-6 && ordered && dt < 30.0;
}

bool vocoder_round_trip(std::string& detail) {
  auto t0 = clk::now();
  ProjectConfig cfg = default_project_config();
  auto x = two_formant_vowel(cfg.sample_rate, cfg.sample_rate);
  AnalysisParams params = cfg.analysis();
  auto first = analyze(x, params);
  auto y = synthesize(first, cfg.synthesis());
  auto second = analyze(y, params);

  int voiced = 0, ok = 0;
  for (size_t i = 0; i < std::min(first.size(), second.size()); ++i) {
    if (!first[i].voiced) continue;
    ++voiced;
    if (second[i].voiced &&
        std::abs(second[i].f0 / first[i].f0 - 1.0) <= 0.05 &&
        std::abs(second[i].power_db - first[i].power_db) <= 1.0)
      ++ok;
  }
  double dt = elapsed(t0);
  double frac = voiced ? double(ok) / voiced : 0.0;
  detail = fmt("120 Hz two-formant vowel: %d/%d voiced frames back within "
               "f0 5%% and power 1 dB (%.0f%%, need 95%%); %.1f s (limit 10)",
               ok, voiced, frac * 100.0, dt);
  return voiced >= 80 && frac >= 0.95 && dt < 10.0;
}

bool gradient_check(std::string& detail) {
  auto t0 = clk::now();
  const double eps = 1e-4;
  double worst_rel = 0.0;
  int checked = 0, bad = 0;
  for (uint64_t trial = 0; trial < 100; ++trial) {
    FdCase c = random_case(trial);
    Gradients an = backward_sequence(c.g, c.inputs, c.targets, c.lw,
                                     c.teacher ? &c.targets : nullptr);
    for (size_t bi = 0; bi < c.g.blocks.size(); ++bi) {
      Block& b = c.g.blocks[bi];
      if (b.kind != BlockKind::kDense) continue;
      auto probe = [&](double& param, double analytic) {
        double save = param;
        param = save + eps;
        double up = total_loss(c);
        param = save - eps;
        double down = total_loss(c);
        param = save;
        double fd = (up - down) / (2 * eps);
        double denom = std::max(std::abs(analytic), std::abs(fd));
        if (denom < 1e-6) return;
        double rel = std::abs(analytic - fd) / denom;
        ++checked;
        if (rel >= 1e-4 && std::abs(analytic - fd) >= 1e-7) ++bad;
        worst_rel = std::max(worst_rel, rel);
      };
      for (size_t k = 0; k < b.w.size(); ++k) probe(b.w[k], an.w[bi][k]);
      for (size_t k = 0; k < b.b.size(); ++k) probe(b.b[k], an.b[bi][k]);
    }
  }
  double dt = elapsed(t0);
  detail = fmt("100 random graphs with delay lines and recurrence: %d "
               "parameters, %d over 1e-4, worst rel %.1e; %.1f s (limit 60)",
               checked, bad, worst_rel, dt);
  return bad == 0 && checked > 5000 && dt < 60.0;
}

bool learning(std::string& detail) {
  auto t0 = clk::now();
  ProjectConfig cfg = default_project_config();
  PhoneSet phones = PhoneSet::builtin();
  Rulebook rb = Rulebook::built_in_default(cfg.lpc_order, cfg.sample_rate);
  auto corpus =
      generate_synthetic_corpus(41, 200, rb, phones, cfg.synthesis());

  // (a) segment durations against the constant-mean predictor
  DurationDataset dds =
      assemble_duration_dataset(corpus, phones, cfg.duration_net);
  Graph dnet = build_duration_net(cfg.duration_net, phones);
  train(dnet, dds.data, cfg.duration_training, cfg.duration_loss_weights);

  double log_sum = 0.0;
  size_t n_segs = 0;
  for (const auto& utt : corpus)
    for (const auto& seg : utt.segments) {
      log_sum += duration_target(seg, cfg.sample_rate);
      ++n_segs;
    }
  double log_mean = log_sum / double(n_segs);
  double err_net = 0.0, err_base = 0.0;
  for (const auto& utt : corpus) {
    auto pred = predict_durations(utt, dnet, dds.norm, phones,
                                  cfg.duration_net, cfg.frame_s());
    for (size_t s = 0; s < utt.segments.size(); ++s) {
      double truth = duration_target(utt.segments[s], cfg.sample_rate);
      double dn = std::log(pred[s]) - truth;
      double db = log_mean - truth;
      err_net += dn * dn;
      err_base += db * db;
    }
  }
  double rms_net = std::sqrt(err_net / double(n_segs));
  double rms_base = std::sqrt(err_base / double(n_segs));

  // (b) one phone, one spectrum: rule targets, free-running prediction
  std::vector<std::vector<AcousticFrame>> tracks;
  for (const auto& utt : corpus)
    tracks.push_back(
        rule_track(utt, rb, cfg.f0_clamp, cfg.frame_len()));
  AcousticDataset ads =
      assemble_acoustic_dataset(corpus, tracks, phones, cfg.acoustic_net);
  Graph anet = build_phonetic_net(cfg.acoustic_net, phones);
  TrainingSchedule sched = cfg.acoustic_training;
  sched.seed = 77;
  train(anet, ads.data, sched, cfg.acoustic_loss_weights);

  double worst_lsf = 0.0;
  for (const auto& utt : corpus) {
    auto pred = predict_frames(utt, anet, ads.norm, phones, cfg.acoustic_net);
    int64_t cursor = 0;
    for (const auto& seg : utt.segments) {
      int n = int(seg.length() / cfg.frame_len());
      size_t mid = size_t(cursor / cfg.frame_len() + n / 2);
      const auto& target = rb.rule(seg.phone).lsf;
      for (size_t d = 0; d < target.size(); ++d)
        worst_lsf = std::max(
            worst_lsf, std::abs(pred[mid].lsf[d] - target[d]));
      cursor += seg.length();
    }
  }
  double tol = 0.01 * std::numbers::pi;
  double dt = elapsed(t0);
  detail = fmt("200 utterances: duration RMS log error %.4f vs baseline "
               "%.3f (%.1f%%, need <50%%); worst mid-segment |lsf err| "
               "%.4f rad (1%% of range = %.4f); %.0f s (limit 600)",
               rms_net, rms_base, 100.0 * rms_net / rms_base, worst_lsf,
               tol, dt);
  return rms_net < 0.5 * rms_base && worst_lsf <= tol && dt < 600.0;
}

bool determinism(std::string& detail) {
  fs::path dir = fresh_dir("determinism");
  ProjectConfig cfg = default_project_config();
  cfg.duration_training.epochs = 6;
  cfg.acoustic_training.epochs = 2;
  std::string corpus = (dir / "corpus").string();
  cmd_gen_corpus(corpus, 4, 17, cfg);

  auto bytes = [&](const fs::path& p) { return read_binary_file(p.string()); };
  std::string wav0 = (fs::path(corpus) / "u0000.wav").string();
  cmd_analyze(wav0, (dir / "a1.afrm").string(), cfg);
  cmd_analyze(wav0, (dir / "a2.afrm").string(), cfg);
  bool frames_eq = bytes(dir / "a1.afrm") == bytes(dir / "a2.afrm");

  cmd_train(corpus, TrainTarget::kDuration, (dir / "d1.nnbg").string(), cfg);
  cmd_train(corpus, TrainTarget::kDuration, (dir / "d2.nnbg").string(), cfg);
  cmd_train(corpus, TrainTarget::kAcoustic, (dir / "c1.nnbg").string(), cfg);
  cmd_train(corpus, TrainTarget::kAcoustic, (dir / "c2.nnbg").string(), cfg);
  bool models_eq = bytes(dir / "d1.nnbg") == bytes(dir / "d2.nnbg") &&
                   bytes(dir / "c1.nnbg") == bytes(dir / "c2.nnbg");

  cfg.duration_model_path = (dir / "d1.nnbg").string();
  cfg.acoustic_model_path = (dir / "c1.nnbg").string();
  std::string labels = (fs::path(corpus) / "u0001.phn").string();
  cmd_synth(labels, (dir / "n1.wav").string(), cfg, true);
  cmd_synth(labels, (dir / "n2.wav").string(), cfg, true);
  cmd_synth(labels, (dir / "p1.wav").string(), cfg, false);
  cmd_synth(labels, (dir / "p2.wav").string(), cfg, false);
  bool wavs_eq = bytes(dir / "n1.wav") == bytes(dir / "n2.wav") &&
                 bytes(dir / "p1.wav") == bytes(dir / "p2.wav");

  detail = fmt("reruns byte-identical: parameter tracks %s, both trained "
               "models %s, both synthesis modes %s",
               frames_eq ? "yes" : "NO", models_eq ? "yes" : "NO",
               wavs_eq ? "yes" : "NO");
  return frames_eq && models_eq && wavs_eq;
}

bool quantization_fidelity(std::string& detail) {
  ProjectConfig cfg = default_project_config();
  PhoneSet phones = PhoneSet::builtin();
  auto fidelity = [&](const Graph& g0) {
    Graph gq = g0;
    dequantize(quantize(g0), gq);
    Rng rng(505);
    double num = 0.0, den = 0.0;
    int steps = 0;
    while (steps < 1000) {
      GraphState s0 = make_state(g0);
      GraphState sq = make_state(gq);
      for (int t = 0; t < 25 && steps < 1000; ++t, ++steps) {
        StepInputs in;
        for (int ib : g0.input_blocks) {
          std::vector<double> v(size_t(g0.blocks[size_t(ib)].width));
          for (auto& x : v) x = rng.uniform();
          in.push_back(std::move(v));
        }
        auto y0 = forward_step(g0, s0, in);
        auto yq = forward_step(gq, sq, in);
        for (size_t i = 0; i < y0.size(); ++i) {
          num += (y0[i] - yq[i]) * (y0[i] - yq[i]);
          den += y0[i] * y0[i];
        }
      }
    }
    return std::sqrt(num / den);
  };
  double rel_d = fidelity(build_duration_net(cfg.duration_net, phones));
  double rel_a = fidelity(build_phonetic_net(cfg.acoustic_net, phones));
  detail = fmt("dequantized vs float forward over 1000 random inputs: "
               "duration %.2f%%, acoustic %.2f%% relative RMS (limit 2%%)",
               rel_d * 100.0, rel_a * 100.0);
  return rel_d < 0.02 && rel_a < 0.02;
}

}  // namespace

int main() {
  run("frame-rate", frame_rate);
  run("weight-budget", weight_budget);
  run("tap-span-locality", tap_span_locality);
  run("f0-clamp", f0_clamp);
  run("dsp-oracles", dsp_oracles);
  run("vocoder-round-trip", vocoder_round_trip);
  run("gradient-check", gradient_check);
  run("learning", learning);
  run("determinism", determinism);
  run("quantization-fidelity", quantization_fidelity);
  printf("acceptance: %d/%d criteria passed\n", g_total - g_failed, g_total);
  return g_failed == 0 ? 0 : 1;
}
