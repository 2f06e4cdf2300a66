#include "tts/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <utility>

#include "tts/error.hpp"
#include "tts/util.hpp"
#include "tts/wav.hpp"

namespace fs = std::filesystem;

namespace tts {

namespace {

constexpr size_t kWeightBudgetBytes = 102400;

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

void ensure_parent_dir(const std::string& path) {
  fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---- configuration text ----

class Settings {
 public:
  explicit Settings(const std::string& text) {
    std::string section;
    int line_no = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      std::string s = trim(line);
      if (s.empty() || s[0] == '#' || s[0] == ';') continue;
      if (s[0] == '[') {
        if (s.back() != ']')
          throw Error(ErrorCode::kParse, "config line " +
                                             std::to_string(line_no) +
                                             ": unterminated section header");
        section = trim(s.substr(1, s.size() - 2));
        if (section.empty())
          throw Error(ErrorCode::kParse, "config line " +
                                             std::to_string(line_no) +
                                             ": empty section name");
        continue;
      }
      size_t eq = s.find('=');
      if (eq == std::string::npos)
        throw Error(ErrorCode::kParse, "config line " +
                                           std::to_string(line_no) +
                                           ": expected key = value");
      std::string key = trim(s.substr(0, eq));
      std::string value = trim(s.substr(eq + 1));
      if (key.empty())
        throw Error(ErrorCode::kParse, "config line " +
                                           std::to_string(line_no) +
                                           ": empty key");
      if (section.empty())
        throw Error(ErrorCode::kParse, "config line " +
                                           std::to_string(line_no) +
                                           ": setting before any [section]");
      if (!values_.emplace(std::make_pair(section, key), value).second)
        throw Error(ErrorCode::kConfig,
                    "duplicate config key [" + section + "] " + key);
    }
  }

  int get_int(const std::string& sec, const std::string& key, int dflt) {
    const std::string* raw = fetch(sec, key);
    if (!raw) return dflt;
    return static_cast<int>(parse_ll(sec, key, *raw));
  }

  uint64_t get_u64(const std::string& sec, const std::string& key,
                   uint64_t dflt) {
    const std::string* raw = fetch(sec, key);
    if (!raw) return dflt;
    try {
      size_t used = 0;
      uint64_t v = std::stoull(*raw, &used);
      if (used != raw->size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw bad_value(sec, key, *raw, "unsigned integer");
    }
  }

  double get_double(const std::string& sec, const std::string& key,
                    double dflt) {
    const std::string* raw = fetch(sec, key);
    if (!raw) return dflt;
    return parse_d(sec, key, *raw);
  }

  std::string get_string(const std::string& sec, const std::string& key,
                         const std::string& dflt) {
    const std::string* raw = fetch(sec, key);
    return raw ? *raw : dflt;
  }

  std::vector<int> get_ints(const std::string& sec, const std::string& key,
                            const std::vector<int>& dflt) {
    const std::string* raw = fetch(sec, key);
    if (!raw) return dflt;
    std::vector<int> out;
    for (const std::string& tok : split_ws(*raw))
      out.push_back(static_cast<int>(parse_ll(sec, key, tok)));
    return out;
  }

  std::vector<double> get_doubles(const std::string& sec,
                                  const std::string& key,
                                  const std::vector<double>& dflt) {
    const std::string* raw = fetch(sec, key);
    if (!raw) return dflt;
    std::vector<double> out;
    for (const std::string& tok : split_ws(*raw))
      out.push_back(parse_d(sec, key, tok));
    return out;
  }

  void finish() const {
    std::vector<std::string> unknown;
    for (const auto& [sk, value] : values_)
      if (!used_.count(sk)) unknown.push_back("[" + sk.first + "] " + sk.second);
    if (!unknown.empty())
      throw Error(ErrorCode::kConfig,
                  "unknown config keys: " + join(unknown, ", "));
  }

 private:
  const std::string* fetch(const std::string& sec, const std::string& key) {
    auto it = values_.find(std::make_pair(sec, key));
    if (it == values_.end()) return nullptr;
    used_.insert(it->first);
    return &it->second;
  }

  Error bad_value(const std::string& sec, const std::string& key,
                  const std::string& raw, const char* want) {
    return Error(ErrorCode::kConfig, "config [" + sec + "] " + key +
                                         ": expected " + want + ", got '" +
                                         raw + "'");
  }

  long long parse_ll(const std::string& sec, const std::string& key,
                     const std::string& raw) {
    try {
      size_t used = 0;
      long long v = std::stoll(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw bad_value(sec, key, raw, "integer");
    }
  }

  double parse_d(const std::string& sec, const std::string& key,
                 const std::string& raw) {
    try {
      size_t used = 0;
      double v = std::stod(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw bad_value(sec, key, raw, "number");
    }
  }

  std::map<std::pair<std::string, std::string>, std::string> values_;
  std::set<std::pair<std::string, std::string>> used_;
};

void read_schedule(Settings& s, const std::string& sec,
                   TrainingSchedule& sched) {
  sched.epochs = s.get_int(sec, "epochs", sched.epochs);
  sched.lr0 = s.get_double(sec, "lr0", sched.lr0);
  sched.lr_decay = s.get_double(sec, "lr_decay", sched.lr_decay);
  sched.momentum0 = s.get_double(sec, "momentum0", sched.momentum0);
  sched.momentum_decay =
      s.get_double(sec, "momentum_decay", sched.momentum_decay);
  sched.mode_mix = s.get_double(sec, "mode_mix", sched.mode_mix);
  sched.seed = s.get_u64(sec, "seed", sched.seed);
}

void check_schedule(const char* name, const TrainingSchedule& s) {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kConfig, std::string(name) + " schedule: " + what);
  };
  if (s.epochs < 1) fail("epochs must be at least 1");
  if (s.lr0 <= 0) fail("lr0 must be positive");
  if (s.lr_decay <= 0 || s.lr_decay > 1) fail("lr_decay must be in (0, 1]");
  if (s.momentum0 < 0 || s.momentum0 >= 1) fail("momentum0 must be in [0, 1)");
  if (s.momentum_decay <= 0 || s.momentum_decay > 1)
    fail("momentum_decay must be in (0, 1]");
  if (s.mode_mix < 0 || s.mode_mix > 1) fail("mode_mix must be in [0, 1]");
}

// Pushes the global constants down into the nested configs.
void sync_derived(ProjectConfig& cfg) {
  cfg.acoustic_net.lpc_order = cfg.lpc_order;
  cfg.acoustic_net.f0_clamp = cfg.f0_clamp;
  cfg.acoustic_net.encoder.sample_rate = cfg.sample_rate;
  cfg.acoustic_net.encoder.frame_len = cfg.frame_len();
  cfg.duration_net.encoder.neighbor_context = cfg.duration_net.context;
  if (cfg.duration_loss_weights.empty()) cfg.duration_loss_weights = {1.0};
  if (cfg.acoustic_loss_weights.empty())
    cfg.acoustic_loss_weights.assign(size_t(cfg.lpc_order) + 3, 1.0);
}

double db_to_power(double db) { return std::pow(10.0, db / 10.0); }

// Digest-checked load with a context label for error messages.
ModelInfo load_model_checked(const std::string& path, Graph& g,
                             const char* label) {
  try {
    return load_model(path, g);
  } catch (const Error& e) {
    throw Error(e.code(), std::string(label) + " " + path + ": " + e.what());
  }
}

}  // namespace

int ProjectConfig::frame_len() const {
  return static_cast<int>(std::llround(sample_rate * frame_ms / 1000.0));
}

AnalysisParams ProjectConfig::analysis() const {
  AnalysisParams p;
  p.sample_rate = sample_rate;
  p.order = lpc_order;
  p.frame_len = frame_len();
  p.window_len = static_cast<int>(std::llround(sample_rate * 0.025));
  p.pitch_window_len = static_cast<int>(std::llround(sample_rate * 0.040));
  p.f0_clamp = f0_clamp;
  return p;
}

SynthesisParams ProjectConfig::synthesis() const {
  SynthesisParams p;
  p.sample_rate = sample_rate;
  p.frame_len = frame_len();
  p.f0_clamp = f0_clamp;
  p.noise_seed = synthesis_noise_seed;
  return p;
}

ProjectConfig default_project_config() {
  ProjectConfig cfg;
  cfg.duration_training.epochs = 24;
  cfg.duration_training.lr0 = 0.25;
  cfg.duration_training.lr_decay = 0.92;
  cfg.duration_training.momentum0 = 0.6;
  cfg.duration_training.mode_mix = 0.0;
  cfg.duration_training.seed = 101;
  cfg.acoustic_training.epochs = 60;
  cfg.acoustic_training.lr0 = 0.05;
  cfg.acoustic_training.lr_decay = 0.93;
  cfg.acoustic_training.momentum0 = 0.85;
  cfg.acoustic_training.mode_mix = 0.0;
  cfg.acoustic_training.seed = 202;
  sync_derived(cfg);
  return cfg;
}

ProjectConfig parse_project_config(const std::string& text) {
  ProjectConfig cfg = default_project_config();
  Settings s(text);

  cfg.sample_rate = s.get_int("audio", "sample_rate", cfg.sample_rate);
  cfg.lpc_order = s.get_int("audio", "lpc_order", cfg.lpc_order);
  cfg.frame_ms = s.get_double("audio", "frame_ms", cfg.frame_ms);
  cfg.f0_clamp = s.get_double("audio", "f0_clamp", cfg.f0_clamp);

  cfg.silence_threshold_db =
      s.get_double("corpus", "silence_threshold_db", cfg.silence_threshold_db);
  cfg.target_power_db =
      s.get_double("corpus", "target_power_db", cfg.target_power_db);

  cfg.acoustic_net.window_ms =
      s.get_double("encoding", "window_ms", cfg.acoustic_net.window_ms);
  cfg.acoustic_net.taps.offsets =
      s.get_ints("encoding", "taps", cfg.acoustic_net.taps.offsets);

  DurationNetConfig& d = cfg.duration_net;
  d.context = s.get_int("duration_net", "context", d.context);
  d.hidden1 = s.get_int("duration_net", "hidden1", d.hidden1);
  d.hidden2 = s.get_int("duration_net", "hidden2", d.hidden2);
  d.hidden3 = s.get_int("duration_net", "hidden3", d.hidden3);
  d.recurrent_depth =
      s.get_int("duration_net", "recurrent_depth", d.recurrent_depth);
  d.seed = s.get_u64("duration_net", "seed", d.seed);

  PhoneticNetConfig& a = cfg.acoustic_net;
  a.phone_hidden = s.get_int("acoustic_net", "phone_hidden", a.phone_hidden);
  a.phone_aux = s.get_int("acoustic_net", "phone_aux", a.phone_aux);
  a.feature_hidden =
      s.get_int("acoustic_net", "feature_hidden", a.feature_hidden);
  a.feature_aux = s.get_int("acoustic_net", "feature_aux", a.feature_aux);
  a.trunk1 = s.get_int("acoustic_net", "trunk1", a.trunk1);
  a.trunk2 = s.get_int("acoustic_net", "trunk2", a.trunk2);
  a.recurrent_depth =
      s.get_int("acoustic_net", "recurrent_depth", a.recurrent_depth);
  a.f0_min = s.get_double("acoustic_net", "f0_min", a.f0_min);
  a.lsf_min_gap = s.get_double("acoustic_net", "lsf_min_gap", a.lsf_min_gap);
  a.seed = s.get_u64("acoustic_net", "seed", a.seed);

  read_schedule(s, "duration_training", cfg.duration_training);
  read_schedule(s, "acoustic_training", cfg.acoustic_training);

  cfg.duration_loss_weights = s.get_doubles("loss", "duration_weights", {});
  cfg.acoustic_loss_weights = s.get_doubles("loss", "acoustic_weights", {});

  cfg.duration_model_path =
      s.get_string("paths", "duration_model", cfg.duration_model_path);
  cfg.acoustic_model_path =
      s.get_string("paths", "acoustic_model", cfg.acoustic_model_path);

  cfg.synthesis_noise_seed =
      s.get_u64("synthesis", "noise_seed", cfg.synthesis_noise_seed);

  s.finish();
  sync_derived(cfg);
  check_project_config(cfg);
  return cfg;
}

ProjectConfig load_project_config(const std::string& path) {
  return parse_project_config(read_text_file(path));
}

std::string serialize_project_config(const ProjectConfig& cfg) {
  std::ostringstream out;
  out.precision(12);
  out << "[audio]\n"
      << "sample_rate = " << cfg.sample_rate << "\n"
      << "lpc_order = " << cfg.lpc_order << "\n"
      << "frame_ms = " << cfg.frame_ms << "\n"
      << "f0_clamp = " << cfg.f0_clamp << "\n\n";
  out << "[corpus]\n"
      << "silence_threshold_db = " << cfg.silence_threshold_db << "\n"
      << "target_power_db = " << cfg.target_power_db << "\n\n";
  out << "[encoding]\n"
      << "window_ms = " << cfg.acoustic_net.window_ms << "\n";
  if (!cfg.acoustic_net.taps.offsets.empty()) {
    out << "taps =";
    for (int t : cfg.acoustic_net.taps.offsets) out << " " << t;
    out << "\n";
  }
  out << "\n[duration_net]\n"
      << "context = " << cfg.duration_net.context << "\n"
      << "hidden1 = " << cfg.duration_net.hidden1 << "\n"
      << "hidden2 = " << cfg.duration_net.hidden2 << "\n"
      << "hidden3 = " << cfg.duration_net.hidden3 << "\n"
      << "recurrent_depth = " << cfg.duration_net.recurrent_depth << "\n"
      << "seed = " << cfg.duration_net.seed << "\n\n";
  out << "[acoustic_net]\n"
      << "phone_hidden = " << cfg.acoustic_net.phone_hidden << "\n"
      << "phone_aux = " << cfg.acoustic_net.phone_aux << "\n"
      << "feature_hidden = " << cfg.acoustic_net.feature_hidden << "\n"
      << "feature_aux = " << cfg.acoustic_net.feature_aux << "\n"
      << "trunk1 = " << cfg.acoustic_net.trunk1 << "\n"
      << "trunk2 = " << cfg.acoustic_net.trunk2 << "\n"
      << "recurrent_depth = " << cfg.acoustic_net.recurrent_depth << "\n"
      << "f0_min = " << cfg.acoustic_net.f0_min << "\n"
      << "lsf_min_gap = " << cfg.acoustic_net.lsf_min_gap << "\n"
      << "seed = " << cfg.acoustic_net.seed << "\n\n";
  auto schedule = [&](const char* sec, const TrainingSchedule& sc) {
    out << "[" << sec << "]\n"
        << "epochs = " << sc.epochs << "\n"
        << "lr0 = " << sc.lr0 << "\n"
        << "lr_decay = " << sc.lr_decay << "\n"
        << "momentum0 = " << sc.momentum0 << "\n"
        << "momentum_decay = " << sc.momentum_decay << "\n"
        << "mode_mix = " << sc.mode_mix << "\n"
        << "seed = " << sc.seed << "\n\n";
  };
  schedule("duration_training", cfg.duration_training);
  schedule("acoustic_training", cfg.acoustic_training);
  out << "[loss]\n"
      << "duration_weights =";
  for (double w : cfg.duration_loss_weights) out << " " << w;
  out << "\nacoustic_weights =";
  for (double w : cfg.acoustic_loss_weights) out << " " << w;
  out << "\n\n[paths]\n"
      << "duration_model = " << cfg.duration_model_path << "\n"
      << "acoustic_model = " << cfg.acoustic_model_path << "\n\n";
  out << "[synthesis]\n"
      << "noise_seed = " << cfg.synthesis_noise_seed << "\n";
  return out.str();
}

void check_project_config(const ProjectConfig& cfg) {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kConfig, what);
  };
  if (cfg.sample_rate < 8000 || cfg.sample_rate > 48000)
    fail("sample_rate must be in [8000, 48000]");
  if (cfg.lpc_order < 2 || cfg.lpc_order > 32)
    fail("lpc_order must be in [2, 32]");
  if (cfg.frame_ms <= 0) fail("frame_ms must be positive");
  double exact = cfg.sample_rate * cfg.frame_ms / 1000.0;
  if (std::abs(exact - cfg.frame_len()) > 1e-6)
    fail("frame_ms must give a whole number of samples per frame");
  if (cfg.frame_len() < 16) fail("frame is too short");
  if (cfg.f0_clamp <= 0) fail("f0_clamp must be positive");
  double frames_per_window = cfg.acoustic_net.window_ms / cfg.frame_ms;
  if (std::abs(frames_per_window - std::llround(frames_per_window)) > 1e-9)
    fail("window_ms must be a whole number of frames");
  if (cfg.silence_threshold_db >= 0)
    fail("silence_threshold_db must be negative");
  if (cfg.target_power_db > 0 || cfg.target_power_db < -80)
    fail("target_power_db must be in [-80, 0]");
  check_schedule("duration_training", cfg.duration_training);
  check_schedule("acoustic_training", cfg.acoustic_training);
  if (cfg.duration_loss_weights.size() != 1)
    fail("duration_weights must hold exactly 1 value");
  if (cfg.acoustic_loss_weights.size() != size_t(cfg.lpc_order) + 3)
    fail("acoustic_weights must hold lpc_order + 3 values");
  for (const auto& [name, weights] :
       {std::make_pair("duration_weights", &cfg.duration_loss_weights),
        std::make_pair("acoustic_weights", &cfg.acoustic_loss_weights)}) {
    double sum = 0;
    for (double w : *weights) {
      if (w < 0) fail(std::string(name) + ": weights must be non-negative");
      sum += w;
    }
    if (sum <= 0) fail(std::string(name) + ": weights must not all be zero");
  }
  if (cfg.duration_model_path.empty() || cfg.acoustic_model_path.empty())
    fail("model paths must not be empty");
}

// ---- corpus directories ----

CorpusLoad load_corpus_dir(const std::string& dir, const PhoneSet& phones,
                           const ProjectConfig& cfg) {
  if (!fs::is_directory(dir))
    throw Error(ErrorCode::kIo, "not a directory: " + dir);
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".wav")
      stems.push_back(entry.path().stem().string());
  std::sort(stems.begin(), stems.end());

  CorpusLoad load;
  for (const std::string& stem : stems) {
    fs::path base = fs::path(dir) / stem;
    try {
      fs::path phn = base;
      phn.replace_extension(".phn");
      fs::path syn = base;
      syn.replace_extension(".syn");
      if (!fs::exists(phn))
        throw Error(ErrorCode::kCorpus, "missing " + phn.filename().string());
      if (!fs::exists(syn))
        throw Error(ErrorCode::kCorpus, "missing " + syn.filename().string());
      fs::path wav = base;
      wav.replace_extension(".wav");
      Audio audio = read_wav(wav.string(), cfg.sample_rate);
      Utterance utt;
      utt.sample_rate = audio.sample_rate;
      utt.samples =
          normalize_power(audio.samples, audio.sample_rate,
                          cfg.silence_threshold_db,
                          db_to_power(cfg.target_power_db));
      utt.segments = parse_phone_labels(read_text_file(phn.string()), phones);
      utt.syntax = parse_syntax_labels(read_text_file(syn.string()),
                                       int64_t(utt.samples.size()));
      validate_utterance(utt, phones);
      load.names.push_back(stem);
      load.utterances.push_back(std::move(utt));
    } catch (const Error& e) {
      load.errors.push_back(stem + ": " + e.what());
    }
  }
  return load;
}

std::vector<std::vector<AcousticFrame>> analyze_corpus(
    const std::vector<Utterance>& corpus, const AnalysisParams& params) {
  std::vector<std::vector<AcousticFrame>> out(corpus.size());
  size_t n_threads = std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min(n_threads, corpus.size());
  if (n_threads <= 1) {
    for (size_t i = 0; i < corpus.size(); ++i)
      out[i] = analyze(corpus[i].samples, params);
    return out;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= corpus.size()) return;
      try {
        out[i] = analyze(corpus[i].samples, params);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

// ---- commands ----

AnalyzeReport cmd_analyze(const std::string& wav_path,
                          const std::string& out_path,
                          const ProjectConfig& cfg) {
  Audio audio = read_wav(wav_path, cfg.sample_rate);
  std::vector<AcousticFrame> frames = analyze(audio.samples, cfg.analysis());
  ensure_parent_dir(out_path);
  write_frames(out_path, frames, cfg.sample_rate, cfg.lpc_order);
  return {static_cast<int>(frames.size())};
}

TrainReport cmd_train(const std::string& corpus_dir, TrainTarget target,
                      const std::string& model_out, const ProjectConfig& cfg) {
  PhoneSet phones = PhoneSet::builtin();
  CorpusLoad load = load_corpus_dir(corpus_dir, phones, cfg);
  if (!load.errors.empty())
    throw Error(ErrorCode::kCorpus,
                std::to_string(load.errors.size()) +
                    " corpus files unusable: " + join(load.errors, "; "));
  if (load.utterances.empty())
    throw Error(ErrorCode::kCorpus, "no utterances in " + corpus_dir);

  Dataset data;
  Normalization norm;
  Graph net;
  const std::vector<double>* weights = nullptr;
  TrainingSchedule schedule;
  if (target == TrainTarget::kDuration) {
    net = build_duration_net(cfg.duration_net, phones);
    DurationDataset ds =
        assemble_duration_dataset(load.utterances, phones, cfg.duration_net);
    data = std::move(ds.data);
    norm = ds.norm;
    weights = &cfg.duration_loss_weights;
    schedule = cfg.duration_training;
  } else {
    auto analyzed = analyze_corpus(load.utterances, cfg.analysis());
    std::vector<std::string> errors;
    for (size_t i = 0; i < load.utterances.size(); ++i) {
      try {
        acoustic_targets(load.utterances[i], analyzed[i], cfg.acoustic_net);
      } catch (const Error& e) {
        errors.push_back(load.names[i] + ": " + e.what());
      }
    }
    if (!errors.empty())
      throw Error(ErrorCode::kCorpus, std::to_string(errors.size()) +
                                          " corpus files unusable: " +
                                          join(errors, "; "));
    net = build_phonetic_net(cfg.acoustic_net, phones);
    AcousticDataset ds = assemble_acoustic_dataset(load.utterances, analyzed,
                                                   phones, cfg.acoustic_net);
    data = std::move(ds.data);
    norm = ds.norm;
    weights = &cfg.acoustic_loss_weights;
    schedule = cfg.acoustic_training;
  }

  size_t dims = data.front().targets.front().size();
  size_t n_frames = 0;
  std::vector<double> mean(dims, 0.0);
  for (const Sequence& seq : data)
    for (const auto& t : seq.targets) {
      for (size_t d = 0; d < dims; ++d) mean[d] += t[d];
      ++n_frames;
    }
  for (double& m : mean) m /= double(n_frames);
  double baseline = 0;
  for (const Sequence& seq : data)
    for (const auto& t : seq.targets)
      baseline += weighted_euclidean(mean, t, *weights);
  baseline /= double(n_frames);

  TrainReport report;
  report.n_utterances = load.utterances.size();
  report.n_frames = n_frames;
  report.baseline_loss = baseline;
  report.loss_history = train(net, data, schedule, *weights);

  ensure_parent_dir(model_out);
  save_model(model_out, net, norm, false);

  report.loss_csv_path = model_out + ".loss.csv";
  std::string csv;
  csv += "# utterances," + std::to_string(report.n_utterances) + "\n";
  csv += "# frames," + std::to_string(n_frames) + "\n";
  csv += "# baseline," + fmt_double(baseline) + "\n";
  csv += "epoch,loss\n";
  for (size_t e = 0; e < report.loss_history.size(); ++e)
    csv += std::to_string(e) + "," + fmt_double(report.loss_history[e]) + "\n";
  write_text_file(report.loss_csv_path, csv);
  return report;
}

std::vector<PhoneSegment> segments_with_durations(
    const std::vector<PhoneSegment>& segments,
    const std::vector<double>& seconds, int sample_rate, double frame_s) {
  if (seconds.size() != segments.size())
    throw Error(ErrorCode::kArgument,
                "one duration per segment required");
  int64_t frame_len = std::llround(sample_rate * frame_s);
  std::vector<PhoneSegment> out;
  out.reserve(segments.size());
  int64_t cursor = segments.empty() ? 0 : segments.front().start;
  for (size_t i = 0; i < segments.size(); ++i) {
    int64_t frames = std::max<int64_t>(1, std::llround(seconds[i] / frame_s));
    PhoneSegment seg;
    seg.start = cursor;
    seg.end = cursor + frames * frame_len;
    seg.phone = segments[i].phone;
    cursor = seg.end;
    out.push_back(std::move(seg));
  }
  return out;
}

namespace {

// Piecewise-linear sample map between two segmentations of the same phone
// sequence; segment boundaries map to segment boundaries exactly.
class GridMap {
 public:
  GridMap(const std::vector<PhoneSegment>& from,
          const std::vector<PhoneSegment>& to) {
    if (from.size() != to.size() || from.empty())
      throw Error(ErrorCode::kArgument, "segment lists must match");
    old_.push_back(from.front().start);
    new_.push_back(to.front().start);
    for (size_t i = 0; i < from.size(); ++i) {
      old_.push_back(from[i].end);
      new_.push_back(to[i].end);
    }
  }

  int64_t operator()(int64_t p) const {
    if (p <= old_.front()) return new_.front() + (p - old_.front());
    if (p >= old_.back()) return new_.back() + (p - old_.back());
    size_t i = size_t(std::upper_bound(old_.begin(), old_.end(), p) -
                      old_.begin()) - 1;
    if (p == old_[i]) return new_[i];
    double span_old = double(old_[i + 1] - old_[i]);
    double span_new = double(new_[i + 1] - new_[i]);
    return new_[i] + std::llround((double(p - old_[i]) / span_old) * span_new);
  }

 private:
  std::vector<int64_t> old_, new_;
};

}  // namespace

SyntacticAnnotation remap_syntax(const SyntacticAnnotation& syntax,
                                 const std::vector<PhoneSegment>& from,
                                 const std::vector<PhoneSegment>& to) {
  GridMap map(from, to);
  auto map_spans = [&](const std::vector<Span>& spans) {
    std::vector<Span> out;
    out.reserve(spans.size());
    for (const Span& s : spans) out.push_back({map(s.start), map(s.end)});
    return out;
  };
  SyntacticAnnotation out;
  out.syllables = map_spans(syntax.syllables);
  out.stress = syntax.stress;
  for (const WordSpan& w : syntax.words) {
    WordSpan m = w;
    m.start = map(w.start);
    m.end = map(w.end);
    out.words.push_back(m);
  }
  out.phrases = map_spans(syntax.phrases);
  out.clauses = map_spans(syntax.clauses);
  out.sentences = map_spans(syntax.sentences);
  for (const TobiMark& t : syntax.tobi_marks)
    out.tobi_marks.push_back({map(t.position), t.label});
  return out;
}

SynthReport cmd_synth(const std::string& labels_path,
                      const std::string& out_wav, const ProjectConfig& cfg,
                      bool natural_durations) {
  PhoneSet phones = PhoneSet::builtin();
  std::vector<PhoneSegment> segments =
      parse_phone_labels(read_text_file(labels_path), phones);
  if (segments.empty())
    throw Error(ErrorCode::kCorpus, "no segments in " + labels_path);
  fs::path syn_path = fs::path(labels_path);
  syn_path.replace_extension(".syn");
  Utterance utt;
  utt.sample_rate = cfg.sample_rate;
  utt.segments = std::move(segments);
  utt.syntax = parse_syntax_labels(read_text_file(syn_path.string()),
                                   utt.segments.back().end);

  Graph acoustic_net = build_phonetic_net(cfg.acoustic_net, phones);
  ModelInfo acoustic_info = load_model_checked(cfg.acoustic_model_path,
                                               acoustic_net, "acoustic model");

  std::vector<AcousticFrame> frames;
  if (natural_durations) {
    frames = predict_frames(utt, acoustic_net, acoustic_info.norm, phones,
                            cfg.acoustic_net);
  } else {
    Graph duration_net = build_duration_net(cfg.duration_net, phones);
    ModelInfo duration_info = load_model_checked(
        cfg.duration_model_path, duration_net, "duration model");
    std::vector<double> seconds =
        predict_durations(utt, duration_net, duration_info.norm, phones,
                          cfg.duration_net, cfg.frame_s());
    Utterance timed;
    timed.sample_rate = cfg.sample_rate;
    timed.segments = segments_with_durations(utt.segments, seconds,
                                             cfg.sample_rate, cfg.frame_s());
    timed.syntax = remap_syntax(utt.syntax, utt.segments, timed.segments);
    frames = predict_frames(timed, acoustic_net, acoustic_info.norm, phones,
                            cfg.acoustic_net);
  }

  std::vector<double> samples = synthesize(frames, cfg.synthesis());
  ensure_parent_dir(out_wav);
  write_wav(out_wav, Audio{cfg.sample_rate, samples});

  SynthReport report;
  report.n_frames = static_cast<int>(frames.size());
  report.seconds = double(frames.size()) * cfg.frame_s();
  report.natural_durations = natural_durations;
  return report;
}

// ---- spectrograms ----

SpectrogramImage render_spectrogram(const std::vector<double>& samples,
                                    int sample_rate) {
  constexpr int kFft = 512;
  constexpr double kRangeDb = 50.0;
  int win = static_cast<int>(std::llround(sample_rate * 0.025));
  int hop = std::max(1, static_cast<int>(std::llround(sample_rate * 0.005)));
  if (win > kFft)
    throw Error(ErrorCode::kConfig,
                "sample rate too high for the 512-point spectrogram");

  int64_t n = int64_t(samples.size());
  int cols = n < win ? 1 : 1 + static_cast<int>((n - win) / hop);
  int height = kFft / 2 + 1;

  std::vector<double> window(static_cast<size_t>(win));
  for (int i = 0; i < win; ++i)
    window[size_t(i)] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (win - 1));

  std::vector<double> level_db(size_t(cols) * size_t(height), 0.0);
  double max_db = -1e9;
  bool any_energy = false;
  std::vector<std::complex<double>> block(size_t{kFft});
  for (int c = 0; c < cols; ++c) {
    int64_t start = int64_t(c) * hop;
    std::fill(block.begin(), block.end(), std::complex<double>(0, 0));
    for (int i = 0; i < win; ++i) {
      int64_t idx = start + i;
      double s = idx < n ? samples[size_t(idx)] : 0.0;
      block[size_t(i)] = s * window[size_t(i)];
    }
    fft(block, false);
    for (int k = 0; k < height; ++k) {
      double p = std::norm(block[size_t(k)]);
      double db = p > 0 ? 10.0 * std::log10(p) : -1e9;
      if (p > 0) any_energy = true;
      max_db = std::max(max_db, db);
      level_db[size_t(c) * size_t(height) + size_t(k)] = db;
    }
  }

  SpectrogramImage image;
  image.width = cols;
  image.height = height;
  image.pixels.assign(size_t(cols) * size_t(height), 255);
  if (!any_energy) return image;
  for (int r = 0; r < height; ++r) {
    int bin = height - 1 - r;
    for (int c = 0; c < cols; ++c) {
      double rel = max_db - level_db[size_t(c) * size_t(height) + size_t(bin)];
      long g = std::lround(rel / kRangeDb * 255.0);
      image.pixels[size_t(r) * size_t(cols) + size_t(c)] =
          static_cast<uint8_t>(std::clamp(g, 0L, 255L));
    }
  }
  return image;
}

void write_pgm(const std::string& path, const SpectrogramImage& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()),
             image.pixels.size());
  write_binary_file(path, out);
}

SpectrogramReport cmd_spectrogram(const std::string& wav_path,
                                  const std::string& out_path,
                                  const ProjectConfig& cfg) {
  Audio audio = read_wav(wav_path, cfg.sample_rate);
  SpectrogramImage image = render_spectrogram(audio.samples, cfg.sample_rate);
  ensure_parent_dir(out_path);
  write_pgm(out_path, image);
  return {image.width, image.height};
}

// ---- quantization ----

size_t quantized_model_file_bytes(const Graph& g, size_t norm_dims) {
  size_t bytes = 4 + 2 + 32 + 1 + 2;  // magic, version, digest, flag, dims
  bytes += 16 * norm_dims;
  bytes += 2;  // block count
  for (const Block& b : g.blocks)
    if (!b.w.empty()) bytes += 4 + 12 + b.w.size() + b.b.size();
  return bytes;
}

QuantizeReport cmd_quantize(const std::string& model_in,
                            const std::string& model_out,
                            const ProjectConfig& cfg) {
  std::vector<uint8_t> bytes = read_binary_file(model_in);
  if (bytes.size() < 41 || std::memcmp(bytes.data(), "NNBG", 4) != 0)
    throw Error(ErrorCode::kFormat, "not a model file: " + model_in);
  std::array<uint8_t, 32> digest{};
  std::memcpy(digest.data(), bytes.data() + 6, digest.size());

  PhoneSet phones = PhoneSet::builtin();
  Graph duration_net = build_duration_net(cfg.duration_net, phones);
  Graph acoustic_net = build_phonetic_net(cfg.acoustic_net, phones);

  QuantizeReport report;
  Graph* matched = nullptr;
  Graph* other = nullptr;
  if (digest == duration_net.digest()) {
    report.topology = "duration";
    matched = &duration_net;
    other = &acoustic_net;
  } else if (digest == acoustic_net.digest()) {
    report.topology = "acoustic";
    matched = &acoustic_net;
    other = &duration_net;
  } else {
    throw Error(ErrorCode::kModel,
                model_in + ": weight digest matches neither reference topology");
  }

  ModelInfo info = load_model(model_in, *matched);
  ensure_parent_dir(model_out);
  if (info.quantized) {
    report.already_quantized = true;
    write_binary_file(model_out, bytes.data(), bytes.size());
  } else {
    save_model(model_out, *matched, info.norm, true);
  }
  report.file_bytes = size_t(fs::file_size(model_out));
  size_t other_dims = size_t(other->blocks[size_t(other->output_block)].width);
  report.joint_bytes =
      report.file_bytes + quantized_model_file_bytes(*other, other_dims);
  report.over_budget = report.joint_bytes >= kWeightBudgetBytes;
  return report;
}

// ---- synthetic corpora ----

GenCorpusReport cmd_gen_corpus(const std::string& out_dir, int n_utterances,
                               uint64_t seed, const ProjectConfig& cfg) {
  if (n_utterances < 1)
    throw Error(ErrorCode::kArgument, "utterance count must be positive");
  PhoneSet phones = PhoneSet::builtin();
  Rulebook rulebook = Rulebook::built_in_default(cfg.lpc_order, cfg.sample_rate);
  std::vector<Utterance> corpus = generate_synthetic_corpus(
      seed, n_utterances, rulebook, phones, cfg.synthesis());
  fs::create_directories(out_dir);

  GenCorpusReport report;
  report.n_utterances = n_utterances;
  for (size_t i = 0; i < corpus.size(); ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "u%04zu", i);
    fs::path base = fs::path(out_dir) / name;
    write_wav((base.string() + ".wav"),
              Audio{corpus[i].sample_rate, corpus[i].samples});
    write_text_file(base.string() + ".phn",
                    serialize_phone_labels(corpus[i].segments));
    write_text_file(base.string() + ".syn",
                    serialize_syntax_labels(corpus[i].syntax));
    report.names.push_back(name);
  }
  return report;
}

}  // namespace tts
