#include "tts/vocoder.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <deque>
#include <numbers>

#include "tts/error.hpp"
#include "tts/util.hpp"

namespace tts {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kFirHalf = 32;  // excitation band-split kernel half length

std::vector<double> hamming(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * i / (n - 1));
  return w;
}

double mean_square(const double* x, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += x[i] * x[i];
  return n > 0 ? acc / n : 0.0;
}

// Symmetric polynomial of even degree 2m evaluated on the unit circle,
// with the linear-phase factor removed: value is real for real omega.
double eval_symmetric(const std::vector<double>& c, double omega) {
  const int m = static_cast<int>(c.size() - 1) / 2;
  double v = c[m];
  for (int k = 1; k <= m; ++k) v += 2.0 * c[m - k] * std::cos(k * omega);
  return v;
}

// Divides c by (1 + s*z^-1) in place; the root must be exact by construction.
void deflate(std::vector<double>& c, double s) {
  std::vector<double> out(c.size() - 1);
  double carry = 0.0;
  for (size_t i = 0; i + 1 < c.size(); ++i) {
    out[i] = c[i] - s * carry;
    carry = out[i];
  }
  c = std::move(out);
}

std::vector<double> find_symmetric_roots(const std::vector<double>& c,
                                         int expected) {
  // Tight root pairs can slip between grid points; rescan finer until all
  // expected sign changes appear.
  for (int grid = 4096; grid <= 1 << 20; grid *= 8) {
    std::vector<double> roots;
    double prev_w = 1e-9;
    double prev_v = eval_symmetric(c, prev_w);
    for (int i = 1; i <= grid && static_cast<int>(roots.size()) < expected;
         ++i) {
      double w = kPi * i / (grid + 1);
      double v = eval_symmetric(c, w);
      if ((prev_v <= 0.0) != (v <= 0.0)) {
        double lo = prev_w, hi = w, vlo = prev_v;
        for (int it = 0; it < 60 && hi - lo > 1e-13; ++it) {
          double mid = 0.5 * (lo + hi);
          double vm = eval_symmetric(c, mid);
          if ((vlo <= 0.0) != (vm <= 0.0)) {
            hi = mid;
          } else {
            lo = mid;
            vlo = vm;
          }
        }
        roots.push_back(0.5 * (lo + hi));
      }
      prev_w = w;
      prev_v = v;
    }
    if (static_cast<int>(roots.size()) == expected) return roots;
  }
  return {};
}

std::vector<double> poly_mul(const std::vector<double>& a,
                             const std::vector<double>& b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

// Windowed-sinc lowpass at cutoff_hz; highpass is its complement to a delta.
std::vector<double> lowpass_kernel(double cutoff_hz, int sample_rate) {
  const int n = 2 * kFirHalf + 1;
  std::vector<double> h(n, 0.0);
  const double wc = 2.0 * kPi * cutoff_hz / sample_rate;
  const auto win = hamming(n);
  for (int i = 0; i < n; ++i) {
    int k = i - kFirHalf;
    double v = k == 0 ? wc / kPi : std::sin(wc * k) / (kPi * k);
    h[i] = v * win[i];
  }
  return h;
}

struct Kernels {
  std::vector<double> low;
  std::vector<double> high;
};

Kernels band_split_kernels(double boundary_hz, int sample_rate) {
  Kernels k;
  if (boundary_hz <= 0.0) {
    k.low.assign(2 * kFirHalf + 1, 0.0);
  } else if (boundary_hz >= sample_rate / 2.0) {
    k.low.assign(2 * kFirHalf + 1, 0.0);
    k.low[kFirHalf] = 1.0;
  } else {
    k.low = lowpass_kernel(boundary_hz, sample_rate);
  }
  k.high.assign(k.low.size(), 0.0);
  for (size_t i = 0; i < k.low.size(); ++i) k.high[i] = -k.low[i];
  k.high[kFirHalf] += 1.0;
  return k;
}

void check_frame(const AcousticFrame& f, int order, double nyquist,
                 size_t index) {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kArgument,
                "frame " + std::to_string(index) + ": " + what);
  };
  if (static_cast<int>(f.lsf.size()) != order)
    fail("expected " + std::to_string(order) + " line spectral frequencies");
  double prev = 0.0;
  for (double w : f.lsf) {
    if (!(w > prev && w < kPi))
      fail("line spectral frequencies must be strictly increasing in (0, pi)");
    prev = w;
  }
  if (!(f.f0 > 0.0)) fail("f0 must be positive");
  if (f.voicing_boundary < 0.0 || f.voicing_boundary > nyquist)
    fail("voicing boundary outside [0, nyquist]");
  if (!f.voiced && f.voicing_boundary != 0.0)
    fail("unvoiced frame with nonzero voicing boundary");
}

}  // namespace

std::vector<double> autocorrelate(const std::vector<double>& block, int order) {
  if (static_cast<int>(block.size()) < order + 1)
    throw Error(ErrorCode::kArgument,
                "autocorrelation block shorter than order + 1");
  std::vector<double> r(order + 1, 0.0);
  const int n = static_cast<int>(block.size());
  for (int k = 0; k <= order; ++k) {
    double acc = 0.0;
    for (int i = 0; i + k < n; ++i) acc += block[i] * block[i + k];
    r[k] = acc;
  }
  return r;
}

LevinsonResult levinson_durbin(const std::vector<double>& r, int order) {
  if (static_cast<int>(r.size()) < order + 1)
    throw Error(ErrorCode::kArgument, "autocorrelation shorter than order + 1");
  if (!(r[0] > 0.0))
    throw Error(ErrorCode::kNumeric, "autocorrelation r[0] must be positive");
  std::vector<double> a(order, 0.0);
  std::vector<double> refl(order, 0.0);
  double err = r[0];
  for (int m = 1; m <= order; ++m) {
    double acc = r[m];
    for (int j = 1; j < m; ++j) acc -= a[j - 1] * r[m - j];
    double k = acc / err;
    if (!(std::abs(k) < 1.0))
      throw Error(ErrorCode::kNumeric,
                  "reflection coefficient out of range at stage " +
                      std::to_string(m));
    refl[m - 1] = k;
    std::vector<double> prev(a.begin(), a.begin() + (m - 1));
    a[m - 1] = k;
    for (int j = 1; j < m; ++j) a[j - 1] = prev[j - 1] - k * prev[m - 1 - j];
    err *= 1.0 - k * k;
  }
  LevinsonResult out;
  out.model.coefficients = std::move(a);
  out.model.gain = std::sqrt(std::max(err, 0.0));
  out.reflections = std::move(refl);
  return out;
}

std::vector<double> lpc_to_lsf(const std::vector<double>& coefficients) {
  const int p = static_cast<int>(coefficients.size());
  std::vector<double> aa(p + 2, 0.0);
  aa[0] = 1.0;
  for (int k = 1; k <= p; ++k) aa[k] = -coefficients[k - 1];
  std::vector<double> sum(p + 2), diff(p + 2);
  for (int i = 0; i <= p + 1; ++i) {
    sum[i] = aa[i] + aa[p + 1 - i];
    diff[i] = aa[i] - aa[p + 1 - i];
  }
  int n_sum, n_diff;
  if (p % 2 == 0) {
    deflate(sum, 1.0);    // root at z = -1
    deflate(diff, -1.0);  // root at z = +1
    n_sum = p / 2;
    n_diff = p / 2;
  } else {
    deflate(diff, -1.0);
    deflate(diff, 1.0);
    n_sum = (p + 1) / 2;
    n_diff = (p - 1) / 2;
  }
  auto sum_roots = find_symmetric_roots(sum, n_sum);
  auto diff_roots = find_symmetric_roots(diff, n_diff);
  if (static_cast<int>(sum_roots.size()) != n_sum ||
      static_cast<int>(diff_roots.size()) != n_diff)
    throw Error(ErrorCode::kNumeric,
                "failed to isolate line spectral frequencies");
  std::vector<double> lsf;
  lsf.reserve(p);
  std::merge(sum_roots.begin(), sum_roots.end(), diff_roots.begin(),
             diff_roots.end(), std::back_inserter(lsf));
  for (int i = 1; i < p; ++i)
    if (!(lsf[i] > lsf[i - 1]))
      throw Error(ErrorCode::kNumeric,
                  "line spectral frequencies failed to interlace");
  return lsf;
}

std::vector<double> lsf_to_lpc(const std::vector<double>& lsf) {
  const int p = static_cast<int>(lsf.size());
  double prev = 0.0;
  for (double w : lsf) {
    if (!(w > prev && w < kPi))
      throw Error(ErrorCode::kArgument,
                  "line spectral frequencies must be strictly increasing "
                  "in (0, pi)");
    prev = w;
  }
  std::vector<double> sum{1.0}, diff{1.0};
  for (int i = 0; i < p; ++i) {
    std::vector<double> quad{1.0, -2.0 * std::cos(lsf[i]), 1.0};
    if (i % 2 == 0)
      sum = poly_mul(sum, quad);
    else
      diff = poly_mul(diff, quad);
  }
  if (p % 2 == 0) {
    sum = poly_mul(sum, {1.0, 1.0});
    diff = poly_mul(diff, {1.0, -1.0});
  } else {
    diff = poly_mul(diff, {1.0, 0.0, -1.0});
  }
  std::vector<double> a(p, 0.0);
  for (int k = 1; k <= p; ++k) a[k - 1] = -0.5 * (sum[k] + diff[k]);
  return a;
}

F0Estimate estimate_f0(const std::vector<double>& block,
                       const AnalysisParams& params) {
  const int n = static_cast<int>(block.size());
  const int lag_min =
      std::max(1, static_cast<int>(params.sample_rate / params.f0_max));
  const int lag_max =
      static_cast<int>(std::ceil(params.sample_rate / params.f0_min));
  if (n < 2 * lag_max)
    throw Error(ErrorCode::kArgument,
                "pitch block shorter than two periods at the minimum f0");
  F0Estimate out;
  out.f0 = params.f0_clamp;
  if (mean_square(block.data(), n) <=
      std::pow(10.0, params.silence_floor_db / 10.0))
    return out;
  std::vector<double> nacf(lag_max + 2, 0.0);
  for (int lag = lag_min - 1; lag <= lag_max + 1 && lag < n; ++lag) {
    if (lag < 1) continue;
    double c = 0.0, e1 = 0.0, e2 = 0.0;
    for (int i = 0; i + lag < n; ++i) {
      c += block[i] * block[i + lag];
      e1 += block[i] * block[i];
      e2 += block[i + lag] * block[i + lag];
    }
    nacf[lag] = c / std::sqrt(e1 * e2 + 1e-20);
  }
  int best = lag_min;
  for (int lag = lag_min; lag <= lag_max; ++lag)
    if (nacf[lag] > nacf[best]) best = lag;
  // A subharmonic can edge out the true period; prefer the shortest local
  // peak that comes close to the global one.
  const double best_val = nacf[best];
  for (int lag = lag_min; lag < best; ++lag) {
    if (nacf[lag] >= nacf[lag - 1] && nacf[lag] >= nacf[lag + 1] &&
        nacf[lag] >= 0.9 * best_val) {
      best = lag;
      break;
    }
  }
  double refined = best;
  if (best > lag_min && best < lag_max) {
    double y0 = nacf[best - 1], y1 = nacf[best], y2 = nacf[best + 1];
    double denom = y0 - 2.0 * y1 + y2;
    if (std::abs(denom) > 1e-12) {
      double delta = 0.5 * (y0 - y2) / denom;
      refined = best + std::clamp(delta, -0.5, 0.5);
    }
  }
  out.periodicity = std::clamp(nacf[best], 0.0, 1.0);
  out.voiced = out.periodicity >= params.voicing_threshold;
  if (out.voiced)
    out.f0 = std::clamp(params.sample_rate / refined, params.f0_min,
                        params.f0_max);
  return out;
}

double estimate_voicing_boundary(const std::vector<double>& block, double f0,
                                 const AnalysisParams& params) {
  const int n = static_cast<int>(block.size());
  const double nyquist = params.sample_rate / 2.0;
  const size_t nfft = next_pow2(static_cast<size_t>(n));
  // Windowing keeps spectral leakage from smearing strong low harmonics
  // into otherwise empty high bands.
  const auto window = hamming(n);
  std::vector<double> shaped(n);
  for (int i = 0; i < n; ++i) shaped[i] = block[i] * window[i];
  std::vector<std::complex<double>> spec(nfft);
  for (int i = 0; i < n; ++i) spec[i] = shaped[i];
  fft(spec, false);

  const int lag = std::max(1, static_cast<int>(std::lround(params.sample_rate / f0)));
  double total = mean_square(shaped.data(), n);
  int harmonic_bands = 0;
  for (int b = 0; b < params.n_bands; ++b) {
    double lo = nyquist * b / params.n_bands;
    double hi = nyquist * (b + 1) / params.n_bands;
    std::vector<std::complex<double>> band(nfft, 0.0);
    for (size_t k = 0; k <= nfft / 2; ++k) {
      double freq = static_cast<double>(k) * params.sample_rate / nfft;
      bool inside = freq >= lo && (freq < hi || (b + 1 == params.n_bands &&
                                                freq <= nyquist));
      if (!inside) continue;
      band[k] = spec[k];
      if (k > 0 && k < nfft / 2) band[nfft - k] = spec[nfft - k];
    }
    fft(band, true);
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) y[i] = band[i].real();
    double energy = mean_square(y.data(), n);
    // Bands with no appreciable energy do not witness against voicing.
    if (energy < 1e-12 + 1e-3 * total) {
      ++harmonic_bands;
      continue;
    }
    double c = 0.0, e1 = 0.0, e2 = 0.0;
    for (int i = 0; i + lag < n; ++i) {
      c += y[i] * y[i + lag];
      e1 += y[i] * y[i];
      e2 += y[i + lag] * y[i + lag];
    }
    double h = c / std::sqrt(e1 * e2 + 1e-20);
    if (h < params.harmonicity_threshold) break;
    ++harmonic_bands;
  }
  return nyquist * harmonic_bands / params.n_bands;
}

std::vector<AcousticFrame> analyze(const std::vector<double>& samples,
                                   const AnalysisParams& params) {
  const int n_frames = static_cast<int>(samples.size()) / params.frame_len;
  const int total = static_cast<int>(samples.size());
  std::vector<AcousticFrame> frames;
  frames.reserve(n_frames);
  const auto window = hamming(params.window_len);

  auto grab = [&](int center, int len) {
    std::vector<double> block(len, 0.0);
    int start = center - len / 2;
    for (int i = 0; i < len; ++i) {
      int j = start + i;
      if (j >= 0 && j < total) block[i] = samples[j];
    }
    return block;
  };

  for (int i = 0; i < n_frames; ++i) {
    try {
      AcousticFrame f;
      const int center = i * params.frame_len + params.frame_len / 2;
      f.power_db = 10.0 * std::log10(
          mean_square(samples.data() + i * params.frame_len, params.frame_len) +
          1e-12);

      auto block = grab(center, params.window_len);
      for (int j = 0; j < params.window_len; ++j) block[j] *= window[j];
      auto r = autocorrelate(block, params.order);
      if (r[0] < 1e-13) {
        for (int k = 1; k <= params.order; ++k)
          f.lsf.push_back(kPi * k / (params.order + 1));
      } else {
        r[0] *= 1.0 + 1e-9;
        f.lsf = lpc_to_lsf(levinson_durbin(r, params.order).model.coefficients);
      }

      auto pitch_block = grab(center, params.pitch_window_len);
      auto est = estimate_f0(pitch_block, params);
      f.voiced = est.voiced;
      f.f0 = est.f0;
      f.voicing_boundary =
          est.voiced ? estimate_voicing_boundary(pitch_block, est.f0, params)
                     : 0.0;
      frames.push_back(std::move(f));
    } catch (const Error& e) {
      throw Error(e.code(), "frame " + std::to_string(i) + ": " + e.what());
    }
  }
  return frames;
}

std::vector<double> synthesize(const std::vector<AcousticFrame>& frames,
                               const SynthesisParams& params) {
  if (frames.empty()) return {};
  const int order = static_cast<int>(frames[0].lsf.size());
  const double nyquist = params.sample_rate / 2.0;
  for (size_t i = 0; i < frames.size(); ++i)
    check_frame(frames[i], order, nyquist, i);

  const int flen = params.frame_len;
  const int total = flen * static_cast<int>(frames.size());

  // Source streams are generated for the whole utterance so the band-split
  // filters can run zero-phase with simple index lookups.
  std::vector<double> pulses(total + 2 * kFirHalf, 0.0);
  std::vector<double> noise(total + 2 * kFirHalf, 0.0);
  Rng rng(params.noise_seed);
  for (auto& v : noise) v = rng.normal();
  double phase = 1.0;
  for (int n = 0; n < total; ++n) {
    double f0 = frames[n / flen].f0;
    phase += f0 / params.sample_rate;
    if (phase >= 1.0) {
      phase -= 1.0;
      pulses[n + kFirHalf] = std::sqrt(params.sample_rate / f0);
    }
  }

  std::vector<double> out(total, 0.0);
  std::vector<double> state(order, 0.0);  // most recent output first
  const int sub_len = flen / params.subframes_per_frame;

  for (size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    const auto kernels = band_split_kernels(f.voicing_boundary,
                                            params.sample_rate);
    std::vector<double> exc(flen);
    for (int n = 0; n < flen; ++n) {
      int g = static_cast<int>(i) * flen + n;
      double acc = 0.0;
      for (int m = 0; m < 2 * kFirHalf + 1; ++m)
        acc += kernels.low[m] * pulses[g + 2 * kFirHalf - m] +
               kernels.high[m] * noise[g + 2 * kFirHalf - m];
      exc[n] = acc;
    }

    const auto& prev_lsf = i == 0 ? f.lsf : frames[i - 1].lsf;
    std::vector<double> s_resp(flen), e_resp(flen);
    std::vector<double> state_s = state;
    std::vector<double> state_e(order, 0.0);
    for (int j = 0; j < params.subframes_per_frame; ++j) {
      double alpha = (j + 0.5) / params.subframes_per_frame;
      std::vector<double> lsf(order);
      for (int k = 0; k < order; ++k)
        lsf[k] = (1.0 - alpha) * prev_lsf[k] + alpha * f.lsf[k];
      auto a = lsf_to_lpc(lsf);
      int sub_end = j + 1 == params.subframes_per_frame ? flen
                                                        : (j + 1) * sub_len;
      for (int n = j * sub_len; n < sub_end; ++n) {
        double s = 0.0, e = exc[n];
        for (int k = 0; k < order; ++k) {
          s += a[k] * state_s[k];
          e += a[k] * state_e[k];
        }
        std::rotate(state_s.rbegin(), state_s.rbegin() + 1, state_s.rend());
        std::rotate(state_e.rbegin(), state_e.rbegin() + 1, state_e.rend());
        state_s[0] = s;
        state_e[0] = e;
        s_resp[n] = s;
        e_resp[n] = e;
      }
    }

    // Output is s + g*e by linearity; g solves the exact-power quadratic.
    double target = flen * std::pow(10.0, f.power_db / 10.0);
    double qa = 0.0, qb = 0.0, qc = -target;
    for (int n = 0; n < flen; ++n) {
      qa += e_resp[n] * e_resp[n];
      qb += 2.0 * s_resp[n] * e_resp[n];
      qc += s_resp[n] * s_resp[n];
    }
    double g = 0.0;
    if (qa > 1e-30) {
      double disc = qb * qb - 4.0 * qa * qc;
      g = disc >= 0.0 ? (-qb + std::sqrt(disc)) / (2.0 * qa) : -qb / (2.0 * qa);
    }
    for (int n = 0; n < flen; ++n)
      out[static_cast<int>(i) * flen + n] = s_resp[n] + g * e_resp[n];
    for (int k = 0; k < order; ++k) state[k] = state_s[k] + g * state_e[k];
  }
  return out;
}

void write_frames(const std::string& path,
                  const std::vector<AcousticFrame>& frames, int sample_rate,
                  int order) {
  std::string buf;
  auto put_u16 = [&](uint16_t v) { buf.append(reinterpret_cast<char*>(&v), 2); };
  auto put_u32 = [&](uint32_t v) { buf.append(reinterpret_cast<char*>(&v), 4); };
  auto put_f32 = [&](float v) { buf.append(reinterpret_cast<char*>(&v), 4); };
  buf.append("AFRM");
  put_u16(1);
  put_u32(static_cast<uint32_t>(sample_rate));
  put_u16(static_cast<uint16_t>(order));
  put_u32(static_cast<uint32_t>(frames.size()));
  for (const auto& f : frames) {
    if (static_cast<int>(f.lsf.size()) != order)
      throw Error(ErrorCode::kArgument,
                  "frame order differs from file header order");
    for (double w : f.lsf) put_f32(static_cast<float>(w));
    put_f32(static_cast<float>(f.f0));
    put_f32(static_cast<float>(f.power_db));
    put_f32(static_cast<float>(f.voicing_boundary));
  }
  write_binary_file(path, buf);
}

FrameFile read_frames(const std::string& path, double f0_clamp) {
  const std::vector<uint8_t> buf = read_binary_file(path);
  size_t pos = 0;
  auto need = [&](size_t n) {
    if (pos + n > buf.size())
      throw Error(ErrorCode::kFormat, path + ": truncated parameter file");
  };
  auto get_u16 = [&]() {
    need(2);
    uint16_t v;
    std::memcpy(&v, buf.data() + pos, 2);
    pos += 2;
    return v;
  };
  auto get_u32 = [&]() {
    need(4);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  };
  auto get_f32 = [&]() {
    need(4);
    float v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  };
  need(4);
  if (std::memcmp(buf.data(), "AFRM", 4) != 0)
    throw Error(ErrorCode::kFormat, path + ": not a parameter-track file");
  pos = 4;
  if (get_u16() != 1)
    throw Error(ErrorCode::kFormat, path + ": unsupported version");
  FrameFile out;
  out.sample_rate = static_cast<int>(get_u32());
  out.order = get_u16();
  uint32_t count = get_u32();
  out.frames.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    AcousticFrame f;
    f.lsf.resize(out.order);
    for (int k = 0; k < out.order; ++k) f.lsf[k] = get_f32();
    f.f0 = get_f32();
    f.power_db = get_f32();
    f.voicing_boundary = get_f32();
    f.voiced = f.f0 < f0_clamp;
    out.frames.push_back(std::move(f));
  }
  return out;
}

}  // namespace tts
