#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "hqsvc/audio.hpp"
#include "hqsvc/common.hpp"
#include "hqsvc/spectral.hpp"

namespace hqsvc {

inline constexpr int kFeatureSampleRate = 16000;
inline constexpr int kFeatureHop = 186;
inline constexpr int kF0Window = 1024;
inline constexpr int kVolumeWindow = 372;
inline constexpr double kF0Min = 50.0;
inline constexpr double kF0Max = 1100.0;
inline constexpr double kVoicingThreshold = 0.55;
inline constexpr int kContentMelBands = 48;
inline constexpr int kContentCepstra = 32;   // cepstra 1..32, c0 dropped
inline constexpr int kSpeakerRawDim = 2 * kContentMelBands;

// Per-frame acoustic features at 16 kHz, hop 186.
struct FrameFeatures {
  std::vector<float> f0;      // Hz, 0 when unvoiced
  std::vector<float> x_f0;    // ln(f0/700 + 1), 0 when unvoiced
  std::vector<float> voiced;  // 1.0 / 0.0
  std::vector<float> volume;  // frame RMS
  std::vector<float> phase;   // accumulated phase in [0, 2pi)
  int n_frames = 0;
};

// Everything extracted from one utterance; content/speaker rows are raw
// features, the learned projections to model width live in the network.
struct FeatureBundle {
  FrameFeatures frames;
  std::vector<float> content;  // n_frames x kContentCepstra
  std::vector<float> spk_raw;  // kSpeakerRawDim
  float f0_mean = 0.0f;        // voiced x_f0 statistics
  float f0_var = 0.0f;
};

inline double f0_transform(double f0_hz) {
  return f0_hz > 0.0 ? std::log(f0_hz / 700.0 + 1.0) : 0.0;
}

inline double f0_transform_inverse(double x) {
  return x > 0.0 ? 700.0 * (std::exp(x) - 1.0) : 0.0;
}

inline float f0_transform(float f0_hz) {
  return static_cast<float>(f0_transform(static_cast<double>(f0_hz)));
}

inline float f0_transform_inverse(float x) {
  return static_cast<float>(f0_transform_inverse(static_cast<double>(x)));
}

inline int feature_frame_count(std::size_t n_samples) {
  return static_cast<int>(n_samples / kFeatureHop) + 1;
}

// Accumulated phase: starts at 0, advances by 2*pi*f0*hop/sr per voiced
// frame, holds through unvoiced frames, stays in [0, 2pi).
inline std::vector<float> phase_recurrence(const std::vector<float>& f0,
                                           const std::vector<float>& voiced,
                                           int hop, int sample_rate) {
  check(f0.size() == voiced.size(), "phase_recurrence: size mismatch");
  std::vector<float> phase(f0.size());
  double phi = 0.0;
  for (std::size_t t = 0; t < f0.size(); ++t) {
    if (t > 0 && voiced[t] > 0.5f)
      phi = std::fmod(phi + kTwoPi * f0[t] * hop / sample_rate, kTwoPi);
    phase[t] = static_cast<float>(phi);
  }
  return phase;
}

namespace detail {

// Normalized autocorrelation of one centered window; returns best lag's
// frequency and its correlation score.
inline void acf_pitch(const float* x, int n, int lag_min, int lag_max,
                      double* best_freq, double* best_score) {
  double e0 = 0.0;
  for (int i = 0; i < n; ++i) e0 += static_cast<double>(x[i]) * x[i];
  *best_freq = 0.0;
  *best_score = 0.0;
  if (e0 < 1e-10) return;

  std::vector<double> score(lag_max + 1, 0.0);
  for (int lag = lag_min; lag <= lag_max; ++lag) {
    double num = 0.0, el = 0.0;
    const int m = n - lag;
    for (int i = 0; i < m; ++i) {
      num += static_cast<double>(x[i]) * x[i + lag];
      el += static_cast<double>(x[i + lag]) * x[i + lag];
    }
    double ref = 0.0;
    for (int i = 0; i < m; ++i) ref += static_cast<double>(x[i]) * x[i];
    score[lag] = (ref > 1e-10 && el > 1e-10) ? num / std::sqrt(ref * el) : 0.0;
  }

  double peak_val = 0.0;
  for (int lag = lag_min; lag <= lag_max; ++lag) {
    const bool local = (lag == lag_min || score[lag] >= score[lag - 1]) &&
                       (lag == lag_max || score[lag] >= score[lag + 1]);
    if (local && score[lag] > peak_val) peak_val = score[lag];
  }
  // A periodic signal scores ~equally at every lag multiple; take the
  // smallest competitive lag so subharmonics never win.
  int peak = 0;
  for (int lag = lag_min; lag <= lag_max; ++lag) {
    const bool local = (lag == lag_min || score[lag] >= score[lag - 1]) &&
                       (lag == lag_max || score[lag] >= score[lag + 1]);
    if (local && score[lag] >= 0.9 * peak_val) {
      peak = lag;
      break;
    }
  }
  if (peak == 0 || peak_val <= 0.0) return;

  // Parabolic refinement around the integer-lag peak.
  double lag_ref = peak;
  if (peak > lag_min && peak < lag_max) {
    const double a = score[peak - 1], b = score[peak], c = score[peak + 1];
    const double den = a - 2.0 * b + c;
    if (std::abs(den) > 1e-12) {
      double d = 0.5 * (a - c) / den;
      d = std::clamp(d, -0.5, 0.5);
      lag_ref = peak + d;
    }
  }
  *best_freq = kFeatureSampleRate / lag_ref;
  *best_score = score[peak];
}

}  // namespace detail

// Autocorrelation pitch tracker over [50, 1100] Hz with parabolic lag
// refinement. Input must be 16 kHz.
inline FrameFeatures extract_frame_features(const AudioBuffer& buf) {
  check(buf.sample_rate == kFeatureSampleRate,
        "extract_frame_features: expected 16 kHz input");
  check(!buf.samples.empty(), "extract_frame_features: empty buffer");

  const int n = static_cast<int>(buf.samples.size());
  const int n_frames = feature_frame_count(buf.samples.size());
  const int lag_min =
      std::max(2, static_cast<int>(std::floor(kFeatureSampleRate / kF0Max)));
  const int lag_max = static_cast<int>(std::ceil(kFeatureSampleRate / kF0Min));

  FrameFeatures ff;
  ff.n_frames = n_frames;
  ff.f0.resize(n_frames);
  ff.x_f0.resize(n_frames);
  ff.voiced.resize(n_frames);
  ff.volume.resize(n_frames);
  ff.phase.resize(n_frames);

  // Zero-phase binomial lowpass ahead of the lag search. Content near
  // Nyquist flips sign at every lag and a flat harmonic stack narrows the
  // correlation peak until its sampled height loses to the doubled period
  // whenever the true period falls between integer lags; damping the top
  // octaves keeps the peak wide enough that the integer grid cannot flip
  // the octave. Volume still reads the raw signal.
  static constexpr float kAcfLp[9] = {
      1.0f / 256, 8.0f / 256, 28.0f / 256, 56.0f / 256, 70.0f / 256,
      56.0f / 256, 28.0f / 256, 8.0f / 256, 1.0f / 256};
  std::vector<float> smooth(buf.samples.size());
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < 9; ++j) {
      const int idx = std::clamp(i + j - 4, 0, n - 1);
      acc += static_cast<double>(kAcfLp[j]) * buf.samples[idx];
    }
    smooth[i] = static_cast<float>(acc);
  }

  std::vector<float> win(kF0Window);
  for (int t = 0; t < n_frames; ++t) {
    const int center = t * kFeatureHop;

    const int start = center - kF0Window / 2;
    for (int i = 0; i < kF0Window; ++i) {
      const int idx = start + i;
      win[i] = (idx >= 0 && idx < n) ? smooth[idx] : 0.0f;
    }
    double freq = 0.0, score = 0.0;
    detail::acf_pitch(win.data(), kF0Window, lag_min, lag_max, &freq, &score);
    const bool voiced =
        score >= kVoicingThreshold && freq >= kF0Min && freq <= kF0Max;
    ff.f0[t] = voiced ? static_cast<float>(freq) : 0.0f;
    ff.voiced[t] = voiced ? 1.0f : 0.0f;
    ff.x_f0[t] = f0_transform(ff.f0[t]);

    double sq = 0.0;
    const int vstart = center - kVolumeWindow / 2;
    for (int i = 0; i < kVolumeWindow; ++i) {
      const int idx = vstart + i;
      const float s = (idx >= 0 && idx < n) ? buf.samples[idx] : 0.0f;
      sq += static_cast<double>(s) * s;
    }
    ff.volume[t] = static_cast<float>(std::sqrt(sq / kVolumeWindow));
  }

  ff.phase = phase_recurrence(ff.f0, ff.voiced, kFeatureHop, kFeatureSampleRate);
  return ff;
}

// 48-band log-mel at 16 kHz on the feature grid (FFT 1024, hop 186).
inline std::vector<float> content_mel(const AudioBuffer& buf, int* n_frames) {
  check(buf.sample_rate == kFeatureSampleRate, "content_mel: expected 16 kHz");
  const int fft_size = 1024;
  const auto spec = stft(buf, fft_size, kFeatureHop);
  static const std::vector<float> fb = mel_filterbank(
      kContentMelBands, fft_size, kFeatureSampleRate, 40.0, 7600.0);
  const int n_bins = spec.n_bins();
  *n_frames = spec.n_frames;

  std::vector<float> mel(
      static_cast<std::size_t>(spec.n_frames) * kContentMelBands);
  std::vector<float> mag(n_bins);
  for (int t = 0; t < spec.n_frames; ++t) {
    for (int k = 0; k < n_bins; ++k) mag[k] = std::abs(spec.at(t, k));
    for (int m = 0; m < kContentMelBands; ++m) {
      double acc = 0.0;
      const float* w = fb.data() + static_cast<std::size_t>(m) * n_bins;
      for (int k = 0; k < n_bins; ++k) acc += static_cast<double>(w[k]) * mag[k];
      mel[static_cast<std::size_t>(t) * kContentMelBands + m] =
          static_cast<float>(std::log(std::max(acc, kLogFloor)));
    }
  }
  return mel;
}

// Mel cepstra 1..32 via DCT-II with per-utterance mean removal. Dropping c0
// and the mean strips loudness and timbre offsets from the content stream.
inline std::vector<float> content_features(const std::vector<float>& mel48,
                                           int n_frames) {
  std::vector<float> cep(static_cast<std::size_t>(n_frames) * kContentCepstra);
  for (int t = 0; t < n_frames; ++t) {
    const float* row = mel48.data() + static_cast<std::size_t>(t) * kContentMelBands;
    for (int j = 1; j <= kContentCepstra; ++j) {
      double acc = 0.0;
      for (int m = 0; m < kContentMelBands; ++m)
        acc += row[m] * std::cos(kPi * j * (m + 0.5) / kContentMelBands);
      cep[static_cast<std::size_t>(t) * kContentCepstra + (j - 1)] =
          static_cast<float>(acc);
    }
  }
  for (int j = 0; j < kContentCepstra; ++j) {
    double mean = 0.0;
    for (int t = 0; t < n_frames; ++t)
      mean += cep[static_cast<std::size_t>(t) * kContentCepstra + j];
    mean /= n_frames;
    for (int t = 0; t < n_frames; ++t)
      cep[static_cast<std::size_t>(t) * kContentCepstra + j] -=
          static_cast<float>(mean);
  }
  return cep;
}

// Utterance-level timbre summary: mean and standard deviation of each
// 48-band log-mel channel over time.
inline std::vector<float> speaker_features(const std::vector<float>& mel48,
                                           int n_frames) {
  std::vector<float> out(kSpeakerRawDim);
  for (int m = 0; m < kContentMelBands; ++m) {
    double mean = 0.0;
    for (int t = 0; t < n_frames; ++t)
      mean += mel48[static_cast<std::size_t>(t) * kContentMelBands + m];
    mean /= n_frames;
    double var = 0.0;
    for (int t = 0; t < n_frames; ++t) {
      const double d =
          mel48[static_cast<std::size_t>(t) * kContentMelBands + m] - mean;
      var += d * d;
    }
    var /= n_frames;
    out[m] = static_cast<float>(mean);
    out[kContentMelBands + m] = static_cast<float>(std::sqrt(var));
  }
  return out;
}

// Full extraction from a 44.1 kHz recording.
inline FeatureBundle extract_features(const AudioBuffer& buf44k) {
  check(buf44k.sample_rate == kMelSampleRate,
        "extract_features: expected 44.1 kHz input");
  const AudioBuffer buf16 = resample(buf44k, kFeatureSampleRate);

  FeatureBundle fb;
  fb.frames = extract_frame_features(buf16);

  int mel_frames = 0;
  const auto mel48 = content_mel(buf16, &mel_frames);
  const int n = std::min(mel_frames, fb.frames.n_frames);
  fb.content = content_features(mel48, mel_frames);
  fb.content.resize(static_cast<std::size_t>(n) * kContentCepstra);
  fb.spk_raw = speaker_features(mel48, mel_frames);

  if (n < fb.frames.n_frames) {
    fb.frames.n_frames = n;
    fb.frames.f0.resize(n);
    fb.frames.x_f0.resize(n);
    fb.frames.voiced.resize(n);
    fb.frames.volume.resize(n);
    fb.frames.phase.resize(n);
  }

  double mean = 0.0, var = 0.0;
  int voiced = 0;
  for (int t = 0; t < fb.frames.n_frames; ++t)
    if (fb.frames.voiced[t] > 0.5f) {
      mean += fb.frames.x_f0[t];
      ++voiced;
    }
  if (voiced > 0) {
    mean /= voiced;
    for (int t = 0; t < fb.frames.n_frames; ++t)
      if (fb.frames.voiced[t] > 0.5f) {
        const double d = fb.frames.x_f0[t] - mean;
        var += d * d;
      }
    var /= voiced;
  }
  fb.f0_mean = static_cast<float>(mean);
  fb.f0_var = static_cast<float>(var);
  return fb;
}

// Per-channel linear resampling of frame-rate features onto the mel grid.
// Endpoints map exactly so contour extremes survive the regridding.
inline std::vector<float> align_to_mel(const std::vector<float>& src,
                                       int n_src, int channels, int n_dst) {
  check(n_src >= 1 && n_dst >= 1 && channels >= 1, "align_to_mel: bad shape");
  check(src.size() == static_cast<std::size_t>(n_src) * channels,
        "align_to_mel: size mismatch");
  std::vector<float> dst(static_cast<std::size_t>(n_dst) * channels);
  for (int t = 0; t < n_dst; ++t) {
    const double pos = n_dst == 1
                           ? 0.0
                           : static_cast<double>(t) * (n_src - 1) / (n_dst - 1);
    const int i0 = std::min(static_cast<int>(pos), n_src - 1);
    const int i1 = std::min(i0 + 1, n_src - 1);
    const double frac = pos - i0;
    for (int c = 0; c < channels; ++c)
      dst[static_cast<std::size_t>(t) * channels + c] = static_cast<float>(
          (1.0 - frac) * src[static_cast<std::size_t>(i0) * channels + c] +
          frac * src[static_cast<std::size_t>(i1) * channels + c]);
  }
  return dst;
}

namespace detail {

inline void write_f32_vec(std::ofstream& f, const std::vector<float>& v) {
  const std::uint32_t n = static_cast<std::uint32_t>(v.size());
  f.write(reinterpret_cast<const char*>(&n), 4);
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline std::vector<float> read_f32_vec(std::ifstream& f) {
  std::uint32_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 4);
  check(f.good() && n < (1u << 28), "feature cache: bad vector length");
  std::vector<float> v(n);
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(n * sizeof(float)));
  check(f.good(), "feature cache: truncated vector");
  return v;
}

}  // namespace detail

inline void save_features(const FeatureBundle& fb, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "save_features: cannot open " + path);
  f.write("HQFEAT01", 8);
  const std::uint32_t n = static_cast<std::uint32_t>(fb.frames.n_frames);
  f.write(reinterpret_cast<const char*>(&n), 4);
  detail::write_f32_vec(f, fb.frames.f0);
  detail::write_f32_vec(f, fb.frames.x_f0);
  detail::write_f32_vec(f, fb.frames.voiced);
  detail::write_f32_vec(f, fb.frames.volume);
  detail::write_f32_vec(f, fb.frames.phase);
  detail::write_f32_vec(f, fb.content);
  detail::write_f32_vec(f, fb.spk_raw);
  f.write(reinterpret_cast<const char*>(&fb.f0_mean), 4);
  f.write(reinterpret_cast<const char*>(&fb.f0_var), 4);
  check(f.good(), "save_features: write failed: " + path);
}

inline FeatureBundle load_features(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "load_features: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  check(f.good() && std::string(magic, 8) == "HQFEAT01",
        "load_features: bad magic in " + path);
  FeatureBundle fb;
  std::uint32_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 4);
  fb.frames.n_frames = static_cast<int>(n);
  fb.frames.f0 = detail::read_f32_vec(f);
  fb.frames.x_f0 = detail::read_f32_vec(f);
  fb.frames.voiced = detail::read_f32_vec(f);
  fb.frames.volume = detail::read_f32_vec(f);
  fb.frames.phase = detail::read_f32_vec(f);
  fb.content = detail::read_f32_vec(f);
  fb.spk_raw = detail::read_f32_vec(f);
  f.read(reinterpret_cast<char*>(&fb.f0_mean), 4);
  f.read(reinterpret_cast<char*>(&fb.f0_var), 4);
  check(f.good(), "load_features: truncated file " + path);
  return fb;
}

}  // namespace hqsvc
