#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "hqsvc/audio.hpp"
#include "hqsvc/common.hpp"
#include "hqsvc/fft.hpp"

namespace hqsvc {

inline constexpr int kMelBands = 128;
inline constexpr int kMelHop = 512;
inline constexpr int kMelFft = 2048;
inline constexpr int kMelSampleRate = 44100;
inline constexpr double kMelFmin = 40.0;
inline constexpr double kMelFmax = 16000.0;
inline constexpr double kLogFloor = 1e-5;

struct ComplexSpectrogram {
  std::vector<std::complex<float>> bins;  // row-major, n_frames x n_bins
  int n_frames = 0;
  int fft_size = 0;
  int hop = 0;

  int n_bins() const { return fft_size / 2 + 1; }
  std::complex<float>& at(int t, int k) { return bins[t * n_bins() + k]; }
  const std::complex<float>& at(int t, int k) const {
    return bins[t * n_bins() + k];
  }
};

// Log-amplitude mel spectrogram, n_frames x 128 at hop 512 / 44.1 kHz.
struct MelSpectrogram {
  std::vector<float> data;  // row-major, n_frames x n_mels
  int n_frames = 0;
  int n_mels = kMelBands;
  int hop = kMelHop;
  int sample_rate = kMelSampleRate;
  float fmin = static_cast<float>(kMelFmin);
  float fmax = static_cast<float>(kMelFmax);

  float& at(int t, int m) { return data[t * n_mels + m]; }
  float at(int t, int m) const { return data[t * n_mels + m]; }
};

inline std::vector<float> hann_window(int n) {
  std::vector<float> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = static_cast<float>(
        0.5 - 0.5 * std::cos(kTwoPi * i / static_cast<double>(n)));
  return w;
}

inline int stft_frame_count(std::size_t n_samples, int hop) {
  return static_cast<int>(n_samples / hop) + 1;
}

// Center-padded STFT with a Hann window.
inline ComplexSpectrogram stft(const AudioBuffer& buf, int fft_size, int hop) {
  check(fft_size > 0 && (fft_size & (fft_size - 1)) == 0,
        "stft: fft_size must be a power of two");
  check(hop > 0 && hop <= fft_size, "stft: need 0 < hop <= fft_size");
  check(buf.samples.size() >= static_cast<std::size_t>(hop),
        "stft: buffer shorter than one hop");

  const auto window = hann_window(fft_size);
  const int n_frames = stft_frame_count(buf.samples.size(), hop);
  const int n_bins = fft_size / 2 + 1;
  const int n = static_cast<int>(buf.samples.size());

  ComplexSpectrogram out;
  out.n_frames = n_frames;
  out.fft_size = fft_size;
  out.hop = hop;
  out.bins.resize(static_cast<std::size_t>(n_frames) * n_bins);

  std::vector<float> frame(fft_size);
  for (int t = 0; t < n_frames; ++t) {
    const int start = t * hop - fft_size / 2;
    for (int i = 0; i < fft_size; ++i) {
      const int idx = start + i;
      const float s = (idx >= 0 && idx < n) ? buf.samples[idx] : 0.0f;
      frame[i] = s * window[i];
    }
    auto spec = rfft(frame);
    for (int k = 0; k < n_bins; ++k) out.at(t, k) = spec[k];
  }
  return out;
}

// Weighted overlap-add inverse with squared-window normalization.
inline AudioBuffer istft(const ComplexSpectrogram& spec, int sample_rate,
                         std::size_t n_samples) {
  const int fft_size = spec.fft_size;
  const int hop = spec.hop;
  const auto window = hann_window(fft_size);
  const int total = (spec.n_frames - 1) * hop + fft_size;

  std::vector<double> acc(total, 0.0), norm(total, 0.0);
  std::vector<std::complex<float>> bins(spec.n_bins());
  for (int t = 0; t < spec.n_frames; ++t) {
    for (int k = 0; k < spec.n_bins(); ++k) bins[k] = spec.at(t, k);
    auto frame = irfft(bins, static_cast<std::size_t>(fft_size));
    const int start = t * hop;
    for (int i = 0; i < fft_size; ++i) {
      acc[start + i] += static_cast<double>(frame[i]) * window[i];
      norm[start + i] += static_cast<double>(window[i]) * window[i];
    }
  }
  AudioBuffer out;
  out.sample_rate = sample_rate;
  out.samples.resize(n_samples);
  const int offset = fft_size / 2;  // undo center padding
  for (std::size_t i = 0; i < n_samples; ++i) {
    const std::size_t j = i + offset;
    out.samples[i] = (j < acc.size() && norm[j] > 1e-9)
                         ? static_cast<float>(acc[j] / norm[j])
                         : 0.0f;
  }
  return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// Triangular filterbank with Slaney-style area normalization,
// n_mels x n_bins row-major.
inline std::vector<float> mel_filterbank(int n_mels, int fft_size,
                                         int sample_rate, double fmin,
                                         double fmax) {
  const int n_bins = fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> centers(n_mels + 2);
  for (int m = 0; m < n_mels + 2; ++m)
    centers[m] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (n_mels + 1.0));

  std::vector<float> fb(static_cast<std::size_t>(n_mels) * n_bins, 0.0f);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
    const double enorm = 2.0 / (hi - lo);
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / fft_size;
      double w = 0.0;
      if (f > lo && f < hi)
        w = (f <= mid) ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      fb[static_cast<std::size_t>(m) * n_bins + k] =
          static_cast<float>(w * enorm);
    }
  }
  return fb;
}

// Center frequency of each mel band, for peak-location checks.
inline std::vector<double> mel_band_centers_hz(int n_mels, double fmin,
                                               double fmax) {
  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> centers(n_mels);
  for (int m = 0; m < n_mels; ++m)
    centers[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (n_mels + 1.0));
  return centers;
}

inline MelSpectrogram mel_spectrogram(const AudioBuffer& buf) {
  check(!buf.samples.empty(), "mel_spectrogram: empty buffer");
  check(buf.sample_rate == kMelSampleRate,
        "mel_spectrogram: expected 44100 Hz input, resample first");
  const auto spec = stft(buf, kMelFft, kMelHop);
  static const std::vector<float> fb = mel_filterbank(
      kMelBands, kMelFft, kMelSampleRate, kMelFmin, kMelFmax);
  const int n_bins = spec.n_bins();

  MelSpectrogram out;
  out.n_frames = spec.n_frames;
  out.data.resize(static_cast<std::size_t>(out.n_frames) * kMelBands);
  std::vector<float> mag(n_bins);
  for (int t = 0; t < spec.n_frames; ++t) {
    for (int k = 0; k < n_bins; ++k) mag[k] = std::abs(spec.at(t, k));
    for (int m = 0; m < kMelBands; ++m) {
      double acc = 0.0;
      const float* w = fb.data() + static_cast<std::size_t>(m) * n_bins;
      for (int k = 0; k < n_bins; ++k) acc += static_cast<double>(w[k]) * mag[k];
      out.at(t, m) = static_cast<float>(
          std::log(std::max(acc, kLogFloor)));
    }
  }
  return out;
}

namespace detail {

// Hann-window spectral mainlobe magnitude at fractional bin offset x.
inline double hann_mainlobe(double x, int n) {
  auto dirichlet = [n](double v) {
    const double s = std::sin(M_PI * v / n);
    if (std::abs(s) < 1e-12) return 1.0;
    return std::sin(M_PI * v) / (n * s);
  };
  return std::abs(0.5 * dirichlet(x) + 0.25 * dirichlet(x - 1.0) +
                  0.25 * dirichlet(x + 1.0));
}

}  // namespace detail

// Approximate mel -> linear magnitude inversion. exp(mel) is the
// filter-weighted magnitude sum over a band, so dividing by the band's
// weight total recovers the average magnitude under the filter; the
// transpose then interpolates those averages across bins. Bands wider than
// the harmonic spacing lose the comb structure a pitched source has, which
// flattens periodicity, so on voiced frames of a supplied contour the
// band's energy lands on mainlobe combs at the harmonics instead of
// spreading across the filter.
inline std::vector<float> mel_to_linear_mag(
    const MelSpectrogram& mel, const std::vector<float>* f0 = nullptr) {
  static const std::vector<float> fb = mel_filterbank(
      kMelBands, kMelFft, kMelSampleRate, kMelFmin, kMelFmax);
  const int n_bins = kMelFft / 2 + 1;
  static const std::vector<float> colsum = [&] {
    std::vector<float> cs(n_bins, 0.0f);
    for (int m = 0; m < kMelBands; ++m)
      for (int k = 0; k < n_bins; ++k)
        cs[k] += fb[static_cast<std::size_t>(m) * n_bins + k];
    return cs;
  }();
  static const std::vector<double> wsum = [&] {
    std::vector<double> ws(kMelBands, 0.0);
    for (int m = 0; m < kMelBands; ++m)
      for (int k = 0; k < n_bins; ++k)
        ws[m] += fb[static_cast<std::size_t>(m) * n_bins + k];
    return ws;
  }();

  std::vector<float> mag(static_cast<std::size_t>(mel.n_frames) * n_bins, 0.0f);
  std::vector<float> tmpl(n_bins);
  std::vector<float> ratio(kMelBands);
  for (int t = 0; t < mel.n_frames; ++t) {
    const float ft = (f0 && t < static_cast<int>(f0->size()))
                         ? (*f0)[static_cast<std::size_t>(t)]
                         : 0.0f;
    if (ft > 0.0f) {
      // Voiced templates are pure harmonic combs. Band energy that falls
      // between the teeth (or under the fundamental) is dropped rather than
      // smeared into half-harmonics that flip the octave read.
      std::fill(tmpl.begin(), tmpl.end(), 0.0f);
      for (int h = 1;; ++h) {
        const double fh = static_cast<double>(h) * ft;
        if (fh >= kMelSampleRate / 2.0) break;
        const double c = fh * kMelFft / kMelSampleRate;
        const int k0 = std::max(0, static_cast<int>(std::floor(c)) - 3);
        const int k1 = std::min(n_bins - 1, static_cast<int>(std::ceil(c)) + 3);
        for (int k = k0; k <= k1; ++k)
          tmpl[k] += static_cast<float>(detail::hann_mainlobe(k - c, kMelFft));
      }
    } else {
      std::fill(tmpl.begin(), tmpl.end(), 1.0f);
    }
    for (int m = 0; m < kMelBands; ++m) {
      const float* w = fb.data() + static_cast<std::size_t>(m) * n_bins;
      double e_tmpl = 0.0;
      for (int k = 0; k < n_bins; ++k)
        e_tmpl += static_cast<double>(w[k]) * tmpl[k];
      // A band whose template support is only a faint mainlobe tail would
      // squeeze its whole energy onto those tail bins; such bands are
      // dropped instead.
      ratio[m] = e_tmpl > 0.02 * wsum[m]
                     ? std::exp(mel.at(t, m)) / static_cast<float>(e_tmpl)
                     : 0.0f;
    }
    float* row = mag.data() + static_cast<std::size_t>(t) * n_bins;
    for (int m = 0; m < kMelBands; ++m) {
      const float* w = fb.data() + static_cast<std::size_t>(m) * n_bins;
      for (int k = 0; k < n_bins; ++k) row[k] += w[k] * ratio[m];
    }
    for (int k = 0; k < n_bins; ++k)
      row[k] = colsum[k] > 1e-8f ? row[k] / colsum[k] * tmpl[k] : 0.0f;
  }
  return mag;
}

// Classic alternating-projection phase reconstruction. Plain updates (no
// momentum) keep the spectral-convergence distance non-increasing. The F0
// contour, when given, keys the harmonic templates of the mel inversion;
// it must be on the mel frame grid.
inline AudioBuffer griffin_lim(const MelSpectrogram& mel,
                               const std::vector<float>* f0 = nullptr,
                               int iterations = 60) {
  check(iterations >= 1, "griffin_lim: iterations must be >= 1");
  check(mel.n_mels == kMelBands, "griffin_lim: mel must have 128 bands");
  check(mel.n_frames > 0, "griffin_lim: empty mel");

  const auto target_mag = mel_to_linear_mag(mel, f0);
  const int n_bins = kMelFft / 2 + 1;
  const std::size_t n_samples =
      static_cast<std::size_t>(mel.n_frames) * kMelHop;

  ComplexSpectrogram spec;
  spec.n_frames = mel.n_frames;
  spec.fft_size = kMelFft;
  spec.hop = kMelHop;
  spec.bins.resize(static_cast<std::size_t>(mel.n_frames) * n_bins);
  for (int t = 0; t < mel.n_frames; ++t)
    for (int k = 0; k < n_bins; ++k)
      spec.at(t, k) = {target_mag[static_cast<std::size_t>(t) * n_bins + k],
                       0.0f};

  AudioBuffer audio;
  for (int it = 0; it < iterations; ++it) {
    audio = istft(spec, kMelSampleRate, n_samples);
    ComplexSpectrogram re = stft(audio, kMelFft, kMelHop);
    const int frames = std::min(re.n_frames, spec.n_frames);
    for (int t = 0; t < frames; ++t) {
      for (int k = 0; k < n_bins; ++k) {
        const std::complex<float> c = re.at(t, k);
        const float norm = std::abs(c);
        const float target =
            target_mag[static_cast<std::size_t>(t) * n_bins + k];
        spec.at(t, k) = norm > 1e-12f
                            ? c * (target / norm)
                            : std::complex<float>(target, 0.0f);
      }
    }
  }
  return istft(spec, kMelSampleRate, n_samples);
}

// Mel dump: "HQMEL001" magic, then n_frames/n_mels/hop/sample_rate as
// little-endian uint32, then row-major float32 values.
inline void save_mel(const MelSpectrogram& mel, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "save_mel: cannot open " + path);
  f.write("HQMEL001", 8);
  const std::uint32_t hdr[4] = {
      static_cast<std::uint32_t>(mel.n_frames),
      static_cast<std::uint32_t>(mel.n_mels),
      static_cast<std::uint32_t>(mel.hop),
      static_cast<std::uint32_t>(mel.sample_rate)};
  f.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  f.write(reinterpret_cast<const char*>(mel.data.data()),
          static_cast<std::streamsize>(mel.data.size() * sizeof(float)));
  check(f.good(), "save_mel: write failed: " + path);
}

inline MelSpectrogram load_mel(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "load_mel: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  check(f.good() && std::string(magic, 8) == "HQMEL001",
        "load_mel: bad magic in " + path);
  std::uint32_t hdr[4];
  f.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  check(f.good(), "load_mel: truncated header in " + path);
  MelSpectrogram mel;
  mel.n_frames = static_cast<int>(hdr[0]);
  mel.n_mels = static_cast<int>(hdr[1]);
  mel.hop = static_cast<int>(hdr[2]);
  mel.sample_rate = static_cast<int>(hdr[3]);
  mel.data.resize(static_cast<std::size_t>(mel.n_frames) * mel.n_mels);
  f.read(reinterpret_cast<char*>(mel.data.data()),
         static_cast<std::streamsize>(mel.data.size() * sizeof(float)));
  check(f.good(), "load_mel: truncated data in " + path);
  return mel;
}

}  // namespace hqsvc
