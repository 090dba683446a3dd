#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hqsvc/audio.hpp"
#include "hqsvc/common.hpp"
#include "hqsvc/features.hpp"
#include "hqsvc/spectral.hpp"

namespace hqsvc {

struct EvalReport {
  std::optional<double> f0_rmse;
  std::optional<double> fpc;
  std::optional<double> lsd;
  std::optional<double> stoi;
  std::optional<double> embed_cos;
  std::optional<double> rtf;
};

namespace detail {

// Collect (ref, hyp) pairs over frames voiced in both contours; contours of
// different lengths are regridded onto the shorter one.
// Contours share a common frame duration, so a length mismatch is an edge
// effect and the overlapping prefix is compared; stretching one contour onto
// the other's grid would skew every sweep near the tail.
inline void mutual_voiced(const std::vector<float>& ref,
                          const std::vector<float>& hyp,
                          std::vector<double>* r, std::vector<double>* h) {
  check(!ref.empty() && !hyp.empty(), "pitch metric: empty contour");
  const int n = static_cast<int>(std::min(ref.size(), hyp.size()));
  for (int i = 0; i < n; ++i)
    if (ref[i] > 0.0f && hyp[i] > 0.0f) {
      r->push_back(ref[i]);
      h->push_back(hyp[i]);
    }
}

}  // namespace detail

inline double f0_rmse(const std::vector<float>& ref,
                      const std::vector<float>& hyp) {
  std::vector<double> r, h;
  detail::mutual_voiced(ref, hyp, &r, &h);
  check(!r.empty(), "f0_rmse: no mutually voiced frames");
  double acc = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double d = r[i] - h[i];
    acc += d * d;
  }
  return std::sqrt(acc / r.size());
}

// Pearson correlation over mutually voiced frames; nullopt when either
// contour has zero variance.
inline std::optional<double> fpc(const std::vector<float>& ref,
                                 const std::vector<float>& hyp) {
  std::vector<double> r, h;
  detail::mutual_voiced(ref, hyp, &r, &h);
  if (r.size() < 2) return std::nullopt;
  const double n = static_cast<double>(r.size());
  double mr = 0.0, mh = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    mr += r[i];
    mh += h[i];
  }
  mr /= n;
  mh /= n;
  double srr = 0.0, shh = 0.0, srh = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    srr += (r[i] - mr) * (r[i] - mr);
    shh += (h[i] - mh) * (h[i] - mh);
    srh += (r[i] - mr) * (h[i] - mh);
  }
  if (srr < 1e-12 || shh < 1e-12) return std::nullopt;
  return std::clamp(srh / std::sqrt(srr * shh), -1.0, 1.0);
}

// Mean over frames of the root-mean-square log-power difference, on
// 2048/512 magnitude spectra floored at 1e-8.
inline double lsd(const AudioBuffer& ref, const AudioBuffer& hyp) {
  check(ref.sample_rate == hyp.sample_rate, "lsd: sample-rate mismatch");
  const std::size_t n = std::min(ref.samples.size(), hyp.samples.size());
  check(n >= 512, "lsd: empty overlap");
  AudioBuffer a{std::vector<float>(ref.samples.begin(),
                                   ref.samples.begin() + n),
                ref.sample_rate};
  AudioBuffer b{std::vector<float>(hyp.samples.begin(),
                                   hyp.samples.begin() + n),
                hyp.sample_rate};
  const auto sa = stft(a, 2048, 512);
  const auto sb = stft(b, 2048, 512);
  const int frames = std::min(sa.n_frames, sb.n_frames);
  const int bins = sa.n_bins();
  double total = 0.0;
  for (int t = 0; t < frames; ++t) {
    double acc = 0.0;
    for (int k = 0; k < bins; ++k) {
      const double pa =
          2.0 * std::log10(std::max<double>(std::abs(sa.at(t, k)), 1e-8));
      const double pb =
          2.0 * std::log10(std::max<double>(std::abs(sb.at(t, k)), 1e-8));
      acc += (pa - pb) * (pa - pb);
    }
    total += std::sqrt(acc / bins);
  }
  return total / frames;
}

namespace detail {

struct ThirdOctaveBands {
  std::vector<float> weights;  // n_bands x n_bins
  int n_bands = 0;
  int n_bins = 0;
};

inline ThirdOctaveBands third_octave_bands(int n_bands, double f_start,
                                           int fft_size, int sample_rate) {
  ThirdOctaveBands tb;
  tb.n_bands = n_bands;
  tb.n_bins = fft_size / 2 + 1;
  tb.weights.assign(static_cast<std::size_t>(n_bands) * tb.n_bins, 0.0f);
  for (int j = 0; j < n_bands; ++j) {
    const double cf = f_start * std::pow(2.0, j / 3.0);
    const double lo = cf / std::pow(2.0, 1.0 / 6.0);
    const double hi = cf * std::pow(2.0, 1.0 / 6.0);
    for (int k = 0; k < tb.n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / fft_size;
      if (f >= lo && f < hi)
        tb.weights[static_cast<std::size_t>(j) * tb.n_bins + k] = 1.0f;
    }
  }
  return tb;
}

}  // namespace detail

// Short-time intelligibility score: 10 kHz analysis, silent-frame removal
// keyed on the reference, 15 third-octave band envelopes from 150 Hz,
// normalized and clipped correlations over 30-frame (384 ms) segments.
inline std::optional<double> stoi_like(const AudioBuffer& ref_in,
                                       const AudioBuffer& hyp_in) {
  const int sr = 10000, frame = 256, hop = 128, fft = 512, seg = 30;
  const AudioBuffer ref = resample(ref_in, sr);
  const AudioBuffer hyp = resample(hyp_in, sr);
  const std::size_t n = std::min(ref.samples.size(), hyp.samples.size());
  if (n < static_cast<std::size_t>(frame)) return std::nullopt;

  const auto window = hann_window(frame);
  const int n_frames = static_cast<int>((n - frame) / hop) + 1;
  if (n_frames < seg) return std::nullopt;

  // framed spectra, zero-padded to the fft size
  auto spectrum = [&](const AudioBuffer& buf, int m) {
    std::vector<float> fr(fft, 0.0f);
    for (int i = 0; i < frame; ++i)
      fr[i] = buf.samples[static_cast<std::size_t>(m) * hop + i] * window[i];
    return rfft(fr);
  };

  std::vector<double> ref_energy(n_frames);
  double max_e = 0.0;
  for (int m = 0; m < n_frames; ++m) {
    double e = 0.0;
    for (int i = 0; i < frame; ++i) {
      const double s =
          ref.samples[static_cast<std::size_t>(m) * hop + i] * window[i];
      e += s * s;
    }
    ref_energy[m] = e;
    max_e = std::max(max_e, e);
  }
  std::vector<int> active;
  const double thresh = max_e * std::pow(10.0, -40.0 / 10.0);
  for (int m = 0; m < n_frames; ++m)
    if (ref_energy[m] > thresh) active.push_back(m);
  if (static_cast<int>(active.size()) < seg) return std::nullopt;

  static const auto bands = detail::third_octave_bands(15, 150.0, fft, sr);
  const int J = bands.n_bands;
  const int M = static_cast<int>(active.size());
  std::vector<double> X(static_cast<std::size_t>(J) * M),
      Y(static_cast<std::size_t>(J) * M);
  for (int mi = 0; mi < M; ++mi) {
    const auto sx = spectrum(ref, active[mi]);
    const auto sy = spectrum(hyp, active[mi]);
    for (int j = 0; j < J; ++j) {
      double ex = 0.0, ey = 0.0;
      const float* w = bands.weights.data() +
                       static_cast<std::size_t>(j) * bands.n_bins;
      for (int k = 0; k < bands.n_bins; ++k) {
        if (w[k] == 0.0f) continue;
        ex += std::norm(sx[k]);
        ey += std::norm(sy[k]);
      }
      X[static_cast<std::size_t>(j) * M + mi] = std::sqrt(ex);
      Y[static_cast<std::size_t>(j) * M + mi] = std::sqrt(ey);
    }
  }

  const double clip_gain = std::pow(10.0, 15.0 / 20.0);  // -15 dB floor
  double total = 0.0;
  long count = 0;
  for (int j = 0; j < J; ++j)
    for (int m = seg - 1; m < M; ++m) {
      const double* xs = X.data() + static_cast<std::size_t>(j) * M + m - seg + 1;
      const double* ys = Y.data() + static_cast<std::size_t>(j) * M + m - seg + 1;
      double nx = 0.0, ny = 0.0;
      for (int i = 0; i < seg; ++i) {
        nx += xs[i] * xs[i];
        ny += ys[i] * ys[i];
      }
      const double alpha = ny > 1e-20 ? std::sqrt(nx / ny) : 0.0;
      double mx = 0.0, my = 0.0;
      double yc[64];
      for (int i = 0; i < seg; ++i) {
        yc[i] = std::min(alpha * ys[i], xs[i] * (1.0 + clip_gain));
        mx += xs[i];
        my += yc[i];
      }
      mx /= seg;
      my /= seg;
      double sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (int i = 0; i < seg; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (yc[i] - my) * (yc[i] - my);
        sxy += (xs[i] - mx) * (yc[i] - my);
      }
      if (sxx > 1e-20 && syy > 1e-20) {
        total += sxy / std::sqrt(sxx * syy);
        ++count;
      }
    }
  if (count == 0) return std::nullopt;
  return std::clamp(total / count, 0.0, 1.0);
}

inline double embed_cos(const std::vector<float>& a,
                        const std::vector<float>& b) {
  check(a.size() == b.size() && !a.empty(), "embed_cos: width mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  check(na > 1e-20 && nb > 1e-20, "embed_cos: zero vector");
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

inline std::string report_header() {
  return "# speaker similarity: internal-embedding cosine (SECS substitute); "
         "NISQA omitted (needs a pretrained assessor)\n"
         "# columns: pair f0_rmse fpc lsd stoi embed_cos\n";
}

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "absent";
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << *v;
  return os.str();
}

}  // namespace hqsvc
