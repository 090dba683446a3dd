#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <vector>

#include "hqsvc/common.hpp"
#include "hqsvc/fft.hpp"
#include "hqsvc/ops.hpp"
#include "hqsvc/spectral.hpp"
#include "hqsvc/tensor.hpp"

namespace hqsvc {

// Gather rows of a [V, C] table; gradients scatter back into the table.
template <typename S>
Tensor<S> embedding_lookup(Tensor<S> table, const std::vector<int>& idx) {
  const int V = table.rows(), C = table.cols();
  for (int i : idx) check(0 <= i && i < V, "embedding_lookup: index out of range");
  const int n = static_cast<int>(idx.size());
  auto out = Tensor<S>::make_op(
      n, C, {table}, [idx, C](TensorNode<S>& o) {
        auto& pt = *o.parents[0];
        for (std::size_t r = 0; r < idx.size(); ++r)
          for (int c = 0; c < C; ++c)
            pt.grad[static_cast<std::size_t>(idx[r]) * C + c] +=
                o.grad[r * C + c];
      });
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < C; ++c)
      out.value()[static_cast<std::size_t>(r) * C + c] =
          table.value()[static_cast<std::size_t>(idx[r]) * C + c];
  return out;
}

// Magnitude STFT of a [n, 1] waveform, differentiable through |X|.
// The adjoint routes each magnitude gradient along its bin's unit phasor and
// returns to the time domain with one inverse FFT per frame.
template <typename S>
Tensor<S> stft_mag(Tensor<S> wave, int fft_size, int hop) {
  check(wave.cols() == 1, "stft_mag: expected a column waveform");
  const int n = wave.rows();
  check(n >= hop, "stft_mag: waveform shorter than one hop");
  const int n_frames = static_cast<int>(n / hop) + 1;
  const int n_bins = fft_size / 2 + 1;
  const auto wf = hann_window(fft_size);
  const std::vector<S> window(wf.begin(), wf.end());

  auto phasors = std::make_shared<std::vector<std::complex<S>>>(
      static_cast<std::size_t>(n_frames) * n_bins);

  auto out = Tensor<S>::make_op(
      n_frames, n_bins, {wave},
      [n, n_frames, n_bins, fft_size, hop, window, phasors](TensorNode<S>& o) {
        auto& pw = *o.parents[0];
        std::vector<std::complex<S>> spec(fft_size);
        for (int t = 0; t < n_frames; ++t) {
          const S* g = o.grad.data() + static_cast<std::size_t>(t) * n_bins;
          for (int k = 0; k < fft_size; ++k) spec[k] = {S(0), S(0)};
          for (int k = 0; k < n_bins; ++k) {
            std::complex<S> a =
                (*phasors)[static_cast<std::size_t>(t) * n_bins + k] * g[k];
            if (k == 0 || k == fft_size / 2) {
              spec[k] = a;
            } else {
              a *= S(0.5);
              spec[k] = a;
              spec[fft_size - k] = std::conj(a);
            }
          }
          fft_inplace(spec, true);
          const int start = t * hop - fft_size / 2;
          for (int i = 0; i < fft_size; ++i) {
            const int idx = start + i;
            if (idx < 0 || idx >= n) continue;
            pw.grad[idx] += spec[i].real() * fft_size * window[i];
          }
        }
      });

  std::vector<S> frame(fft_size);
  for (int t = 0; t < n_frames; ++t) {
    const int start = t * hop - fft_size / 2;
    for (int i = 0; i < fft_size; ++i) {
      const int idx = start + i;
      const S s = (idx >= 0 && idx < n) ? wave.value()[idx] : S(0);
      frame[i] = s * window[i];
    }
    auto spec = rfft(frame);
    for (int k = 0; k < n_bins; ++k) {
      const S mag = std::abs(spec[k]);
      out.value()[static_cast<std::size_t>(t) * n_bins + k] = mag;
      (*phasors)[static_cast<std::size_t>(t) * n_bins + k] =
          mag > S(1e-12) ? spec[k] / mag : std::complex<S>(S(0), S(0));
    }
  }
  return out;
}

// Per-sample fundamental phase from a frame-rate F0 contour: linear F0
// interpolation between frame centers, then cumulative 2*pi*f0/sr steps.
inline std::vector<double> accumulate_phase(const std::vector<float>& f0_frame,
                                            int hop, int sample_rate,
                                            double phi0 = 0.0) {
  check(!f0_frame.empty(), "accumulate_phase: empty f0");
  const int frames = static_cast<int>(f0_frame.size());
  const int n = frames * hop;
  std::vector<double> phase(n);
  double phi = phi0;
  for (int i = 0; i < n; ++i) {
    const double pos = static_cast<double>(i) / hop;
    const int t0 = std::min(static_cast<int>(pos), frames - 1);
    const int t1 = std::min(t0 + 1, frames - 1);
    const double w1 = pos - t0;
    const double f0 = (1.0 - w1) * f0_frame[t0] + w1 * f0_frame[t1];
    if (i > 0) phi = std::fmod(phi + kTwoPi * f0 / sample_rate, kTwoPi);
    phase[i] = phi;
  }
  return phase;
}

// Additive harmonic oscillator bank: y[i] = sum_k A[t(i),k] sin((k+1) phi[i])
// with frame-rate amplitudes linearly interpolated to sample rate. Column k
// drives harmonic k+1; harmonics at or above Nyquist are masked per frame.
// sin((k+1)phi) comes from powers of one unit rotation per sample.
template <typename S>
Tensor<S> harmonic_render(Tensor<S> amps, const std::vector<double>& phase,
                          const std::vector<float>& f0_frame, int hop,
                          int sample_rate) {
  const int frames = amps.rows();
  const int K = amps.cols();
  check(static_cast<int>(f0_frame.size()) == frames,
        "harmonic_render: f0/amps frame mismatch");
  for (float f : f0_frame) check(f >= 0.0f, "harmonic_render: negative f0");
  const int n = frames * hop;
  check(static_cast<int>(phase.size()) == n,
        "harmonic_render: phase length mismatch");

  auto kmax = std::make_shared<std::vector<int>>(frames);
  for (int t = 0; t < frames; ++t) {
    int km = 0;
    if (f0_frame[t] > 0.0f)
      km = std::min<int>(
          K, static_cast<int>(std::floor(0.5 * sample_rate / f0_frame[t])));
    (*kmax)[t] = km;
  }

  auto out = Tensor<S>::make_op(
      n, 1, {amps},
      [frames, K, hop, phase, kmax](TensorNode<S>& o) {
        auto& pa = *o.parents[0];
        for (int i = 0; i < static_cast<int>(phase.size()); ++i) {
          const S g = o.grad[i];
          if (g == S(0)) continue;
          const double pos = static_cast<double>(i) / hop;
          const int t0 = std::min(static_cast<int>(pos), frames - 1);
          const int t1 = std::min(t0 + 1, frames - 1);
          const S w1 = static_cast<S>(pos - t0);
          const S w0 = S(1) - w1;
          const std::complex<double> z(std::cos(phase[i]), std::sin(phase[i]));
          std::complex<double> zk(1.0, 0.0);
          const int klim = std::max((*kmax)[t0], (*kmax)[t1]);
          for (int k = 0; k < klim; ++k) {
            zk *= z;
            const S sk = static_cast<S>(zk.imag());
            if (k < (*kmax)[t0])
              pa.grad[static_cast<std::size_t>(t0) * K + k] += g * w0 * sk;
            if (k < (*kmax)[t1])
              pa.grad[static_cast<std::size_t>(t1) * K + k] += g * w1 * sk;
          }
        }
      });

  for (int i = 0; i < n; ++i) {
    const double pos = static_cast<double>(i) / hop;
    const int t0 = std::min(static_cast<int>(pos), frames - 1);
    const int t1 = std::min(t0 + 1, frames - 1);
    const double w1 = pos - t0;
    const double w0 = 1.0 - w1;
    const std::complex<double> z(std::cos(phase[i]), std::sin(phase[i]));
    std::complex<double> zk(1.0, 0.0);
    double acc = 0.0;
    const int klim = std::max((*kmax)[t0], (*kmax)[t1]);
    for (int k = 0; k < klim; ++k) {
      zk *= z;
      double a = 0.0;
      if (k < (*kmax)[t0])
        a += w0 * amps.value()[static_cast<std::size_t>(t0) * K + k];
      if (k < (*kmax)[t1])
        a += w1 * amps.value()[static_cast<std::size_t>(t1) * K + k];
      acc += a * zk.imag();
    }
    out.value()[i] = static_cast<S>(acc);
  }
  return out;
}

// Unit-magnitude random-phase spectra for the noise branch, one row of
// nfft/2+1 phasors per frame. frame0 indexes the utterance-global frame so
// crops replay the same noise.
inline std::vector<std::complex<float>> make_noise_phasors(std::uint64_t seed,
                                                           int frame0,
                                                           int n_frames,
                                                           int nfft) {
  const int n_bins = nfft / 2 + 1;
  std::vector<std::complex<float>> u(static_cast<std::size_t>(n_frames) *
                                     n_bins);
  for (int t = 0; t < n_frames; ++t) {
    Rng rng(seed, static_cast<std::uint64_t>(frame0 + t));
    for (int k = 0; k < n_bins; ++k) {
      if (k == 0 || k == nfft / 2) {
        u[static_cast<std::size_t>(t) * n_bins + k] = {
            rng.uniform() < 0.5 ? -1.0f : 1.0f, 0.0f};
      } else {
        const double a = rng.uniform(0.0, kTwoPi);
        u[static_cast<std::size_t>(t) * n_bins + k] = {
            static_cast<float>(std::cos(a)), static_cast<float>(std::sin(a))};
      }
    }
  }
  return u;
}

// Filtered-noise branch: band magnitudes are interpolated across the linear
// spectrum, combined with fixed unit phasors, inverse-transformed per frame,
// and Hann overlap-added at half-window hop (COLA sum 1 in the interior).
template <typename S>
Tensor<S> noise_render(Tensor<S> band_mags,
                       const std::vector<std::complex<float>>& phasors,
                       int nfft, int hop) {
  const int frames = band_mags.rows();
  const int B = band_mags.cols();
  const int n_bins = nfft / 2 + 1;
  check(hop * 2 == nfft, "noise_render: hop must be nfft/2");
  check(phasors.size() == static_cast<std::size_t>(frames) * n_bins,
        "noise_render: phasor table mismatch");
  const int n = frames * hop;
  const auto wf = hann_window(nfft);
  const std::vector<S> window(wf.begin(), wf.end());

  // bin k maps to fractional band position k*(B-1)/(n_bins-1)
  const double band_step = static_cast<double>(B - 1) / (n_bins - 1);

  auto out = Tensor<S>::make_op(
      n, 1, {band_mags},
      [frames, B, n_bins, nfft, hop, n, window, phasors,
       band_step](TensorNode<S>& o) {
        auto& pm = *o.parents[0];
        std::vector<S> df(nfft);
        for (int t = 0; t < frames; ++t) {
          const int start = t * hop - nfft / 2;
          bool any = false;
          for (int i = 0; i < nfft; ++i) {
            const int idx = start + i;
            const S g = (idx >= 0 && idx < n) ? o.grad[idx] : S(0);
            df[i] = g * window[i];
            any = any || g != S(0);
          }
          if (!any) continue;
          auto D = rfft(df);
          for (int k = 0; k < n_bins; ++k) {
            const auto uf = phasors[static_cast<std::size_t>(t) * n_bins + k];
            const std::complex<S> u(static_cast<S>(uf.real()),
                                    static_cast<S>(uf.imag()));
            const S c = (k == 0 || k == nfft / 2) ? S(1) : S(2);
            const S dm = c / nfft * (u * std::conj(D[k])).real();
            const double bpos = k * band_step;
            const int b0 = std::min(static_cast<int>(bpos), B - 1);
            const int b1 = std::min(b0 + 1, B - 1);
            const S w1 = static_cast<S>(bpos - b0);
            pm.grad[static_cast<std::size_t>(t) * B + b0] += (S(1) - w1) * dm;
            pm.grad[static_cast<std::size_t>(t) * B + b1] += w1 * dm;
          }
        }
      });

  std::vector<std::complex<S>> spec(n_bins);
  std::vector<double> acc(n, 0.0);
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < n_bins; ++k) {
      const double bpos = k * band_step;
      const int b0 = std::min(static_cast<int>(bpos), B - 1);
      const int b1 = std::min(b0 + 1, B - 1);
      const double w1 = bpos - b0;
      const double m = (1.0 - w1) * static_cast<double>(band_mags.value()
                           [static_cast<std::size_t>(t) * B + b0]) +
                       w1 * static_cast<double>(band_mags.value()
                           [static_cast<std::size_t>(t) * B + b1]);
      const auto uf = phasors[static_cast<std::size_t>(t) * n_bins + k];
      spec[k] = std::complex<S>(static_cast<S>(uf.real()),
                                static_cast<S>(uf.imag())) *
                static_cast<S>(m);
    }
    auto frame = irfft(spec, static_cast<std::size_t>(nfft));
    const int start = t * hop - nfft / 2;
    for (int i = 0; i < nfft; ++i) {
      const int idx = start + i;
      if (idx < 0 || idx >= n) continue;
      acc[idx] += static_cast<double>(frame[i]) * window[i];
    }
  }
  for (int i = 0; i < n; ++i) out.value()[i] = static_cast<S>(acc[i]);
  return out;
}

// Contrastive speaker loss over a batch of embeddings. Rows are
// L2-normalized, the positive for anchor i is the first other row sharing
// its id, and the denominator runs over every non-anchor row.
template <typename S>
Tensor<S> speaker_infonce(Tensor<S> emb, const std::vector<int>& ids, S tau) {
  const int N = emb.rows();
  const int D = emb.cols();
  check(N >= 2, "speaker_infonce: need at least 2 embeddings");
  check(static_cast<int>(ids.size()) == N, "speaker_infonce: id count mismatch");
  check(tau > S(0), "speaker_infonce: temperature must be positive");

  auto u = std::make_shared<std::vector<S>>(static_cast<std::size_t>(N) * D);
  auto inv_norm = std::make_shared<std::vector<S>>(N);
  auto pos = std::make_shared<std::vector<int>>(N);
  auto p = std::make_shared<std::vector<S>>(static_cast<std::size_t>(N) * N,
                                            S(0));

  for (int i = 0; i < N; ++i) {
    S nrm = S(0);
    for (int c = 0; c < D; ++c) {
      const S v = emb.value()[static_cast<std::size_t>(i) * D + c];
      nrm += v * v;
    }
    nrm = std::sqrt(nrm);
    check(nrm > S(1e-12), "speaker_infonce: zero-norm embedding");
    (*inv_norm)[i] = S(1) / nrm;
    for (int c = 0; c < D; ++c)
      (*u)[static_cast<std::size_t>(i) * D + c] =
          emb.value()[static_cast<std::size_t>(i) * D + c] / nrm;
  }
  for (int i = 0; i < N; ++i) {
    int j_pos = -1;
    for (int j = 0; j < N; ++j)
      if (j != i && ids[j] == ids[i]) {
        j_pos = j;
        break;
      }
    check(j_pos >= 0, "speaker_infonce: anchor without in-batch positive");
    (*pos)[i] = j_pos;
  }

  std::vector<S> sim(static_cast<std::size_t>(N) * N, S(0));
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      if (j == i) continue;
      S dot = S(0);
      for (int c = 0; c < D; ++c)
        dot += (*u)[static_cast<std::size_t>(i) * D + c] *
               (*u)[static_cast<std::size_t>(j) * D + c];
      sim[static_cast<std::size_t>(i) * N + j] = dot / tau;
    }

  S loss = S(0);
  for (int i = 0; i < N; ++i) {
    S mx = -std::numeric_limits<S>::infinity();
    for (int j = 0; j < N; ++j)
      if (j != i) mx = std::max(mx, sim[static_cast<std::size_t>(i) * N + j]);
    S sum = S(0);
    for (int j = 0; j < N; ++j)
      if (j != i)
        sum += std::exp(sim[static_cast<std::size_t>(i) * N + j] - mx);
    const S lse = mx + std::log(sum);
    for (int j = 0; j < N; ++j)
      if (j != i)
        (*p)[static_cast<std::size_t>(i) * N + j] =
            std::exp(sim[static_cast<std::size_t>(i) * N + j] - lse);
    loss += lse - sim[static_cast<std::size_t>(i) * N + (*pos)[i]];
  }
  loss /= static_cast<S>(N);

  auto out = Tensor<S>::make_op(
      1, 1, {emb}, [N, D, tau, u, inv_norm, pos, p](TensorNode<S>& o) {
        auto& pe = *o.parents[0];
        const S g = o.grad[0];
        // dL/ds_ij spread over both similarity roles of each row, then
        // through the normalization projection (I - uu^T)/|e|.
        std::vector<S> du(static_cast<std::size_t>(N) * D, S(0));
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < N; ++j) {
            if (j == i) continue;
            S w = (*p)[static_cast<std::size_t>(i) * N + j];
            if (j == (*pos)[i]) w -= S(1);
            w *= g / (static_cast<S>(N) * tau);
            if (w == S(0)) continue;
            for (int c = 0; c < D; ++c) {
              du[static_cast<std::size_t>(i) * D + c] +=
                  w * (*u)[static_cast<std::size_t>(j) * D + c];
              du[static_cast<std::size_t>(j) * D + c] +=
                  w * (*u)[static_cast<std::size_t>(i) * D + c];
            }
          }
        for (int i = 0; i < N; ++i) {
          S dot = S(0);
          for (int c = 0; c < D; ++c)
            dot += du[static_cast<std::size_t>(i) * D + c] *
                   (*u)[static_cast<std::size_t>(i) * D + c];
          for (int c = 0; c < D; ++c)
            pe.grad[static_cast<std::size_t>(i) * D + c] +=
                (*inv_norm)[i] *
                (du[static_cast<std::size_t>(i) * D + c] -
                 dot * (*u)[static_cast<std::size_t>(i) * D + c]);
        }
      });
  out.value()[0] = loss;
  return out;
}

}  // namespace hqsvc
