#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hqsvc/common.hpp"
#include "hqsvc/config.hpp"
#include "hqsvc/ddsp.hpp"
#include "hqsvc/diffusion.hpp"
#include "hqsvc/eva.hpp"
#include "hqsvc/features.hpp"
#include "hqsvc/nn.hpp"
#include "hqsvc/spectral.hpp"
#include "hqsvc/tensor.hpp"

namespace hqsvc {

struct ModelConfig {
  EvaConfig eva;
  DdspConfig ddsp;
  DenoiserConfig denoiser;
  int diffusion_T = 100;
  double beta_start = 1e-4;
  double beta_end = 0.06;
};

inline ModelConfig model_config_from_run(const RunConfig& rc) {
  check(rc.profile == "desk" || rc.profile == "paper",
        "model config: unknown profile " + rc.profile);
  ModelConfig mc;
  mc.eva.width = rc.eva_width;
  mc.eva.heads = rc.eva_heads;
  mc.denoiser = rc.profile == "desk"
                    ? DenoiserConfig::desk_profile(rc.eva_width)
                    : DenoiserConfig::paper_profile(rc.eva_width);
  mc.diffusion_T = rc.diffusion_steps;
  mc.beta_start = rc.beta_start;
  mc.beta_end = rc.beta_end;
  return mc;
}

// The complete model: one parameter store shared by the adaptation encoder,
// the pitch-statistics head, the synthesizer head, and the denoiser, plus
// the diffusion schedule and dataset mel statistics.
template <typename S>
struct SvcModel {
  ModelConfig cfg;
  ParamStore<S> store;
  EvaNet<S> eva;
  SfpNet<S> sfp;
  DdspHead<S> ddsp;
  Denoiser<S> denoiser;
  DiffusionSchedule sched;
  std::vector<float> mel_mean, mel_std;  // per band, over training frames

  SvcModel(const ModelConfig& c, std::uint64_t seed)
      : cfg(c),
        store(seed),
        eva(store, "eva", c.eva),
        sfp(store, "sfp", c.eva.width),
        ddsp(store, "ddsp", c.eva.width, c.ddsp),
        denoiser(store, "denoiser", c.denoiser),
        sched(make_schedule(c.diffusion_T, c.beta_start, c.beta_end)),
        mel_mean(kMelBands, 0.0f),
        mel_std(kMelBands, 1.0f) {}
};

// Frame-rate features regridded onto the mel frame axis. Phase is carried as
// (sin, cos) so interpolation never crosses a wrap discontinuity.
struct AlignedFeatures {
  int n_frames = 0;
  std::vector<float> f0, x_f0, voiced, volume;  // [n]
  std::vector<float> phase_sin, phase_cos;      // [n]
  std::vector<float> content;                   // [n, 32]
  std::vector<float> spk_raw;                   // [96]
  float f0_mean = 0.0f;
  float f0_var = 0.0f;
};

inline AlignedFeatures align_features(const FeatureBundle& fb, int n_mel) {
  const int n = fb.frames.n_frames;
  AlignedFeatures af;
  af.n_frames = n_mel;
  af.f0 = align_to_mel(fb.frames.f0, n, 1, n_mel);
  af.x_f0 = align_to_mel(fb.frames.x_f0, n, 1, n_mel);
  af.volume = align_to_mel(fb.frames.volume, n, 1, n_mel);
  const auto voiced_soft = align_to_mel(fb.frames.voiced, n, 1, n_mel);
  af.voiced.resize(n_mel);
  for (int t = 0; t < n_mel; ++t)
    af.voiced[t] = voiced_soft[t] > 0.5f ? 1.0f : 0.0f;

  std::vector<float> sc(static_cast<std::size_t>(n) * 2);
  for (int t = 0; t < n; ++t) {
    sc[2 * t] = std::sin(fb.frames.phase[t]);
    sc[2 * t + 1] = std::cos(fb.frames.phase[t]);
  }
  const auto sc_al = align_to_mel(sc, n, 2, n_mel);
  af.phase_sin.resize(n_mel);
  af.phase_cos.resize(n_mel);
  for (int t = 0; t < n_mel; ++t) {
    af.phase_sin[t] = sc_al[2 * t];
    af.phase_cos[t] = sc_al[2 * t + 1];
  }
  af.content = align_to_mel(fb.content, n, kContentCepstra, n_mel);
  af.spk_raw = fb.spk_raw;
  af.f0_mean = fb.f0_mean;
  af.f0_var = fb.f0_var;

  // unvoiced frames carry no pitch after regridding either
  for (int t = 0; t < n_mel; ++t)
    if (af.voiced[t] == 0.0f) {
      af.f0[t] = 0.0f;
      af.x_f0[t] = 0.0f;
    }
  return af;
}

template <typename S>
struct EvaInputs {
  Tensor<S> content;  // [F, 32]
  Tensor<S> spk;      // [1, 96]
  Tensor<S> x_f0;     // [F, 1]
  Tensor<S> vol;      // [F, 1]
  Tensor<S> pha;      // [F, 2]
};

// Constant input tensors for the frame window [t0, t1).
template <typename S>
EvaInputs<S> make_eva_inputs(const AlignedFeatures& af, int t0, int t1) {
  check(0 <= t0 && t0 < t1 && t1 <= af.n_frames,
        "make_eva_inputs: bad window");
  const int F = t1 - t0;
  EvaInputs<S> in;
  std::vector<S> con(static_cast<std::size_t>(F) * kContentCepstra);
  for (int t = 0; t < F; ++t)
    for (int c = 0; c < kContentCepstra; ++c)
      con[static_cast<std::size_t>(t) * kContentCepstra + c] = static_cast<S>(
          af.content[static_cast<std::size_t>(t0 + t) * kContentCepstra + c]);
  in.content = Tensor<S>::from_vector(con, F, kContentCepstra, false);
  in.spk = Tensor<S>::from_vector(
      std::vector<S>(af.spk_raw.begin(), af.spk_raw.end()), 1,
      kSpeakerRawDim, false);
  std::vector<S> xf(F), vol(F), pha(static_cast<std::size_t>(F) * 2);
  for (int t = 0; t < F; ++t) {
    xf[t] = static_cast<S>(af.x_f0[t0 + t]);
    vol[t] = static_cast<S>(af.volume[t0 + t]);
    pha[2 * t] = static_cast<S>(af.phase_sin[t0 + t]);
    pha[2 * t + 1] = static_cast<S>(af.phase_cos[t0 + t]);
  }
  in.x_f0 = Tensor<S>::from_vector(xf, F, 1, false);
  in.vol = Tensor<S>::from_vector(vol, F, 1, false);
  in.pha = Tensor<S>::from_vector(pha, F, 2, false);
  return in;
}

template <typename S>
EmbeddingSet<S> embed_window(const SvcModel<S>& model,
                             const AlignedFeatures& af, int t0, int t1) {
  const auto in = make_eva_inputs<S>(af, t0, t1);
  return model.eva(in.content, in.spk, in.x_f0, in.vol, in.pha);
}

inline void compute_mel_stats(const std::vector<MelSpectrogram>& mels,
                              std::vector<float>* mean,
                              std::vector<float>* stdev) {
  check(!mels.empty(), "compute_mel_stats: no spectrograms");
  std::vector<double> sum(kMelBands, 0.0), sq(kMelBands, 0.0);
  std::size_t frames = 0;
  for (const auto& m : mels) {
    check(m.n_mels == kMelBands, "compute_mel_stats: band count mismatch");
    for (int t = 0; t < m.n_frames; ++t)
      for (int b = 0; b < kMelBands; ++b) {
        const double v = m.at(t, b);
        sum[b] += v;
        sq[b] += v * v;
      }
    frames += static_cast<std::size_t>(m.n_frames);
  }
  mean->resize(kMelBands);
  stdev->resize(kMelBands);
  for (int b = 0; b < kMelBands; ++b) {
    const double mu = sum[b] / frames;
    const double var = std::max(0.0, sq[b] / frames - mu * mu);
    (*mean)[b] = static_cast<float>(mu);
    (*stdev)[b] = static_cast<float>(std::max(1e-3, std::sqrt(var)));
  }
}

// Flattened per-band standardization of mel rows [t0, t1).
inline std::vector<float> normalize_mel(const MelSpectrogram& mel, int t0,
                                        int t1,
                                        const std::vector<float>& mean,
                                        const std::vector<float>& stdev) {
  check(0 <= t0 && t0 < t1 && t1 <= mel.n_frames, "normalize_mel: bad window");
  std::vector<float> out(static_cast<std::size_t>(t1 - t0) * kMelBands);
  for (int t = t0; t < t1; ++t)
    for (int b = 0; b < kMelBands; ++b)
      out[static_cast<std::size_t>(t - t0) * kMelBands + b] =
          (mel.at(t, b) - mean[b]) / stdev[b];
  return out;
}

inline MelSpectrogram denormalize_mel(const std::vector<float>& x,
                                      int n_frames,
                                      const std::vector<float>& mean,
                                      const std::vector<float>& stdev) {
  check(x.size() == static_cast<std::size_t>(n_frames) * kMelBands,
        "denormalize_mel: shape mismatch");
  MelSpectrogram mel;
  mel.n_frames = n_frames;
  mel.n_mels = kMelBands;
  mel.hop = kMelHop;
  mel.sample_rate = kMelSampleRate;
  mel.fmin = kMelFmin;
  mel.fmax = kMelFmax;
  mel.data.resize(x.size());
  for (int t = 0; t < n_frames; ++t)
    for (int b = 0; b < kMelBands; ++b)
      mel.data[static_cast<std::size_t>(t) * kMelBands + b] =
          x[static_cast<std::size_t>(t) * kMelBands + b] * stdev[b] + mean[b];
  return mel;
}

// Forward-only closure over the denoiser for a fixed conditioning window.
template <typename S>
DenoiseFn make_denoise_fn(const SvcModel<S>& model, Tensor<S> e) {
  const int width = model.cfg.denoiser.input_dim;
  return [&model, e, width](const std::vector<float>& x,
                            int t) -> std::vector<float> {
    const int frames = static_cast<int>(x.size()) / width;
    auto xt = Tensor<S>::from_vector(std::vector<S>(x.begin(), x.end()),
                                     frames, width, false);
    auto out = model.denoiser(xt, t, e);
    const auto& v = out.value();
    return std::vector<float>(v.begin(), v.end());
  };
}

}  // namespace hqsvc
