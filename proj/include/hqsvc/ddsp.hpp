#pragma once

#include <string>
#include <vector>

#include "hqsvc/audio.hpp"
#include "hqsvc/common.hpp"
#include "hqsvc/dsp_ops.hpp"
#include "hqsvc/nn.hpp"
#include "hqsvc/ops.hpp"
#include "hqsvc/spectral.hpp"
#include "hqsvc/tensor.hpp"

namespace hqsvc {

struct DdspConfig {
  int harmonics = 64;
  int noise_bands = 65;
  int sample_rate = kMelSampleRate;
  int hop = kMelHop;
  int noise_fft = 2 * kMelHop;
};

template <typename S>
struct SynthParams {
  Tensor<S> harmonic_amps;  // [T, K], rows sum to global_amp
  Tensor<S> global_amp;     // [T, 1]
  Tensor<S> noise_mag;      // [T, B]
};

template <typename S>
struct RenderResult {
  Tensor<S> audio;  // [T*hop, 1]
  Tensor<S> mel;    // [T, 128], log amplitude
};

// Decoder head mapping the fused embedding to synthesizer controls, plus the
// differentiable render path whose mel re-analysis matches the plain
// mel_spectrogram configuration bin for bin.
template <typename S>
class DdspHead {
 public:
  DdspHead() = default;
  DdspHead(ParamStore<S>& ps, const std::string& name, int in_width,
           const DdspConfig& cfg)
      : cfg_(cfg),
        decode_(ps, name + ".decode", in_width,
                1 + cfg.harmonics + cfg.noise_bands) {
    fb_ = Tensor<S>::from_vector(
        to_scalar(mel_filterbank(kMelBands, kMelFft, cfg.sample_rate,
                                 kMelFmin, kMelFmax)),
        kMelBands, kMelFft / 2 + 1, false);
  }

  const DdspConfig& config() const { return cfg_; }

  // Non-negative controls: softplus global gain, softmax harmonic
  // distribution scaled by the gain, softplus noise magnitudes.
  SynthParams<S> decode(Tensor<S> e) const {
    auto y = decode_(e);
    const int K = cfg_.harmonics, B = cfg_.noise_bands;
    SynthParams<S> p;
    p.global_amp = softplus(slice_cols(y, 0, 1));
    auto dist = softmax_rows(slice_cols(y, 1, 1 + K));
    p.harmonic_amps = mul_colvec(dist, p.global_amp);
    p.noise_mag = softplus(slice_cols(y, 1 + K, 1 + K + B));
    return p;
  }

  // f0_frame in Hz on the mel grid; phi0 seeds the oscillator phase;
  // noise phasors are keyed by (seed, absolute frame index).
  RenderResult<S> render(const SynthParams<S>& params,
                         const std::vector<float>& f0_frame, double phi0,
                         std::uint64_t noise_seed, int frame0) const {
    const int T = params.harmonic_amps.rows();
    check(static_cast<int>(f0_frame.size()) == T, "render: f0 frame mismatch");

    const auto phase =
        accumulate_phase(f0_frame, cfg_.hop, cfg_.sample_rate, phi0);
    auto harm = harmonic_render(params.harmonic_amps, phase, f0_frame,
                                cfg_.hop, cfg_.sample_rate);
    const auto phasors =
        make_noise_phasors(noise_seed, frame0, T, cfg_.noise_fft);
    auto noise = noise_render(params.noise_mag, phasors, cfg_.noise_fft,
                              cfg_.hop);
    RenderResult<S> out;
    out.audio = add(harm, noise);

    auto mag = stft_mag(out.audio, kMelFft, cfg_.hop);  // [T+1, bins]
    auto mel_lin = matmul(mag, fb_, false, true);       // [T+1, 128]
    out.mel = slice_rows(log_floor(mel_lin, static_cast<S>(kLogFloor)), 0, T);
    return out;
  }

  RenderResult<S> operator()(Tensor<S> e, const std::vector<float>& f0_frame,
                             double phi0, std::uint64_t noise_seed,
                             int frame0) const {
    return render(decode(e), f0_frame, phi0, noise_seed, frame0);
  }

 private:
  static std::vector<S> to_scalar(const std::vector<float>& v) {
    return std::vector<S>(v.begin(), v.end());
  }

  DdspConfig cfg_;
  Linear<S> decode_;
  Tensor<S> fb_;
};

template <typename S>
inline AudioBuffer to_audio_buffer(const Tensor<S>& audio, int sample_rate) {
  AudioBuffer buf;
  buf.sample_rate = sample_rate;
  buf.samples.reserve(audio.numel());
  for (S v : audio.value()) buf.samples.push_back(static_cast<float>(v));
  return buf;
}

}  // namespace hqsvc
