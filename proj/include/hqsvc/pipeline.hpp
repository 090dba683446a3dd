#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hqsvc/checkpoint.hpp"
#include "hqsvc/config.hpp"
#include "hqsvc/metrics.hpp"
#include "hqsvc/model.hpp"
#include "hqsvc/train.hpp"

namespace hqsvc {

template <typename S>
struct LoadedModel {
  RunConfig rc;
  std::shared_ptr<SvcModel<S>> model;
};

// Rebuilds the model described by the checkpoint's embedded config and
// restores weights plus dataset mel statistics.
template <typename S = float>
LoadedModel<S> load_model(const std::string& checkpoint_path) {
  const CheckpointData data = read_checkpoint(checkpoint_path);
  LoadedModel<S> lm;
  lm.rc = run_config_from_string(data.config_json);
  lm.model = std::make_shared<SvcModel<S>>(model_config_from_run(lm.rc),
                                           lm.rc.seed);
  apply_checkpoint<S>(data, lm.model->store, nullptr);
  check(data.mel_mean.size() == kMelBands && data.mel_std.size() == kMelBands,
        "load_model: checkpoint lacks mel statistics");
  lm.model->mel_mean = data.mel_mean;
  lm.model->mel_std = data.mel_std;
  return lm;
}

struct ConvertOptions {
  std::string sampler = "dpmpp";
  int speedup = 10;
  int chunk_frames = 256;
  int chunk_overlap = 32;
  int griffin_lim_iters = 20;
  // Fraction of the schedule the reverse process walks; the chain starts
  // from the oscillator-bank mel noised to that depth, not from pure noise.
  double shallow = 0.5;
  std::uint64_t noise_seed = 0x636f6e76ull;

  static ConvertOptions from_run(const RunConfig& rc) {
    ConvertOptions o;
    o.sampler = rc.sampler;
    o.speedup = rc.speedup;
    o.chunk_frames = rc.chunk_frames;
    o.chunk_overlap = rc.chunk_overlap;
    o.griffin_lim_iters = rc.griffin_lim_iters;
    return o;
  }
};

// Chunked reverse diffusion conditioned on rows of e_full, denormalized to a
// log-mel spectrogram. A normalized coarse mel, when given, seeds each chunk
// at mid-schedule depth opt.shallow: harmonic placement comes from the coarse
// render and the remaining reverse steps supply texture. The stride budget
// n_steps is truncated to the walked depth, so step cost still falls as the
// budget shrinks.
template <typename S>
MelSpectrogram diffusion_generate(const SvcModel<S>& model, Tensor<S> e_full,
                                  SamplerKind kind, int n_steps,
                                  const ConvertOptions& opt,
                                  const std::vector<float>* coarse = nullptr) {
  const int n_frames = e_full.rows();
  const int width = model.cfg.denoiser.input_dim;
  int t_start = -1;
  int steps = n_steps;
  if (coarse) {
    check(coarse->size() == static_cast<std::size_t>(n_frames) * width,
          "diffusion_generate: coarse shape mismatch");
    t_start = std::clamp(
        static_cast<int>(std::llround(model.sched.T * opt.shallow)), 1,
        model.sched.T);
    steps = std::clamp(n_steps, 1, t_start);
  }
  auto sample_chunk = [&](int f0, int frames) {
    Tensor<S> e_chunk = (f0 == 0 && frames == n_frames)
                            ? e_full
                            : slice_rows(e_full, f0, f0 + frames);
    const DenoiseFn fn = make_denoise_fn(model, e_chunk);
    auto x = frame_keyed_noise(opt.noise_seed, f0, frames, width);
    if (coarse) {
      const std::vector<float> x0(
          coarse->begin() + static_cast<std::size_t>(f0) * width,
          coarse->begin() + static_cast<std::size_t>(f0 + frames) * width);
      x = forward_diffuse(x0, t_start, x, model.sched);
    }
    return run_sampler(kind, fn, model.sched, steps, std::move(x), t_start);
  };
  const auto flat = chunked_infer(n_frames, width, opt.chunk_frames,
                                  opt.chunk_overlap, sample_chunk);
  return denormalize_mel(flat, n_frames, model.mel_mean, model.mel_std);
}

inline int sampler_steps(const DiffusionSchedule& sched, int speedup) {
  check(speedup >= 1, "sampler_steps: speedup must be >= 1");
  return std::max(1, sched.T / speedup);
}

// Embedding -> oscillator-bank coarse mel -> shallow diffusion -> phase
// reconstruction for a full utterance. The coarse render pins harmonics to
// the frame contour at any pitch, including pitches outside the embedding's
// training range.
template <typename S>
AudioBuffer synthesize(const SvcModel<S>& model, const AlignedFeatures& af,
                       const ConvertOptions& opt, MelSpectrogram* mel_out) {
  auto es = embed_window(model, af, 0, af.n_frames);
  const SamplerKind kind = sampler_from_name(opt.sampler);
  const int n_steps = sampler_steps(model.sched, opt.speedup);
  const double phi0 = std::fmod(
      std::atan2(af.phase_sin[0], af.phase_cos[0]) + kTwoPi, kTwoPi);
  auto rr = model.ddsp(es.e, af.f0, phi0, opt.noise_seed, 0);
  const auto& cm = rr.mel.value();
  std::vector<float> coarse(cm.size());
  for (int t = 0; t < af.n_frames; ++t)
    for (int b = 0; b < kMelBands; ++b) {
      const std::size_t i = static_cast<std::size_t>(t) * kMelBands + b;
      coarse[i] = (static_cast<float>(cm[i]) - model.mel_mean[b]) /
                  model.mel_std[b];
    }
  MelSpectrogram mel =
      diffusion_generate(model, es.e, kind, n_steps, opt, &coarse);
  if (mel_out) *mel_out = mel;
  return griffin_lim(mel, &af.f0, opt.griffin_lim_iters);
}

inline AudioBuffer to_44k(const AudioBuffer& in) {
  return in.sample_rate == kMelSampleRate ? in
                                          : resample(in, kMelSampleRate);
}

// Phase recurrence on the mel frame grid for an edited pitch contour.
inline void recompute_phase(AlignedFeatures* af) {
  const auto phase =
      phase_recurrence(af->f0, af->voiced, kMelHop, kMelSampleRate);
  for (int t = 0; t < af->n_frames; ++t) {
    af->phase_sin[t] = static_cast<float>(std::sin(phase[t]));
    af->phase_cos[t] = static_cast<float>(std::cos(phase[t]));
  }
}

struct ConversionResult {
  AudioBuffer audio;
  MelSpectrogram mel;
  double delta_x_f0 = 0.0;   // shift applied to voiced x_f0
  double target_mu = 0.0;    // pitch-statistics prediction for the target
  double source_mean = 0.0;  // measured voiced x_f0 mean of the source
};

// Conversion-ready frame features: content, contour shape, volume, and
// phase from the source; speaker features from the target; voiced x_f0
// shifted so its mean lands on the target mean. The target mean is
// measured from the reference utterance's own voiced frames when it has
// enough of them; the pitch-statistics head fills in for references that
// are nearly unvoiced.
struct ConversionPlan {
  AlignedFeatures af;
  double delta_x_f0 = 0.0;
  double target_mu = 0.0;
  double source_mean = 0.0;
};

template <typename S>
ConversionPlan prepare_conversion(const SvcModel<S>& model,
                                  const AudioBuffer& source_in,
                                  const AudioBuffer& target_in) {
  const AudioBuffer src = to_44k(source_in);
  const AudioBuffer tgt = to_44k(target_in);
  check(src.duration_s() >= 2.1, "convert: source shorter than 2.1 s");
  check(tgt.duration_s() >= 2.1, "convert: target shorter than 2.1 s");

  const MelSpectrogram mel_src = mel_spectrogram(src);
  const FeatureBundle fb_src = extract_features(src);
  const FeatureBundle fb_tgt = extract_features(tgt);
  AlignedFeatures af_tgt = align_features(fb_tgt, fb_tgt.frames.n_frames);
  auto es_tgt = embed_window(model, af_tgt, 0, af_tgt.n_frames);

  int tgt_voiced = 0;
  for (int t = 0; t < fb_tgt.frames.n_frames; ++t)
    if (fb_tgt.frames.voiced[t] > 0.5f) ++tgt_voiced;

  ConversionPlan plan;
  plan.af = align_features(fb_src, mel_src.n_frames);
  plan.target_mu =
      tgt_voiced >= 8
          ? static_cast<double>(fb_tgt.f0_mean)
          : static_cast<double>(model.sfp(es_tgt.e_spk).mu.item());
  plan.source_mean = static_cast<double>(fb_src.f0_mean);
  plan.delta_x_f0 = plan.target_mu - plan.source_mean;

  for (int t = 0; t < plan.af.n_frames; ++t)
    if (plan.af.voiced[t] > 0.5f) {
      const float x = plan.af.x_f0[t] + static_cast<float>(plan.delta_x_f0);
      plan.af.x_f0[t] = x;
      plan.af.f0[t] = f0_transform_inverse(x);
    }
  recompute_phase(&plan.af);
  plan.af.spk_raw = fb_tgt.spk_raw;
  return plan;
}

template <typename S>
ConversionResult convert_audio(const SvcModel<S>& model,
                               const AudioBuffer& source_in,
                               const AudioBuffer& target_in,
                               const ConvertOptions& opt) {
  const ConversionPlan plan = prepare_conversion(model, source_in, target_in);
  ConversionResult out;
  out.delta_x_f0 = plan.delta_x_f0;
  out.target_mu = plan.target_mu;
  out.source_mean = plan.source_mean;
  out.audio = synthesize(model, plan.af, opt, &out.mel);
  return out;
}

// Identity conversion of a band-limited input: the input's own features act
// as both content and speaker sources and the pitch shift is zero; the
// generated mel covers the full 44.1 kHz band.
template <typename S>
ConversionResult super_resolve_audio(const SvcModel<S>& model,
                                     const AudioBuffer& input,
                                     const ConvertOptions& opt) {
  AudioBuffer low = input;
  if (low.sample_rate > kFeatureSampleRate)
    low = resample(low, kFeatureSampleRate);
  check(low.duration_s() >= 2.1, "super_resolve: input shorter than 2.1 s");
  const AudioBuffer wide = resample(low, kMelSampleRate);

  const MelSpectrogram mel_in = mel_spectrogram(wide);
  const FeatureBundle fb = extract_features(wide);
  AlignedFeatures af = align_features(fb, mel_in.n_frames);

  ConversionResult out;
  out.source_mean = static_cast<double>(fb.f0_mean);
  out.target_mu = out.source_mean;
  out.audio = synthesize(model, af, opt, &out.mel);
  return out;
}

struct EvalPair {
  std::string ref_path, hyp_path;
};

// Pairs manifest: one "ref_path hyp_path" per line; blank lines and lines
// starting with '#' are skipped.
inline std::vector<EvalPair> load_pairs(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "load_pairs: cannot open " + path);
  std::vector<EvalPair> pairs;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    EvalPair p;
    is >> p.ref_path >> p.hyp_path;
    check(!p.ref_path.empty() && !p.hyp_path.empty(),
          "load_pairs: malformed line: " + line);
    pairs.push_back(p);
  }
  return pairs;
}

inline std::vector<float> f0_contour(const AudioBuffer& buf) {
  const AudioBuffer b16 = buf.sample_rate == kFeatureSampleRate
                              ? buf
                              : resample(buf, kFeatureSampleRate);
  return extract_frame_features(b16).f0;
}

// Speaker embedding of an utterance, as plain floats.
template <typename S>
std::vector<float> speaker_embedding(const SvcModel<S>& model,
                                     const AudioBuffer& buf) {
  const AudioBuffer wide = to_44k(buf);
  const FeatureBundle fb = extract_features(wide);
  AlignedFeatures af = align_features(fb, fb.frames.n_frames);
  auto es = embed_window(model, af, 0, af.n_frames);
  const auto& v = es.e_spk.value();
  return std::vector<float>(v.begin(), v.end());
}

template <typename S>
EvalReport evaluate_pair(const SvcModel<S>* model, const AudioBuffer& ref,
                         const AudioBuffer& hyp) {
  EvalReport r;
  const auto ref_f0 = f0_contour(ref);
  const auto hyp_f0 = f0_contour(hyp);
  r.f0_rmse = f0_rmse(ref_f0, hyp_f0);
  r.fpc = fpc(ref_f0, hyp_f0);
  AudioBuffer hyp_rs = hyp.sample_rate == ref.sample_rate
                           ? hyp
                           : resample(hyp, ref.sample_rate);
  r.lsd = lsd(ref, hyp_rs);
  r.stoi = stoi_like(ref, hyp_rs);
  if (model)
    r.embed_cos = embed_cos(speaker_embedding(*model, ref),
                            speaker_embedding(*model, hyp));
  return r;
}

inline std::optional<double> mean_metric(
    const std::vector<EvalReport>& rows,
    std::optional<double> EvalReport::*field) {
  double acc = 0.0;
  int n = 0;
  for (const auto& r : rows)
    if (r.*field) {
      acc += *(r.*field);
      ++n;
    }
  if (n == 0) return std::nullopt;
  return acc / n;
}

inline std::string format_eval_report(const std::vector<std::string>& names,
                                      const std::vector<EvalReport>& rows) {
  check(names.size() == rows.size(), "format_eval_report: row mismatch");
  std::ostringstream os;
  os << report_header();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    os << names[i] << " " << format_metric(r.f0_rmse) << " "
       << format_metric(r.fpc) << " " << format_metric(r.lsd) << " "
       << format_metric(r.stoi) << " " << format_metric(r.embed_cos) << "\n";
  }
  if (!rows.empty()) {
    os << "mean " << format_metric(mean_metric(rows, &EvalReport::f0_rmse))
       << " " << format_metric(mean_metric(rows, &EvalReport::fpc)) << " "
       << format_metric(mean_metric(rows, &EvalReport::lsd)) << " "
       << format_metric(mean_metric(rows, &EvalReport::stoi)) << " "
       << format_metric(mean_metric(rows, &EvalReport::embed_cos)) << "\n";
  }
  return os.str();
}

struct BenchRow {
  std::string sampler;
  int speedup = 1;
  double rtf = 0.0;
  EvalReport metrics;
};

// The 3-sampler x 4-speedup grid. Features are prepared once; RTF times
// embedding, sampling, and phase reconstruction; metrics compare each
// conversion against the source. Timing is interleaved: each round walks
// the whole grid once and every cell keeps its minimum over rounds. Host
// slow phases last longer than one cell's back-to-back repeats would, so
// consecutive timing corrupts whole cells; spreading a cell's repeats
// across rounds decorrelates them and the minimum recovers the clean
// sample. Round zero is untimed warmup and supplies the audio for
// metrics (synthesis is deterministic per cell, so every round renders
// identical audio).
template <typename S>
std::vector<BenchRow> bench_samplers(const SvcModel<S>& model,
                                     const AudioBuffer& source,
                                     const AudioBuffer& target,
                                     const ConvertOptions& base) {
  const ConversionPlan plan = prepare_conversion(model, source, target);
  const double out_duration =
      static_cast<double>(plan.af.n_frames) * kMelHop / kMelSampleRate;
  std::vector<BenchRow> rows;
  for (const std::string& name : {"ddim", "dpmpp", "unipc"}) {
    for (int speedup : {1, 5, 10, 20}) {
      BenchRow row;
      row.sampler = name;
      row.speedup = speedup;
      rows.push_back(row);
    }
  }
  std::vector<double> best(rows.size(),
                           std::numeric_limits<double>::infinity());
  constexpr int kRounds = 7;
  for (int round = 0; round < kRounds; ++round) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      ConvertOptions opt = base;
      opt.sampler = rows[i].sampler;
      opt.speedup = rows[i].speedup;
      const auto start = std::chrono::steady_clock::now();
      AudioBuffer audio = synthesize(model, plan.af, opt, nullptr);
      const auto end = std::chrono::steady_clock::now();
      if (round == 0) {
        rows[i].metrics = evaluate_pair(&model, source, audio);
      } else {
        best[i] = std::min(
            best[i], std::chrono::duration_cast<std::chrono::duration<double>>(
                         end - start)
                         .count());
      }
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i)
    rows[i].rtf = best[i] / out_duration;
  return rows;
}

inline std::string format_bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "sampler speedup rtf f0_rmse fpc lsd stoi embed_cos\n";
  for (const auto& r : rows) {
    os << r.sampler << " " << r.speedup << "x " << std::fixed
       << std::setprecision(4) << r.rtf << " "
       << format_metric(r.metrics.f0_rmse) << " "
       << format_metric(r.metrics.fpc) << " " << format_metric(r.metrics.lsd)
       << " " << format_metric(r.metrics.stoi) << " "
       << format_metric(r.metrics.embed_cos) << "\n";
  }
  return os.str();
}

}  // namespace hqsvc
