#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hqsvc/audio.hpp"
#include "hqsvc/common.hpp"

namespace hqsvc {

struct SingerSpec {
  int id = 0;
  double f0_low = 0.0;
  double f0_high = 0.0;
  std::vector<double> formant_centers;
  std::vector<double> formant_gains;
  std::vector<double> formant_widths;
};

struct ToyCorpusSpec {
  int n_singers = 5;
  int utterances_per_singer = 10;
  double min_duration = 2.2;
  double max_duration = 3.2;
  std::uint64_t seed = 1234;
};

struct ManifestEntry {
  std::string path;
  int speaker_id = 0;
  double duration = 0.0;
};

struct SingerStats {
  int id = 0;
  double f0_low = 0.0;
  double f0_high = 0.0;
  double f0_mean = 0.0;  // time-average of the scripted contour
};

struct CorpusManifest {
  std::vector<ManifestEntry> utterances;
  std::vector<SingerStats> singers;
};

// Deterministic singer voices: geometrically spaced pitch ranges inside
// [80, 800] Hz and a per-singer formant envelope of Gaussian bumps.
inline SingerSpec make_singer(const ToyCorpusSpec& spec, int id) {
  check(spec.n_singers >= 1, "make_singer: need at least one singer");
  SingerSpec s;
  s.id = id;
  const double lo_center = 110.0, hi_center = 560.0;
  const double frac =
      spec.n_singers == 1
          ? 0.0
          : static_cast<double>(id) / (spec.n_singers - 1);
  const double center = lo_center * std::pow(hi_center / lo_center, frac);
  s.f0_low = std::max(80.0, center * 0.78);
  s.f0_high = std::min(800.0, center * 1.28);

  Rng rng(spec.seed, 0x53494e47ull + static_cast<std::uint64_t>(id));
  for (int j = 0; j < 3; ++j) {
    const double c = 400.0 * std::pow(9000.0 / 400.0, rng.uniform());
    s.formant_centers.push_back(c);
    s.formant_widths.push_back(c * (0.18 + 0.12 * rng.uniform()));
    s.formant_gains.push_back(0.4 + 0.6 * rng.uniform());
  }
  return s;
}

inline double formant_envelope(const SingerSpec& s, double freq_hz) {
  double e = 0.08;
  for (std::size_t j = 0; j < s.formant_centers.size(); ++j) {
    const double d = (freq_hz - s.formant_centers[j]) / s.formant_widths[j];
    e += s.formant_gains[j] * std::exp(-0.5 * d * d);
  }
  return e;
}

struct ToyUtterance {
  AudioBuffer audio;
  std::vector<double> f0_track;  // per-sample scripted contour
  double f0_mean = 0.0;
};

// One utterance: a slowly gliding fundamental with vibrato driving a bank of
// formant-shaped locked harmonics, an amplitude envelope, and -40 dB noise.
inline ToyUtterance synthesize_utterance(const ToyCorpusSpec& spec,
                                         const SingerSpec& singer,
                                         int utterance_index) {
  const int sr = 44100;
  Rng rng(spec.seed, 0x55545400ull +
                         static_cast<std::uint64_t>(singer.id) * 1000 +
                         static_cast<std::uint64_t>(utterance_index));
  const double dur =
      rng.uniform(spec.min_duration, spec.max_duration);
  const int n = static_cast<int>(std::llround(dur * sr));

  const double r1 = rng.uniform(0.2, 0.5), p1 = rng.uniform(0.0, kTwoPi);
  const double r2 = rng.uniform(0.6, 1.1), p2 = rng.uniform(0.0, kTwoPi);
  const double p3 = rng.uniform(0.0, kTwoPi);
  const double wobble_rate = rng.uniform(0.5, 0.9);

  ToyUtterance utt;
  utt.audio.sample_rate = sr;
  utt.audio.samples.resize(n);
  utt.f0_track.resize(n);

  const int kMaxPartials = 40;
  std::vector<double> amp(kMaxPartials + 1, 0.0);
  double phi = 0.0;
  double f0_sum = 0.0;
  double peak = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double glide = 0.5 * std::sin(kTwoPi * r1 * t + p1) +
                         0.3 * std::sin(kTwoPi * r2 * t + p2);
    double u = 0.5 + glide / 1.6;  // glide in [-0.8, 0.8]
    u = std::clamp(u, 0.0, 1.0);
    double f0 = singer.f0_low * std::pow(singer.f0_high / singer.f0_low, u);
    f0 *= 1.0 + 0.02 * std::sin(kTwoPi * 5.5 * t + p3);
    utt.f0_track[i] = f0;
    f0_sum += f0;

    if (i % 64 == 0) {
      // formant envelope refreshed at control rate
      for (int k = 1; k <= kMaxPartials; ++k)
        amp[k] = k * f0 < sr / 2.0
                     ? formant_envelope(singer, k * f0) / k
                     : 0.0;
    }
    phi = std::fmod(phi + kTwoPi * f0 / sr, kTwoPi);
    const std::complex<double> z(std::cos(phi), std::sin(phi));
    std::complex<double> zk(1.0, 0.0);
    double acc = 0.0;
    for (int k = 1; k <= kMaxPartials; ++k) {
      zk *= z;
      if (amp[k] == 0.0) continue;
      acc += amp[k] * zk.imag();
    }
    double env = 1.0;
    if (t < 0.05) env = t / 0.05;
    const double tail = dur - t;
    if (tail < 0.1) env = std::min(env, tail / 0.1);
    env *= 1.0 + 0.1 * std::sin(kTwoPi * wobble_rate * t);
    const double s = env * acc + 0.01 * (rng.uniform() * 2.0 - 1.0);
    utt.audio.samples[i] = static_cast<float>(s);
    peak = std::max(peak, std::abs(s));
  }
  utt.f0_mean = f0_sum / n;
  if (peak > 0.0) {
    const float g = static_cast<float>(0.5 / peak);
    for (auto& s : utt.audio.samples) s *= g;
  }
  return utt;
}

inline void save_manifest(const CorpusManifest& m, const std::string& path) {
  nlohmann::json j;
  j["singers"] = nlohmann::json::array();
  for (const auto& s : m.singers)
    j["singers"].push_back({{"id", s.id},
                            {"f0_low", s.f0_low},
                            {"f0_high", s.f0_high},
                            {"f0_mean", s.f0_mean}});
  j["utterances"] = nlohmann::json::array();
  for (const auto& u : m.utterances)
    j["utterances"].push_back({{"path", u.path},
                               {"speaker_id", u.speaker_id},
                               {"duration", u.duration}});
  std::ofstream f(path);
  check(f.good(), "save_manifest: cannot open " + path);
  f << j.dump(2) << "\n";
  check(f.good(), "save_manifest: write failed");
}

inline CorpusManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "load_manifest: cannot open " + path);
  nlohmann::json j;
  f >> j;
  CorpusManifest m;
  for (const auto& s : j.at("singers"))
    m.singers.push_back({s.at("id").get<int>(), s.at("f0_low").get<double>(),
                         s.at("f0_high").get<double>(),
                         s.at("f0_mean").get<double>()});
  for (const auto& u : j.at("utterances"))
    m.utterances.push_back({u.at("path").get<std::string>(),
                            u.at("speaker_id").get<int>(),
                            u.at("duration").get<double>()});
  return m;
}

// Writes WAVs plus manifest.json into out_dir; byte-identical for equal
// (spec, seed).
inline CorpusManifest generate_toy_corpus(const ToyCorpusSpec& spec,
                                          const std::string& out_dir) {
  check(spec.min_duration >= 2.1, "corpus: durations must be >= 2.1 s");
  check(spec.min_duration <= spec.max_duration, "corpus: bad duration range");
  std::filesystem::create_directories(out_dir);
  CorpusManifest manifest;
  for (int si = 0; si < spec.n_singers; ++si) {
    const SingerSpec singer = make_singer(spec, si);
    check(singer.f0_low >= 80.0 && singer.f0_high <= 800.0,
          "corpus: singer range outside [80, 800] Hz");
    double mean_sum = 0.0;
    for (int ui = 0; ui < spec.utterances_per_singer; ++ui) {
      const ToyUtterance utt = synthesize_utterance(spec, singer, ui);
      const std::string name =
          "s" + std::to_string(si) + "_u" + std::to_string(ui) + ".wav";
      write_wav(utt.audio, out_dir + "/" + name, WavEncoding::kFloat32);
      manifest.utterances.push_back(
          {name, si, utt.audio.duration_s()});
      mean_sum += utt.f0_mean;
    }
    manifest.singers.push_back({si, singer.f0_low, singer.f0_high,
                                mean_sum / spec.utterances_per_singer});
  }
  save_manifest(manifest, out_dir + "/manifest.json");
  return manifest;
}

}  // namespace hqsvc
