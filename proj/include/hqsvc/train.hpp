#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hqsvc/checkpoint.hpp"
#include "hqsvc/common.hpp"
#include "hqsvc/config.hpp"
#include "hqsvc/corpus.hpp"
#include "hqsvc/losses.hpp"
#include "hqsvc/model.hpp"
#include "hqsvc/optim.hpp"

namespace hqsvc {

struct DatasetItem {
  std::string wav_path;
  int speaker_id = 0;
  MelSpectrogram mel;           // raw log-mel
  AlignedFeatures af;           // features on the mel grid
  std::vector<float> mel_norm;  // standardized, filled after stats
  std::uint64_t noise_seed = 0;
};

struct ToyDataset {
  std::vector<DatasetItem> items;
  std::vector<int> speakers;  // distinct ids, ascending
  std::map<int, std::vector<int>> by_speaker;
  std::vector<float> mel_mean, mel_std;
};

// Loads WAVs listed in the manifest (optionally restricted to a speaker
// subset), extracts mel and aligned features, and standardizes per band.
inline ToyDataset load_dataset(const std::string& corpus_dir,
                               const CorpusManifest& manifest,
                               const std::vector<int>& keep_speakers) {
  ToyDataset ds;
  int index = 0;
  for (const auto& entry : manifest.utterances) {
    if (!keep_speakers.empty() &&
        std::find(keep_speakers.begin(), keep_speakers.end(),
                  entry.speaker_id) == keep_speakers.end()) {
      ++index;
      continue;
    }
    DatasetItem item;
    item.wav_path = corpus_dir + "/" + entry.path;
    item.speaker_id = entry.speaker_id;
    const AudioBuffer buf = read_wav(item.wav_path);
    check(buf.sample_rate == kMelSampleRate,
          "load_dataset: expected 44.1 kHz corpus, got " + item.wav_path);
    item.mel = mel_spectrogram(buf);
    item.af = align_features(extract_features(buf), item.mel.n_frames);
    item.noise_seed = 0x636f7270ull + static_cast<std::uint64_t>(index);
    ds.by_speaker[item.speaker_id].push_back(
        static_cast<int>(ds.items.size()));
    ds.items.push_back(std::move(item));
    ++index;
  }
  check(!ds.items.empty(), "load_dataset: no utterances selected");
  for (const auto& [spk, idx] : ds.by_speaker) ds.speakers.push_back(spk);

  std::vector<MelSpectrogram> mels;
  mels.reserve(ds.items.size());
  for (const auto& item : ds.items) mels.push_back(item.mel);
  compute_mel_stats(mels, &ds.mel_mean, &ds.mel_std);
  for (auto& item : ds.items)
    item.mel_norm = normalize_mel(item.mel, 0, item.mel.n_frames, ds.mel_mean,
                                  ds.mel_std);
  return ds;
}

// One optimization step over a batch of singers_per_batch speakers with two
// utterance crops each, so the contrastive loss always has a positive pair.
template <typename S>
LossBreakdown train_step(SvcModel<S>& model, const ToyDataset& ds,
                         const RunConfig& rc, AdamW<S>& opt, Rng& rng) {
  const int n_spk = static_cast<int>(ds.speakers.size());
  const int spk_per_batch = std::min(rc.singers_per_batch, n_spk);
  check(spk_per_batch >= 2, "train_step: need at least two speakers");

  std::vector<int> order(ds.speakers);
  for (int i = n_spk - 1; i > 0; --i)
    std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i + 1))]);

  struct Pick {
    const DatasetItem* item;
    int t0, frames;
  };
  std::vector<Pick> picks;
  std::vector<int> ids;
  for (int s = 0; s < spk_per_batch; ++s) {
    const auto& utts = ds.by_speaker.at(order[s]);
    const int a = static_cast<int>(rng.below(utts.size()));
    int b = static_cast<int>(rng.below(utts.size()));
    if (utts.size() > 1 && b == a) b = (a + 1) % static_cast<int>(utts.size());
    for (int which : {a, b}) {
      const DatasetItem& item = ds.items[utts[which]];
      int frames = rc.crop_min +
                   static_cast<int>(rng.below(
                       static_cast<std::uint64_t>(rc.crop_max - rc.crop_min + 1)));
      frames = std::min(frames, item.af.n_frames);
      const int t0 = static_cast<int>(
          rng.below(static_cast<std::uint64_t>(item.af.n_frames - frames + 1)));
      picks.push_back({&item, t0, frames});
      ids.push_back(item.speaker_id);
    }
  }

  Tensor<S> l_ddsp, l_diff, l_f0;
  std::vector<Tensor<S>> spk_embs;
  for (const Pick& pick : picks) {
    const AlignedFeatures& af = pick.item->af;
    const int t0 = pick.t0, t1 = pick.t0 + pick.frames;
    auto es = embed_window(model, af, t0, t1);
    spk_embs.push_back(es.e_spk);

    auto sfp_out = model.sfp(es.e_spk);
    auto l_f0_i = sfp_loss(sfp_out, static_cast<S>(af.f0_mean),
                           static_cast<S>(af.f0_var));

    const std::vector<float> f0win(af.f0.begin() + t0, af.f0.begin() + t1);
    const double phi0 = std::fmod(
        std::atan2(af.phase_sin[t0], af.phase_cos[t0]) + kTwoPi, kTwoPi);
    auto rr = model.ddsp(es.e, f0win, phi0, pick.item->noise_seed, t0);
    auto target = Tensor<S>::from_vector(
        std::vector<S>(
            pick.item->mel.data.begin() +
                static_cast<std::size_t>(t0) * kMelBands,
            pick.item->mel.data.begin() +
                static_cast<std::size_t>(t1) * kMelBands),
        pick.frames, kMelBands, false);
    auto l_ddsp_i = ddsp_loss(rr.mel, target);

    const std::vector<float> x0(
        pick.item->mel_norm.begin() + static_cast<std::size_t>(t0) * kMelBands,
        pick.item->mel_norm.begin() + static_cast<std::size_t>(t1) * kMelBands);
    auto l_diff_i =
        diffusion_loss(model.denoiser, x0, pick.frames, es.e, model.sched, rng);

    l_ddsp = l_ddsp.defined() ? add(l_ddsp, l_ddsp_i) : l_ddsp_i;
    l_diff = l_diff.defined() ? add(l_diff, l_diff_i) : l_diff_i;
    l_f0 = l_f0.defined() ? add(l_f0, l_f0_i) : l_f0_i;
  }
  const S inv = static_cast<S>(1.0 / picks.size());
  l_ddsp = scale(l_ddsp, inv);
  l_diff = scale(l_diff, inv);
  l_f0 = scale(l_f0, inv);
  auto l_spk = speaker_infonce(concat_rows(spk_embs), ids,
                               static_cast<S>(rc.infonce_tau));

  auto total = total_loss(l_ddsp, l_diff, l_spk, l_f0);
  model.store.zero_grads();
  total.backward();
  opt.step();

  LossBreakdown out;
  out.l_ddsp = static_cast<double>(l_ddsp.item());
  out.l_diff = static_cast<double>(l_diff.item());
  out.l_spk = static_cast<double>(l_spk.item());
  out.l_f0 = static_cast<double>(l_f0.item());
  out.l_total = static_cast<double>(total.item());
  return out;
}

inline std::string format_log_line(int step, const LossBreakdown& b) {
  std::ostringstream os;
  os << step << " " << std::fixed << std::setprecision(5) << b.l_ddsp << " "
     << b.l_diff << " " << b.l_spk << " " << b.l_f0 << " " << b.l_total;
  return os.str();
}

template <typename S>
void save_training_checkpoint(const std::string& path, SvcModel<S>& model,
                              AdamW<S>& opt, const RunConfig& rc,
                              const Rng& rng) {
  CheckpointData extra;
  extra.mel_mean = model.mel_mean;
  extra.mel_std = model.mel_std;
  extra.rng_counter = rng.counter();
  extra.config_json = run_config_to_string(rc);
  save_checkpoint(path, model.store, &opt, extra);
}

// Runs optimization from the optimizer's current step count up to
// rc.train_steps, appending one loss row per log interval and writing a
// rolling checkpoint. Resume restores the identical rng counter, so a split
// run retraces the unsplit batch sequence.
template <typename S>
void train_loop(SvcModel<S>& model, const ToyDataset& ds, const RunConfig& rc,
                const std::string& run_dir, AdamW<S>& opt, Rng& rng,
                std::ostream* console) {
  model.mel_mean = ds.mel_mean;
  model.mel_std = ds.mel_std;
  std::filesystem::create_directories(run_dir);
  const std::string log_path = run_dir + "/train_log.txt";
  const std::string ckpt_path = run_dir + "/checkpoint.bin";
  std::ofstream log(log_path, std::ios::app);
  check(log.good(), "train_loop: cannot open " + log_path);

  const long start = opt.step_count();
  for (long step = start + 1; step <= rc.train_steps; ++step) {
    const LossBreakdown b = train_step(model, ds, rc, opt, rng);
    if (step == 1 || step % rc.log_every == 0 || step == rc.train_steps) {
      const std::string line = format_log_line(static_cast<int>(step), b);
      log << line << "\n";
      log.flush();
      if (console) (*console) << line << "\n";
    }
    if (step % rc.checkpoint_every == 0 || step == rc.train_steps)
      save_training_checkpoint(ckpt_path, model, opt, rc, rng);
  }
}

}  // namespace hqsvc
