// Command-line front end: corpus generation, feature extraction, training,
// conversion, super-resolution, evaluation, and sampler benchmarking.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hqsvc/hqsvc.hpp"

namespace {

std::vector<int> parse_id_list(const std::string& text) {
  std::vector<int> ids;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) ids.push_back(std::stoi(tok));
  return ids;
}

int run_gen_corpus(const std::string& out_dir, int singers, int utterances,
                   std::uint64_t seed, double min_dur, double max_dur) {
  hqsvc::ToyCorpusSpec spec;
  spec.n_singers = singers;
  spec.utterances_per_singer = utterances;
  spec.seed = seed;
  spec.min_duration = min_dur;
  spec.max_duration = max_dur;
  const auto manifest = hqsvc::generate_toy_corpus(spec, out_dir);
  std::cout << "wrote " << manifest.utterances.size() << " utterances for "
            << singers << " singers to " << out_dir << "\n";
  return 0;
}

int run_extract(const std::string& in_wav, const std::string& features_out,
                const std::string& mel_out) {
  const hqsvc::AudioBuffer buf = hqsvc::read_wav(in_wav);
  const hqsvc::AudioBuffer wide =
      buf.sample_rate == hqsvc::kMelSampleRate
          ? buf
          : hqsvc::resample(buf, hqsvc::kMelSampleRate);
  if (!features_out.empty()) {
    const auto fb = hqsvc::extract_features(wide);
    hqsvc::save_features(fb, features_out);
    std::cout << "features: " << fb.frames.n_frames << " frames -> "
              << features_out << "\n";
  }
  if (!mel_out.empty()) {
    const auto mel = hqsvc::mel_spectrogram(wide);
    hqsvc::save_mel(mel, mel_out);
    std::cout << "mel: " << mel.n_frames << " frames -> " << mel_out << "\n";
  }
  return 0;
}

int run_train(const std::string& corpus_dir, const std::string& run_dir,
              const std::string& config_path, const std::string& speakers,
              int steps, std::uint64_t seed, bool resume) {
  hqsvc::RunConfig rc = config_path.empty()
                            ? hqsvc::desk_run_config()
                            : hqsvc::load_run_config(config_path);
  if (steps > 0) rc.train_steps = steps;
  if (seed != 0) rc.seed = seed;

  const std::string ckpt_path = run_dir + "/checkpoint.bin";
  std::uint64_t rng_counter = 0;
  long opt_step = 0;
  hqsvc::CheckpointData ckpt;
  const bool resuming = resume && std::filesystem::exists(ckpt_path);
  if (resuming) {
    ckpt = hqsvc::read_checkpoint(ckpt_path);
    const int keep_steps = rc.train_steps;
    rc = hqsvc::run_config_from_string(ckpt.config_json);
    if (steps > 0) rc.train_steps = keep_steps;
    rng_counter = ckpt.rng_counter;
    opt_step = ckpt.opt_step;
  }

  const auto manifest = hqsvc::load_manifest(corpus_dir + "/manifest.json");
  const auto ds = hqsvc::load_dataset(corpus_dir, manifest,
                                      parse_id_list(speakers));
  hqsvc::SvcModel<float> model(hqsvc::model_config_from_run(rc), rc.seed);
  hqsvc::AdamWConfig<float> ocfg;
  ocfg.lr = static_cast<float>(rc.lr);
  ocfg.beta1 = static_cast<float>(rc.adam_beta1);
  ocfg.beta2 = static_cast<float>(rc.adam_beta2);
  ocfg.eps = static_cast<float>(rc.adam_eps);
  ocfg.weight_decay = static_cast<float>(rc.weight_decay);
  ocfg.clip_norm = static_cast<float>(rc.clip_norm);
  hqsvc::AdamW<float> opt(model.store, ocfg);
  hqsvc::Rng rng(rc.seed, 0x74726e00ull);
  if (resuming) {
    hqsvc::apply_checkpoint(ckpt, model.store, &opt);
    opt.set_step_count(opt_step);
    rng.set_counter(rng_counter);
    std::cout << "resumed at step " << opt_step << "\n";
  }

  std::filesystem::create_directories(run_dir);
  hqsvc::save_run_config(rc, run_dir + "/config.json");
  hqsvc::train_loop(model, ds, rc, run_dir, opt, rng, &std::cout);
  std::cout << "checkpoint: " << ckpt_path << "\n";
  return 0;
}

int run_convert(const std::string& ckpt, const std::string& source,
                const std::string& target, const std::string& out,
                const std::string& sampler, int speedup, double shallow) {
  auto lm = hqsvc::load_model<float>(ckpt);
  auto opt = hqsvc::ConvertOptions::from_run(lm.rc);
  if (!sampler.empty()) opt.sampler = sampler;
  if (speedup > 0) opt.speedup = speedup;
  if (shallow > 0.0) opt.shallow = shallow;
  const auto src = hqsvc::read_wav(source);
  const auto tgt = hqsvc::read_wav(target);
  const auto res = hqsvc::convert_audio(*lm.model, src, tgt, opt);
  hqsvc::write_wav(res.audio, out, hqsvc::WavEncoding::kFloat32);
  std::cout << "pitch shift (transformed domain): " << res.delta_x_f0
            << "\nwrote " << out << " (" << res.audio.duration_s()
            << " s)\n";
  return 0;
}

int run_sr(const std::string& ckpt, const std::string& in,
           const std::string& out, const std::string& sampler, int speedup,
           double shallow) {
  auto lm = hqsvc::load_model<float>(ckpt);
  auto opt = hqsvc::ConvertOptions::from_run(lm.rc);
  if (!sampler.empty()) opt.sampler = sampler;
  if (speedup > 0) opt.speedup = speedup;
  if (shallow > 0.0) opt.shallow = shallow;
  const auto buf = hqsvc::read_wav(in);
  const auto res = hqsvc::super_resolve_audio(*lm.model, buf, opt);
  hqsvc::write_wav(res.audio, out, hqsvc::WavEncoding::kFloat32);
  std::cout << "wrote " << out << " at " << res.audio.sample_rate << " Hz ("
            << res.audio.duration_s() << " s)\n";
  return 0;
}

int run_eval(const std::string& pairs_path, const std::string& out,
             const std::string& ckpt) {
  const auto pairs = hqsvc::load_pairs(pairs_path);
  std::shared_ptr<hqsvc::SvcModel<float>> model;
  if (!ckpt.empty()) model = hqsvc::load_model<float>(ckpt).model;

  std::vector<std::string> names;
  std::vector<hqsvc::EvalReport> rows;
  for (const auto& p : pairs) {
    const auto ref = hqsvc::read_wav(p.ref_path);
    const auto hyp = hqsvc::read_wav(p.hyp_path);
    names.push_back(std::filesystem::path(p.ref_path).stem().string() + ":" +
                    std::filesystem::path(p.hyp_path).stem().string());
    rows.push_back(hqsvc::evaluate_pair(model.get(), ref, hyp));
  }
  const std::string report = hqsvc::format_eval_report(names, rows);
  if (out.empty()) {
    std::cout << report;
  } else {
    std::ofstream f(out);
    hqsvc::check(f.good(), "eval: cannot open " + out);
    f << report;
    std::cout << "wrote " << out << " (" << rows.size() << " rows)\n";
  }
  return 0;
}

int run_bench(const std::string& ckpt, const std::string& source,
              const std::string& target, const std::string& out) {
  auto lm = hqsvc::load_model<float>(ckpt);
  const auto src = hqsvc::read_wav(source);
  const auto tgt = hqsvc::read_wav(target);
  const auto rows = hqsvc::bench_samplers(
      *lm.model, src, tgt, hqsvc::ConvertOptions::from_run(lm.rc));
  const std::string table = hqsvc::format_bench_table(rows);
  if (out.empty()) {
    std::cout << table;
  } else {
    std::ofstream f(out);
    hqsvc::check(f.good(), "bench: cannot open " + out);
    f << table;
    std::cout << "wrote " << out << " (" << rows.size() << " rows)\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zero-shot singing voice conversion"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-corpus", "generate the toy corpus");
  std::string gen_out = "corpus";
  int gen_singers = 5, gen_utts = 10;
  std::uint64_t gen_seed = 1234;
  double gen_min = 2.2, gen_max = 3.2;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--singers", gen_singers, "singer count");
  gen->add_option("--utterances", gen_utts, "utterances per singer");
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--min-duration", gen_min, "minimum utterance seconds");
  gen->add_option("--max-duration", gen_max, "maximum utterance seconds");

  auto* ext = app.add_subcommand("extract", "extract features from a wav");
  std::string ext_in, ext_feat, ext_mel;
  ext->add_option("--in", ext_in, "input wav")->required();
  ext->add_option("--features", ext_feat, "feature output path");
  ext->add_option("--mel", ext_mel, "mel output path");

  auto* trn = app.add_subcommand("train", "train on a corpus");
  std::string trn_corpus = "corpus", trn_run = "run", trn_config;
  std::string trn_speakers = "0,1,2,3";
  int trn_steps = 0;
  std::uint64_t trn_seed = 0;
  bool trn_resume = false;
  trn->add_option("--corpus", trn_corpus, "corpus directory");
  trn->add_option("--run", trn_run, "run directory");
  trn->add_option("--config", trn_config, "run config JSON");
  trn->add_option("--speakers", trn_speakers, "comma-separated speaker ids");
  trn->add_option("--steps", trn_steps, "override step budget");
  trn->add_option("--seed", trn_seed, "override seed");
  trn->add_flag("--resume", trn_resume, "resume from run checkpoint");

  auto* cnv = app.add_subcommand("convert", "convert source to target voice");
  std::string cnv_ckpt, cnv_src, cnv_tgt, cnv_out = "converted.wav";
  std::string cnv_sampler;
  int cnv_speedup = 0;
  double cnv_shallow = 0.0;
  cnv->add_option("--checkpoint", cnv_ckpt, "model checkpoint")->required();
  cnv->add_option("--source", cnv_src, "source wav")->required();
  cnv->add_option("--target", cnv_tgt, "target reference wav")->required();
  cnv->add_option("--out", cnv_out, "output wav");
  cnv->add_option("--sampler", cnv_sampler, "ddim | dpmpp | unipc");
  cnv->add_option("--speedup", cnv_speedup, "sampling speed-up factor");
  cnv->add_option("--shallow", cnv_shallow,
                  "fraction of the diffusion schedule to walk (0,1]");

  auto* sr = app.add_subcommand("sr", "super-resolve a low-rate wav");
  std::string sr_ckpt, sr_in, sr_out = "sr.wav", sr_sampler;
  int sr_speedup = 0;
  double sr_shallow = 0.0;
  sr->add_option("--checkpoint", sr_ckpt, "model checkpoint")->required();
  sr->add_option("--in", sr_in, "input wav")->required();
  sr->add_option("--out", sr_out, "output wav");
  sr->add_option("--sampler", sr_sampler, "ddim | dpmpp | unipc");
  sr->add_option("--speedup", sr_speedup, "sampling speed-up factor");
  sr->add_option("--shallow", sr_shallow,
                 "fraction of the diffusion schedule to walk (0,1]");

  auto* evl = app.add_subcommand("eval", "evaluate ref/hyp wav pairs");
  std::string evl_pairs, evl_out, evl_ckpt;
  evl->add_option("--pairs", evl_pairs, "pairs manifest")->required();
  evl->add_option("--out", evl_out, "report path (stdout if empty)");
  evl->add_option("--checkpoint", evl_ckpt,
                  "model checkpoint for embedding similarity");

  auto* bch = app.add_subcommand("bench", "sampler grid benchmark");
  std::string bch_ckpt, bch_src, bch_tgt, bch_out;
  bch->add_option("--checkpoint", bch_ckpt, "model checkpoint")->required();
  bch->add_option("--source", bch_src, "source wav")->required();
  bch->add_option("--target", bch_tgt, "target reference wav")->required();
  bch->add_option("--out", bch_out, "report path (stdout if empty)");

  try {
    app.parse(argc, argv);
    if (gen->parsed())
      return run_gen_corpus(gen_out, gen_singers, gen_utts, gen_seed, gen_min,
                            gen_max);
    if (ext->parsed()) {
      if (ext_feat.empty() && ext_mel.empty()) {
        std::cerr << "extract: need --features and/or --mel\n";
        return 1;
      }
      return run_extract(ext_in, ext_feat, ext_mel);
    }
    if (trn->parsed())
      return run_train(trn_corpus, trn_run, trn_config, trn_speakers,
                       trn_steps, trn_seed, trn_resume);
    if (cnv->parsed())
      return run_convert(cnv_ckpt, cnv_src, cnv_tgt, cnv_out, cnv_sampler,
                         cnv_speedup, cnv_shallow);
    if (sr->parsed())
      return run_sr(sr_ckpt, sr_in, sr_out, sr_sampler, sr_speedup,
                    sr_shallow);
    if (evl->parsed()) return run_eval(evl_pairs, evl_out, evl_ckpt);
    if (bch->parsed()) return run_bench(bch_ckpt, bch_src, bch_tgt, bch_out);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const hqsvc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 3;
  }
}
