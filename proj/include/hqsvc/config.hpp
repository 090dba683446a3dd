#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "hqsvc/common.hpp"
#include "hqsvc/diffusion.hpp"
#include "hqsvc/eva.hpp"

namespace hqsvc {

// Everything a run needs, serializable as JSON; from_json(to_json(c)) == c.
struct RunConfig {
  std::string profile = "desk";  // "desk" or "paper"
  std::uint64_t seed = 7;

  int eva_width = 128;
  int eva_heads = 4;
  int diffusion_steps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.06;

  int train_steps = 3000;
  int batch_utterances = 8;
  int singers_per_batch = 4;
  int crop_min = 24;
  int crop_max = 32;
  double lr = 1.5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  double infonce_tau = 0.1;
  int log_every = 25;
  int checkpoint_every = 500;

  std::string sampler = "dpmpp";
  int speedup = 10;  // sampling uses diffusion_steps / speedup steps
  int chunk_frames = 256;
  int chunk_overlap = 32;
  // Phase reconstruction converges by ~15 iterations on harmonic material
  // when seeded from the pitch contour; 20 keeps a margin.
  int griffin_lim_iters = 20;
};

inline RunConfig desk_run_config() { return RunConfig{}; }

inline RunConfig paper_run_config() {
  RunConfig c;
  c.profile = "paper";
  c.eva_width = 256;
  c.eva_heads = 8;
  return c;
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"profile", c.profile},
                     {"seed", c.seed},
                     {"eva_width", c.eva_width},
                     {"eva_heads", c.eva_heads},
                     {"diffusion_steps", c.diffusion_steps},
                     {"beta_start", c.beta_start},
                     {"beta_end", c.beta_end},
                     {"train_steps", c.train_steps},
                     {"batch_utterances", c.batch_utterances},
                     {"singers_per_batch", c.singers_per_batch},
                     {"crop_min", c.crop_min},
                     {"crop_max", c.crop_max},
                     {"lr", c.lr},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_eps", c.adam_eps},
                     {"weight_decay", c.weight_decay},
                     {"clip_norm", c.clip_norm},
                     {"infonce_tau", c.infonce_tau},
                     {"log_every", c.log_every},
                     {"checkpoint_every", c.checkpoint_every},
                     {"sampler", c.sampler},
                     {"speedup", c.speedup},
                     {"chunk_frames", c.chunk_frames},
                     {"chunk_overlap", c.chunk_overlap},
                     {"griffin_lim_iters", c.griffin_lim_iters}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  j.at("profile").get_to(c.profile);
  j.at("seed").get_to(c.seed);
  j.at("eva_width").get_to(c.eva_width);
  j.at("eva_heads").get_to(c.eva_heads);
  j.at("diffusion_steps").get_to(c.diffusion_steps);
  j.at("beta_start").get_to(c.beta_start);
  j.at("beta_end").get_to(c.beta_end);
  j.at("train_steps").get_to(c.train_steps);
  j.at("batch_utterances").get_to(c.batch_utterances);
  j.at("singers_per_batch").get_to(c.singers_per_batch);
  j.at("crop_min").get_to(c.crop_min);
  j.at("crop_max").get_to(c.crop_max);
  j.at("lr").get_to(c.lr);
  j.at("adam_beta1").get_to(c.adam_beta1);
  j.at("adam_beta2").get_to(c.adam_beta2);
  j.at("adam_eps").get_to(c.adam_eps);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("clip_norm").get_to(c.clip_norm);
  j.at("infonce_tau").get_to(c.infonce_tau);
  j.at("log_every").get_to(c.log_every);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
  j.at("sampler").get_to(c.sampler);
  j.at("speedup").get_to(c.speedup);
  j.at("chunk_frames").get_to(c.chunk_frames);
  j.at("chunk_overlap").get_to(c.chunk_overlap);
  j.at("griffin_lim_iters").get_to(c.griffin_lim_iters);
}

inline std::string run_config_to_string(const RunConfig& c) {
  nlohmann::json j = c;
  return j.dump(2);
}

inline RunConfig run_config_from_string(const std::string& text) {
  return nlohmann::json::parse(text).get<RunConfig>();
}

inline void save_run_config(const RunConfig& c, const std::string& path) {
  std::ofstream f(path);
  check(f.good(), "save_run_config: cannot open " + path);
  f << run_config_to_string(c) << "\n";
  check(f.good(), "save_run_config: write failed");
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "load_run_config: cannot open " + path);
  nlohmann::json j;
  f >> j;
  return j.get<RunConfig>();
}

}  // namespace hqsvc
