#pragma once

#include <string>
#include <vector>

#include "hqsvc/common.hpp"
#include "hqsvc/nn.hpp"
#include "hqsvc/ops.hpp"
#include "hqsvc/tensor.hpp"

namespace hqsvc {

struct EvaConfig {
  int width = 256;
  int heads = 8;
  int conv_kernel = 7;
  int ffn_mult = 2;
  int content_in = 32;  // raw content feature width
  int spk_in = 96;      // raw pooled speaker feature width
};

template <typename S>
struct EmbeddingSet {
  Tensor<S> e_spk;  // [1, W]
  Tensor<S> e_f0, e_vol, e_pha;  // [T, W]
  Tensor<S> e_sty;  // [T, W], time-broadcast residual
  Tensor<S> e_cat;  // [T, 4W], pre-compression concat
  Tensor<S> e_s;    // [T, W]
  Tensor<S> e_c;    // [T, W]
  Tensor<S> fused;  // [T, W], modulated content before refinement
  Tensor<S> e;      // [T, W], fused output
};

template <typename S>
struct SfpOutput {
  Tensor<S> mu;   // [1, 1]
  Tensor<S> var;  // [1, 1], softplus-constrained
};

// Speaker-to-pitch statistics head: shared feature layer, then independent
// mean and variance branches.
template <typename S>
class SfpNet {
 public:
  SfpNet() = default;
  SfpNet(ParamStore<S>& ps, const std::string& name, int width)
      : shared_(ps, name + ".shared", width, width),
        mean_head_(ps, name + ".mean", width, 1),
        var_head_(ps, name + ".var", width, 1) {}

  SfpOutput<S> operator()(Tensor<S> e_spk) const {
    auto h = silu(shared_(e_spk));
    SfpOutput<S> out;
    out.mu = mean_head_(h);
    out.var = softplus(var_head_(h));
    return out;
  }

 private:
  Linear<S> shared_, mean_head_, var_head_;
};

// Voice-adaptation encoder: per-feature embedders, residual style vector,
// concatenated style compression, FiLM fusion of the content stream, and a
// Conformer refinement block.
template <typename S>
class EvaNet {
 public:
  EvaNet() = default;
  EvaNet(ParamStore<S>& ps, const std::string& name, const EvaConfig& cfg)
      : cfg_(cfg),
        content_proj_(ps, name + ".content_proj", cfg.content_in, cfg.width),
        spk_proj_(ps, name + ".spk_proj", cfg.spk_in, cfg.width),
        content_conv_(ps, name + ".content_conv", cfg.width, cfg.width, 3),
        content_norm_(ps, name + ".content_norm", cfg.width),
        embed_spk_(ps, name + ".embed_spk", cfg.width, cfg.width, cfg.width),
        embed_f0_(ps, name + ".embed_f0", 1, cfg.width, cfg.width),
        embed_vol_(ps, name + ".embed_vol", 1, cfg.width, cfg.width),
        embed_pha_(ps, name + ".embed_pha", 2, cfg.width, cfg.width),
        style_compress_(ps, name + ".style_compress", 4 * cfg.width,
                        cfg.width, 1),
        film_alpha_(ps, name + ".film_alpha", cfg.width, cfg.width),
        film_beta_(ps, name + ".film_beta", cfg.width, cfg.width),
        conformer_(ps, name + ".conformer", cfg.width, cfg.heads,
                   cfg.conv_kernel, cfg.ffn_mult) {}

  const EvaConfig& config() const { return cfg_; }

  // x_con_raw [T, content_in], spk_raw [1, spk_in], x_f0/vol [T, 1],
  // pha [T, 2] as (sin, cos) of the accumulated phase.
  EmbeddingSet<S> operator()(Tensor<S> x_con_raw, Tensor<S> spk_raw,
                             Tensor<S> x_f0, Tensor<S> vol,
                             Tensor<S> pha) const {
    const int T = x_con_raw.rows();
    check(spk_raw.rows() == 1, "EvaNet: spk_raw must be one row");
    check(x_f0.rows() == T && vol.rows() == T && pha.rows() == T,
          "EvaNet: frame counts disagree");

    EmbeddingSet<S> es;
    auto x_con = content_proj_(x_con_raw);
    es.e_c = content_norm_(content_conv_(x_con));

    auto x_spk = spk_proj_(spk_raw);
    es.e_spk = embed_spk_(x_spk);
    es.e_f0 = embed_f0_(x_f0);
    es.e_vol = embed_vol_(vol);
    es.e_pha = embed_pha_(pha);
    es.e_sty = broadcast_rows(sub(x_spk, es.e_spk), T);

    auto spk_time = broadcast_rows(es.e_spk, T);
    es.e_cat = concat_cols<S>(
        {add(spk_time, es.e_f0), es.e_sty, es.e_vol, es.e_pha});
    es.e_s = style_compress_(es.e_cat);

    auto alpha = film_alpha_(es.e_s);
    auto beta = film_beta_(es.e_s);
    es.fused = add(mul(alpha, es.e_c), beta);
    es.e = conformer_(es.fused);
    return es;
  }

 private:
  EvaConfig cfg_;
  Linear<S> content_proj_, spk_proj_;
  Conv1dLayer<S> content_conv_;
  LayerNormLayer<S> content_norm_;
  Mlp<S> embed_spk_, embed_f0_, embed_vol_, embed_pha_;
  Conv1dLayer<S> style_compress_;
  Linear<S> film_alpha_, film_beta_;
  ConformerBlock<S> conformer_;
};

}  // namespace hqsvc
