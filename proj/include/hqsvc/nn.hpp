#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "hqsvc/common.hpp"
#include "hqsvc/ops.hpp"
#include "hqsvc/tensor.hpp"

namespace hqsvc {

namespace detail {
inline std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}
}  // namespace detail

// Named parameter registry. Each parameter draws from an rng stream keyed by
// its name, so initialization does not depend on construction order.
template <typename S>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  Tensor<S> uniform_init(const std::string& name, int rows, int cols,
                         int fan_in, int fan_out) {
    const double lim = std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng(seed_, detail::name_hash(name));
    std::vector<S> v(static_cast<std::size_t>(rows) * cols);
    for (auto& x : v) x = static_cast<S>(rng.uniform(-lim, lim));
    return insert(name, Tensor<S>::from_vector(v, rows, cols, true));
  }

  Tensor<S> const_init(const std::string& name, int rows, int cols, S fill) {
    std::vector<S> v(static_cast<std::size_t>(rows) * cols, fill);
    return insert(name, Tensor<S>::from_vector(v, rows, cols, true));
  }

  Tensor<S> find(const std::string& name) const {
    auto it = params_.find(name);
    check(it != params_.end(), "ParamStore: unknown parameter " + name);
    return it->second;
  }

  const std::map<std::string, Tensor<S>>& all() const { return params_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : params_) t.clear_grad();
  }

 private:
  Tensor<S> insert(const std::string& name, Tensor<S> t) {
    check(params_.find(name) == params_.end(),
          "ParamStore: duplicate parameter " + name);
    params_.emplace(name, t);
    return t;
  }

  std::uint64_t seed_;
  std::map<std::string, Tensor<S>> params_;
};

template <typename S>
struct Linear {
  Tensor<S> w;  // [out, in]
  Tensor<S> b;  // [1, out] when biased

  Linear() = default;
  Linear(ParamStore<S>& ps, const std::string& name, int in, int out,
         bool bias = true) {
    w = ps.uniform_init(name + ".w", out, in, in, out);
    if (bias) b = ps.const_init(name + ".b", 1, out, S(0));
  }

  Tensor<S> operator()(Tensor<S> x) const {
    auto y = matmul(x, w, false, true);
    return b.defined() ? add_bias(y, b) : y;
  }
};

// Two linear layers with SiLU between them.
template <typename S>
struct Mlp {
  Linear<S> in;
  Linear<S> out;

  Mlp() = default;
  Mlp(ParamStore<S>& ps, const std::string& name, int d_in, int d_hidden,
      int d_out)
      : in(ps, name + ".in", d_in, d_hidden),
        out(ps, name + ".out", d_hidden, d_out) {}

  Tensor<S> operator()(Tensor<S> x) const { return out(silu(in(x))); }
};

template <typename S>
struct Conv1dLayer {
  Tensor<S> w;  // [out, kernel*in]
  Tensor<S> b;
  int kernel = 1;
  int dilation = 1;

  Conv1dLayer() = default;
  Conv1dLayer(ParamStore<S>& ps, const std::string& name, int in, int out,
              int kernel_size, int dil = 1, bool bias = true)
      : kernel(kernel_size), dilation(dil) {
    w = ps.uniform_init(name + ".w", out, kernel_size * in, kernel_size * in,
                        out);
    if (bias) b = ps.const_init(name + ".b", 1, out, S(0));
  }

  Tensor<S> operator()(Tensor<S> x) const {
    return conv1d(x, w, b, kernel, dilation);
  }
};

template <typename S>
struct LayerNormLayer {
  Tensor<S> gamma;
  Tensor<S> beta;

  LayerNormLayer() = default;
  LayerNormLayer(ParamStore<S>& ps, const std::string& name, int width) {
    gamma = ps.const_init(name + ".g", 1, width, S(1));
    beta = ps.const_init(name + ".b", 1, width, S(0));
  }

  Tensor<S> operator()(Tensor<S> x) const { return layer_norm(x, gamma, beta); }
};

// Single Conformer block: half-step feed-forwards around self-attention and
// a gated convolution module, pre-norm residuals, final layer norm.
template <typename S>
struct ConformerBlock {
  int heads = 8;
  LayerNormLayer<S> norm_ffn1, norm_attn, norm_conv, norm_ffn2, norm_out;
  Linear<S> ffn1_in, ffn1_out, ffn2_in, ffn2_out;
  Linear<S> wq, wk, wv, wo;
  Linear<S> conv_pw1, conv_pw2;
  Tensor<S> conv_dw;  // [width, kernel]
  int conv_kernel = 7;

  ConformerBlock() = default;
  ConformerBlock(ParamStore<S>& ps, const std::string& name, int width,
                 int n_heads, int kernel, int ffn_mult)
      : heads(n_heads),
        norm_ffn1(ps, name + ".ln_ffn1", width),
        norm_attn(ps, name + ".ln_attn", width),
        norm_conv(ps, name + ".ln_conv", width),
        norm_ffn2(ps, name + ".ln_ffn2", width),
        norm_out(ps, name + ".ln_out", width),
        ffn1_in(ps, name + ".ffn1_in", width, width * ffn_mult),
        ffn1_out(ps, name + ".ffn1_out", width * ffn_mult, width),
        ffn2_in(ps, name + ".ffn2_in", width, width * ffn_mult),
        ffn2_out(ps, name + ".ffn2_out", width * ffn_mult, width),
        wq(ps, name + ".wq", width, width),
        wk(ps, name + ".wk", width, width),
        wv(ps, name + ".wv", width, width),
        wo(ps, name + ".wo", width, width),
        conv_pw1(ps, name + ".conv_pw1", width, 2 * width),
        conv_pw2(ps, name + ".conv_pw2", width, width),
        conv_kernel(kernel) {
    check(width % n_heads == 0, "ConformerBlock: width not divisible by heads");
    conv_dw = ps.uniform_init(name + ".conv_dw", width, kernel, kernel, 1);
  }

  Tensor<S> operator()(Tensor<S> x) const {
    auto h = norm_ffn1(x);
    x = add(x, scale(ffn1_out(silu(ffn1_in(h))), S(0.5)));

    h = norm_attn(x);
    x = add(x, wo(scaled_dot_attention(wq(h), wk(h), wv(h), heads)));

    h = norm_conv(x);
    h = glu_cols(conv_pw1(h));
    h = depthwise_conv1d(h, conv_dw, conv_kernel);
    x = add(x, conv_pw2(silu(h)));

    h = norm_ffn2(x);
    x = add(x, scale(ffn2_out(silu(ffn2_in(h))), S(0.5)));
    return norm_out(x);
  }
};

}  // namespace hqsvc
