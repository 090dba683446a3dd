#pragma once

#include <cmath>
#include <vector>

#include "hqsvc/common.hpp"
#include "hqsvc/diffusion.hpp"
#include "hqsvc/dsp_ops.hpp"
#include "hqsvc/eva.hpp"
#include "hqsvc/ops.hpp"
#include "hqsvc/tensor.hpp"

namespace hqsvc {

struct LossBreakdown {
  double l_ddsp = 0.0;
  double l_diff = 0.0;
  double l_spk = 0.0;
  double l_f0 = 0.0;
  double l_total = 0.0;
};

// |mu - mu_hat| + |var - var_hat| against fixed utterance statistics.
template <typename S>
Tensor<S> sfp_loss(const SfpOutput<S>& pred, S mu_target, S var_target) {
  auto mu_t = Tensor<S>::scalar(mu_target);
  auto var_t = Tensor<S>::scalar(var_target);
  return add(l1(pred.mu, mu_t), l1(pred.var, var_t));
}

// Voiced-frame mean and variance of a transformed pitch sequence; returns
// false when fewer than one voiced frame exists.
inline bool voiced_f0_stats(const std::vector<float>& x_f0,
                            const std::vector<float>& voiced, double* mean,
                            double* var) {
  double m = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < x_f0.size(); ++i)
    if (voiced[i] > 0.5f) {
      m += x_f0[i];
      ++n;
    }
  if (n == 0) return false;
  m /= n;
  double v = 0.0;
  for (std::size_t i = 0; i < x_f0.size(); ++i)
    if (voiced[i] > 0.5f) {
      const double d = x_f0[i] - m;
      v += d * d;
    }
  *mean = m;
  *var = v / n;
  return true;
}

template <typename S>
Tensor<S> ddsp_loss(Tensor<S> mel_hat, Tensor<S> mel_target) {
  return mse(mel_hat, mel_target);
}

// One Monte Carlo draw of the noise-prediction objective: uniform timestep,
// Gaussian noise, and the corresponding noised state.
struct DiffusionDraw {
  int t = 0;
  std::vector<float> eps;
  std::vector<float> xt;
};

inline DiffusionDraw diffusion_draw(const std::vector<float>& x0,
                                    const DiffusionSchedule& sched, Rng& rng) {
  DiffusionDraw d;
  d.t = static_cast<int>(rng.below(sched.T)) + 1;
  d.eps.resize(x0.size());
  for (auto& v : d.eps) v = static_cast<float>(rng.normal());
  d.xt = forward_diffuse(x0, d.t, d.eps, sched);
  return d;
}

// Single-sample estimate of the noise-prediction objective: one uniform t,
// one Gaussian draw, squared error of the denoiser against that draw.
template <typename S>
Tensor<S> diffusion_loss(const Denoiser<S>& denoiser,
                         const std::vector<float>& x0_normalized, int n_frames,
                         Tensor<S> e, const DiffusionSchedule& sched,
                         Rng& rng) {
  const int width = denoiser.config().input_dim;
  check(x0_normalized.size() ==
            static_cast<std::size_t>(n_frames) * width,
        "diffusion_loss: x0 shape mismatch");
  const auto d = diffusion_draw(x0_normalized, sched, rng);

  auto xt_t = Tensor<S>::from_vector(std::vector<S>(d.xt.begin(), d.xt.end()),
                                     n_frames, width, false);
  auto eps_t = Tensor<S>::from_vector(
      std::vector<S>(d.eps.begin(), d.eps.end()), n_frames, width, false);
  return mse(denoiser(xt_t, d.t, e), eps_t);
}

template <typename S>
Tensor<S> total_loss(Tensor<S> l_ddsp, Tensor<S> l_diff, Tensor<S> l_spk,
                     Tensor<S> l_f0) {
  auto sum = add(add(l_ddsp, l_diff), add(l_spk, l_f0));
  check(std::isfinite(static_cast<double>(sum.item())),
        "total_loss: non-finite component");
  return sum;
}

}  // namespace hqsvc
