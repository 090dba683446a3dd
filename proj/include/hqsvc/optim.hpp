#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "hqsvc/common.hpp"
#include "hqsvc/nn.hpp"

namespace hqsvc {

template <typename S>
struct AdamWConfig {
  S lr = static_cast<S>(1.5e-4);
  S beta1 = static_cast<S>(0.9);
  S beta2 = static_cast<S>(0.999);
  S eps = static_cast<S>(1e-8);
  S weight_decay = static_cast<S>(0);
  S clip_norm = static_cast<S>(1.0);  // 0 disables clipping
};

// Decoupled-decay Adam over a ParamStore. Missing gradient buffers count as
// zero. Gradients are clipped jointly by global L2 norm before the update.
template <typename S>
class AdamW {
 public:
  struct Slot {
    std::vector<S> m, v;
  };

  AdamW(ParamStore<S>& store, AdamWConfig<S> cfg)
      : store_(&store), cfg_(cfg) {}

  void step() {
    double sq = 0.0;
    for (auto& [name, p] : store_->all()) {
      const auto& g = p.node()->grad;
      for (S x : g) {
        check(std::isfinite(static_cast<double>(x)),
              "AdamW: non-finite gradient in " + name);
        sq += static_cast<double>(x) * x;
      }
    }
    const double norm = std::sqrt(sq);
    S gscale = S(1);
    if (cfg_.clip_norm > S(0) && norm > static_cast<double>(cfg_.clip_norm))
      gscale = static_cast<S>(static_cast<double>(cfg_.clip_norm) / norm);

    ++t_;
    const S bc1 = S(1) - static_cast<S>(std::pow(cfg_.beta1, t_));
    const S bc2 = S(1) - static_cast<S>(std::pow(cfg_.beta2, t_));
    for (const auto& [name, p] : store_->all()) {
      Tensor<S> handle = p;  // shares the node
      auto& slot = state_[name];
      if (slot.m.size() != handle.numel()) {
        slot.m.assign(handle.numel(), S(0));
        slot.v.assign(handle.numel(), S(0));
      }
      auto& val = handle.value();
      const auto& gbuf = handle.node()->grad;
      for (std::size_t i = 0; i < val.size(); ++i) {
        const S g = (i < gbuf.size() ? gbuf[i] : S(0)) * gscale;
        slot.m[i] = cfg_.beta1 * slot.m[i] + (S(1) - cfg_.beta1) * g;
        slot.v[i] = cfg_.beta2 * slot.v[i] + (S(1) - cfg_.beta2) * g * g;
        const S mhat = slot.m[i] / bc1;
        const S vhat = slot.v[i] / bc2;
        val[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                             cfg_.weight_decay * val[i]);
      }
    }
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  std::map<std::string, Slot>& state() { return state_; }
  const AdamWConfig<S>& config() const { return cfg_; }

 private:
  ParamStore<S>* store_;
  AdamWConfig<S> cfg_;
  std::map<std::string, Slot> state_;
  long t_ = 0;
};

}  // namespace hqsvc
