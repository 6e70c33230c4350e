#pragma once

#include "ijepa/core.hpp"
#include "ijepa/nn.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace ijepa {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // When false, 1-row tensors (biases, norm affines, the mask token) are not decayed.
  bool decay_norm_and_bias = false;
};

template <class P>
struct AdamWState {
  P m;
  P v;
  long step = 0;

  static AdamWState for_params(const P& params) { return {zeros_like(params), zeros_like(params), 0}; }
};

inline bool is_decayed(const std::string& name, Index rows, const AdamWConfig& cfg) {
  (void)name;
  return cfg.decay_norm_and_bias || rows > 1;
}

// Decoupled weight decay Adam:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   p <- p - lr * mhat / (sqrt(vhat) + eps) - lr * wd * p
template <class P>
void adamw_step(P& params, const P& grads, AdamWState<P>& state, double lr, double wd, const AdamWConfig& cfg) {
  using T = typename P::Scalar;
  auto tp = named_tensors(params);
  auto tg = named_tensors(grads);
  auto tm = named_tensors(state.m);
  auto tv = named_tensors(state.v);
  if (tp.size() != tg.size() || tp.size() != tm.size() || tp.size() != tv.size()) {
    throw CheckpointError(CheckpointErrorKind::kShape, "optimizer state does not match parameters");
  }
  for (std::size_t i = 0; i < tg.size(); ++i) {
    if (!tg[i].tensor->allFinite()) throw NumericalFailure("gradient of " + tg[i].name, -1);
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  for (std::size_t i = 0; i < tp.size(); ++i) {
    Mat<T>& p = *tp[i].tensor;
    const Mat<T>& g = *tg[i].tensor;
    Mat<T>& m = *tm[i].tensor;
    Mat<T>& v = *tv[i].tensor;
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    const T decay = is_decayed(tp[i].name, p.rows(), cfg) ? static_cast<T>(lr * wd) : T(0);
    const T step_lr = static_cast<T>(lr);
    const T c1 = static_cast<T>(1.0 / bc1);
    const T c2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(cfg.eps);
    p.array() -= step_lr * (m.array() * c1) / ((v.array() * c2).sqrt() + eps) + decay * p.array();
  }
}

}  // namespace ijepa
