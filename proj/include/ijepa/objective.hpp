#pragma once

#include "ijepa/backbone.hpp"
#include "ijepa/core.hpp"
#include "ijepa/masking.hpp"
#include "ijepa/nn.hpp"
#include "ijepa/patch.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <string>
#include <vector>

namespace ijepa {

enum class TargetMaskMode { kOutput, kInput };

inline std::string to_string(TargetMaskMode m) { return m == TargetMaskMode::kOutput ? "output" : "input"; }

inline TargetMaskMode parse_target_mask_mode(const std::string& s) {
  if (s == "output") return TargetMaskMode::kOutput;
  if (s == "input") return TargetMaskMode::kInput;
  throw ConfigError("unknown target mask mode '" + s + "' (expected output|input)");
}

// Regression targets from the target encoder. Output mode runs one forward
// over every patch and selects each block's rows; input mode runs one
// forward per block over only that block's patches. Nothing here records
// activations, so no gradient can reach the target encoder.
template <class T>
std::vector<TokenSequence<T>> compute_targets(const EncoderParams<T>& target, const ViTConfig& cfg,
                                              const Mat<T>& patch_vectors, const std::vector<Mask>& masks,
                                              const Mat<T>& pos_table, TargetMaskMode mode) {
  std::vector<TokenSequence<T>> out;
  out.reserve(masks.size());
  for (const Mask& m : masks) {
    if (m.empty()) throw ContractViolation("empty target mask");
    validate(m);
  }
  if (mode == TargetMaskMode::kOutput) {
    const Mask all = full_mask(masks.empty() ? cfg.grid() : masks.front().grid);
    const Mat<T> full = encode_visible<T>(target, cfg, patch_vectors, all.indices, pos_table, nullptr, "target encoder");
    for (const Mask& m : masks) out.push_back({m.indices, gather_rows(full, m.indices)});
  } else {
    for (const Mask& m : masks) {
      out.push_back({m.indices, encode_visible<T>(target, cfg, patch_vectors, m.indices, pos_table, nullptr,
                                                  "target encoder")});
    }
  }
  return out;
}

struct LossReport {
  double total = 0.0;
  std::vector<double> per_block;
  int n_predicted_patches = 0;
};

struct LossOptions {
  bool normalize_per_patch = false;
};

namespace detail {

template <class T>
void check_pair(const TokenSequence<T>& p, const TokenSequence<T>& t) {
  if (p.indices != t.indices) throw ContractViolation("prediction and target index sets differ");
  if (p.embeddings.rows() != t.embeddings.rows() || p.embeddings.cols() != t.embeddings.cols()) {
    throw ContractViolation("prediction and target shapes differ");
  }
}

}  // namespace detail

// total = (1/M) * sum_i sum_{j in B_i} ||pred_j - target_j||^2.
// When `grads` is non-null it receives d(total)/d(prediction) per block.
template <class T>
LossReport compute_loss(const std::vector<TokenSequence<T>>& predictions, const std::vector<TokenSequence<T>>& targets,
                        const LossOptions& opt = {}, std::vector<Mat<T>>* grads = nullptr) {
  if (predictions.size() != targets.size() || predictions.empty()) {
    throw ContractViolation("need the same non-zero number of prediction and target blocks");
  }
  const double m = static_cast<double>(predictions.size());
  LossReport r;
  if (grads != nullptr) grads->clear();
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    detail::check_pair(predictions[i], targets[i]);
    const Mat<T> diff = predictions[i].embeddings - targets[i].embeddings;
    const double n = static_cast<double>(diff.rows());
    double block = 0.0;
    for (Index k = 0; k < diff.size(); ++k) block += static_cast<double>(diff.data()[k]) * diff.data()[k];
    const double norm = opt.normalize_per_patch ? 1.0 / n : 1.0;
    r.per_block.push_back(block * norm);
    r.total += block * norm;
    r.n_predicted_patches += static_cast<int>(diff.rows());
    if (grads != nullptr) grads->push_back(diff * static_cast<T>(2.0 * norm / m));
  }
  r.total /= m;
  return r;
}

// Linear head used by the pixel-space ablation: backbone width -> patch vector.
template <class T>
struct PixelHead {
  using Scalar = T;
  Mat<T> w;
  Mat<T> b;

  static PixelHead init(int width, int patch_dim, Rng& rng) {
    return {trunc_normal<T>(width, patch_dim, rng), zeros<T>(1, patch_dim)};
  }

  template <class Self, class F>
  static void visit(Self& s, const std::string& p, F&& f) {
    f(p + "pixel_head.weight", s.w);
    f(p + "pixel_head.bias", s.b);
  }
};

// Same summation as compute_loss, against raw patch pixels.
template <class T>
LossReport compute_pixel_loss(const std::vector<TokenSequence<T>>& pixel_predictions, const Mat<T>& patch_vectors,
                              const std::vector<Mask>& target_masks, const LossOptions& opt = {},
                              std::vector<Mat<T>>* grads = nullptr) {
  if (pixel_predictions.size() != target_masks.size()) throw ContractViolation("block count mismatch");
  std::vector<TokenSequence<T>> targets;
  targets.reserve(target_masks.size());
  for (const Mask& m : target_masks) targets.push_back({m.indices, gather_rows(patch_vectors, m.indices)});
  return compute_loss(pixel_predictions, targets, opt, grads);
}

// target <- m * target + (1 - m) * context, tensor by tensor.
template <class P>
void ema_update(P& target, const P& context, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ContractViolation("EMA momentum must lie in [0, 1]");
  using T = typename P::Scalar;
  if (m == 1.0) {
    zip_tensors(target, context, [](const std::string&, Mat<T>&, const Mat<T>&) {});
    return;
  }
  if (m == 0.0) {
    zip_tensors(target, context, [](const std::string&, Mat<T>& tgt, const Mat<T>& ctx) { tgt = ctx; });
    return;
  }
  const T keep = static_cast<T>(m);
  const T take = static_cast<T>(1.0 - m);
  zip_tensors(target, context, [&](const std::string&, Mat<T>& tgt, const Mat<T>& ctx) {
    tgt = keep * tgt + take * ctx;
  });
}

struct EmaSchedule {
  double m_start = 0.996;
  double m_end = 1.0;
  long total_steps = 1;
};

inline void validate(const EmaSchedule& s) {
  if (!(s.m_start > 0.0 && s.m_start <= s.m_end && s.m_end <= 1.0)) {
    throw ConfigError("EMA schedule must satisfy 0 < m_start <= m_end <= 1");
  }
}

inline double momentum_at(const EmaSchedule& s, long step) {
  if (step < 0 || step > s.total_steps) {
    std::cerr << "warning: momentum_at step " << step << " outside [0, " << s.total_steps << "], clamping\n";
    step = std::clamp(step, 0L, s.total_steps);
  }
  if (s.total_steps <= 0) return s.m_end;
  return std::lerp(s.m_start, s.m_end, static_cast<double>(step) / static_cast<double>(s.total_steps));
}

}  // namespace ijepa
