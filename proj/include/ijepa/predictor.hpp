#pragma once

#include "ijepa/backbone.hpp"
#include "ijepa/core.hpp"
#include "ijepa/nn.hpp"
#include "ijepa/patch.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace ijepa {

struct PredictorConfig {
  int width = 48;
  int depth = 2;
  int heads = 4;
  double mlp_ratio = 4.0;
  // Ablation hook: when false, mask tokens carry no positional signal.
  bool mask_positions = true;

  friend bool operator==(const PredictorConfig&, const PredictorConfig&) = default;
};

// Desk-scale default width: 0.75 * backbone width rounded to a multiple of heads.
inline int default_predictor_width(int backbone_width, int heads) {
  const int w = static_cast<int>(std::lround(0.75 * backbone_width / heads)) * heads;
  return std::max(w, heads);
}

inline void validate(const PredictorConfig& c, const ViTConfig& backbone) {
  if (c.width <= 0 || c.heads <= 0 || c.width % c.heads != 0) {
    throw ConfigError("predictor width " + std::to_string(c.width) + " must be divisible by heads " +
                      std::to_string(c.heads));
  }
  if (c.heads != backbone.heads) throw ConfigError("predictor heads must equal backbone heads");
  if (c.depth < 0) throw ConfigError("predictor depth must be >= 0");
  if (!(c.mlp_ratio > 0.0)) throw ConfigError("predictor mlp_ratio must be > 0");
}

template <class T>
struct PredictorParams {
  using Scalar = T;
  Mat<T> in_w;        // width d -> predictor width
  Mat<T> in_b;
  Mat<T> mask_token;  // shared learnable vector, 1 x predictor width
  StackParams<T> stack;
  Mat<T> out_w;       // predictor width -> d
  Mat<T> out_b;

  static PredictorParams init(const PredictorConfig& cfg, const ViTConfig& backbone, Rng& rng) {
    validate(cfg, backbone);
    PredictorParams p;
    p.in_w = trunc_normal<T>(backbone.width, cfg.width, rng);
    p.in_b = zeros<T>(1, cfg.width);
    p.mask_token = trunc_normal<T>(1, cfg.width, rng);
    p.stack = StackParams<T>::init(cfg.width, cfg.depth, cfg.mlp_ratio, rng);
    p.out_w = trunc_normal<T>(cfg.width, backbone.width, rng);
    p.out_b = zeros<T>(1, backbone.width);
    return p;
  }

  template <class Self, class F>
  static void visit(Self& s, const std::string& p, F&& f) {
    f(p + "predictor_embed.weight", s.in_w);
    f(p + "predictor_embed.bias", s.in_b);
    f(p + "mask_token", s.mask_token);
    StackParams<T>::visit(s.stack, p + "predictor_", f);
    f(p + "predictor_proj.weight", s.out_w);
    f(p + "predictor_proj.bias", s.out_b);
  }
};

// Fixed sin-cos tables for the backbone and for the predictor width.
template <class T>
struct PositionTables {
  Mat<T> encoder;
  Mat<T> predictor;

  static PositionTables make(const PatchGrid& grid, int width, int predictor_width) {
    return {positional_embedding<T>(grid, width), positional_embedding<T>(grid, predictor_width)};
  }
};

template <class T>
struct PredictorCache {
  Mat<T> ctx_in;
  Index n_targets = 0;
  StackCache<T> stack;
  Mat<T> normed;    // stack output rows for the target tokens
};

inline void require_disjoint(const std::vector<int>& context, const std::vector<int>& targets) {
  for (int t : targets) {
    if (std::binary_search(context.begin(), context.end(), t)) {
      throw ContractViolation("target index " + std::to_string(t) + " is also a context index");
    }
  }
}

// One predictor pass for one target block. Sequence = projected context
// tokens plus their positions, followed by one mask token per target index
// (shared vector + position). `pos_table` is at predictor width. Only the
// mask-token outputs are kept and projected back to the backbone width.
template <class T>
Mat<T> predictor_forward(const PredictorParams<T>& p, const PredictorConfig& cfg, const Mat<T>& pos_table,
                         const Mat<T>& context_repr, const std::vector<int>& context_indices,
                         const std::vector<int>& target_indices, PredictorCache<T>* cache) {
  if (context_repr.cols() != p.in_w.rows()) {
    throw DimensionError("predictor expects context width " + std::to_string(p.in_w.rows()) + ", got " +
                         std::to_string(context_repr.cols()));
  }
  if (context_repr.rows() != static_cast<Index>(context_indices.size())) {
    throw DimensionError("context representation rows do not match context indices");
  }
  if (target_indices.empty()) throw ContractViolation("empty target block");
  require_disjoint(context_indices, target_indices);

  const Index k = context_repr.rows();
  const Index t = static_cast<Index>(target_indices.size());
  if (pos_table.cols() != p.in_w.cols()) throw DimensionError("predictor position table has the wrong width");
  Mat<T> seq(k + t, p.in_w.cols());
  seq.topRows(k) = linear(context_repr, p.in_w, p.in_b) + gather_rows(pos_table, context_indices);
  if (cfg.mask_positions) {
    seq.bottomRows(t) = gather_rows(pos_table, target_indices);
  } else {
    seq.bottomRows(t).setZero();
  }
  seq.bottomRows(t).rowwise() += p.mask_token.row(0);

  StackCache<T>* sc = cache != nullptr ? &cache->stack : nullptr;
  const Mat<T> y = stack_forward<T>(p.stack, std::move(seq), StackOptions{cfg.heads, "predictor", 0}, sc);
  Mat<T> normed = y.bottomRows(t);
  Mat<T> out = linear(normed, p.out_w, p.out_b);
  if (cache != nullptr) {
    cache->ctx_in = context_repr;
    cache->n_targets = t;
    cache->normed = std::move(normed);
  }
  return out;
}

// Accumulates parameter gradients into `g`; returns d(loss)/d(context_repr).
template <class T>
Mat<T> predictor_backward(const PredictorParams<T>& p, const PredictorConfig& cfg, const PredictorCache<T>& c,
                          const Mat<T>& dout, PredictorParams<T>& g) {
  const Index k = c.ctx_in.rows();
  const Index t = c.n_targets;
  const Mat<T> dnormed = linear_backward(c.normed, p.out_w, dout, g.out_w, g.out_b);
  Mat<T> dy = Mat<T>::Zero(k + t, p.in_w.cols());
  dy.bottomRows(t) = dnormed;
  const Mat<T> dseq = stack_backward(p.stack, c.stack, dy, cfg.heads, g.stack);
  const Mat<T> dmask = dseq.bottomRows(t);
  g.mask_token += dmask.colwise().sum();
  const Mat<T> dctx_tok = dseq.topRows(k);
  return linear_backward(c.ctx_in, p.in_w, dctx_tok, g.in_w, g.in_b);
}

template <class T>
TokenSequence<T> predict_block(const PredictorParams<T>& p, const PredictorConfig& cfg, const Mat<T>& pos_table,
                               const TokenSequence<T>& context_repr, const std::vector<int>& target_indices) {
  return {target_indices,
          predictor_forward<T>(p, cfg, pos_table, context_repr.embeddings, context_repr.indices, target_indices,
                               nullptr)};
}

}  // namespace ijepa
