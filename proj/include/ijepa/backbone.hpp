#pragma once

#include "ijepa/core.hpp"
#include "ijepa/nn.hpp"
#include "ijepa/patch.hpp"

#include <string>
#include <vector>

namespace ijepa {

struct ViTConfig {
  int width = 64;
  int depth = 4;
  int heads = 4;
  double mlp_ratio = 4.0;
  int patch_size = 4;
  int channels = 3;
  int image_size = 32;
  // pixels enter the patch projection as (v - pixel_shift) * pixel_scale
  double pixel_shift = 0.0;
  double pixel_scale = 1.0;
  double patch_init_std = kInitStd;

  int patch_dim() const { return channels * patch_size * patch_size; }
  PatchGrid grid() const { return grid_for(image_size, image_size, patch_size); }

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

inline void validate(const ViTConfig& c) {
  if (c.width <= 0 || c.heads <= 0 || c.width % c.heads != 0) {
    throw ConfigError("model width " + std::to_string(c.width) + " must be divisible by heads " +
                      std::to_string(c.heads));
  }
  if (c.width % 4 != 0) throw ConfigError("model width must be a multiple of 4 for positional embeddings");
  if (!(c.pixel_scale > 0.0) || !std::isfinite(c.pixel_shift)) throw ConfigError("pixel_scale must be > 0");
  if (!(c.patch_init_std > 0.0)) throw ConfigError("patch_init_std must be > 0");
  if (c.depth < 0) throw ConfigError("model depth must be >= 0");
  if (!(c.mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be > 0");
  if (c.patch_size <= 0 || c.channels <= 0) throw ConfigError("patch size and channels must be positive");
  (void)c.grid();
}

template <class T>
Mat<T> model_patches(const Image& image, const ViTConfig& cfg) {
  Mat<T> v = patchify<T>(image, cfg.patch_size).vectors;
  if (cfg.pixel_shift != 0.0 || cfg.pixel_scale != 1.0) {
    v = ((v.array() - static_cast<T>(cfg.pixel_shift)) * static_cast<T>(cfg.pixel_scale)).matrix();
  }
  return v;
}

// Context and target encoders share this layout: patch projection, block
// stack, final norm. No class token.
template <class T>
struct EncoderParams {
  using Scalar = T;
  Mat<T> patch_w;  // patch_dim x width
  Mat<T> patch_b;  // 1 x width
  StackParams<T> stack;

  static EncoderParams init(const ViTConfig& cfg, Rng& rng) {
    validate(cfg);
    EncoderParams p;
    p.patch_w = trunc_normal<T>(cfg.patch_dim(), cfg.width, rng, cfg.patch_init_std);
    p.patch_b = zeros<T>(1, cfg.width);
    p.stack = StackParams<T>::init(cfg.width, cfg.depth, cfg.mlp_ratio, rng);
    return p;
  }

  template <class Self, class F>
  static void visit(Self& s, const std::string& p, F&& f) {
    f(p + "patch_embed.weight", s.patch_w);
    f(p + "patch_embed.bias", s.patch_b);
    StackParams<T>::visit(s.stack, p, f);
  }
};

inline StackOptions encoder_options(const ViTConfig& cfg, const std::string& name = "encoder") {
  return StackOptions{cfg.heads, name, 0};
}

// Runs the block stack over exactly the given tokens (positions already
// added). Masked-out patches are never touched.
template <class T>
TokenSequence<T> forward(const EncoderParams<T>& params, const ViTConfig& cfg, const TokenSequence<T>& tokens) {
  if (tokens.embeddings.cols() != cfg.width) {
    throw DimensionError("encoder expects width " + std::to_string(cfg.width) + ", got " +
                         std::to_string(tokens.embeddings.cols()));
  }
  return {tokens.indices, stack_forward<T>(params.stack, tokens.embeddings, encoder_options(cfg), nullptr)};
}

template <class T>
TokenSequence<T> forward_full_image(const EncoderParams<T>& params, const ViTConfig& cfg, const Image& image,
                                    const Mat<T>& pos_table) {
  validate(cfg);
  const Mat<T> vectors = model_patches<T>(image, cfg);
  std::vector<int> all(static_cast<std::size_t>(vectors.rows()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return forward(params, cfg, embed_patches(vectors, all, params.patch_w, params.patch_b, pos_table));
}

// Training path: patch embedding + stack over a subset of patches, with the
// activations needed for backward.
template <class T>
struct EncoderCache {
  Mat<T> patch_in;
  StackCache<T> stack;
};

template <class T>
Mat<T> encode_visible(const EncoderParams<T>& params, const ViTConfig& cfg, const Mat<T>& patch_vectors,
                      const std::vector<int>& indices, const Mat<T>& pos_table, EncoderCache<T>* cache,
                      const std::string& name = "context encoder") {
  TokenSequence<T> tok = embed_patches(patch_vectors, indices, params.patch_w, params.patch_b, pos_table);
  if (cache != nullptr) cache->patch_in = gather_rows(patch_vectors, indices);
  return stack_forward<T>(params.stack, std::move(tok.embeddings), encoder_options(cfg, name),
                          cache != nullptr ? &cache->stack : nullptr);
}

template <class T>
void encode_visible_backward(const EncoderParams<T>& params, const ViTConfig& cfg, const EncoderCache<T>& cache,
                             const Mat<T>& dy, EncoderParams<T>& grads) {
  const Mat<T> dtok = stack_backward(params.stack, cache.stack, dy, cfg.heads, grads.stack);
  grads.patch_w.noalias() += cache.patch_in.transpose() * dtok;
  grads.patch_b += dtok.colwise().sum();
}

// Final-normed outputs of the last `count` blocks for every patch.
template <class T>
std::vector<Mat<T>> last_layer_outputs(const EncoderParams<T>& params, const ViTConfig& cfg,
                                       const Mat<T>& patch_vectors, const Mat<T>& pos_table, int count) {
  if (count > cfg.depth) {
    throw ConfigError("requested the last " + std::to_string(count) + " layers of a depth-" +
                      std::to_string(cfg.depth) + " encoder");
  }
  std::vector<int> all(static_cast<std::size_t>(patch_vectors.rows()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  TokenSequence<T> tok = embed_patches(patch_vectors, all, params.patch_w, params.patch_b, pos_table);
  StackOptions opt = encoder_options(cfg, "target encoder");
  opt.keep_last = count;
  std::vector<Mat<T>> outs;
  stack_forward<T>(params.stack, std::move(tok.embeddings), opt, nullptr, &outs);
  return outs;
}

}  // namespace ijepa
