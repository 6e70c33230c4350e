#pragma once

#include "ijepa/core.hpp"
#include "ijepa/patch.hpp"
#include "ijepa/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace ijepa {

struct Mask {
  PatchGrid grid;
  std::vector<int> indices;  // sorted, unique, each < grid.n_patches()

  int size() const { return static_cast<int>(indices.size()); }
  bool empty() const { return indices.empty(); }
  bool contains(int k) const { return std::binary_search(indices.begin(), indices.end(), k); }

  friend bool operator==(const Mask&, const Mask&) = default;
};

inline void validate(const Mask& m) {
  for (std::size_t i = 0; i < m.indices.size(); ++i) {
    if (m.indices[i] < 0 || m.indices[i] >= m.grid.n_patches()) {
      throw ContractViolation("mask index " + std::to_string(m.indices[i]) + " outside grid");
    }
    if (i > 0 && m.indices[i] <= m.indices[i - 1]) {
      throw ContractViolation("mask indices must be sorted and unique");
    }
  }
}

using Range = std::pair<double, double>;

struct BlockSpec {
  Range scale{0.15, 0.2};
  Range aspect{0.75, 1.5};
  int count = 4;
};

inline void validate(const BlockSpec& s, const std::string& what) {
  if (!(s.scale.first > 0.0 && s.scale.first <= s.scale.second && s.scale.second <= 1.0)) {
    throw ConfigError(what + ": scale range must satisfy 0 < lo <= hi <= 1");
  }
  if (!(s.aspect.first > 0.0 && s.aspect.first <= s.aspect.second)) {
    throw ConfigError(what + ": aspect range must satisfy 0 < lo <= hi");
  }
  if (s.count < 1) throw ConfigError(what + ": block count must be >= 1");
}

struct BlockDims {
  int h = 1;
  int w = 1;
  friend bool operator==(const BlockDims&, const BlockDims&) = default;
};

// h = clamp(round(sqrt(scale*N/aspect)), 1, rows), w likewise with scale*N*aspect.
inline BlockDims block_dims(const PatchGrid& grid, double scale, double aspect) {
  const double n = grid.n_patches();
  const int h = static_cast<int>(std::lround(std::sqrt(scale * n / aspect)));
  const int w = static_cast<int>(std::lround(std::sqrt(scale * n * aspect)));
  return {std::clamp(h, 1, grid.rows), std::clamp(w, 1, grid.cols)};
}

inline BlockDims sample_dims(const PatchGrid& grid, const BlockSpec& spec, Rng& rng) {
  const double scale = rng.uniform(spec.scale.first, spec.scale.second);
  const double aspect = rng.uniform(spec.aspect.first, spec.aspect.second);
  return block_dims(grid, scale, aspect);
}

inline Mask rect_mask(const PatchGrid& grid, int top, int left, BlockDims dims) {
  Mask m{grid, {}};
  m.indices.reserve(static_cast<std::size_t>(dims.h * dims.w));
  for (int r = top; r < top + dims.h; ++r) {
    for (int c = left; c < left + dims.w; ++c) m.indices.push_back(grid.index_of(r, c));
  }
  return m;
}

// Contiguous h x w rectangle with a uniformly drawn top-left corner.
inline Mask sample_block(const PatchGrid& grid, BlockDims dims, Rng& rng) {
  if (dims.h < 1 || dims.w < 1 || dims.h > grid.rows || dims.w > grid.cols) {
    throw ContractViolation("block " + std::to_string(dims.h) + "x" + std::to_string(dims.w) +
                            " does not fit a " + std::to_string(grid.rows) + "x" +
                            std::to_string(grid.cols) + " grid");
  }
  const int top = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(grid.rows - dims.h + 1)));
  const int left = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(grid.cols - dims.w + 1)));
  return rect_mask(grid, top, left, dims);
}

inline Mask mask_difference(const Mask& a, const std::vector<Mask>& remove) {
  std::vector<char> drop(static_cast<std::size_t>(a.grid.n_patches()), 0);
  for (const Mask& r : remove) {
    for (int k : r.indices) drop[static_cast<std::size_t>(k)] = 1;
  }
  Mask out{a.grid, {}};
  for (int k : a.indices) {
    if (!drop[static_cast<std::size_t>(k)]) out.indices.push_back(k);
  }
  return out;
}

inline Mask full_mask(const PatchGrid& grid) {
  Mask m{grid, std::vector<int>(static_cast<std::size_t>(grid.n_patches()))};
  for (int k = 0; k < grid.n_patches(); ++k) m.indices[static_cast<std::size_t>(k)] = k;
  return m;
}

struct MaskPair {
  Mask context;
  std::vector<Mask> targets;
};

struct SamplerLimits {
  int min_context_patches = 4;
  int max_retries = 20;
};

namespace detail {

inline MaskPair place_multiblock(const PatchGrid& grid, BlockDims target_dims, int n_targets,
                                 BlockDims context_dims, Rng& rng) {
  MaskPair out;
  out.targets.reserve(static_cast<std::size_t>(n_targets));
  for (int i = 0; i < n_targets; ++i) out.targets.push_back(sample_block(grid, target_dims, rng));
  out.context = mask_difference(sample_block(grid, context_dims, rng), out.targets);
  return out;
}

inline MaskPair place_with_retries(const PatchGrid& grid, BlockDims target_dims, int n_targets,
                                   BlockDims context_dims, const SamplerLimits& limits, Rng& rng) {
  for (int attempt = 0; attempt <= limits.max_retries; ++attempt) {
    MaskPair p = place_multiblock(grid, target_dims, n_targets, context_dims, rng);
    if (p.context.size() >= std::max(1, limits.min_context_patches)) return p;
  }
  throw SamplerExhausted("context kept fewer than " + std::to_string(limits.min_context_patches) +
                         " patches after " + std::to_string(limits.max_retries) + " retries");
}

}  // namespace detail

// Multi-block sampling: `target_spec.count` possibly-overlapping target
// rectangles sharing one sampled size, plus one context rectangle with every
// target index removed from it.
inline MaskPair sample_context_and_targets(const PatchGrid& grid, const BlockSpec& target_spec,
                                           const BlockSpec& context_spec, Rng& rng,
                                           const SamplerLimits& limits = {}) {
  validate(target_spec, "target block spec");
  validate(context_spec, "context block spec");
  if (context_spec.count != 1) throw ConfigError("context block spec must have count 1");
  for (int attempt = 0; attempt <= limits.max_retries; ++attempt) {
    const BlockDims tdims = sample_dims(grid, target_spec, rng);
    const BlockDims cdims = sample_dims(grid, context_spec, rng);
    MaskPair p = detail::place_multiblock(grid, tdims, target_spec.count, cdims, rng);
    if (p.context.size() >= std::max(1, limits.min_context_patches)) return p;
  }
  throw SamplerExhausted("context kept fewer than " + std::to_string(limits.min_context_patches) +
                         " patches after " + std::to_string(limits.max_retries) + " retries");
}

struct MaskedBatch {
  std::vector<Mask> contexts;
  std::vector<std::vector<Mask>> targets;
  int context_size = 0;
  int target_size = 0;

  std::size_t size() const { return contexts.size(); }
};

// Equalizes context cardinality across the batch by dropping indices
// uniformly at random down to the batch minimum. Target masks must already
// share one cardinality.
inline MaskedBatch collate_batch(std::vector<MaskPair> samples, Rng& rng, const SamplerLimits& limits = {}) {
  if (samples.empty()) throw ContractViolation("cannot collate an empty batch");
  const PatchGrid grid = samples.front().context.grid;
  const std::size_t n_targets = samples.front().targets.size();
  int min_ctx = samples.front().context.size();
  int tsize = -1;
  for (const MaskPair& s : samples) {
    if (!(s.context.grid == grid)) throw ContractViolation("batch mixes patch grids");
    if (s.targets.size() != n_targets) throw ContractViolation("batch mixes target counts");
    min_ctx = std::min(min_ctx, s.context.size());
    for (const Mask& t : s.targets) {
      if (t.empty()) throw ContractViolation("empty target mask");
      if (tsize < 0) tsize = t.size();
      if (t.size() != tsize) throw ContractViolation("target masks differ in size within a batch");
    }
  }
  if (min_ctx < std::max(1, limits.min_context_patches)) {
    throw SamplerExhausted("batch-minimum context size " + std::to_string(min_ctx) +
                           " is below the minimum of " + std::to_string(limits.min_context_patches));
  }
  MaskedBatch batch;
  batch.context_size = min_ctx;
  batch.target_size = tsize;
  for (MaskPair& s : samples) {
    if (s.context.size() > min_ctx) {
      std::vector<int> keep = s.context.indices;
      rng.shuffle(keep);
      keep.resize(static_cast<std::size_t>(min_ctx));
      std::sort(keep.begin(), keep.end());
      s.context.indices = std::move(keep);
    }
    batch.contexts.push_back(std::move(s.context));
    batch.targets.push_back(std::move(s.targets));
  }
  return batch;
}

enum class MaskStrategy { kMultiBlock, kRasterized, kBlock, kRandom };

inline std::string to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::kMultiBlock: return "multi-block";
    case MaskStrategy::kRasterized: return "rasterized";
    case MaskStrategy::kBlock: return "block";
    case MaskStrategy::kRandom: return "random";
  }
  return "?";
}

inline MaskStrategy parse_strategy(const std::string& s) {
  if (s == "multi-block") return MaskStrategy::kMultiBlock;
  if (s == "rasterized") return MaskStrategy::kRasterized;
  if (s == "block") return MaskStrategy::kBlock;
  if (s == "random") return MaskStrategy::kRandom;
  throw ConfigError("unknown masking strategy '" + s + "' (expected multi-block|rasterized|block|random)");
}

struct MaskingConfig {
  MaskStrategy strategy = MaskStrategy::kMultiBlock;
  BlockSpec target{{0.15, 0.2}, {0.75, 1.5}, 4};
  BlockSpec context{{0.85, 1.0}, {1.0, 1.0}, 1};
  double block_scale = 0.6;   // `block` strategy target scale
  double random_ratio = 0.6;  // `random` strategy target fraction
  SamplerLimits limits;
};

namespace detail {

inline std::vector<Mask> quadrants(const PatchGrid& grid) {
  if (grid.rows % 2 != 0 || grid.cols % 2 != 0) {
    throw ConfigError("rasterized masking needs an even grid, got " + std::to_string(grid.rows) + "x" +
                      std::to_string(grid.cols));
  }
  const BlockDims q{grid.rows / 2, grid.cols / 2};
  return {rect_mask(grid, 0, 0, q), rect_mask(grid, 0, q.w, q), rect_mask(grid, q.h, 0, q),
          rect_mask(grid, q.h, q.w, q)};
}

inline MaskPair rasterized(const PatchGrid& grid, Rng& rng) {
  std::vector<Mask> quads = quadrants(grid);
  const auto pick = static_cast<std::size_t>(rng.uniform_int(4));
  MaskPair out;
  out.context = quads[pick];
  for (std::size_t i = 0; i < quads.size(); ++i) {
    if (i != pick) out.targets.push_back(quads[i]);
  }
  return out;
}

inline MaskPair complement_of(Mask target) {
  MaskPair out;
  out.context = mask_difference(full_mask(target.grid), {target});
  out.targets.push_back(std::move(target));
  return out;
}

inline MaskPair random_patches(const PatchGrid& grid, double ratio, Rng& rng) {
  const int n_target = static_cast<int>(std::lround(ratio * grid.n_patches()));
  if (n_target < 1 || n_target >= grid.n_patches()) throw ConfigError("random mask ratio leaves no context or no target");
  std::vector<int> all = full_mask(grid).indices;
  rng.shuffle(all);
  all.resize(static_cast<std::size_t>(n_target));
  std::sort(all.begin(), all.end());
  return complement_of(Mask{grid, std::move(all)});
}

inline BlockDims single_block_dims(const PatchGrid& grid, double scale) {
  const BlockDims d = block_dims(grid, scale, 1.0);
  if (d.h * d.w >= grid.n_patches()) throw ConfigError("block strategy target covers the whole grid");
  return d;
}

}  // namespace detail

// One (context, targets) draw for a single image under `cfg.strategy`.
inline MaskPair strategy_masks(const PatchGrid& grid, const MaskingConfig& cfg, Rng& rng) {
  switch (cfg.strategy) {
    case MaskStrategy::kMultiBlock:
      return sample_context_and_targets(grid, cfg.target, cfg.context, rng, cfg.limits);
    case MaskStrategy::kRasterized:
      return detail::rasterized(grid, rng);
    case MaskStrategy::kBlock:
      return detail::complement_of(sample_block(grid, detail::single_block_dims(grid, cfg.block_scale), rng));
    case MaskStrategy::kRandom:
      return detail::random_patches(grid, cfg.random_ratio, rng);
  }
  throw ConfigError("unhandled masking strategy");
}

// Batch sampler. Block sizes are drawn once per batch (one size for every
// target slot, one for the context) and positions per image, so target sizes
// agree by construction; contexts are then truncated by collate_batch.
inline MaskedBatch sample_batch(const PatchGrid& grid, const MaskingConfig& cfg, int batch_size, Rng& rng) {
  if (batch_size < 1) throw ContractViolation("batch size must be positive");
  std::vector<MaskPair> samples;
  samples.reserve(static_cast<std::size_t>(batch_size));
  switch (cfg.strategy) {
    case MaskStrategy::kMultiBlock: {
      validate(cfg.target, "target block spec");
      validate(cfg.context, "context block spec");
      const BlockDims tdims = sample_dims(grid, cfg.target, rng);
      const BlockDims cdims = sample_dims(grid, cfg.context, rng);
      for (int i = 0; i < batch_size; ++i) {
        samples.push_back(detail::place_with_retries(grid, tdims, cfg.target.count, cdims, cfg.limits, rng));
      }
      break;
    }
    case MaskStrategy::kBlock: {
      const BlockDims dims = detail::single_block_dims(grid, cfg.block_scale);
      for (int i = 0; i < batch_size; ++i) samples.push_back(detail::complement_of(sample_block(grid, dims, rng)));
      break;
    }
    default:
      for (int i = 0; i < batch_size; ++i) samples.push_back(strategy_masks(grid, cfg, rng));
  }
  return collate_batch(std::move(samples), rng, cfg.limits);
}

// Grid dump: '.' unused, 'C' context, digits for target slots ('*' when
// several targets overlap a patch).
inline std::string ascii_art(const Mask& context, const std::vector<Mask>& targets) {
  const PatchGrid& g = context.grid;
  std::string cells(static_cast<std::size_t>(g.n_patches()), '.');
  for (int k : context.indices) cells[static_cast<std::size_t>(k)] = 'C';
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const char tag = i < 9 ? static_cast<char>('1' + i) : 'T';
    for (int k : targets[i].indices) {
      char& cell = cells[static_cast<std::size_t>(k)];
      cell = (cell >= '1' && cell <= '9') || cell == 'T' || cell == '*' ? '*' : tag;
    }
  }
  std::string out;
  for (int r = 0; r < g.rows; ++r) {
    out.append(cells, static_cast<std::size_t>(r * g.cols), static_cast<std::size_t>(g.cols));
    out.push_back('\n');
  }
  return out;
}

}  // namespace ijepa
