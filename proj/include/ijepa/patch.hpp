#pragma once

#include "ijepa/core.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace ijepa {

// Planar (C, H, W) float image, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct PatchGrid {
  int rows = 0;
  int cols = 0;
  int patch_size = 1;

  int n_patches() const { return rows * cols; }
  int row_of(int index) const { return index / cols; }
  int col_of(int index) const { return index % cols; }
  int index_of(int row, int col) const { return row * cols + col; }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

inline PatchGrid make_grid(int rows, int cols, int patch_size = 1) {
  if (rows < 2 || cols < 2) {
    throw DimensionError("patch grid must be at least 2x2, got " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
  return PatchGrid{rows, cols, patch_size};
}

inline PatchGrid grid_for(int height, int width, int patch_size) {
  if (patch_size <= 0 || height % patch_size != 0 || width % patch_size != 0) {
    throw DimensionError("image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by patch size " + std::to_string(patch_size));
  }
  return make_grid(height / patch_size, width / patch_size, patch_size);
}

// An ordered set of patch indices with one embedding row per index.
template <class T>
struct TokenSequence {
  std::vector<int> indices;
  Mat<T> embeddings;

  Index size() const { return static_cast<Index>(indices.size()); }
  Index width() const { return embeddings.cols(); }
};

template <class T>
void validate(const TokenSequence<T>& seq, int n_patches) {
  if (static_cast<Index>(seq.indices.size()) != seq.embeddings.rows()) {
    throw DimensionError("token sequence has " + std::to_string(seq.indices.size()) +
                         " indices but " + std::to_string(seq.embeddings.rows()) + " rows");
  }
  for (std::size_t i = 0; i < seq.indices.size(); ++i) {
    if (seq.indices[i] < 0 || seq.indices[i] >= n_patches) {
      throw DimensionError("token index out of range");
    }
    if (i > 0 && seq.indices[i] <= seq.indices[i - 1]) {
      throw ContractViolation("token indices must be strictly increasing");
    }
  }
}

template <class T = float>
struct Patches {
  PatchGrid grid;
  Mat<T> vectors;  // n_patches x (channels * p * p)
};

// Patch vector layout is (channel, dy, dx); patches are in row-major grid order.
template <class T = float>
Patches<T> patchify(const Image& image, int patch_size) {
  const PatchGrid grid = grid_for(image.height, image.width, patch_size);
  const int p = patch_size;
  Patches<T> out{grid, Mat<T>(grid.n_patches(), static_cast<Index>(image.channels) * p * p)};
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const int k = grid.index_of(r, c);
      Index col = 0;
      for (int ch = 0; ch < image.channels; ++ch) {
        for (int dy = 0; dy < p; ++dy) {
          for (int dx = 0; dx < p; ++dx) {
            out.vectors(k, col++) = static_cast<T>(image.at(ch, r * p + dy, c * p + dx));
          }
        }
      }
    }
  }
  return out;
}

template <class T>
Image unpatchify(const Patches<T>& patches, int channels) {
  const PatchGrid& g = patches.grid;
  const int p = g.patch_size;
  if (patches.vectors.rows() != g.n_patches() || patches.vectors.cols() != channels * p * p) {
    throw DimensionError("patch matrix does not match grid");
  }
  Image img(g.rows * p, g.cols * p, channels);
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      const int k = g.index_of(r, c);
      Index col = 0;
      for (int ch = 0; ch < channels; ++ch) {
        for (int dy = 0; dy < p; ++dy) {
          for (int dx = 0; dx < p; ++dx) {
            img.at(ch, r * p + dy, c * p + dx) = static_cast<float>(patches.vectors(k, col++));
          }
        }
      }
    }
  }
  return img;
}

// Fixed 2-D sin/cos table, one row per grid position. The first half of the
// width encodes the patch row, the second half the patch column; each half
// is [sin(pos * w_k), cos(pos * w_k)] with w_k = 10000^(-k / (width/4)).
template <class T = float>
Mat<T> positional_embedding(const PatchGrid& grid, int width) {
  if (width <= 0 || width % 4 != 0) {
    throw ConfigError("positional embedding width must be a positive multiple of 4, got " +
                      std::to_string(width));
  }
  const int quarter = width / 4;
  Mat<T> table(grid.n_patches(), width);
  for (int k = 0; k < grid.n_patches(); ++k) {
    const double pos[2] = {static_cast<double>(grid.row_of(k)), static_cast<double>(grid.col_of(k))};
    for (int axis = 0; axis < 2; ++axis) {
      const int base = axis * 2 * quarter;
      for (int f = 0; f < quarter; ++f) {
        const double omega = std::pow(10000.0, -static_cast<double>(f) / quarter);
        table(k, base + f) = static_cast<T>(std::sin(pos[axis] * omega));
        table(k, base + quarter + f) = static_cast<T>(std::cos(pos[axis] * omega));
      }
    }
  }
  return table;
}

// token_k = patch_k * weight + bias + pos_k, for the selected patch indices.
template <class T>
TokenSequence<T> embed_patches(const Mat<T>& patch_vectors, const std::vector<int>& indices,
                               const Mat<T>& weight, const Mat<T>& bias, const Mat<T>& pos_table) {
  if (weight.rows() != patch_vectors.cols()) {
    throw DimensionError("patch projection expects input length " + std::to_string(weight.rows()) +
                         ", got " + std::to_string(patch_vectors.cols()));
  }
  if (bias.rows() != 1 || bias.cols() != weight.cols() || pos_table.cols() != weight.cols()) {
    throw DimensionError("patch projection bias/positional width mismatch");
  }
  TokenSequence<T> out;
  out.indices = indices;
  out.embeddings = gather_rows(patch_vectors, indices) * weight;
  out.embeddings.rowwise() += bias.row(0);
  out.embeddings += gather_rows(pos_table, indices);
  return out;
}

}  // namespace ijepa
