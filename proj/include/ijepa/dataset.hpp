#pragma once

#include "ijepa/core.hpp"
#include "ijepa/patch.hpp"
#include "ijepa/rng.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace ijepa {

struct Labels {
  int shape = 0;  // class of the majority shape
  int count = 0;  // number of objects in the image
};

struct Dataset {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<Image> images;
  std::vector<Labels> labels;  // empty when the dataset is unlabeled

  std::size_t size() const { return images.size(); }
  bool labeled() const { return labels.size() == images.size() && !images.empty(); }
};

inline constexpr std::array<char, 4> kDatasetMagic = {'I', 'J', 'D', 'S'};
inline constexpr std::array<char, 4> kLabelsMagic = {'I', 'J', 'L', 'B'};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline std::uint32_t read_u32(std::istream& is, const std::string& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated file: " + path);
  return v;
}

inline void expect_magic(std::istream& is, const std::array<char, 4>& magic, const std::string& path) {
  std::array<char, 4> got{};
  if (!is.read(got.data(), 4)) throw IoError("truncated file: " + path);
  if (got != magic) throw IoError("bad magic bytes in " + path);
}

}  // namespace detail

inline std::string labels_path(const std::string& dataset_path) { return dataset_path + ".labels"; }

// Layout: "IJDS", u32 count, u32 H, u32 W, u32 C, then count*C*H*W float32
// (planar per image). Labels, when present, go to a "<path>.labels" sidecar:
// "IJLB", u32 count, then count * (i32 shape, i32 count).
inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write(kDatasetMagic.data(), 4);
  detail::write_u32(os, static_cast<std::uint32_t>(ds.size()));
  detail::write_u32(os, static_cast<std::uint32_t>(ds.height));
  detail::write_u32(os, static_cast<std::uint32_t>(ds.width));
  detail::write_u32(os, static_cast<std::uint32_t>(ds.channels));
  for (const Image& img : ds.images) {
    os.write(reinterpret_cast<const char*>(img.data.data()),
             static_cast<std::streamsize>(img.data.size() * sizeof(float)));
  }
  if (!os) throw IoError("write failed: " + path);
  if (ds.labeled()) {
    std::ofstream ls(labels_path(path), std::ios::binary);
    if (!ls) throw IoError("cannot write " + labels_path(path));
    ls.write(kLabelsMagic.data(), 4);
    detail::write_u32(ls, static_cast<std::uint32_t>(ds.size()));
    for (const Labels& l : ds.labels) {
      const std::int32_t v[2] = {l.shape, l.count};
      ls.write(reinterpret_cast<const char*>(v), sizeof(v));
    }
  }
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset " + path);
  detail::expect_magic(is, kDatasetMagic, path);
  const std::uint32_t count = detail::read_u32(is, path);
  Dataset ds;
  ds.height = static_cast<int>(detail::read_u32(is, path));
  ds.width = static_cast<int>(detail::read_u32(is, path));
  ds.channels = static_cast<int>(detail::read_u32(is, path));
  if (ds.height <= 0 || ds.width <= 0 || ds.channels <= 0) throw IoError("bad dimensions in " + path);
  ds.images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Image img(ds.height, ds.width, ds.channels);
    if (!is.read(reinterpret_cast<char*>(img.data.data()),
                 static_cast<std::streamsize>(img.data.size() * sizeof(float)))) {
      throw IoError("truncated dataset payload in " + path);
    }
    for (float v : img.data) {
      if (!std::isfinite(v)) throw IoError("non-finite pixel in " + path);
    }
    ds.images.push_back(std::move(img));
  }
  std::ifstream ls(labels_path(path), std::ios::binary);
  if (ls) {
    detail::expect_magic(ls, kLabelsMagic, labels_path(path));
    const std::uint32_t n = detail::read_u32(ls, labels_path(path));
    if (n != count) throw IoError("label count does not match image count in " + labels_path(path));
    ds.labels.resize(n);
    for (auto& l : ds.labels) {
      std::int32_t v[2];
      if (!ls.read(reinterpret_cast<char*>(v), sizeof(v))) throw IoError("truncated labels");
      l = {v[0], v[1]};
    }
  }
  return ds;
}

enum class Shape : int { kSquare = 0, kCircle = 1, kTriangle = 2, kCross = 3 };
inline constexpr int kNumShapes = 4;

struct SyntheticSpec {
  int n_images = 1600;
  int size = 32;
  int min_objects = 2;
  int max_objects = 4;
  std::uint64_t seed = 0;
};

namespace detail {

inline bool inside(Shape s, double u, double v) {
  // (u, v) in [0,1]^2, relative to the object's bounding box.
  switch (s) {
    case Shape::kSquare:
      return u >= 0.1 && u <= 0.9 && v >= 0.1 && v <= 0.9;
    case Shape::kCircle:
      return (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5) <= 0.25;
    case Shape::kTriangle:
      return std::abs(u - 0.5) <= 0.5 * v;
    case Shape::kCross:
      return (std::abs(u - 0.5) <= 0.17) || (std::abs(v - 0.5) <= 0.17);
  }
  return false;
}

inline void draw(Image& img, Shape shape, int x0, int y0, int extent, const std::array<float, 3>& color) {
  for (int y = std::max(0, y0); y < std::min(img.height, y0 + extent); ++y) {
    for (int x = std::max(0, x0); x < std::min(img.width, x0 + extent); ++x) {
      const double u = (x - x0 + 0.5) / extent;
      const double v = (y - y0 + 0.5) / extent;
      if (!inside(shape, u, v)) continue;
      for (int c = 0; c < img.channels; ++c) img.at(c, y, x) = color[static_cast<std::size_t>(c % 3)];
    }
  }
}

}  // namespace detail

// Procedural shapes corpus: each image holds 2-4 objects on a dark noisy
// background. Every object but at most one distractor has the dominant shape,
// which is the class label; colours and sizes are drawn independently of
// shape so the class cannot be read off colour or area statistics alone.
inline Dataset make_synthetic(const SyntheticSpec& spec) {
  Dataset ds;
  ds.height = ds.width = spec.size;
  ds.channels = 3;
  ds.images.reserve(static_cast<std::size_t>(spec.n_images));
  ds.labels.reserve(static_cast<std::size_t>(spec.n_images));
  for (int i = 0; i < spec.n_images; ++i) {
    Rng rng = Rng::derive(spec.seed, "synthetic-image", static_cast<std::uint64_t>(i));
    Image img(spec.size, spec.size, 3);
    for (int c = 0; c < 3; ++c) {
      const float base = static_cast<float>(rng.uniform(0.0, 0.25));
      for (int y = 0; y < spec.size; ++y) {
        for (int x = 0; x < spec.size; ++x) {
          img.at(c, y, x) = base + static_cast<float>(rng.uniform(0.0, 0.05));
        }
      }
    }
    const int n = rng.uniform_int(spec.min_objects, spec.max_objects);
    const auto dominant = static_cast<Shape>(rng.uniform_int(0, kNumShapes - 1));
    const int distractor = n >= 3 ? rng.uniform_int(0, n - 1) : -1;
    for (int k = 0; k < n; ++k) {
      Shape shape = dominant;
      if (k == distractor) {
        shape = static_cast<Shape>((static_cast<int>(dominant) + rng.uniform_int(1, kNumShapes - 1)) % kNumShapes);
      }
      const int extent = rng.uniform_int(std::max(4, spec.size / 4), std::max(5, spec.size * 7 / 16));
      const int x0 = rng.uniform_int(0, spec.size - extent);
      const int y0 = rng.uniform_int(0, spec.size - extent);
      const std::array<float, 3> color{static_cast<float>(rng.uniform(0.35, 1.0)),
                                       static_cast<float>(rng.uniform(0.35, 1.0)),
                                       static_cast<float>(rng.uniform(0.35, 1.0))};
      detail::draw(img, shape, x0, y0, extent, color);
    }
    for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
    ds.images.push_back(std::move(img));
    ds.labels.push_back({static_cast<int>(dominant), n});
  }
  return ds;
}

}  // namespace ijepa
