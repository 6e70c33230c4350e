#pragma once

#include "ijepa/core.hpp"
#include "ijepa/nn.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace ijepa {

inline constexpr std::array<char, 4> kCheckpointMagic = {'I', 'J', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// On-disk layout (little-endian):
//   "IJCK" u32 version
//   u32 len, config text
//   u32 n_meta, n_meta * (u32 len, key, u32 len, value)
//   u32 n_tensors, n_tensors * (u32 len, name, u32 ndim=2, u32 rows, u32 cols, float32[rows*cols])
struct Checkpoint {
  std::string config_text;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Mat<float>>> tensors;

  const Mat<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }

  bool has_prefix(const std::string& prefix) const {
    for (const auto& [n, t] : tensors) {
      if (n.rfind(prefix, 0) == 0) return true;
    }
    return false;
  }
};

namespace ckpt_detail {

static_assert(std::endian::native == std::endian::little);

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw CheckpointError(CheckpointErrorKind::kTruncated, "checkpoint truncated");
  return v;
}

inline std::string get_str(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n > (1u << 28)) throw CheckpointError(CheckpointErrorKind::kFormat, "implausible string length in checkpoint");
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), n)) throw CheckpointError(CheckpointErrorKind::kTruncated, "checkpoint truncated");
  return s;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + tmp);
    os.write(kCheckpointMagic.data(), 4);
    ckpt_detail::put_u32(os, kCheckpointVersion);
    ckpt_detail::put_str(os, ck.config_text);
    ckpt_detail::put_u32(os, static_cast<std::uint32_t>(ck.meta.size()));
    for (const auto& [k, v] : ck.meta) {
      ckpt_detail::put_str(os, k);
      ckpt_detail::put_str(os, v);
    }
    ckpt_detail::put_u32(os, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
      ckpt_detail::put_str(os, name);
      ckpt_detail::put_u32(os, 2);
      ckpt_detail::put_u32(os, static_cast<std::uint32_t>(t.rows()));
      ckpt_detail::put_u32(os, static_cast<std::uint32_t>(t.cols()));
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!os) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint not found: " + path);
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4)) throw CheckpointError(CheckpointErrorKind::kTruncated, "checkpoint truncated: " + path);
  if (magic != kCheckpointMagic) throw CheckpointError(CheckpointErrorKind::kFormat, "not a checkpoint: " + path);
  const std::uint32_t version = ckpt_detail::get_u32(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorKind::kVersion, "checkpoint version " + std::to_string(version) +
                                                            " is not supported (expected " +
                                                            std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.config_text = ckpt_detail::get_str(is);
  const std::uint32_t n_meta = ckpt_detail::get_u32(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = ckpt_detail::get_str(is);
    ck.meta[k] = ckpt_detail::get_str(is);
  }
  const std::uint32_t n = ckpt_detail::get_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = ckpt_detail::get_str(is);
    const std::uint32_t ndim = ckpt_detail::get_u32(is);
    if (ndim != 2) throw CheckpointError(CheckpointErrorKind::kFormat, "tensor " + name + " is not 2-D");
    const std::uint32_t rows = ckpt_detail::get_u32(is);
    const std::uint32_t cols = ckpt_detail::get_u32(is);
    Mat<float> t(rows, cols);
    if (t.size() > 0 &&
        !is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw CheckpointError(CheckpointErrorKind::kTruncated, "checkpoint truncated inside tensor " + name);
    }
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

template <class P>
void put_params(Checkpoint& ck, const std::string& prefix, const P& params) {
  for (const auto& nt : named_tensors(params, prefix)) ck.tensors.emplace_back(nt.name, nt.tensor->template cast<float>());
}

// Fills an already-shaped parameter set from the checkpoint.
template <class P>
void get_params(const Checkpoint& ck, const std::string& prefix, P& params) {
  using T = typename P::Scalar;
  for (auto& nt : named_tensors(params, prefix)) {
    const Mat<float>* src = ck.find(nt.name);
    if (src == nullptr) throw CheckpointError(CheckpointErrorKind::kMissing, "checkpoint lacks tensor " + nt.name);
    if (src->rows() != nt.tensor->rows() || src->cols() != nt.tensor->cols()) {
      throw CheckpointError(CheckpointErrorKind::kShape,
                            "shape mismatch for " + nt.name + ": checkpoint " + std::to_string(src->rows()) + "x" +
                                std::to_string(src->cols()) + ", model " + std::to_string(nt.tensor->rows()) + "x" +
                                std::to_string(nt.tensor->cols()));
    }
    *nt.tensor = src->template cast<T>();
  }
}

}  // namespace ijepa
