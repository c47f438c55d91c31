// Copyright (c) 2026 The KDAR Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint container, little-endian:
//
//   "KDARCKP1"                      8-byte magic
//   u64 d_v, d_q, h, K, seed        dims and init seed
//   8 x { u64 rows, u64 cols, f64[rows*cols] }   w_v b_v w_q b_q w_f b_f w_o b_o
//   u64 fnv1a64(all preceding bytes)

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "kdar/errors.hpp"
#include "kdar/model.hpp"
#include "kdar/random.hpp"

namespace kdar {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

inline constexpr std::string_view kCheckpointMagic = "KDARCKP1";

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

class ByteReader {
 public:
  ByteReader(std::string_view bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

  std::uint64_t u64() {
    std::uint64_t v = 0;
    std::memcpy(&v, take(8), 8);
    return v;
  }

  void f64s(std::vector<double>& out) {
    const std::size_t n = out.size() * sizeof(double);
    if (n) std::memcpy(out.data(), take(n), n);
  }

  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) {
      throw IntegrityError(origin_ + ": checkpoint truncated at byte " + std::to_string(pos_));
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string checkpoint_bytes(const MlpParams& params) {
  std::string out(kCheckpointMagic);
  const ModelDims& d = params.dims;
  for (std::uint64_t v : {std::uint64_t{d.visual}, std::uint64_t{d.question},
                          std::uint64_t{d.hidden}, std::uint64_t{d.classes}, params.seed}) {
    detail::put_u64(out, v);
  }
  for (const Tensor* t : params.tensors()) {
    detail::put_u64(out, t->rows);
    detail::put_u64(out, t->cols);
    out.append(reinterpret_cast<const char*>(t->data.data()), t->data.size() * sizeof(double));
  }
  detail::put_u64(out, fnv1a64({reinterpret_cast<const unsigned char*>(out.data()), out.size()}));
  return out;
}

inline std::uint64_t content_hash(std::string_view bytes) {
  return fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
}

inline MlpParams parse_checkpoint(std::string_view bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < kCheckpointMagic.size() + 8) {
    throw IntegrityError(origin + ": checkpoint truncated (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw IntegrityError(origin + ": not a checkpoint (bad magic)");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  std::uint64_t recorded = 0;
  std::memcpy(&recorded, bytes.data() + body.size(), 8);
  if (recorded != content_hash(body)) {
    throw IntegrityError(origin + ": content hash mismatch (truncated or corrupted)");
  }

  detail::ByteReader rd(body, origin);
  rd.take(kCheckpointMagic.size());
  ModelDims dims;
  dims.visual = rd.u64();
  dims.question = rd.u64();
  dims.hidden = rd.u64();
  dims.classes = rd.u64();
  const std::uint64_t seed = rd.u64();
  try {
    dims.validate();
  } catch (const ConfigError& e) {
    throw IntegrityError(origin + ": " + e.what());
  }
  MlpParams p = MlpParams::zeros(dims);
  p.seed = seed;
  auto tensors = p.tensors();
  for (std::size_t k = 0; k < MlpParams::kTensorCount; ++k) {
    const std::uint64_t rows = rd.u64();
    const std::uint64_t cols = rd.u64();
    if (rows != tensors[k]->rows || cols != tensors[k]->cols) {
      throw IntegrityError(origin + ": tensor " + MlpParams::kTensorNames[k] +
                           " shape disagrees with header dims");
    }
    rd.f64s(tensors[k]->data);
  }
  if (rd.remaining() != 0) throw IntegrityError(origin + ": trailing bytes after tensors");
  return p;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, std::string_view bytes) {
  if (path.empty()) throw IoError("empty output path");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline void save_checkpoint(const MlpParams& params, const std::string& path) {
  write_file_bytes(path, checkpoint_bytes(params));
}

inline MlpParams load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file_bytes(path), path);
}

/// Loads and requires the stored dims to equal `expected`.
inline MlpParams load_checkpoint(const std::string& path, const ModelDims& expected) {
  MlpParams p = load_checkpoint(path);
  if (!(p.dims == expected)) {
    throw ConfigError(path + ": checkpoint dims " + p.dims.to_string() +
                      " do not match expected " + expected.to_string());
  }
  return p;
}

}  // namespace kdar
