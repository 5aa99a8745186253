// Copyright 2026  The drvec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Little-endian byte helpers and atomic file writes shared by the WAV, FBK1
// and DRV1 formats.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "drv/errors.hpp"

namespace drv {

using Bytes = std::vector<std::uint8_t>;

inline void PutU16(Bytes& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v & 0xff));
  out.push_back(std::uint8_t(v >> 8));
}

inline void PutU32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

inline void PutF32(Bytes& out, float v) { PutU32(out, std::bit_cast<std::uint32_t>(v)); }

inline void PutTag(Bytes& out, std::string_view tag) {
  out.insert(out.end(), tag.begin(), tag.end());
}

/// Bounds-checked little-endian reader; `what` names the structure in errors.
class ByteReader {
 public:
  ByteReader(const Bytes& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void Seek(std::size_t pos) { pos_ = pos; }

  void Need(std::size_t n, const std::string& field) const {
    if (remaining() < n)
      throw FormatError(what_ + ": truncated while reading " + field);
  }
  std::uint16_t U16(const std::string& field) {
    Need(2, field);
    std::uint16_t v = std::uint16_t(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t U32(const std::string& field) {
    Need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float F32(const std::string& field) { return std::bit_cast<float>(U32(field)); }
  std::string Tag(const std::string& field) {
    Need(4, field);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + 4);
    pos_ += 4;
    return s;
  }
  void Skip(std::size_t n, const std::string& field) {
    Need(n, field);
    pos_ += n;
  }

 private:
  const Bytes& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline Bytes ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

/// Writes to a sibling temporary and renames, so readers never observe a
/// partial file.
inline void WriteFileAtomic(const std::filesystem::path& path,
                            std::string_view contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), std::streamsize(contents.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline void WriteFileAtomic(const std::filesystem::path& path,
                            const Bytes& bytes) {
  WriteFileAtomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                         bytes.size()));
}

}  // namespace drv
