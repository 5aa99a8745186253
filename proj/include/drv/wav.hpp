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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "drv/binary_io.hpp"

namespace drv {

struct PcmSignal {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;

  bool operator==(const PcmSignal&) const = default;
};

/// Parses a RIFF/WAVE container holding 16-bit signed mono PCM.  Chunks other
/// than "fmt " and "data" are skipped.
inline PcmSignal ParseWav(const Bytes& bytes) {
  ByteReader r(bytes, "wav");
  if (r.Tag("riff tag") != "RIFF") throw FormatError("wav: missing RIFF tag");
  r.U32("riff size");
  if (r.Tag("wave tag") != "WAVE") throw FormatError("wav: missing WAVE tag");

  bool have_fmt = false;
  PcmSignal sig;
  while (r.remaining() > 0) {
    const std::string id = r.Tag("chunk id");
    const std::uint32_t size = r.U32("chunk size");
    if (id == "fmt ") {
      r.Need(size, "fmt chunk");
      if (size < 16) throw FormatError("wav: fmt chunk too short");
      const std::size_t start = r.pos();
      const std::uint16_t audio_format = r.U16("audio_format");
      const std::uint16_t channels = r.U16("num_channels");
      const std::uint32_t rate = r.U32("sample_rate");
      r.U32("byte_rate");
      r.U16("block_align");
      const std::uint16_t bits = r.U16("bits_per_sample");
      if (audio_format != 1)
        throw FormatError("wav: audio_format " + std::to_string(audio_format) +
                          " is not PCM");
      if (channels != 1)
        throw FormatError("wav: num_channels " + std::to_string(channels) +
                          " is not mono");
      if (bits != 16)
        throw FormatError("wav: bits_per_sample " + std::to_string(bits) +
                          " is not 16");
      if (rate < 8000)
        throw FormatError("wav: sample_rate " + std::to_string(rate) +
                          " below 8000");
      sig.sample_rate = int(rate);
      r.Seek(start + size);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
      if (size % 2) throw FormatError("wav: data chunk size is odd");
      r.Need(size, "data chunk");
      sig.samples.resize(size / 2);
      for (double& s : sig.samples)
        s = double(std::int16_t(r.U16("sample"))) / 32768.0;
      return sig;
    } else {
      r.Skip(size + (size & 1), "chunk " + id);
    }
  }
  throw FormatError(have_fmt ? "wav: missing data chunk"
                             : "wav: missing fmt chunk");
}

inline std::int16_t QuantizeSample(double s) {
  const double v = std::round(s * 32768.0);
  return std::int16_t(std::clamp(v, -32768.0, 32767.0));
}

inline Bytes WriteWav(const PcmSignal& sig) {
  const std::uint32_t data_bytes = std::uint32_t(sig.samples.size() * 2);
  Bytes out;
  out.reserve(44 + data_bytes);
  PutTag(out, "RIFF");
  PutU32(out, 36 + data_bytes);
  PutTag(out, "WAVE");
  PutTag(out, "fmt ");
  PutU32(out, 16);
  PutU16(out, 1);
  PutU16(out, 1);
  PutU32(out, std::uint32_t(sig.sample_rate));
  PutU32(out, std::uint32_t(sig.sample_rate) * 2);
  PutU16(out, 2);
  PutU16(out, 16);
  PutTag(out, "data");
  PutU32(out, data_bytes);
  for (double s : sig.samples) PutU16(out, std::uint16_t(QuantizeSample(s)));
  return out;
}

}  // namespace drv
