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

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "drv/errors.hpp"

namespace drv {

inline bool IsPowerOfTwo(std::size_t n) { return n && !(n & (n - 1)); }

/// In-place iterative radix-2 decimation-in-time FFT (forward, unscaled).
inline void FftInPlace(std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  if (!IsPowerOfTwo(n))
    throw ConfigError("fft size " + std::to_string(n) + " is not a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / double(len);
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles computed directly rather than by recurrence to avoid drift.
      const std::complex<double> w(std::cos(ang * double(k)),
                                   std::sin(ang * double(k)));
      for (std::size_t i = k; i < n; i += len) {
        const std::complex<double> u = x[i];
        const std::complex<double> v = x[i + half] * w;
        x[i] = u + v;
        x[i + half] = u - v;
      }
    }
  }
}

/// Half spectrum (n_fft/2 + 1 bins) of a real frame zero-padded to n_fft.
inline std::vector<std::complex<double>> Rfft(std::span<const double> frame,
                                              std::size_t n_fft) {
  if (!IsPowerOfTwo(n_fft))
    throw ConfigError("n_fft " + std::to_string(n_fft) +
                      " is not a power of two");
  if (frame.size() > n_fft)
    throw ConfigError("frame of " + std::to_string(frame.size()) +
                      " samples exceeds n_fft " + std::to_string(n_fft));
  std::vector<std::complex<double>> buf(n_fft);
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i];
  FftInPlace(buf);
  buf.resize(n_fft / 2 + 1);
  return buf;
}

}  // namespace drv
