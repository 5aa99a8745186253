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

// Log mel filterbank features: 25 ms frames every 10 ms, periodic Hann window,
// power spectrum, HTK-mel triangular filters over 125-3800 Hz, natural log
// with an energy floor.  No pre-emphasis and no mean normalization.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "drv/binary_io.hpp"
#include "drv/fft.hpp"
#include "drv/wav.hpp"

namespace drv {

inline constexpr std::size_t kNumMelBins = 40;
inline constexpr double kEnergyFloor = 1e-10;

/// T x dim log filterbank energies, row-major.
struct FeatureSequence {
  std::size_t num_frames = 0;
  std::size_t dim = kNumMelBins;
  std::vector<float> values;

  float operator()(std::size_t t, std::size_t k) const { return values[t * dim + k]; }
  bool operator==(const FeatureSequence&) const = default;
};

struct FrontendOptions {
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;
  std::size_t num_mel_bins = kNumMelBins;
  double low_freq = 125.0;
  double high_freq = 3800.0;
  double energy_floor = kEnergyFloor;

  std::size_t FrameLength(int rate) const {
    return std::size_t(std::lround(frame_length_ms * 1e-3 * rate));
  }
  std::size_t FrameShift(int rate) const {
    return std::size_t(std::lround(frame_shift_ms * 1e-3 * rate));
  }
  /// Smallest power of two holding one frame (512 at 16 kHz).
  std::size_t FftSize(int rate) const {
    std::size_t n = 1;
    while (n < FrameLength(rate)) n <<= 1;
    return n;
  }
};

inline double MelScale(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double InverseMelScale(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

inline std::size_t NumFrames(std::size_t num_samples, std::size_t frame_length,
                             std::size_t frame_shift) {
  if (num_samples < frame_length) return 0;
  return 1 + (num_samples - frame_length) / frame_shift;
}

/// Splits a signal into overlapping frames without padding.
inline std::vector<std::vector<double>> FrameSignal(
    const PcmSignal& signal, const FrontendOptions& opts = {}) {
  const std::size_t len = opts.FrameLength(signal.sample_rate);
  const std::size_t hop = opts.FrameShift(signal.sample_rate);
  const std::size_t n = NumFrames(signal.samples.size(), len, hop);
  std::vector<std::vector<double>> frames(n);
  for (std::size_t t = 0; t < n; ++t)
    frames[t].assign(signal.samples.begin() + t * hop,
                     signal.samples.begin() + t * hop + len);
  return frames;
}

/// Periodic Hann window.
inline std::vector<double> HannWindow(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
  return w;
}

class MelFilterbank {
 public:
  MelFilterbank(int sample_rate, std::size_t n_fft,
                std::size_t n_mels = kNumMelBins, double fmin = 125.0,
                double fmax = 3800.0)
      : sample_rate_(sample_rate), n_fft_(n_fft), n_mels_(n_mels) {
    if (!IsPowerOfTwo(n_fft))
      throw ConfigError("n_fft " + std::to_string(n_fft) +
                        " is not a power of two");
    if (fmax > sample_rate / 2.0)
      throw ConfigError("fmax " + std::to_string(fmax) +
                        " Hz exceeds Nyquist " +
                        std::to_string(sample_rate / 2.0) + " Hz");
    if (!(fmin >= 0 && fmin < fmax) || n_mels == 0)
      throw ConfigError("invalid mel band [" + std::to_string(fmin) + ", " +
                        std::to_string(fmax) + "] with " +
                        std::to_string(n_mels) + " filters");
    const std::size_t bins = n_fft / 2 + 1;
    const double mel_lo = MelScale(fmin), mel_hi = MelScale(fmax);
    const double delta = (mel_hi - mel_lo) / double(n_mels + 1);
    weights_.assign(n_mels * bins, 0.0);
    for (std::size_t m = 0; m < n_mels; ++m) {
      const double left = mel_lo + double(m) * delta;
      const double center = left + delta;
      const double right = center + delta;
      edges_.push_back({InverseMelScale(left), InverseMelScale(center),
                        InverseMelScale(right)});
      for (std::size_t k = 0; k < bins; ++k) {
        const double mel = MelScale(double(k) * sample_rate / double(n_fft));
        double w = 0;
        if (mel > left && mel <= center)
          w = (mel - left) / delta;
        else if (mel > center && mel < right)
          w = (right - mel) / delta;
        weights_[m * bins + k] = w;
      }
    }
  }

  struct Band {
    double left_hz, center_hz, right_hz;
  };

  std::size_t num_filters() const { return n_mels_; }
  std::size_t num_bins() const { return n_fft_ / 2 + 1; }
  std::size_t n_fft() const { return n_fft_; }
  int sample_rate() const { return sample_rate_; }
  double Weight(std::size_t filter, std::size_t bin) const {
    return weights_[filter * num_bins() + bin];
  }
  const Band& band(std::size_t filter) const { return edges_[filter]; }

  /// Filter energies from a power spectrum of num_bins() values.
  std::vector<double> Apply(std::span<const double> power) const {
    std::vector<double> out(n_mels_, 0.0);
    const std::size_t bins = num_bins();
    for (std::size_t m = 0; m < n_mels_; ++m)
      for (std::size_t k = 0; k < bins; ++k)
        out[m] += weights_[m * bins + k] * power[k];
    return out;
  }

 private:
  int sample_rate_;
  std::size_t n_fft_, n_mels_;
  std::vector<double> weights_;
  std::vector<Band> edges_;
};

/// Frame-level log mel filterbank energies of a signal.
inline FeatureSequence LogFbank(const PcmSignal& signal,
                                const FrontendOptions& opts = {}) {
  if (signal.sample_rate < 8000)
    throw ConfigError("sample_rate " + std::to_string(signal.sample_rate) +
                      " below 8000");
  const std::size_t n_fft = opts.FftSize(signal.sample_rate);
  const MelFilterbank fbank(signal.sample_rate, n_fft, opts.num_mel_bins,
                            opts.low_freq, opts.high_freq);
  const auto frames = FrameSignal(signal, opts);
  const std::vector<double> window = HannWindow(opts.FrameLength(signal.sample_rate));

  FeatureSequence feats;
  feats.num_frames = frames.size();
  feats.dim = opts.num_mel_bins;
  feats.values.reserve(frames.size() * feats.dim);
  std::vector<double> power(n_fft / 2 + 1);
  for (const auto& frame : frames) {
    std::vector<double> windowed(frame.size());
    for (std::size_t i = 0; i < frame.size(); ++i) windowed[i] = frame[i] * window[i];
    const auto spectrum = Rfft(windowed, n_fft);
    for (std::size_t k = 0; k < spectrum.size(); ++k) power[k] = std::norm(spectrum[k]);
    for (double e : fbank.Apply(power))
      feats.values.push_back(float(std::log(std::max(e, opts.energy_floor))));
  }
  return feats;
}

// FBK1 feature file: magic "FBK1", u32 T, u32 dim, then T*dim little-endian
// float32 values, row-major.

inline Bytes WriteFeatureFile(const FeatureSequence& f) {
  Bytes out;
  out.reserve(12 + 4 * f.values.size());
  PutTag(out, "FBK1");
  PutU32(out, std::uint32_t(f.num_frames));
  PutU32(out, std::uint32_t(f.dim));
  for (float v : f.values) PutF32(out, v);
  return out;
}

inline FeatureSequence ParseFeatureFile(const Bytes& bytes) {
  ByteReader r(bytes, "fbk1");
  if (r.Tag("magic") != "FBK1") throw FormatError("fbk1: bad magic");
  FeatureSequence f;
  f.num_frames = r.U32("num_frames");
  f.dim = r.U32("dim");
  if (f.dim == 0) throw FormatError("fbk1: dim is zero");
  r.Need(4 * f.num_frames * f.dim, "feature values");
  f.values.resize(f.num_frames * f.dim);
  for (float& v : f.values) v = r.F32("feature value");
  if (r.remaining() != 0) throw FormatError("fbk1: trailing bytes");
  return f;
}

}  // namespace drv
