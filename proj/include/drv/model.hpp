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

#include <cstdint>
#include <map>

#include "drv/dr_head.hpp"
#include "drv/embedder.hpp"

namespace drv {

struct ModelConfig {
  EmbedderConfig embedder;
  HeadConfig head;

  static ModelConfig Desk() {
    ModelConfig c{EmbedderConfig::Desk(), HeadConfig::Desk()};
    return c;
  }
  static ModelConfig Paper() { return {EmbedderConfig::Paper(), HeadConfig::Paper()}; }

  bool operator==(const ModelConfig&) const = default;
};

/// Embedding network plus scoring head; the unit that is trained,
/// checkpointed and evaluated.
template <typename Real>
class Model {
 public:
  Model() = default;
  explicit Model(const ModelConfig& config)
      : config_(config),
        embedder_(config.embedder),
        head_(config.head, config.embedder.embedding_dim) {}

  void Initialize(std::uint64_t seed) {
    Rng rng(seed);
    embedder_.Initialize(rng);
    head_.Initialize(rng);
  }

  const ModelConfig& config() const { return config_; }
  const Embedder<Real>& embedder() const { return embedder_; }
  const DrHead<Real>& head() const { return head_; }

  NamedParams<Real> Parameters() const {
    NamedParams<Real> out = embedder_.Parameters();
    NamedParams<Real> h = head_.Parameters();
    out.insert(out.end(), h.begin(), h.end());
    return out;
  }

  void ZeroGrad() {
    for (auto& [name, t] : Parameters()) t.ZeroGrad();
  }

  /// Copies parameter values from a model of any precision with the same
  /// configuration.
  template <typename Other>
  void CopyFrom(const Model<Other>& other) {
    if (!(other.config() == config_))
      throw MismatchError("model copy between different configurations");
    auto src = other.Parameters();
    auto dst = Parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      auto from = src[i].second.Values();
      auto to = dst[i].second.MutableValues();
      for (std::size_t k = 0; k < to.size(); ++k) to[k] = Real(from[k]);
    }
  }

  template <typename To>
  Model<To> Cast() const {
    Model<To> out(config_);
    out.CopyFrom(*this);
    return out;
  }

 private:
  ModelConfig config_;
  Embedder<Real> embedder_;
  DrHead<Real> head_;
};

template <typename Real>
std::size_t CountParameters(const NamedParams<Real>& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.Size();
  return n;
}

}  // namespace drv
