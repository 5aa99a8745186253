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

// Speaker embedding network: stacked LSTM layers with a tanh-activated
// recurrent projection (LSTM-P), followed by an affine map of the final
// frame of the last layer.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "drv/ops.hpp"
#include "drv/rng.hpp"

namespace drv {

template <typename Real>
using NamedParams = std::vector<std::pair<std::string, Tensor<Real>>>;

struct EmbedderConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_dim = 64;
  std::size_t proj_dim = 32;
  std::size_t embedding_dim = 32;
  std::size_t feature_dim = 40;

  static EmbedderConfig Desk() { return {}; }
  static EmbedderConfig Paper() { return {3, 768, 256, 256, 40}; }

  void Validate() const {
    if (num_layers < 1) throw ConfigError("embedder: num_layers must be >= 1");
    if (hidden_dim < 1 || proj_dim < 1 || embedding_dim < 1 || feature_dim < 1)
      throw ConfigError("embedder: dimensions must be positive");
    if (proj_dim > hidden_dim)
      throw ConfigError("embedder: proj_dim " + std::to_string(proj_dim) +
                        " exceeds hidden_dim " + std::to_string(hidden_dim));
  }

  /// Per layer: 4 gates x ((in + proj) x hidden + hidden) plus a
  /// hidden x proj projection; then proj x embedding + embedding for the
  /// output map.  `in` is feature_dim for the first layer, proj_dim after.
  std::size_t ParameterCount() const {
    std::size_t total = 0;
    for (std::size_t l = 0; l < num_layers; ++l) {
      const std::size_t in = l == 0 ? feature_dim : proj_dim;
      total += 4 * ((in + proj_dim) * hidden_dim + hidden_dim);
      total += hidden_dim * proj_dim;
    }
    return total + proj_dim * embedding_dim + embedding_dim;
  }

  bool operator==(const EmbedderConfig&) const = default;
};

template <typename Real>
struct LstmPLayer {
  std::size_t input_dim = 0, hidden_dim = 0, proj_dim = 0;
  // Gate weights are (input_dim + proj_dim) x hidden_dim, rows ordered
  // [input; recurrent]; biases are 1 x hidden_dim.
  Tensor<Real> w_input, w_forget, w_cell, w_output;
  Tensor<Real> b_input, b_forget, b_cell, b_output;
  Tensor<Real> projection;  // hidden_dim x proj_dim, no bias

  LstmPLayer() = default;
  LstmPLayer(std::size_t in, std::size_t hidden, std::size_t proj)
      : input_dim(in), hidden_dim(hidden), proj_dim(proj) {
    for (Tensor<Real>* w : {&w_input, &w_forget, &w_cell, &w_output})
      *w = Tensor<Real>({in + proj, hidden}, true);
    for (Tensor<Real>* b : {&b_input, &b_forget, &b_cell, &b_output})
      *b = Tensor<Real>({1, hidden}, true);
    projection = Tensor<Real>({hidden, proj}, true);
  }

  NamedParams<Real> Parameters(const std::string& prefix) const {
    return {{prefix + "w_input", w_input},   {prefix + "w_forget", w_forget},
            {prefix + "w_cell", w_cell},     {prefix + "w_output", w_output},
            {prefix + "b_input", b_input},   {prefix + "b_forget", b_forget},
            {prefix + "b_cell", b_cell},     {prefix + "b_output", b_output},
            {prefix + "projection", projection}};
  }
};

/// Fills `t` with uniform values in +-bound.  Values are drawn in double so
/// float and double models built from the same seed agree.
template <typename Real>
void FillUniform(Tensor<Real>& t, double bound, Rng& rng) {
  for (Real& v : t.MutableValues()) v = Real(rng.Uniform(-bound, bound));
}

template <typename Real>
void FillConstant(Tensor<Real>& t, double value) {
  for (Real& v : t.MutableValues()) v = Real(value);
}

/**
   Runs one LSTM-P layer over a batch of equal-length sequences.

   `steps[t]` holds frame t of every sequence as a [B x input_dim] matrix.
   The recurrence feeds back the projected, tanh-activated output r:

     [i f o] = sigmoid([x_t r_{t-1}] W_{i,f,o} + b_{i,f,o})
     g       = tanh([x_t r_{t-1}] W_c + b_c)
     c_t     = f * c_{t-1} + i * g
     r_t     = tanh((o * tanh(c_t)) P)

   with zero initial state.  Returns r_t for every t as [B x proj_dim].
*/
template <typename Real>
std::vector<Tensor<Real>> LstmPForward(Tape<Real>& tape,
                                       const LstmPLayer<Real>& layer,
                                       const std::vector<Tensor<Real>>& steps) {
  if (steps.empty()) throw DataError("lstm-p: empty sequence");
  const std::size_t batch = steps[0].NumRows();
  std::vector<Tensor<Real>> outputs;
  outputs.reserve(steps.size());
  Tensor<Real> r_prev({batch, layer.proj_dim});
  Tensor<Real> c_prev;
  for (const Tensor<Real>& x : steps) {
    if (x.Rank() != 2 || x.Dim(1) != layer.input_dim || x.Dim(0) != batch)
      throw DimensionError("lstm-p: frame " + ShapeString(x.shape()) +
                           " does not match input_dim " +
                           std::to_string(layer.input_dim) + " batch " +
                           std::to_string(batch));
    Tensor<Real> xr = Concat(tape, {x, r_prev}, 1);
    auto gate = [&](const Tensor<Real>& w, const Tensor<Real>& b,
                    ActivationKind kind) {
      return Activation(tape, AddRowVector(tape, MatMul(tape, xr, w), b), kind);
    };
    Tensor<Real> i = gate(layer.w_input, layer.b_input, ActivationKind::kSigmoid);
    Tensor<Real> f = gate(layer.w_forget, layer.b_forget, ActivationKind::kSigmoid);
    Tensor<Real> g = gate(layer.w_cell, layer.b_cell, ActivationKind::kTanh);
    Tensor<Real> o = gate(layer.w_output, layer.b_output, ActivationKind::kSigmoid);
    Tensor<Real> c = Mul(tape, i, g);
    if (!c_prev.Empty()) c = Add(tape, Mul(tape, f, c_prev), c);
    Tensor<Real> h = Mul(tape, o, Tanh(tape, c));
    Tensor<Real> r = Tanh(tape, MatMul(tape, h, layer.projection));
    outputs.push_back(r);
    r_prev = r;
    c_prev = c;
  }
  return outputs;
}

/// Single-sequence form: [T x input_dim] in, [T x proj_dim] out.
template <typename Real>
Tensor<Real> LstmPForward(Tape<Real>& tape, const LstmPLayer<Real>& layer,
                          const Tensor<Real>& seq) {
  if (seq.Rank() != 2) throw DimensionError("lstm-p: sequence must be a matrix");
  std::vector<Tensor<Real>> steps;
  for (std::size_t t = 0; t < seq.Dim(0); ++t)
    steps.push_back(Slice(tape, seq, 0, t, t + 1));
  return Concat(tape, LstmPForward(tape, layer, steps), 0);
}

/// Splits a feature matrix into per-frame [1 x dim] tensors (no gradient).
template <typename Real>
std::vector<Tensor<Real>> FramesAsSteps(const Tensor<Real>& seq) {
  std::vector<Tensor<Real>> steps;
  const std::size_t dim = seq.Dim(1);
  auto v = seq.Values();
  for (std::size_t t = 0; t < seq.Dim(0); ++t)
    steps.emplace_back(Shape{1, dim},
                       std::vector<Real>(v.begin() + t * dim, v.begin() + (t + 1) * dim));
  return steps;
}

template <typename Real>
class Embedder {
 public:
  Embedder() = default;
  explicit Embedder(const EmbedderConfig& config) : config_(config) {
    config_.Validate();
    for (std::size_t l = 0; l < config_.num_layers; ++l)
      layers_.emplace_back(l == 0 ? config_.feature_dim : config_.proj_dim,
                           config_.hidden_dim, config_.proj_dim);
    out_weight_ = Tensor<Real>({config_.proj_dim, config_.embedding_dim}, true);
    out_bias_ = Tensor<Real>({1, config_.embedding_dim}, true);
  }

  /// Weights uniform in +-1/sqrt(fan_in); forget-gate bias 1, other biases 0.
  void Initialize(Rng& rng) {
    for (LstmPLayer<Real>& layer : layers_) {
      const double gate_bound = 1.0 / std::sqrt(double(layer.input_dim + layer.proj_dim));
      for (Tensor<Real>* w : {&layer.w_input, &layer.w_forget, &layer.w_cell, &layer.w_output})
        FillUniform(*w, gate_bound, rng);
      for (Tensor<Real>* b : {&layer.b_input, &layer.b_cell, &layer.b_output})
        FillConstant(*b, 0.0);
      FillConstant(layer.b_forget, 1.0);
      FillUniform(layer.projection, 1.0 / std::sqrt(double(layer.hidden_dim)), rng);
    }
    FillUniform(out_weight_, 1.0 / std::sqrt(double(config_.proj_dim)), rng);
    FillConstant(out_bias_, 0.0);
  }

  /// Embeds B equal-length sequences given frame-major steps ([B x F] each);
  /// returns [B x embedding_dim].
  Tensor<Real> EmbedBatch(Tape<Real>& tape, const std::vector<Tensor<Real>>& steps) const {
    if (steps.empty()) throw DataError("embed: empty feature sequence");
    std::vector<Tensor<Real>> seq = steps;
    for (const LstmPLayer<Real>& layer : layers_) seq = LstmPForward(tape, layer, seq);
    return AddRowVector(tape, MatMul(tape, seq.back(), out_weight_), out_bias_);
  }

  /// [T x feature_dim] features of one utterance to a [1 x embedding_dim]
  /// embedding.
  Tensor<Real> Embed(Tape<Real>& tape, const Tensor<Real>& features) const {
    if (features.Rank() != 2 || features.Dim(1) != config_.feature_dim)
      throw DimensionError("embed: features " + ShapeString(features.shape()) +
                           " do not have feature_dim " +
                           std::to_string(config_.feature_dim));
    return EmbedBatch(tape, FramesAsSteps(features));
  }

  const EmbedderConfig& config() const { return config_; }
  const std::vector<LstmPLayer<Real>>& layers() const { return layers_; }

  NamedParams<Real> Parameters() const {
    NamedParams<Real> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto p = layers_[l].Parameters("embedder.layer" + std::to_string(l) + ".");
      out.insert(out.end(), p.begin(), p.end());
    }
    out.emplace_back("embedder.out.weight", out_weight_);
    out.emplace_back("embedder.out.bias", out_bias_);
    return out;
  }

 private:
  EmbedderConfig config_;
  std::vector<LstmPLayer<Real>> layers_;
  Tensor<Real> out_weight_, out_bias_;
};

/// Arithmetic mean of [1 x E] (or [k x E]) embeddings.
template <typename Real>
Tensor<Real> EnrollAverage(Tape<Real>& tape, const std::vector<Tensor<Real>>& embeddings) {
  if (embeddings.empty()) throw DataError("enroll_average: no embeddings");
  return Mean(tape, Concat(tape, embeddings, 0), std::size_t{0});
}

/// A speaker embedding split into d base dimensions and s = size - d
/// side-information dimensions.
template <typename Real>
struct DrVector {
  std::vector<Real> values;
  std::size_t d = 0;

  std::size_t side_dims() const { return values.size() - d; }
  std::span<const Real> base() const { return {values.data(), d}; }
  std::span<const Real> side() const { return {values.data() + d, side_dims()}; }
};

template <typename Real>
DrVector<Real> EnrollAverage(const std::vector<DrVector<Real>>& embeddings) {
  if (embeddings.empty()) throw DataError("enroll_average: no embeddings");
  DrVector<Real> out{std::vector<Real>(embeddings[0].values.size(), Real(0)), embeddings[0].d};
  for (const DrVector<Real>& e : embeddings) {
    if (e.values.size() != out.values.size() || e.d != out.d)
      throw DimensionError("enroll_average: embeddings differ in dimensions");
    for (std::size_t i = 0; i < e.values.size(); ++i) out.values[i] += e.values[i];
  }
  for (Real& v : out.values) v /= Real(embeddings.size());
  return out;
}

}  // namespace drv
