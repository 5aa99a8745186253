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

/*
  Training losses over score blocks.  A score block y is N x N with row i a
  test utterance of speaker i and column j the enrollment model of speaker j,
  so targets sit on the diagonal.

  GE2E softmax:        L_S  = -sum_i log( e^{y_ii} / sum_j e^{y_ij} )
  GE2E extended-set:   L_MS = -sum_i log( e^{y_ii} / (e^{y_ii} + sum_{k != j} e^{y_kj}) )
                       (the double sum runs over every off-diagonal entry)
  Equal-class-weight sigmoid cross-entropy:
                       L_B  = mean_tar softplus(-y) + mean_non softplus(y)

  All three are evaluated with log-sum-exp stabilization in double precision
  regardless of the tensor precision.
*/

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "drv/ops.hpp"

namespace drv {

enum class LossKind { kGe2eSoftmax, kGe2eXs, kEcwBce };

inline std::string LossName(LossKind kind) {
  switch (kind) {
    case LossKind::kGe2eSoftmax:
      return "ge2e_softmax";
    case LossKind::kGe2eXs:
      return "ge2e_xs";
    case LossKind::kEcwBce:
      return "ecw_bce";
  }
  return "?";
}

inline LossKind ParseLossKind(const std::string& name) {
  if (name == "ge2e_softmax") return LossKind::kGe2eSoftmax;
  if (name == "ge2e_xs") return LossKind::kGe2eXs;
  if (name == "ecw_bce") return LossKind::kEcwBce;
  throw ConfigError("unknown loss kind '" + name +
                    "' (expected ge2e_softmax, ge2e_xs or ecw_bce)");
}

template <typename Real>
struct ScoreBlock {
  std::size_t n = 0;
  std::vector<Real> y;  // n x n, row-major

  Real operator()(std::size_t i, std::size_t j) const { return y[i * n + j]; }
  Real& operator()(std::size_t i, std::size_t j) { return y[i * n + j]; }
};

namespace internal {

inline double LogAddExp(double a, double b) {
  const double hi = std::max(a, b);
  if (hi == -std::numeric_limits<double>::infinity()) return hi;
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

inline double Softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double StableSigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Each core returns the loss and, when `grad` is non-null, writes dL/dy.

template <typename Real>
double Ge2eSoftmaxCore(std::span<const Real> y, std::size_t n, double* grad) {
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = y.data() + i * n;
    double hi = row[0];
    for (std::size_t j = 1; j < n; ++j) hi = std::max(hi, double(row[j]));
    double acc = 0;
    for (std::size_t j = 0; j < n; ++j) acc += std::exp(double(row[j]) - hi);
    const double lse = hi + std::log(acc);
    loss += lse - double(row[i]);
    if (grad)
      for (std::size_t j = 0; j < n; ++j)
        grad[i * n + j] = std::exp(double(row[j]) - lse) - (i == j ? 1.0 : 0.0);
  }
  return loss;
}

template <typename Real>
double Ge2eXsCore(std::span<const Real> y, std::size_t n, double* grad) {
  if (n == 1) {
    if (grad) grad[0] = 0;
    return 0;
  }
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j)
      if (k != j) hi = std::max(hi, double(y[k * n + j]));
  double acc = 0;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j)
      if (k != j) acc += std::exp(double(y[k * n + j]) - hi);
  const double lse_off = hi + std::log(acc);

  std::vector<double> log_denom(n);
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    log_denom[i] = LogAddExp(double(y[i * n + i]), lse_off);
    loss += log_denom[i] - double(y[i * n + i]);
  }
  if (grad) {
    // d/dy_kj (off-diagonal) = e^{y_kj} * sum_i 1/D_i, factored around the
    // smallest log-denominator to stay in range.
    const double lo = *std::min_element(log_denom.begin(), log_denom.end());
    double inv_sum = 0;
    for (double ld : log_denom) inv_sum += std::exp(lo - ld);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n; ++j) {
        const double v = double(y[k * n + j]);
        grad[k * n + j] = k == j ? std::exp(v - log_denom[k]) - 1.0
                                 : std::exp(v - lo) * inv_sum;
      }
  }
  return loss;
}

template <typename Real>
double EcwBceCore(std::span<const Real> scores, const std::vector<bool>& is_target,
                  double* grad) {
  std::size_t n_tar = 0, n_non = 0;
  for (bool t : is_target) (t ? n_tar : n_non)++;
  if (n_tar == 0 || n_non == 0)
    throw DataError("ecw_bce: need at least one target and one nontarget score (got " +
                    std::to_string(n_tar) + " / " + std::to_string(n_non) + ")");
  double tar = 0, non = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    if (is_target[i]) {
      tar += Softplus(-s);
      if (grad) grad[i] = (StableSigmoid(s) - 1.0) / double(n_tar);
    } else {
      non += Softplus(s);
      if (grad) grad[i] = StableSigmoid(s) / double(n_non);
    }
  }
  return tar / double(n_tar) + non / double(n_non);
}

template <typename Real>
void RequireSquare(const Tensor<Real>& block, const char* op) {
  if (block.Rank() != 2 || block.Dim(0) != block.Dim(1))
    throw DimensionError(std::string(op) + ": score block must be square, got " +
                         ShapeString(block.shape()));
}

// Wraps a core as a tape op producing a scalar.
template <typename Real, typename Core>
Tensor<Real> RecordLoss(Tape<Real>& tape, const Tensor<Real>& input, Core core) {
  const bool record = tape.ShouldRecord({&input});
  std::vector<double> grad(record ? input.Size() : 0);
  const double loss = core(record ? grad.data() : nullptr);
  Tensor<Real> result = Tensor<Real>::Scalar(Real(loss), record);
  if (record) {
    tape.Record(result, {input}, [input, result, grad = std::move(grad)]() {
      const Real g = result.Grad()[0];
      auto gi = input.MutableGrad();
      for (std::size_t k = 0; k < gi.size(); ++k) gi[k] += g * Real(grad[k]);
    });
  }
  return result;
}

}  // namespace internal

template <typename Real>
Tensor<Real> Ge2eSoftmaxLoss(Tape<Real>& tape, const Tensor<Real>& block) {
  internal::RequireSquare(block, "ge2e_softmax");
  const std::size_t n = block.Dim(0);
  return internal::RecordLoss(tape, block, [&](double* g) {
    return internal::Ge2eSoftmaxCore(block.Values(), n, g);
  });
}

template <typename Real>
Tensor<Real> Ge2eXsLoss(Tape<Real>& tape, const Tensor<Real>& block) {
  internal::RequireSquare(block, "ge2e_xs");
  const std::size_t n = block.Dim(0);
  return internal::RecordLoss(tape, block, [&](double* g) {
    return internal::Ge2eXsCore(block.Values(), n, g);
  });
}

/// `is_target` flags each element of `scores` (any shape, row-major).
template <typename Real>
Tensor<Real> EcwBceLoss(Tape<Real>& tape, const Tensor<Real>& scores,
                        const std::vector<bool>& is_target) {
  if (is_target.size() != scores.Size())
    throw DimensionError("ecw_bce: " + std::to_string(is_target.size()) +
                         " labels for " + std::to_string(scores.Size()) + " scores");
  return internal::RecordLoss(tape, scores, [&](double* g) {
    return internal::EcwBceCore(scores.Values(), is_target, g);
  });
}

/// Loss of one block; for ECW BCE the diagonal is the target class.
template <typename Real>
Tensor<Real> BlockLoss(Tape<Real>& tape, const Tensor<Real>& block, LossKind kind) {
  switch (kind) {
    case LossKind::kGe2eSoftmax:
      return Ge2eSoftmaxLoss(tape, block);
    case LossKind::kGe2eXs:
      return Ge2eXsLoss(tape, block);
    case LossKind::kEcwBce: {
      internal::RequireSquare(block, "ecw_bce");
      const std::size_t n = block.Dim(0);
      std::vector<bool> is_target(n * n, false);
      for (std::size_t i = 0; i < n; ++i) is_target[i * n + i] = true;
      return EcwBceLoss(tape, block, is_target);
    }
  }
  throw ContractError("unknown loss kind");
}

// Plain-value forms.

template <typename Real>
double Ge2eSoftmaxLoss(const ScoreBlock<Real>& block) {
  return internal::Ge2eSoftmaxCore<Real>(block.y, block.n, nullptr);
}

template <typename Real>
double Ge2eXsLoss(const ScoreBlock<Real>& block) {
  return internal::Ge2eXsCore<Real>(block.y, block.n, nullptr);
}

template <typename Real>
double EcwBceLoss(const std::vector<Real>& scores, const std::vector<bool>& is_target) {
  if (is_target.size() != scores.size())
    throw DimensionError("ecw_bce: label count differs from score count");
  return internal::EcwBceCore<Real>(scores, is_target, nullptr);
}

}  // namespace drv
