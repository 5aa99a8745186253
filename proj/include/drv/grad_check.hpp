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
#include <functional>
#include <vector>

#include "drv/tensor.hpp"

namespace drv {

/// Scalar-valued function of a tensor, evaluated on the given tape.
using ScalarFn =
    std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>;

/// Scalar-valued function of parameters held elsewhere (closure state).
using ClosureFn = std::function<Tensor<double>(Tape<double>&)>;

/**
   Compares reverse-mode gradients with central finite differences.

   Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
*/
inline double GradCheck(const ScalarFn& f, const Tensor<double>& x,
                        double eps = 1e-5) {
  Tensor<double> var(x.shape(), {x.Values().begin(), x.Values().end()}, true);
  {
    Tape<double> tape;
    tape.Backward(f(tape, var));
  }
  std::vector<double> analytic(var.Grad().begin(), var.Grad().end());
  double worst = 0;
  for (std::size_t i = 0; i < x.Size(); ++i) {
    std::vector<double> plus(x.Values().begin(), x.Values().end());
    std::vector<double> minus = plus;
    plus[i] += eps;
    minus[i] -= eps;
    Tape<double> tp(false), tm(false);
    const double fp = f(tp, Tensor<double>(x.shape(), plus)).Item();
    const double fm = f(tm, Tensor<double>(x.shape(), minus)).Item();
    const double numeric = (fp - fm) / (2 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) /
                                std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

/// Same check over the coordinates of a set of parameter tensors that `f`
/// reads through captured handles.  Parameters are perturbed in place and
/// restored.  With `max_coords` > 0 only an evenly strided subset of at most
/// that many coordinates per tensor is perturbed.
inline double GradCheckParams(const ClosureFn& f,
                              std::vector<Tensor<double>> params,
                              double eps = 1e-5, std::size_t max_coords = 0) {
  for (Tensor<double>& p : params) {
    p.SetRequiresGrad(true);
    p.ZeroGrad();
  }
  {
    Tape<double> tape;
    tape.Backward(f(tape));
  }
  double worst = 0;
  for (Tensor<double>& p : params) {
    std::vector<double> analytic(p.Grad().begin(), p.Grad().end());
    auto values = p.MutableValues();
    const std::size_t stride =
        max_coords == 0 ? 1 : std::max<std::size_t>(1, (values.size() + max_coords - 1) / max_coords);
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double saved = values[i];
      values[i] = saved + eps;
      Tape<double> tp(false);
      const double fp = f(tp).Item();
      values[i] = saved - eps;
      Tape<double> tm(false);
      const double fm = f(tm).Item();
      values[i] = saved;
      const double numeric = (fp - fm) / (2 * eps);
      worst = std::max(worst, std::abs(analytic[i] - numeric) /
                                  std::max(1.0, std::abs(analytic[i])));
    }
  }
  return worst;
}

}  // namespace drv
