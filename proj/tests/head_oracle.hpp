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

// Scalar re-implementation of the scoring head, reading only the parameter
// values.  Shares no code with the tape version.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "drv/dr_head.hpp"

namespace drv {

inline double OracleCosine(const std::vector<double>& e, const std::vector<double>& t,
                           std::size_t d) {
  double dot = 0, ne = 0, nt = 0;
  for (std::size_t k = 0; k < d; ++k) {
    dot += e[k] * t[k];
    ne += e[k] * e[k];
    nt += t[k] * t[k];
  }
  return dot / ((std::sqrt(ne) + 1e-12) * (std::sqrt(nt) + 1e-12));
}

inline double OracleHeadScore(const DrHead<double>& head, const std::vector<double>& e,
                              const std::vector<double>& t) {
  const SwitchConfig& s = head.switches();
  double raw = 0;
  double cos = 0;
  if (s.cosine_to_output || s.cosine_to_network) cos = OracleCosine(e, t, s.d);
  if (s.cosine_to_output) raw += cos;
  if (s.network) {
    std::vector<double> x = e;
    x.insert(x.end(), t.begin(), t.end());
    if (s.cosine_to_network) x.push_back(cos);
    const DecisionNet<double>& net = head.network();
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      const Tensor<double>& w = net.weights[l];
      std::vector<double> h(w.Dim(1));
      for (std::size_t j = 0; j < h.size(); ++j) {
        double acc = net.biases[l][j];
        for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * w(i, j);
        h[j] = acc > 0 ? acc : 0.2 * acc;
      }
      x = h;
    }
    double out = net.readout_bias[0];
    for (std::size_t j = 0; j < x.size(); ++j) out += x[j] * net.readout_weight[j];
    raw += out;
  }
  return head.scale().Item() * raw + head.offset().Item();
}

/// Stable argsort (ties keep index order).
inline std::vector<std::size_t> Argsort(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return idx;
}

}  // namespace drv
