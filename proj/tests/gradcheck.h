/* Copyright 2026 The PipeSim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef PIPESIM_TESTS_GRADCHECK_H_
#define PIPESIM_TESTS_GRADCHECK_H_

#include <cmath>
#include <random>
#include <vector>

#include "pipesim/engine.h"

namespace pipesim {

struct GradCheck {
  double param_error = 0.0;  // ||analytic - numeric|| / (||analytic|| + ||numeric||)
  double input_error = 0.0;
};

inline double ChainLoss(const std::vector<StageModel>& models,
                        const std::vector<std::vector<double>>& weights,
                        const Matrix& x, const std::vector<int>& labels) {
  Matrix a = x;
  for (size_t s = 0; s < models.size(); ++s) a = ForwardStage(models[s], weights[s], a);
  return SoftmaxCrossEntropy(a, labels).loss;
}

inline double RelativeError(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nn);
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

// Random chain of `stages` dense stages on `samples` rows; analytic
// gradients against central differences with h = 1e-5.
inline GradCheck CheckRandomInstance(std::mt19937_64& rng, int stages, int samples) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, 2);
  const auto models = BuildStageModels(stages, 3, 4, 3);
  std::vector<std::vector<double>> w;
  for (const auto& m : models) {
    std::vector<double> v(m.param_count());
    for (double& x : v) x = 0.7 * n(rng);
    w.push_back(v);
  }
  Matrix x(samples, 3);
  for (double& v : x.data) v = n(rng);
  std::vector<int> y(samples);
  for (int& v : y) v = cls(rng);

  // Analytic.
  std::vector<StageCache> caches;
  Matrix a = x;
  for (size_t s = 0; s < models.size(); ++s) {
    StageCache c;
    c.input = a;
    c.output = ForwardStage(models[s], w[s], a);
    a = c.output;
    caches.push_back(c);
  }
  Matrix up = SoftmaxCrossEntropy(a, y).grad_logits;
  std::vector<std::vector<double>> grads(models.size());
  for (int s = static_cast<int>(models.size()) - 1; s >= 0; --s) {
    StageGradients g = BackwardStage(models[s], w[s], &caches[s], up);
    grads[s] = g.params;
    up = g.downstream;
  }

  const double h = 1e-5;
  std::vector<double> analytic, numeric;
  for (size_t s = 0; s < models.size(); ++s) {
    for (size_t i = 0; i < w[s].size(); ++i) {
      const double keep = w[s][i];
      w[s][i] = keep + h;
      const double lp = ChainLoss(models, w, x, y);
      w[s][i] = keep - h;
      const double lm = ChainLoss(models, w, x, y);
      w[s][i] = keep;
      analytic.push_back(grads[s][i]);
      numeric.push_back((lp - lm) / (2 * h));
    }
  }
  GradCheck out;
  out.param_error = RelativeError(analytic, numeric);

  analytic.clear();
  numeric.clear();
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double keep = x.data[i];
    x.data[i] = keep + h;
    const double lp = ChainLoss(models, w, x, y);
    x.data[i] = keep - h;
    const double lm = ChainLoss(models, w, x, y);
    x.data[i] = keep;
    analytic.push_back(up.data[i]);
    numeric.push_back((lp - lm) / (2 * h));
  }
  out.input_error = RelativeError(analytic, numeric);
  return out;
}

}  // namespace pipesim

#endif  // PIPESIM_TESTS_GRADCHECK_H_
