/*
 * Copyright 2026 The MLFF Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Central finite-difference gradient checks in double precision.

#ifndef MLFF_TESTS_SUPPORT_GRADCHECK_HPP_
#define MLFF_TESTS_SUPPORT_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "mlff/matrix.hpp"

namespace mlff::testing {

inline constexpr double kFiniteDifferenceStep = 1e-5;

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
// gradient is ~0 from dividing roundoff by roundoff.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

// Perturbs every entry of `values` in place, evaluates `loss` at +-h, and
// returns the largest relative error against `analytic`.
inline double max_relative_error(std::span<double> values, std::span<const double> analytic,
                                 const std::function<double()>& loss,
                                 double h = kFiniteDifferenceStep) {
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss();
    values[i] = saved - h;
    const double down = loss();
    values[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

inline Matrix<double> random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                    double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix<double> m(rows, cols);
  for (double& v : m.values()) v = normal(rng);
  return m;
}

// Scalar probe loss sum(weights * out), whose gradient wrt `out` is `weights`.
inline double weighted_sum(const Matrix<double>& out, const Matrix<double>& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * weights.values()[i];
  return s;
}

}  // namespace mlff::testing

#endif  // MLFF_TESTS_SUPPORT_GRADCHECK_HPP_
