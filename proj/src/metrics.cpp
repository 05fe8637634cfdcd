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

#include "mlff/metrics.hpp"

#include <string>

#include "mlff/error.hpp"

namespace mlff {

double macro_f1(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels,
                std::size_t num_classes) {
  if (labels.empty()) throw ProtocolError("F1 of an empty prediction set");
  if (predictions.size() != labels.size()) {
    throw ProtocolError("prediction count " + std::to_string(predictions.size()) +
                        " differs from label count " + std::to_string(labels.size()));
  }
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = labels[i];
    const auto p = predictions[i];
    if (y >= num_classes || p >= num_classes) {
      throw DataError("class index out of range for " + std::to_string(num_classes) + " classes");
    }
    if (p == y) {
      ++tp[y];
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (tp[c] + fn[c] == 0) continue;
    sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    ++present;
  }
  return sum / static_cast<double>(present);
}

void check_complete(const F1Matrix& m) {
  if (m.empty()) throw ProtocolError("empty F1 matrix");
  for (const auto& row : m) {
    if (row.size() != m.size()) throw ProtocolError("F1 matrix is not square");
    for (double v : row) {
      if (!(v >= 0.0 && v <= 1.0)) throw ProtocolError("F1 entry outside [0, 1]");
    }
  }
}

double compute_af1(const F1Matrix& m) {
  check_complete(m);
  double sum = 0.0;
  for (double v : m.back()) sum += v;
  return sum / static_cast<double>(m.back().size());
}

double compute_ff1(const F1Matrix& m) {
  check_complete(m);
  const std::size_t tasks = m.size();
  if (tasks < 2) throw ProtocolError("FF1 needs at least two tasks");
  double outer = 0.0;
  for (std::size_t r = 0; r + 1 < tasks; ++r) {
    double inner = 0.0;
    for (std::size_t t = r + 1; t < tasks; ++t) inner += m[r][t];
    outer += inner / static_cast<double>(tasks - r - 1);
  }
  return outer / static_cast<double>(tasks - 1);
}

}  // namespace mlff
