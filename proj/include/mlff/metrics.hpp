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

#ifndef MLFF_METRICS_HPP_
#define MLFF_METRICS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mlff {

// Macro-averaged F1 over the classes that occur in `labels`. A class with
// TP = FP = FN = 0 cannot occur there, so every averaged class has a defined
// score; classes only ever predicted (never labeled) are left out.
double macro_f1(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels,
                std::size_t num_classes);

// f1[r][t]: macro-F1 on task t's test split after training round r
// (round 0 = initial training). Square, T x T.
using F1Matrix = std::vector<std::vector<double>>;

// Mean of the final row.
double compute_af1(const F1Matrix& m);

// Mean over rounds r = 0..T-2 of the mean F1 on the tasks not yet trained on
// (t = r+1..T-1, 0-based). Needs T >= 2.
double compute_ff1(const F1Matrix& m);

// Throws ProtocolError unless `m` is a complete square matrix with entries in
// [0, 1].
void check_complete(const F1Matrix& m);

}  // namespace mlff

#endif  // MLFF_METRICS_HPP_
