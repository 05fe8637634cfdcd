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

// Rehearsal-based task-incremental experiments.
//
// Round 0 trains a fresh head on the first task. Every later round trains on
// the next task's training split for `epochs_per_adaptation` epochs while the
// buffered historic samples are shuffled once and spread uniformly over all
// mini-batches of the round, so each of them is seen exactly once. After each
// round the head is evaluated on every task's test split (one F1 matrix row)
// and the finished task is admitted to the buffer.

#ifndef MLFF_DRIVER_HPP_
#define MLFF_DRIVER_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlff/metrics.hpp"
#include "mlff/model.hpp"
#include "mlff/rehearsal.hpp"
#include "mlff/store.hpp"

namespace mlff {

struct ExperimentConfig {
  HeadKind head = HeadKind::kMlff;
  std::size_t fused_dim = 0;                 // 0: width of the deepest level
  std::optional<std::size_t> probe_level;    // probes only; default deepest
  std::size_t initial_epochs = 10;
  std::size_t epochs_per_adaptation = 3;
  std::size_t batch_size = 32;
  double lr_max = 1e-3;
  double lr_min = 0.0;
  std::size_t buffer_capacity = 0;
  Strategy strategy = Strategy::kNone;
  StrategyOptions strategy_options;
  std::uint64_t model_seed = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t strategy_seed = 0;
  double aug_sigma = 0.0;        // embedding-space noise when no variants are used
  bool sample_variants = true;   // draw one stored variant per sample per epoch

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

HeadSpec make_head_spec(const ExperimentConfig& config, const DatasetManifest& manifest);

struct RoundTrace {
  std::uint16_t task_id = 0;
  std::size_t epochs = 0;
  std::size_t steps = 0;
  std::vector<float> epoch_loss;
  std::size_t new_samples = 0;
  std::size_t historic_samples = 0;
  // Per-sample exposure counters of the historic samples in this round.
  std::size_t historic_exposure_min = 0;
  std::size_t historic_exposure_max = 0;
  std::size_t buffer_size_after = 0;
};

struct MetricsReport {
  static constexpr int kSchemaVersion = 1;

  nlohmann::json config;  // resolved experiment config + head spec
  std::vector<std::uint16_t> task_order;
  F1Matrix f1;
  double af1 = 0.0;
  std::optional<double> ff1;  // undefined for a single task
  std::vector<RoundTrace> rounds;
  nlohmann::json meta = nlohmann::json::object();  // timestamps, wall clock

  // Everything except `meta`; deterministic given seeds.
  nlohmann::json payload_json() const;
  nlohmann::json to_json() const;
  // Verifies that the stored AF1/FF1 agree with the matrix (1e-9).
  static MetricsReport from_json(const nlohmann::json& j);
};

struct ExperimentResult {
  MetricsReport report;
  Head<float> head;
};

ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& data,
                                const TaskStream& stream);

// Macro-F1 of `head` on the listed records (eval mode).
double evaluate_f1(Head<float>& head, const Dataset& data, std::span<const std::size_t> indices);

// Concatenated variant-0 representations of the listed records.
std::vector<Candidate> make_candidates(const Dataset& data, std::span<const std::size_t> indices);

enum class ReportFormat { kStructured, kCsv };

// CSV: one row per (round, task) entry of the F1 matrix.
void export_report(const MetricsReport& report, const std::filesystem::path& path,
                   ReportFormat format);
MetricsReport read_report(const std::filesystem::path& path);

}  // namespace mlff

#endif  // MLFF_DRIVER_HPP_
