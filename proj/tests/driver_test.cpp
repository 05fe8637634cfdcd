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

#include "mlff/driver.hpp"

#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "mlff/error.hpp"

namespace mlff {
namespace {

namespace fs = std::filesystem;

struct Fixture {
  Dataset data;
  TaskStream stream;
};

Fixture small_stream(std::size_t tasks, std::size_t variants = 0, std::uint64_t seed = 1) {
  SynthSpec spec;
  spec.num_tasks = tasks;
  spec.level_dims = {4, 8, 12};
  spec.signal_level = 1;
  spec.samples_per_class = 60;
  spec.extra_variants = variants;
  spec.variant_sigma = 0.1;
  Fixture f{synth_generate(spec, seed), {}};
  f.stream = partition_tasks(f.data.records, seed, 90);
  return f;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.initial_epochs = 3;
  c.epochs_per_adaptation = 2;
  c.batch_size = 16;
  c.lr_max = 1e-2;
  c.model_seed = 7;
  c.data_seed = 8;
  c.strategy_seed = 9;
  return c;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("mlff_driver_test_" + name);
}

// --- config --------------------------------------------------------------

TEST(ExperimentConfigTest, ValidationAndJsonRoundTrip) {
  ExperimentConfig c = small_config();
  c.buffer_capacity = 20;
  c.strategy = Strategy::kGrasp;
  c.probe_level = 1;
  const auto back = ExperimentConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());

  auto bad = c;
  bad.epochs_per_adaptation = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.batch_size = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.strategy = Strategy::kNone;
  EXPECT_THROW(bad.validate(), ConfigError);

  auto j = c.to_json();
  j["epochs"] = 3;
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);
}

TEST(ExperimentConfigTest, HeadSpecDefaultsToDeepestWidth) {
  DatasetManifest m;
  m.level_dims = {4, 8, 12};
  ExperimentConfig c;
  EXPECT_EQ(make_head_spec(c, m).fusion.fused_dim, 12u);
  c.head = HeadKind::kMlpProbe;
  const HeadSpec probe = make_head_spec(c, m);
  EXPECT_EQ(probe.probe_level, 2u);
  EXPECT_EQ(probe.input_dim(), 12u);
  c.probe_level = 0;
  EXPECT_EQ(make_head_spec(c, m).input_dim(), 4u);
}

// --- experiment ----------------------------------------------------------

TEST(RunExperimentTest, SingleTaskIsPlainTrainingPlusOneRow) {
  const Fixture f = small_stream(1);
  ExperimentConfig c = small_config();
  c.initial_epochs = 20;
  const auto result = run_experiment(c, f.data, f.stream);
  ASSERT_EQ(result.report.f1.size(), 1u);
  ASSERT_EQ(result.report.f1[0].size(), 1u);
  EXPECT_DOUBLE_EQ(result.report.af1, result.report.f1[0][0]);
  EXPECT_FALSE(result.report.ff1.has_value());
  EXPECT_GT(result.report.af1, 0.9);
  EXPECT_EQ(result.report.rounds[0].epochs, 20u);
}

TEST(RunExperimentTest, FullMatrixAndRoundTraces) {
  const Fixture f = small_stream(3);
  ExperimentConfig c = small_config();
  c.buffer_capacity = 30;
  c.strategy = Strategy::kBalancedRandom;
  const auto result = run_experiment(c, f.data, f.stream);
  const auto& r = result.report;
  ASSERT_EQ(r.f1.size(), 3u);
  EXPECT_NO_THROW(check_complete(r.f1));
  EXPECT_DOUBLE_EQ(r.af1, compute_af1(r.f1));
  ASSERT_TRUE(r.ff1.has_value());
  EXPECT_DOUBLE_EQ(*r.ff1, compute_ff1(r.f1));
  EXPECT_EQ(r.task_order, (std::vector<std::uint16_t>{0, 1, 2}));
  ASSERT_EQ(r.rounds.size(), 3u);
  EXPECT_EQ(r.rounds[0].epochs, 3u);
  EXPECT_EQ(r.rounds[1].epochs, 2u);
  EXPECT_EQ(r.rounds[0].historic_samples, 0u);
  EXPECT_EQ(r.rounds[1].historic_samples, 30u);
  EXPECT_EQ(r.rounds[2].historic_samples, 30u);
  EXPECT_EQ(r.rounds[0].buffer_size_after, 30u);
  for (const auto& round : r.rounds) EXPECT_EQ(round.epoch_loss.size(), round.epochs);
}

TEST(RunExperimentTest, EveryHistoricSampleIsSeenExactlyOncePerRound) {
  // Batch sizes and buffer sizes chosen so that the schedule length is not a
  // multiple of the batch size and a trailing single item must be merged.
  for (std::size_t batch : {2, 7, 16, 33}) {
    for (std::size_t capacity : {3, 11, 40}) {
      const Fixture f = small_stream(3);
      ExperimentConfig c = small_config();
      c.batch_size = batch;
      c.buffer_capacity = capacity;
      c.strategy = Strategy::kMean;
      const auto result = run_experiment(c, f.data, f.stream);
      for (std::size_t i = 1; i < result.report.rounds.size(); ++i) {
        const auto& round = result.report.rounds[i];
        EXPECT_GT(round.historic_samples, 0u);
        EXPECT_EQ(round.historic_exposure_min, 1u) << batch << "/" << capacity;
        EXPECT_EQ(round.historic_exposure_max, 1u) << batch << "/" << capacity;
      }
    }
  }
}

TEST(RunExperimentTest, FixedSeedsGiveIdenticalPayloads) {
  const Fixture f = small_stream(3, 2);
  ExperimentConfig c = small_config();
  c.buffer_capacity = 12;
  c.strategy = Strategy::kAser;
  const auto a = run_experiment(c, f.data, f.stream);
  const auto b = run_experiment(c, f.data, f.stream);
  EXPECT_EQ(a.report.payload_json().dump(), b.report.payload_json().dump());
  c.model_seed = 70;
  const auto d = run_experiment(c, f.data, f.stream);
  EXPECT_NE(a.report.payload_json().dump(), d.report.payload_json().dump());
}

TEST(RunExperimentTest, VariantsAreSampledAndTestSetUsesOriginals) {
  const Fixture f = small_stream(2, 3);
  for (const auto& task : f.stream.tasks) {
    for (std::size_t i : task.test) EXPECT_EQ(f.data.records[i].variant, 0);
  }
  ExperimentConfig c = small_config();
  const auto with = run_experiment(c, f.data, f.stream);
  c.sample_variants = false;
  const auto without = run_experiment(c, f.data, f.stream);
  EXPECT_EQ(with.report.rounds[0].new_samples, without.report.rounds[0].new_samples);
  EXPECT_NE(with.report.rounds[0].epoch_loss, without.report.rounds[0].epoch_loss);
}

TEST(RunExperimentTest, CapacityBelowRoundsIsProtocolError) {
  const Fixture f = small_stream(3);
  ExperimentConfig c = small_config();
  c.buffer_capacity = 2;
  c.strategy = Strategy::kFps;
  EXPECT_THROW(run_experiment(c, f.data, f.stream), ProtocolError);
  EXPECT_THROW(run_experiment(small_config(), f.data, TaskStream{}), ProtocolError);
}

TEST(RunExperimentTest, EvaluationIsIdempotent) {
  const Fixture f = small_stream(2);
  auto result = run_experiment(small_config(), f.data, f.stream);
  const auto& last = f.stream.tasks.back().test;
  const double first = evaluate_f1(result.head, f.data, last);
  EXPECT_DOUBLE_EQ(evaluate_f1(result.head, f.data, last), first);
  EXPECT_DOUBLE_EQ(first, result.report.f1.back().back());
}

TEST(RunExperimentTest, CandidatesUseOriginalVariantOnly) {
  const Fixture f = small_stream(1, 2);
  const auto candidates = make_candidates(f.data, f.stream.tasks[0].train);
  EXPECT_EQ(candidates.size(), 90u);
  for (const auto& c : candidates) EXPECT_EQ(c.representation.size(), 24u);
}

// --- reports -------------------------------------------------------------

TEST(ReportTest, StructuredRoundTripAndCsvShape) {
  const Fixture f = small_stream(3);
  ExperimentConfig c = small_config();
  c.buffer_capacity = 9;
  c.strategy = Strategy::kBalancedRandom;
  const auto result = run_experiment(c, f.data, f.stream);

  const fs::path json_path = temp_path("report.json");
  export_report(result.report, json_path, ReportFormat::kStructured);
  const MetricsReport back = read_report(json_path);
  EXPECT_EQ(back.to_json(), result.report.to_json());
  EXPECT_NEAR(back.af1, compute_af1(back.f1), 1e-9);

  const fs::path csv_path = temp_path("f1.csv");
  export_report(result.report, csv_path, ReportFormat::kCsv);
  std::ifstream in(csv_path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "round,task_index,task_id,f1");
  std::size_t rows = 0;
  while (std::getline(in, line)) rows += !line.empty();
  EXPECT_EQ(rows, 9u);
  fs::remove(json_path);
  fs::remove(csv_path);
}

TEST(ReportTest, TamperedAggregateIsRejectedOnLoad) {
  const Fixture f = small_stream(2);
  const auto result = run_experiment(small_config(), f.data, f.stream);
  auto j = result.report.to_json();
  j["af1"] = j["af1"].get<double>() + 1e-6;
  EXPECT_THROW(MetricsReport::from_json(j), DataError);
}

TEST(ReportTest, PartialReportCannotBeExported) {
  MetricsReport partial;
  partial.f1 = {{0.5, 0.5}};
  EXPECT_THROW(export_report(partial, temp_path("partial.json"), ReportFormat::kStructured),
               ProtocolError);
  EXPECT_THROW(export_report(partial, temp_path("partial.csv"), ReportFormat::kCsv),
               ProtocolError);
}

}  // namespace
}  // namespace mlff
