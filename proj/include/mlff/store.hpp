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

// Persistent multi-level embedding datasets.
//
// Container layout (all integers and reals little-endian):
//
//   "MLFF" | u16 version (=1) | u32 L | L bytes UTF-8 JSON manifest | payload
//
// For embedding datasets the payload is record_count records of
//
//   u64 sample_id | u16 label | u16 task_id | u16 variant | u16 reserved (=0)
//   | f32[c_1] | ... | f32[c_N]
//
// The same container with record_kind "head-params" stores a head checkpoint
// (see checkpoint.hpp).

#ifndef MLFF_STORE_HPP_
#define MLFF_STORE_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlff/model.hpp"

namespace mlff {

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr char kRecordKindEmbeddings[] = "embeddings";
inline constexpr char kRecordKindHeadParams[] = "head-params";

struct DatasetManifest {
  std::uint16_t format_version = kFormatVersion;
  std::vector<std::size_t> level_dims;
  std::uint32_t num_classes = 2;
  std::uint64_t record_count = 0;
  std::string backbone = "unknown";
  std::string pooling = "unknown";
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t num_levels() const noexcept { return level_dims.size(); }
  std::size_t total_dim() const noexcept;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

struct EmbeddingRecord {
  std::uint64_t sample_id = 0;
  std::uint16_t label = 0;
  std::uint16_t task_id = 0;
  std::uint16_t variant = 0;  // 0 = original
  std::vector<std::vector<float>> levels;

  // Level vectors concatenated in level order.
  std::vector<float> concatenated() const;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<EmbeddingRecord> records;
};

// Throws DataError on any record/manifest inconsistency.
void validate_dataset(const DatasetManifest& manifest, std::span<const EmbeddingRecord> records);

// Raw container access: manifest JSON plus undecoded payload bytes.
struct Container {
  nlohmann::json manifest;
  std::vector<std::uint8_t> payload;
};
std::vector<std::uint8_t> encode_container(const nlohmann::json& manifest,
                                           std::span<const std::uint8_t> payload);
Container decode_container(std::span<const std::uint8_t> bytes);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_dataset(const DatasetManifest& manifest,
                                         std::span<const EmbeddingRecord> records);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);

void write_dataset(const DatasetManifest& manifest, std::span<const EmbeddingRecord> records,
                   const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

// One-way CSV dump (sample_id, label, task_id, variant, then every value).
void write_records_csv(const Dataset& data, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Task partitioning

struct TaskSplit {
  std::uint16_t task_id = 0;
  std::vector<std::size_t> train;  // record indices, all variants
  std::vector<std::size_t> test;   // record indices, variant 0 only
};

struct TaskStream {
  std::vector<TaskSplit> tasks;
  std::vector<std::string> warnings;
};

// Per task, a seeded uniform sample of train_per_task sample ids goes to
// training and the rest to test. A task with no more than train_per_task
// samples keeps one sample for testing and records a warning. Tasks appear
// in ascending id order unless `order` lists them explicitly.
TaskStream partition_tasks(std::span<const EmbeddingRecord> records, std::uint64_t split_seed,
                           std::size_t train_per_task,
                           const std::optional<std::vector<std::uint16_t>>& order = std::nullopt);

// Stacks the listed records into per-level matrices.
LevelDataset to_level_dataset(std::span<const EmbeddingRecord> records,
                              std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// Synthetic task streams

struct SynthSpec {
  std::size_t num_tasks = 5;
  std::size_t num_classes = 2;
  std::vector<std::size_t> level_dims{16, 16, 16, 16};
  std::size_t samples_per_class = 1000;  // per task
  std::size_t signal_level = 2;          // 0-based
  double class_separation = 6.0;         // delta, in absolute units
  double task_shift = 1.0;
  double noise = 1.0;
  std::size_t extra_variants = 0;  // augmented copies per sample
  double variant_sigma = 0.0;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults.
  static SynthSpec from_json(const nlohmann::json& j);
  void validate() const;
};

// Non-signal levels carry only a per-task mean shift; the signal level adds
// delta * u_{task,class} with orthonormal class directions per task.
Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed);

// Adds i.i.d. N(0, sigma^2) to every value; the variant id is incremented.
EmbeddingRecord augment_gaussian(const EmbeddingRecord& record, double sigma, std::uint64_t seed);

}  // namespace mlff

#endif  // MLFF_STORE_HPP_
