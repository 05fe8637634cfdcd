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

#include "mlff/store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "mlff/error.hpp"
#include "mlff/random.hpp"

namespace mlff {
namespace {

constexpr std::uint8_t kMagic[4] = {0x4D, 0x4C, 0x46, 0x46};
constexpr std::size_t kHeaderBytes = 4 + 2 + 4;
constexpr std::size_t kRecordHeaderBytes = 8 + 2 + 2 + 2 + 2;

class Writer {
 public:
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw CorruptionError("truncated payload: need " + std::to_string(n) + " bytes at offset " +
                            std::to_string(pos_) + ", have " + std::to_string(remaining()));
    }
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
T json_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("manifest is missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest field '") + key + "': " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest and records

std::size_t DatasetManifest::total_dim() const noexcept {
  return std::accumulate(level_dims.begin(), level_dims.end(), std::size_t{0});
}

nlohmann::json DatasetManifest::to_json() const {
  return nlohmann::json{{"format_version", format_version},
                        {"record_kind", kRecordKindEmbeddings},
                        {"num_levels", level_dims.size()},
                        {"level_dims", level_dims},
                        {"num_classes", num_classes},
                        {"record_count", record_count},
                        {"backbone", backbone},
                        {"pooling", pooling},
                        {"metadata", metadata}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("manifest is not a JSON object");
  if (json_field<std::string>(j, "record_kind") != kRecordKindEmbeddings) {
    throw FormatError("container does not hold embedding records");
  }
  DatasetManifest m;
  m.format_version = json_field<std::uint16_t>(j, "format_version");
  if (m.format_version != kFormatVersion) {
    throw FormatError("unsupported manifest version " + std::to_string(m.format_version));
  }
  m.level_dims = json_field<std::vector<std::size_t>>(j, "level_dims");
  if (json_field<std::size_t>(j, "num_levels") != m.level_dims.size()) {
    throw DataError("num_levels disagrees with level_dims");
  }
  m.num_classes = json_field<std::uint32_t>(j, "num_classes");
  m.record_count = json_field<std::uint64_t>(j, "record_count");
  m.backbone = json_field<std::string>(j, "backbone");
  m.pooling = json_field<std::string>(j, "pooling");
  m.metadata = j.contains("metadata") ? j.at("metadata") : nlohmann::json::object();
  return m;
}

std::vector<float> EmbeddingRecord::concatenated() const {
  std::vector<float> out;
  for (const auto& level : levels) out.insert(out.end(), level.begin(), level.end());
  return out;
}

void validate_dataset(const DatasetManifest& manifest, std::span<const EmbeddingRecord> records) {
  if (manifest.level_dims.empty()) throw DataError("manifest declares no levels");
  if (manifest.record_count != records.size()) {
    throw DataError("manifest record_count " + std::to_string(manifest.record_count) +
                    " does not match " + std::to_string(records.size()) + " records");
  }
  std::set<std::pair<std::uint64_t, std::uint16_t>> seen;
  for (const auto& r : records) {
    const std::string who = "record " + std::to_string(r.sample_id) + "/" +
                            std::to_string(r.variant);
    if (r.label >= manifest.num_classes) {
      throw DataError(who + ": label " + std::to_string(r.label) + " >= num_classes");
    }
    if (r.levels.size() != manifest.level_dims.size()) {
      throw DataError(who + ": has " + std::to_string(r.levels.size()) + " levels");
    }
    for (std::size_t n = 0; n < r.levels.size(); ++n) {
      if (r.levels[n].size() != manifest.level_dims[n]) {
        throw DataError(who + ": level " + std::to_string(n) + " has dim " +
                        std::to_string(r.levels[n].size()));
      }
      for (float v : r.levels[n]) {
        if (!std::isfinite(v)) throw DataError(who + ": non-finite value");
      }
    }
    if (!seen.emplace(r.sample_id, r.variant).second) {
      throw DataError(who + ": duplicate (sample_id, variant)");
    }
  }
}

// ---------------------------------------------------------------------------
// Container

std::vector<std::uint8_t> encode_container(const nlohmann::json& manifest,
                                           std::span<const std::uint8_t> payload) {
  const std::string text = manifest.dump();
  Writer w;
  w.raw(kMagic);
  w.u16(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  w.raw(payload);
  return w.take();
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("bad magic bytes (not an MLFF container)");
  }
  if (bytes.size() < kHeaderBytes) throw CorruptionError("truncated container header");
  Reader r(bytes.subspan(4));
  const std::uint16_t version = r.u16();
  if (version != kFormatVersion) {
    throw FormatError("unsupported container version " + std::to_string(version));
  }
  const std::uint32_t length = r.u32();
  auto text = r.raw(length);
  Container c;
  try {
    c.manifest = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  auto rest = r.raw(r.remaining());
  c.payload.assign(rest.begin(), rest.end());
  return c;
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> encode_dataset(const DatasetManifest& manifest,
                                         std::span<const EmbeddingRecord> records) {
  validate_dataset(manifest, records);
  Writer w;
  for (const auto& rec : records) {
    w.u64(rec.sample_id);
    w.u16(rec.label);
    w.u16(rec.task_id);
    w.u16(rec.variant);
    w.u16(0);
    for (const auto& level : rec.levels) {
      for (float v : level) w.f32(v);
    }
  }
  const auto payload = w.take();
  return encode_container(manifest.to_json(), payload);
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  Container c = decode_container(bytes);
  Dataset d;
  d.manifest = DatasetManifest::from_json(c.manifest);
  const std::size_t record_bytes = kRecordHeaderBytes + 4 * d.manifest.total_dim();
  const std::uint64_t expected = d.manifest.record_count * record_bytes;
  if (c.payload.size() < expected) {
    throw CorruptionError("payload holds " + std::to_string(c.payload.size()) +
                          " bytes, manifest needs " + std::to_string(expected));
  }
  if (c.payload.size() > expected) {
    throw CorruptionError("trailing bytes after " + std::to_string(d.manifest.record_count) +
                          " records");
  }
  Reader r(c.payload);
  d.records.reserve(d.manifest.record_count);
  for (std::uint64_t i = 0; i < d.manifest.record_count; ++i) {
    EmbeddingRecord rec;
    rec.sample_id = r.u64();
    rec.label = r.u16();
    rec.task_id = r.u16();
    rec.variant = r.u16();
    if (r.u16() != 0) throw CorruptionError("nonzero reserved field in record " + std::to_string(i));
    rec.levels.resize(d.manifest.level_dims.size());
    for (std::size_t n = 0; n < rec.levels.size(); ++n) {
      rec.levels[n].resize(d.manifest.level_dims[n]);
      for (float& v : rec.levels[n]) v = r.f32();
    }
    d.records.push_back(std::move(rec));
  }
  validate_dataset(d.manifest, d.records);
  return d;
}

void write_dataset(const DatasetManifest& manifest, std::span<const EmbeddingRecord> records,
                   const std::filesystem::path& path) {
  write_bytes(path, encode_dataset(manifest, records));
}

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_bytes(path)); }

void write_records_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  out << "sample_id,label,task_id,variant";
  for (std::size_t n = 0; n < data.manifest.level_dims.size(); ++n) {
    for (std::size_t k = 0; k < data.manifest.level_dims[n]; ++k) out << ",l" << n << "_" << k;
  }
  out << '\n';
  out.precision(9);
  for (const auto& rec : data.records) {
    out << rec.sample_id << ',' << rec.label << ',' << rec.task_id << ',' << rec.variant;
    for (const auto& level : rec.levels) {
      for (float v : level) out << ',' << v;
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Partitioning

TaskStream partition_tasks(std::span<const EmbeddingRecord> records, std::uint64_t split_seed,
                           std::size_t train_per_task,
                           const std::optional<std::vector<std::uint16_t>>& order) {
  // task -> sample_id -> record indices (all variants)
  std::map<std::uint16_t, std::map<std::uint64_t, std::vector<std::size_t>>> by_task;
  for (std::size_t i = 0; i < records.size(); ++i) {
    by_task[records[i].task_id][records[i].sample_id].push_back(i);
  }

  std::vector<std::uint16_t> task_order;
  if (order) {
    std::set<std::uint16_t> used;
    for (std::uint16_t t : *order) {
      if (!by_task.contains(t)) {
        throw ConfigError("task order names unknown task_id " + std::to_string(t));
      }
      if (!used.insert(t).second) {
        throw ConfigError("task order repeats task_id " + std::to_string(t));
      }
    }
    task_order = *order;
  } else {
    for (const auto& [t, _] : by_task) task_order.push_back(t);
  }

  TaskStream stream;
  for (std::uint16_t t : task_order) {
    const auto& samples = by_task.at(t);
    std::vector<std::uint64_t> ids;
    for (const auto& [id, _] : samples) ids.push_back(id);
    Rng rng(derive_seed(split_seed, {t}));
    seeded_shuffle(ids, rng);

    std::size_t n_train = train_per_task;
    if (n_train >= ids.size()) {
      n_train = ids.size() - 1;
      std::string msg = "task " + std::to_string(t) + " has only " + std::to_string(ids.size()) +
                        " samples for train_per_task=" + std::to_string(train_per_task) +
                        "; holding out one for testing";
      spdlog::warn("{}", msg);
      stream.warnings.push_back(std::move(msg));
    }
    std::set<std::uint64_t> train_ids(ids.begin(), ids.begin() + static_cast<long>(n_train));

    TaskSplit split;
    split.task_id = t;
    for (const auto& [id, idx] : samples) {
      const bool is_train = train_ids.contains(id);
      for (std::size_t i : idx) {
        if (is_train) {
          split.train.push_back(i);
        } else if (records[i].variant == 0) {
          split.test.push_back(i);
        }
      }
    }
    stream.tasks.push_back(std::move(split));
  }
  return stream;
}

LevelDataset to_level_dataset(std::span<const EmbeddingRecord> records,
                              std::span<const std::size_t> indices) {
  LevelDataset out;
  if (indices.empty()) return out;
  const auto& first = records[indices.front()];
  for (const auto& level : first.levels) out.levels.emplace_back(indices.size(), level.size());
  out.labels.reserve(indices.size());
  for (std::size_t row = 0; row < indices.size(); ++row) {
    const auto& rec = records[indices[row]];
    for (std::size_t n = 0; n < rec.levels.size(); ++n) {
      std::copy(rec.levels[n].begin(), rec.levels[n].end(), out.levels[n].row(row).begin());
    }
    out.labels.push_back(rec.label);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

nlohmann::json SynthSpec::to_json() const {
  return nlohmann::json{{"num_tasks", num_tasks},
                        {"num_classes", num_classes},
                        {"level_dims", level_dims},
                        {"samples_per_class", samples_per_class},
                        {"signal_level", signal_level},
                        {"class_separation", class_separation},
                        {"task_shift", task_shift},
                        {"noise", noise},
                        {"extra_variants", extra_variants},
                        {"variant_sigma", variant_sigma}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.num_tasks = j.value("num_tasks", s.num_tasks);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.level_dims = j.value("level_dims", s.level_dims);
  s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
  s.signal_level = j.value("signal_level", s.signal_level);
  s.class_separation = j.value("class_separation", s.class_separation);
  s.task_shift = j.value("task_shift", s.task_shift);
  s.noise = j.value("noise", s.noise);
  s.extra_variants = j.value("extra_variants", s.extra_variants);
  s.variant_sigma = j.value("variant_sigma", s.variant_sigma);
  return s;
}

void SynthSpec::validate() const {
  if (num_tasks == 0 || num_tasks > 0xFFFF) throw ConfigError("num_tasks must be in [1, 65535]");
  if (num_classes < 2 || num_classes > 0xFFFF) throw ConfigError("num_classes must be >= 2");
  if (level_dims.empty()) throw ConfigError("synthetic spec needs at least one level");
  for (std::size_t d : level_dims) {
    if (d == 0) throw ConfigError("synthetic level width must be positive");
  }
  if (signal_level >= level_dims.size()) {
    throw ConfigError("signal_level " + std::to_string(signal_level) + " out of range");
  }
  if (level_dims[signal_level] < num_classes) {
    throw ConfigError("signal level width " + std::to_string(level_dims[signal_level]) +
                      " cannot hold " + std::to_string(num_classes) +
                      " orthonormal class directions");
  }
  if (samples_per_class == 0) throw ConfigError("samples_per_class must be positive");
  if (!(noise >= 0.0) || !(task_shift >= 0.0) || !(class_separation >= 0.0) ||
      !(variant_sigma >= 0.0)) {
    throw ConfigError("synthetic scales must be non-negative");
  }
  if (extra_variants >= 0xFFFF) throw ConfigError("too many variants");
}

namespace {

// Seeded Gram-Schmidt on Gaussian draws; redraws on near-degeneracy.
std::vector<std::vector<double>> orthonormal_directions(std::size_t count, std::size_t dim,
                                                        Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    std::vector<double> v(dim);
    for (double& x : v) x = normal(rng);
    for (const auto& b : basis) {
      const double dot = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
      for (std::size_t k = 0; k < dim; ++k) v[k] -= dot * b[k];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

}  // namespace

Dataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t levels = spec.level_dims.size();

  Dataset out;
  out.manifest.level_dims = spec.level_dims;
  out.manifest.num_classes = static_cast<std::uint32_t>(spec.num_classes);
  out.manifest.backbone = "synthetic";
  out.manifest.pooling = "none";
  out.manifest.metadata = nlohmann::json{{"synth_spec", spec.to_json()}, {"seed", seed}};

  std::uint64_t next_id = 0;
  for (std::size_t t = 0; t < spec.num_tasks; ++t) {
    std::vector<std::vector<double>> task_mean(levels);
    for (std::size_t n = 0; n < levels; ++n) {
      task_mean[n].resize(spec.level_dims[n]);
      for (double& m : task_mean[n]) m = spec.task_shift * normal(rng);
    }
    const auto directions =
        orthonormal_directions(spec.num_classes, spec.level_dims[spec.signal_level], rng);

    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      for (std::size_t c = 0; c < spec.num_classes; ++c) {
        EmbeddingRecord rec;
        rec.sample_id = next_id++;
        rec.label = static_cast<std::uint16_t>(c);
        rec.task_id = static_cast<std::uint16_t>(t);
        rec.levels.resize(levels);
        for (std::size_t n = 0; n < levels; ++n) {
          auto& v = rec.levels[n];
          v.resize(spec.level_dims[n]);
          for (std::size_t k = 0; k < v.size(); ++k) {
            double x = task_mean[n][k] + spec.noise * normal(rng);
            if (n == spec.signal_level) x += spec.class_separation * directions[c][k];
            v[k] = static_cast<float>(x);
          }
        }
        for (std::size_t k = 1; k <= spec.extra_variants; ++k) {
          EmbeddingRecord variant =
              augment_gaussian(rec, spec.variant_sigma, derive_seed(seed, {rec.sample_id, k}));
          variant.variant = static_cast<std::uint16_t>(k);
          out.records.push_back(std::move(variant));
        }
        out.records.insert(out.records.end() - static_cast<long>(spec.extra_variants),
                           std::move(rec));
      }
    }
  }
  out.manifest.record_count = out.records.size();
  return out;
}

EmbeddingRecord augment_gaussian(const EmbeddingRecord& record, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ConfigError("augmentation sigma must be non-negative");
  if (record.variant == 0xFFFF) throw ProtocolError("variant id overflow");
  EmbeddingRecord out = record;
  out.variant = static_cast<std::uint16_t>(record.variant + 1);
  if (sigma == 0.0) return out;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (auto& level : out.levels) {
    for (float& v : level) v = static_cast<float>(static_cast<double>(v) + normal(rng));
  }
  return out;
}

}  // namespace mlff
