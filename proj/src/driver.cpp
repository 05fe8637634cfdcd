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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "mlff/error.hpp"
#include "mlff/random.hpp"

namespace mlff {
namespace {

const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{
      "head",          "fused_dim",      "probe_level",     "initial_epochs",
      "epochs_per_adaptation", "batch_size", "lr_max",      "lr_min",
      "buffer_capacity", "strategy",     "aser_k",          "aser_eval_subsample",
      "grasp_epsilon", "model_seed",     "data_seed",       "strategy_seed",
      "aug_sigma",     "sample_variants"};
  return keys;
}

// One slot of a round's training schedule.
struct Item {
  bool historic = false;
  std::size_t index = 0;  // sample group (new) or buffer entry (historic)
};

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (initial_epochs == 0 || epochs_per_adaptation == 0) {
    throw ConfigError("epochs must be at least 1");
  }
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(lr_max >= 0.0) || !(lr_min >= 0.0)) throw ConfigError("learning rates must be >= 0");
  if (!(aug_sigma >= 0.0)) throw ConfigError("aug_sigma must be >= 0");
  if (buffer_capacity > 0 && strategy == Strategy::kNone) {
    throw ConfigError("buffer_capacity > 0 needs a strategy other than 'none'");
  }
  if (strategy_options.aser_k == 0) throw ConfigError("aser_k must be at least 1");
  if (strategy_options.aser_eval_subsample == 0) {
    throw ConfigError("aser_eval_subsample must be at least 1");
  }
  if (!(strategy_options.grasp_epsilon > 0.0)) throw ConfigError("grasp_epsilon must be > 0");
}

nlohmann::json ExperimentConfig::to_json() const {
  return nlohmann::json{
      {"head", std::string(to_string(head))},
      {"fused_dim", fused_dim},
      {"probe_level", probe_level ? nlohmann::json(*probe_level) : nlohmann::json(nullptr)},
      {"initial_epochs", initial_epochs},
      {"epochs_per_adaptation", epochs_per_adaptation},
      {"batch_size", batch_size},
      {"lr_max", lr_max},
      {"lr_min", lr_min},
      {"buffer_capacity", buffer_capacity},
      {"strategy", std::string(to_string(strategy))},
      {"aser_k", strategy_options.aser_k},
      {"aser_eval_subsample", strategy_options.aser_eval_subsample},
      {"grasp_epsilon", strategy_options.grasp_epsilon},
      {"model_seed", model_seed},
      {"data_seed", data_seed},
      {"strategy_seed", strategy_seed},
      {"aug_sigma", aug_sigma},
      {"sample_variants", sample_variants}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!config_keys().contains(key)) throw ConfigError("unknown experiment key '" + key + "'");
  }
  ExperimentConfig c;
  auto field = [&j](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(out);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  };
  std::string head = std::string(to_string(c.head));
  std::string strategy = std::string(to_string(c.strategy));
  field("head", head);
  field("strategy", strategy);
  c.head = head_kind_from_string(head);
  c.strategy = strategy_from_string(strategy);
  field("fused_dim", c.fused_dim);
  if (j.contains("probe_level") && !j.at("probe_level").is_null()) {
    std::size_t level = 0;
    field("probe_level", level);
    c.probe_level = level;
  }
  field("initial_epochs", c.initial_epochs);
  field("epochs_per_adaptation", c.epochs_per_adaptation);
  field("batch_size", c.batch_size);
  field("lr_max", c.lr_max);
  field("lr_min", c.lr_min);
  field("buffer_capacity", c.buffer_capacity);
  field("aser_k", c.strategy_options.aser_k);
  field("aser_eval_subsample", c.strategy_options.aser_eval_subsample);
  field("grasp_epsilon", c.strategy_options.grasp_epsilon);
  field("model_seed", c.model_seed);
  field("data_seed", c.data_seed);
  field("strategy_seed", c.strategy_seed);
  field("aug_sigma", c.aug_sigma);
  field("sample_variants", c.sample_variants);
  c.validate();
  return c;
}

HeadSpec make_head_spec(const ExperimentConfig& config, const DatasetManifest& manifest) {
  const std::size_t width = config.fused_dim ? config.fused_dim : manifest.level_dims.back();
  if (config.head == HeadKind::kMlff) {
    FusionConfig fusion{manifest.level_dims, width, manifest.num_classes};
    return HeadSpec::mlff(std::move(fusion));
  }
  HeadSpec spec = HeadSpec::probe(config.head, manifest.level_dims, width, manifest.num_classes);
  if (config.probe_level) spec.probe_level = *config.probe_level;
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

double evaluate_f1(Head<float>& head, const Dataset& data, std::span<const std::size_t> indices) {
  const LevelDataset set = to_level_dataset(data.records, indices);
  const auto predicted = predict_labels(head, set.levels);
  return macro_f1(predicted, set.labels, data.manifest.num_classes);
}

std::vector<Candidate> make_candidates(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<Candidate> out;
  for (std::size_t i : indices) {
    const auto& rec = data.records[i];
    if (rec.variant != 0) continue;
    out.push_back({rec.sample_id, rec.label, rec.task_id, rec.concatenated()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment

ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& data,
                                const TaskStream& stream) {
  config.validate();
  if (stream.tasks.empty()) throw ProtocolError("empty task stream");
  const std::size_t num_tasks = stream.tasks.size();
  if (config.buffer_capacity > 0 && config.buffer_capacity < num_tasks) {
    throw ProtocolError("buffer capacity " + std::to_string(config.buffer_capacity) +
                        " is smaller than the " + std::to_string(num_tasks) + " rounds");
  }
  const auto& dims = data.manifest.level_dims;
  const std::size_t num_levels = dims.size();

  ExperimentResult result{MetricsReport{}, Head<float>(make_head_spec(config, data.manifest),
                                                       config.model_seed)};
  Head<float>& head = result.head;
  MetricsReport& report = result.report;
  report.config = config.to_json();
  report.config["head_spec"] = {{"level_dims", head.spec().fusion.level_dims},
                                {"fused_dim", head.spec().fusion.fused_dim},
                                {"num_classes", head.spec().fusion.num_classes},
                                {"probe_level", head.spec().probe_level}};
  for (const auto& t : stream.tasks) report.task_order.push_back(t.task_id);

  RehearsalBuffer buffer(config.buffer_capacity, config.strategy, config.strategy_options);
  nlohmann::json round_seconds = nlohmann::json::array();
  const auto started = std::chrono::system_clock::now();

  for (std::size_t round = 0; round < num_tasks; ++round) {
    const auto round_start = std::chrono::steady_clock::now();
    const TaskSplit& task = stream.tasks[round];
    if (task.train.empty()) throw ProtocolError("task " + std::to_string(task.task_id) + " has no training data");

    // Group training records by sample; variant 0 first.
    std::map<std::uint64_t, std::vector<std::size_t>> by_sample;
    for (std::size_t i : task.train) by_sample[data.records[i].sample_id].push_back(i);
    std::vector<std::vector<std::size_t>> groups;
    bool has_variants = false;
    for (auto& [_, idx] : by_sample) {
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return data.records[a].variant < data.records[b].variant;
      });
      has_variants = has_variants || idx.size() > 1;
      groups.push_back(std::move(idx));
    }
    const bool use_variants = has_variants && config.sample_variants;

    const std::size_t epochs = round == 0 ? config.initial_epochs : config.epochs_per_adaptation;
    const std::size_t new_slots = epochs * groups.size();

    // New-task sequence: one shuffled pass per epoch.
    std::vector<Item> fresh;
    fresh.reserve(new_slots);
    for (std::size_t e = 0; e < epochs; ++e) {
      std::vector<std::size_t> order(groups.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(config.data_seed, {round, e, 0x5348}));
      seeded_shuffle(order, rng);
      for (std::size_t g : order) fresh.push_back({false, g});
    }

    // Historic samples: shuffled once, spread uniformly over the whole round.
    const auto& historic = buffer.entries();
    std::vector<std::size_t> hist_order(historic.size());
    std::iota(hist_order.begin(), hist_order.end(), std::size_t{0});
    {
      Rng rng(derive_seed(config.data_seed, {round, 0x4849}));
      seeded_shuffle(hist_order, rng);
    }
    const std::size_t total = new_slots + hist_order.size();
    std::vector<Item> schedule;
    schedule.reserve(total);
    {
      std::size_t next_fresh = 0, next_hist = 0;
      for (std::size_t pos = 0; pos < total; ++pos) {
        bool take_hist = false;
        if (next_hist < hist_order.size()) {
          const std::size_t slot =
              static_cast<std::size_t>((static_cast<double>(next_hist) + 0.5) *
                                       static_cast<double>(total) /
                                       static_cast<double>(hist_order.size()));
          take_hist = pos >= slot || next_fresh == fresh.size();
        }
        if (take_hist) {
          schedule.push_back({true, hist_order[next_hist++]});
        } else {
          schedule.push_back(fresh[next_fresh++]);
        }
      }
    }

    // Batches; a trailing single item joins the previous batch so that no
    // historic sample is dropped.
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t begin = 0; begin < schedule.size(); begin += config.batch_size) {
      batches.emplace_back(begin, std::min(begin + config.batch_size, schedule.size()));
    }
    if (batches.back().second - batches.back().first < 2) {
      if (batches.size() == 1) throw ProtocolError("round has fewer than 2 training samples");
      const std::size_t end = batches.back().second;
      batches.pop_back();
      batches.back().second = end;
    }

    head.optimizer() = nn::AdamState<float>{};
    std::vector<std::size_t> exposures(historic.size(), 0);
    std::vector<double> epoch_sum(epochs, 0.0);
    std::vector<std::size_t> epoch_batches(epochs, 0);
    const std::uint64_t total_steps = batches.size();

    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto [begin, end] = batches[b];
      const std::size_t rows = end - begin;
      std::vector<Matrix<float>> levels;
      for (std::size_t n = 0; n < num_levels; ++n) levels.emplace_back(rows, dims[n]);
      std::vector<std::uint32_t> labels(rows);
      Rng rng(derive_seed(config.data_seed, {round, b, 0x4147}));

      for (std::size_t r = 0; r < rows; ++r) {
        const Item& item = schedule[begin + r];
        if (item.historic) {
          const auto& entry = historic[item.index];
          ++exposures[item.index];
          labels[r] = entry.label;
          std::size_t offset = 0;
          for (std::size_t n = 0; n < num_levels; ++n) {
            std::copy_n(entry.representation.begin() + static_cast<long>(offset), dims[n],
                        levels[n].row(r).begin());
            offset += dims[n];
          }
        } else {
          const auto& group = groups[item.index];
          std::size_t pick = group.front();
          if (use_variants) pick = group[static_cast<std::size_t>(rng() % group.size())];
          const auto& rec = data.records[pick];
          labels[r] = rec.label;
          for (std::size_t n = 0; n < num_levels; ++n) {
            std::copy(rec.levels[n].begin(), rec.levels[n].end(), levels[n].row(r).begin());
          }
        }
      }
      if (config.aug_sigma > 0.0 && !use_variants) {
        std::normal_distribution<float> noise(0.0f, static_cast<float>(config.aug_sigma));
        for (auto& level : levels) {
          for (float& v : level.values()) v += noise(rng);
        }
      }

      const double lr = nn::cosine_lr(b, total_steps, config.lr_max, config.lr_min);
      const float loss = train_step(head, levels, labels, lr);
      const std::size_t epoch = std::min(epochs - 1, b * epochs / batches.size());
      epoch_sum[epoch] += loss;
      ++epoch_batches[epoch];
    }

    RoundTrace trace;
    trace.task_id = task.task_id;
    trace.epochs = epochs;
    trace.steps = batches.size();
    for (std::size_t e = 0; e < epochs; ++e) {
      trace.epoch_loss.push_back(
          epoch_batches[e] ? static_cast<float>(epoch_sum[e] / static_cast<double>(epoch_batches[e]))
                           : 0.0f);
    }
    trace.new_samples = groups.size();
    trace.historic_samples = historic.size();
    if (!exposures.empty()) {
      const auto [lo, hi] = std::minmax_element(exposures.begin(), exposures.end());
      trace.historic_exposure_min = *lo;
      trace.historic_exposure_max = *hi;
    }

    std::vector<double> row;
    for (const auto& t : stream.tasks) row.push_back(evaluate_f1(head, data, t.test));
    report.f1.push_back(std::move(row));

    const auto candidates = make_candidates(data, task.train);
    buffer.update(candidates, derive_seed(config.strategy_seed, {round}));
    trace.buffer_size_after = buffer.entries().size();
    report.rounds.push_back(std::move(trace));

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - round_start).count();
    round_seconds.push_back(seconds);
    spdlog::info("round {} (task {}): {} steps, {} historic, AF1 so far {:.4f}", round,
                 task.task_id, report.rounds.back().steps, report.rounds.back().historic_samples,
                 std::accumulate(report.f1.back().begin(), report.f1.back().end(), 0.0) /
                     static_cast<double>(num_tasks));
  }

  report.af1 = compute_af1(report.f1);
  if (num_tasks >= 2) report.ff1 = compute_ff1(report.f1);
  report.meta = {{"started_unix_ms", std::chrono::duration_cast<std::chrono::milliseconds>(
                                         started.time_since_epoch())
                                         .count()},
                 {"round_seconds", round_seconds}};
  return result;
}

// ---------------------------------------------------------------------------
// Report IO

nlohmann::json MetricsReport::payload_json() const {
  nlohmann::json rounds_json = nlohmann::json::array();
  for (const auto& r : rounds) {
    rounds_json.push_back({{"task_id", r.task_id},
                           {"epochs", r.epochs},
                           {"steps", r.steps},
                           {"epoch_loss", r.epoch_loss},
                           {"new_samples", r.new_samples},
                           {"historic_samples", r.historic_samples},
                           {"historic_exposure_min", r.historic_exposure_min},
                           {"historic_exposure_max", r.historic_exposure_max},
                           {"buffer_size_after", r.buffer_size_after}});
  }
  return {{"schema_version", kSchemaVersion},
          {"config", config},
          {"task_order", task_order},
          {"f1_matrix", f1},
          {"af1", af1},
          {"ff1", ff1 ? nlohmann::json(*ff1) : nlohmann::json(nullptr)},
          {"rounds", rounds_json}};
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = payload_json();
  j["meta"] = meta;
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion) {
      throw FormatError("unsupported report schema version");
    }
    r.config = j.at("config");
    r.task_order = j.at("task_order").get<std::vector<std::uint16_t>>();
    r.f1 = j.at("f1_matrix").get<F1Matrix>();
    r.af1 = j.at("af1").get<double>();
    if (!j.at("ff1").is_null()) r.ff1 = j.at("ff1").get<double>();
    for (const auto& rj : j.at("rounds")) {
      RoundTrace t;
      t.task_id = rj.at("task_id").get<std::uint16_t>();
      t.epochs = rj.at("epochs").get<std::size_t>();
      t.steps = rj.at("steps").get<std::size_t>();
      t.epoch_loss = rj.at("epoch_loss").get<std::vector<float>>();
      t.new_samples = rj.at("new_samples").get<std::size_t>();
      t.historic_samples = rj.at("historic_samples").get<std::size_t>();
      t.historic_exposure_min = rj.at("historic_exposure_min").get<std::size_t>();
      t.historic_exposure_max = rj.at("historic_exposure_max").get<std::size_t>();
      t.buffer_size_after = rj.at("buffer_size_after").get<std::size_t>();
      r.rounds.push_back(std::move(t));
    }
    r.meta = j.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
  check_complete(r.f1);
  if (std::abs(compute_af1(r.f1) - r.af1) > 1e-9) {
    throw DataError("stored AF1 disagrees with the F1 matrix");
  }
  if (r.f1.size() >= 2) {
    if (!r.ff1 || std::abs(compute_ff1(r.f1) - *r.ff1) > 1e-9) {
      throw DataError("stored FF1 disagrees with the F1 matrix");
    }
  }
  return r;
}

void export_report(const MetricsReport& report, const std::filesystem::path& path,
                   ReportFormat format) {
  check_complete(report.f1);
  if (report.task_order.size() != report.f1.size() || report.rounds.size() != report.f1.size()) {
    throw ProtocolError("report is incomplete");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  if (format == ReportFormat::kStructured) {
    out << report.to_json().dump(2) << '\n';
    return;
  }
  out << "round,task_index,task_id,f1\n";
  out.precision(17);
  for (std::size_t r = 0; r < report.f1.size(); ++r) {
    for (std::size_t t = 0; t < report.f1[r].size(); ++t) {
      out << r << ',' << t << ',' << report.task_order[t] << ',' << report.f1[r][t] << '\n';
    }
  }
}

MetricsReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("report is not valid JSON: ") + e.what());
  }
  return MetricsReport::from_json(j);
}

}  // namespace mlff
