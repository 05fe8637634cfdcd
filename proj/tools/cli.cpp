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

#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mlff/checkpoint.hpp"
#include "mlff/driver.hpp"
#include "mlff/error.hpp"
#include "mlff/model.hpp"
#include "mlff/rehearsal.hpp"
#include "mlff/store.hpp"

namespace mlff::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::set<std::string> kSynthKeys{
    "output",          "seed",         "num_tasks",        "num_classes",
    "level_dims",      "samples_per_class", "signal_level", "class_separation",
    "task_shift",      "noise",        "extra_variants",   "variant_sigma"};

const std::set<std::string> kRunOnlyKeys{"dataset", "output_dir", "train_per_task", "split_seed",
                                         "task_order", "sweep_seeds"};
const std::set<std::string> kExperimentKeys{
    "head",          "fused_dim",      "probe_level",     "initial_epochs",
    "epochs_per_adaptation", "batch_size", "lr_max",      "lr_min",
    "buffer_capacity", "strategy",     "aser_k",          "aser_eval_subsample",
    "grasp_epsilon", "model_seed",     "data_seed",       "strategy_seed",
    "aug_sigma",     "sample_variants"};

const std::set<std::string> kSelectKeys{"dataset", "output", "strategy", "budget", "seed",
                                        "task_id", "aser_k", "aser_eval_subsample",
                                        "grasp_epsilon"};
const std::set<std::string> kEvalKeys{"dataset", "checkpoint", "output", "task_id"};
const std::set<std::string> kParamCountKeys{"head", "level_dims", "fused_dim", "num_classes",
                                            "in_dim", "hidden"};
const std::set<std::string> kExportKeys{"report", "output", "format", "dataset"};

// Flat JSON configuration with key checking and typed access.
class Config {
 public:
  Config(json j, std::set<std::string> allowed) : j_(std::move(j)), allowed_(std::move(allowed)) {
    if (!j_.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, _] : j_.items()) {
      if (!allowed_.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <typename T>
  T get(const std::string& key) const {
    if (!has(key)) throw ConfigError("missing required config key '" + key + "'");
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + key + "' has the wrong type: " + j_.at(key).dump());
    }
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) const {
    return has(key) ? get<T>(key) : fallback;
  }

  const json& raw() const noexcept { return j_; }

  // Sub-object restricted to `keys`.
  json subset(const std::set<std::string>& keys) const {
    json out = json::object();
    for (const auto& [key, value] : j_.items()) {
      if (keys.contains(key)) out[key] = value;
    }
    return out;
  }

 private:
  json j_;
  std::set<std::string> allowed_;
};

json load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects key=value, got '" + item + "'");
    }
    const std::string key = item.substr(0, eq);
    const std::string text = item.substr(eq + 1);
    if (j.contains(key) && (j[key].is_array() || j[key].is_object())) {
      throw ConfigError("--set can only override scalar keys; '" + key + "' is not scalar");
    }
    json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded() || value.is_array() || value.is_object()) value = text;
    j[key] = value;
  }
  return j;
}

void require_distinct(const fs::path& output, const fs::path& input) {
  std::error_code ec;
  if (fs::exists(output, ec) && fs::exists(input, ec) && fs::equivalent(output, input, ec)) {
    throw ConfigError("output '" + output.string() + "' would overwrite input '" +
                      input.string() + "'");
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_synth(const Config& c, std::ostream& out) {
  const fs::path output = c.get<std::string>("output");
  const auto seed = c.get<std::uint64_t>("seed");
  json spec_json = c.subset(kSynthKeys);
  spec_json.erase("output");
  spec_json.erase("seed");
  SynthSpec spec;
  try {
    spec = SynthSpec::from_json(spec_json);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  const Dataset data = synth_generate(spec, seed);
  write_dataset(data.manifest, data.records, output);
  out << "wrote " << data.records.size() << " records to " << output.string() << '\n';
  return kOk;
}

std::optional<std::vector<std::uint16_t>> task_order_of(const Config& c) {
  if (!c.has("task_order")) return std::nullopt;
  return c.get<std::vector<std::uint16_t>>("task_order");
}

void run_single(const Config& c, const ExperimentConfig& config, const Dataset& data,
                const fs::path& dir) {
  fs::create_directories(dir);
  const TaskStream stream = partition_tasks(data.records, c.get<std::uint64_t>("split_seed"),
                                            c.get<std::size_t>("train_per_task"), task_order_of(c));
  ExperimentResult result = run_experiment(config, data, stream);
  result.report.config["dataset"] = c.get<std::string>("dataset");
  result.report.config["split_seed"] = c.get<std::uint64_t>("split_seed");
  result.report.config["train_per_task"] = c.get<std::size_t>("train_per_task");
  export_report(result.report, dir / "report.json", ReportFormat::kStructured);
  export_report(result.report, dir / "f1.csv", ReportFormat::kCsv);
  write_checkpoint(result.head, dir / "head.mlff");
}

int cmd_run(const Config& c, std::size_t jobs, std::ostream& out) {
  const fs::path dataset = c.get<std::string>("dataset");
  const fs::path dir = c.get<std::string>("output_dir");
  c.get<std::size_t>("train_per_task");
  c.get<std::uint64_t>("split_seed");
  json experiment = c.subset(kExperimentKeys);
  for (const char* key : {"model_seed", "data_seed", "strategy_seed"}) {
    if (!c.has("sweep_seeds")) c.get<std::uint64_t>(key);
  }
  const ExperimentConfig base = ExperimentConfig::from_json(experiment);
  const Dataset data = read_dataset(dataset);

  fs::create_directories(dir);
  json resolved = c.raw();
  resolved["resolved_experiment"] = base.to_json();
  write_json(dir / "resolved_config.json", resolved);

  if (!c.has("sweep_seeds")) {
    run_single(c, base, data, dir);
    out << "wrote " << (dir / "report.json").string() << '\n';
    return kOk;
  }

  const auto seeds = c.get<std::vector<std::uint64_t>>("sweep_seeds");
  if (seeds.empty()) throw ConfigError("sweep_seeds must not be empty");
  std::vector<std::future<void>> pending;
  std::size_t next = 0;
  auto launch = [&] {
    ExperimentConfig config = base;
    const std::uint64_t s = seeds[next++];
    config.model_seed = config.data_seed = config.strategy_seed = s;
    const fs::path sub = dir / ("seed_" + std::to_string(s));
    pending.push_back(std::async(std::launch::async,
                                 [&c, config, &data, sub] { run_single(c, config, data, sub); }));
  };
  const std::size_t width = std::max<std::size_t>(1, jobs);
  while (next < seeds.size() || !pending.empty()) {
    while (next < seeds.size() && pending.size() < width) launch();
    pending.front().get();
    pending.erase(pending.begin());
  }
  out << "wrote " << seeds.size() << " reports under " << dir.string() << '\n';
  return kOk;
}

int cmd_select(const Config& c, std::ostream& out) {
  const fs::path dataset = c.get<std::string>("dataset");
  const fs::path output = c.get<std::string>("output");
  require_distinct(output, dataset);
  const Strategy strategy = strategy_from_string(c.get<std::string>("strategy"));
  const auto budget = c.get<std::size_t>("budget");
  const auto seed = c.get<std::uint64_t>("seed");
  StrategyOptions options;
  options.aser_k = c.get_or<std::size_t>("aser_k", options.aser_k);
  options.aser_eval_subsample =
      c.get_or<std::size_t>("aser_eval_subsample", options.aser_eval_subsample);
  options.grasp_epsilon = c.get_or<double>("grasp_epsilon", options.grasp_epsilon);

  const Dataset data = read_dataset(dataset);
  std::vector<std::size_t> indices;
  const bool filter = c.has("task_id");
  const auto task = c.get_or<std::uint32_t>("task_id", 0);
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    if (!filter || data.records[i].task_id == task) indices.push_back(i);
  }
  const auto candidates = make_candidates(data, indices);
  const auto chosen = select(strategy, candidates, budget, seed, options);

  std::ofstream csv(output, std::ios::trunc);
  if (!csv) throw ConfigError("cannot open '" + output.string() + "' for writing");
  csv << "sample_id,label,task_id,score,strategy\n";
  csv << std::setprecision(17);
  for (const auto& s : chosen) {
    csv << s.sample_id << ',' << s.label << ',' << s.task_id << ',' << s.score << ','
        << to_string(strategy) << '\n';
  }
  out << "selected " << chosen.size() << " of " << candidates.size() << " candidates\n";
  return kOk;
}

int cmd_eval(const Config& c, std::ostream& out) {
  const Dataset data = read_dataset(c.get<std::string>("dataset"));
  Head<float> head = read_checkpoint(c.get<std::string>("checkpoint"));
  if (head.spec().fusion.level_dims != data.manifest.level_dims) {
    throw DataError("checkpoint level dims do not match the dataset");
  }
  const bool filter = c.has("task_id");
  const auto only = c.get_or<std::uint32_t>("task_id", 0);
  std::map<std::uint16_t, std::vector<std::size_t>> by_task;
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& r = data.records[i];
    if (r.variant != 0 || (filter && r.task_id != only)) continue;
    by_task[r.task_id].push_back(i);
    all.push_back(i);
  }
  if (all.empty()) throw ProtocolError("no records to evaluate");
  json result{{"f1", evaluate_f1(head, data, all)}, {"per_task", json::object()}};
  out << std::setprecision(6) << std::fixed;
  out << "f1: " << result["f1"].get<double>() << '\n';
  for (const auto& [task, idx] : by_task) {
    const double f1 = evaluate_f1(head, data, idx);
    result["per_task"][std::to_string(task)] = f1;
    out << "task " << task << ": " << f1 << '\n';
  }
  if (c.has("output")) write_json(c.get<std::string>("output"), result);
  return kOk;
}

int cmd_param_count(const Config& c, std::ostream& out) {
  const HeadKind kind = head_kind_from_string(c.get_or<std::string>("head", "mlff"));
  const auto classes = c.get<std::size_t>("num_classes");
  ParamBreakdown counts;
  if (kind == HeadKind::kMlff) {
    auto config = FusionConfig::with_default_width(
        c.get<std::vector<std::size_t>>("level_dims"), classes);
    config.fused_dim = c.get_or<std::size_t>("fused_dim", config.fused_dim);
    counts = param_count(config);
  } else {
    const auto in_dim = c.get<std::size_t>("in_dim");
    const auto hidden = kind == HeadKind::kMlpProbe ? c.get<std::size_t>("hidden") : 0;
    if (in_dim == 0) throw ConfigError("in_dim must be positive");
    counts = probe_param_count(kind, in_dim, hidden, classes);
  }
  out << "head: " << to_string(kind) << '\n'
      << "branches: " << counts.branches << '\n'
      << "hidden: " << counts.hidden << '\n'
      << "classifier: " << counts.classifier << '\n'
      << "total: " << counts.total() << '\n'
      << "total_millions: " << std::fixed << std::setprecision(3)
      << static_cast<double>(counts.total()) / 1e6 << '\n';
  return kOk;
}

int cmd_export(const Config& c, std::ostream& out) {
  const fs::path output = c.get<std::string>("output");
  const std::string format = c.get_or<std::string>("format", "csv");
  if (c.has("dataset")) {
    const fs::path dataset = c.get<std::string>("dataset");
    require_distinct(output, dataset);
    if (format != "csv") throw ConfigError("datasets export to 'csv' only");
    write_records_csv(read_dataset(dataset), output);
  } else {
    const fs::path report_path = c.get<std::string>("report");
    require_distinct(output, report_path);
    ReportFormat f;
    if (format == "csv") {
      f = ReportFormat::kCsv;
    } else if (format == "structured" || format == "json") {
      f = ReportFormat::kStructured;
    } else {
      throw ConfigError("config key 'format' must be 'csv' or 'structured'");
    }
    export_report(read_report(report_path), output, f);
  }
  out << "wrote " << output.string() << '\n';
  return kOk;
}

void configure_logging() {
  const char* level = std::getenv("MLFF_LOG");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return kConfigError;
    case ErrorKind::kProtocol:
      return kProtocolError;
    case ErrorKind::kData:
    case ErrorKind::kFormat:
    case ErrorKind::kCorruption:
    case ErrorKind::kNumeric:
      return kDataError;
  }
  return kDataError;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  configure_logging();
  CLI::App app{"Multi-level feature fusion continual-learning toolkit", "mlff"};
  app.require_subcommand(1);

  struct Invocation {
    std::string config_path;
    std::vector<std::string> overrides;
    std::size_t jobs = 1;
  } inv;

  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", inv.config_path, "JSON configuration file")->required();
    sub->add_option("--set", inv.overrides, "Override a scalar config key (key=value)");
    return sub;
  };
  CLI::App* synth = add("synth", "Generate a synthetic multi-level task stream");
  CLI::App* run_cmd = add("run", "Run a continual-learning experiment");
  run_cmd->add_option("--jobs", inv.jobs, "Parallel runs for sweep_seeds");
  CLI::App* select_cmd = add("select", "Select historic samples with one strategy");
  CLI::App* eval = add("eval", "Evaluate a head checkpoint on a dataset");
  CLI::App* params = add("param-count", "Print trainable parameter counts");
  CLI::App* exp = add("export", "Export a report (or dataset) to CSV/JSON");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    const json raw = load_config(inv.config_path, inv.overrides);
    if (synth->parsed()) return cmd_synth(Config(raw, kSynthKeys), out);
    if (run_cmd->parsed()) {
      std::set<std::string> keys = kRunOnlyKeys;
      keys.insert(kExperimentKeys.begin(), kExperimentKeys.end());
      return cmd_run(Config(raw, keys), inv.jobs, out);
    }
    if (select_cmd->parsed()) return cmd_select(Config(raw, kSelectKeys), out);
    if (eval->parsed()) return cmd_eval(Config(raw, kEvalKeys), out);
    if (params->parsed()) return cmd_param_count(Config(raw, kParamCountKeys), out);
    if (exp->parsed()) return cmd_export(Config(raw, kExportKeys), out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  return kUsage;
}

}  // namespace mlff::cli
