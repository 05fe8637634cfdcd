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

#include "mlff/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mlff/random.hpp"

namespace mlff {

void FusionConfig::validate() const {
  if (level_dims.empty()) throw ConfigError("fusion config needs at least one level");
  for (std::size_t n = 0; n < level_dims.size(); ++n) {
    if (level_dims[n] == 0) {
      throw ConfigError("level " + std::to_string(n) + " has zero width");
    }
  }
  if (num_classes < 2) throw ConfigError("fusion config needs at least 2 classes");
  if (fused_dim == 0 || fused_dim % level_dims.size() != 0) {
    throw ConfigError("fused_dim " + std::to_string(fused_dim) +
                      " is not a positive multiple of the level count " +
                      std::to_string(level_dims.size()));
  }
}

FusionConfig FusionConfig::with_default_width(std::vector<std::size_t> level_dims,
                                              std::size_t num_classes) {
  FusionConfig config;
  config.fused_dim = level_dims.empty() ? 0 : level_dims.back();
  config.level_dims = std::move(level_dims);
  config.num_classes = num_classes;
  return config;
}

std::string_view to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::kMlff:
      return "mlff";
    case HeadKind::kLinearProbe:
      return "linear";
    case HeadKind::kMlpProbe:
      return "mlp";
  }
  return "unknown";
}

HeadKind head_kind_from_string(std::string_view name) {
  if (name == "mlff") return HeadKind::kMlff;
  if (name == "linear") return HeadKind::kLinearProbe;
  if (name == "mlp") return HeadKind::kMlpProbe;
  throw ConfigError("unknown head kind '" + std::string(name) + "'");
}

std::size_t HeadSpec::input_dim() const {
  if (kind == HeadKind::kMlff) {
    return std::accumulate(fusion.level_dims.begin(), fusion.level_dims.end(), std::size_t{0});
  }
  return fusion.level_dims.at(probe_level);
}

void HeadSpec::validate() const {
  if (kind == HeadKind::kMlff) {
    fusion.validate();
    return;
  }
  if (fusion.level_dims.empty()) throw ConfigError("probe needs at least one level");
  if (probe_level >= fusion.level_dims.size()) {
    throw ConfigError("probe_level " + std::to_string(probe_level) + " out of range");
  }
  if (fusion.level_dims[probe_level] == 0) throw ConfigError("probe input width is zero");
  if (fusion.num_classes < 2) throw ConfigError("probe needs at least 2 classes");
  if (kind == HeadKind::kMlpProbe && fusion.fused_dim == 0) {
    throw ConfigError("mlp probe needs a nonzero hidden width");
  }
}

HeadSpec HeadSpec::mlff(FusionConfig config) {
  HeadSpec spec;
  spec.kind = HeadKind::kMlff;
  spec.fusion = std::move(config);
  return spec;
}

HeadSpec HeadSpec::probe(HeadKind kind, std::vector<std::size_t> level_dims,
                         std::size_t hidden, std::size_t num_classes) {
  HeadSpec spec;
  spec.kind = kind;
  spec.probe_level = level_dims.empty() ? 0 : level_dims.size() - 1;
  spec.fusion.level_dims = std::move(level_dims);
  spec.fusion.fused_dim = hidden;
  spec.fusion.num_classes = num_classes;
  return spec;
}

ParamBreakdown param_count(const FusionConfig& config) {
  config.validate();
  const std::size_t width = config.branch_width();
  const std::size_t d = config.fused_dim;
  ParamBreakdown out;
  for (std::size_t c : config.level_dims) out.branches += c * width + width + 2 * width;
  out.hidden = d * d + d;
  out.classifier = d * config.num_classes + config.num_classes;
  return out;
}

ParamBreakdown probe_param_count(HeadKind kind, std::size_t in_dim, std::size_t hidden,
                                 std::size_t num_classes) {
  ParamBreakdown out;
  switch (kind) {
    case HeadKind::kLinearProbe:
      out.classifier = in_dim * num_classes + num_classes;
      break;
    case HeadKind::kMlpProbe:
      out.hidden = in_dim * hidden + hidden;
      out.classifier = hidden * num_classes + num_classes;
      break;
    case HeadKind::kMlff:
      throw ConfigError("probe_param_count called for an MLFF head");
  }
  return out;
}

ParamBreakdown param_count(const HeadSpec& spec) {
  spec.validate();
  if (spec.kind == HeadKind::kMlff) return param_count(spec.fusion);
  return probe_param_count(spec.kind, spec.input_dim(), spec.fusion.fused_dim,
                           spec.fusion.num_classes);
}

// ---------------------------------------------------------------------------
// Head

template <typename T>
Head<T>::Head(HeadSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
  spec_.validate();
  Rng rng(seed);
  const auto& f = spec_.fusion;
  std::size_t classifier_in = spec_.input_dim();
  if (spec_.kind == HeadKind::kMlff) {
    const std::size_t width = f.branch_width();
    for (std::size_t c : f.level_dims) {
      branch_dense_.emplace_back(c, width);
      branch_dense_.back().init(rng);
      branch_norm_.emplace_back(width);
      branch_relu_.emplace_back();
    }
    hidden_ = nn::Dense<T>(f.fused_dim, f.fused_dim);
    hidden_.init(rng);
    classifier_in = f.fused_dim;
  } else if (spec_.kind == HeadKind::kMlpProbe) {
    hidden_ = nn::Dense<T>(spec_.input_dim(), f.fused_dim);
    hidden_.init(rng);
    classifier_in = f.fused_dim;
  }
  classifier_ = nn::Dense<T>(classifier_in, f.num_classes);
  classifier_.init(rng);
}

template <typename T>
Matrix<T> Head<T>::forward(std::span<const Matrix<T>> levels, nn::Mode mode) {
  const auto& dims = spec_.fusion.level_dims;
  if (levels.size() != dims.size()) {
    throw DataError("head expects " + std::to_string(dims.size()) + " levels, got " +
                    std::to_string(levels.size()));
  }
  const std::size_t batch = levels.front().rows();
  for (std::size_t n = 0; n < levels.size(); ++n) {
    if (levels[n].cols() != dims[n] || levels[n].rows() != batch) {
      throw DataError("level " + std::to_string(n) + " is " +
                      std::to_string(levels[n].rows()) + "x" + std::to_string(levels[n].cols()) +
                      ", expected " + std::to_string(batch) + "x" + std::to_string(dims[n]));
    }
  }

  Matrix<T> features;
  if (spec_.kind == HeadKind::kMlff) {
    const std::size_t width = spec_.fusion.branch_width();
    features = Matrix<T>(batch, spec_.fusion.fused_dim);
    for (std::size_t n = 0; n < levels.size(); ++n) {
      Matrix<T> h = branch_dense_[n].forward(levels[n]);
      h = branch_norm_[n].forward(h, mode);
      h = branch_relu_[n].forward(h);
      for (std::size_t b = 0; b < batch; ++b) {
        auto src = h.row(b);
        std::copy(src.begin(), src.end(), features.row(b).begin() + n * width);
      }
    }
  } else {
    features = levels[spec_.probe_level];
  }
  if (has_hidden()) features = hidden_relu_.forward(hidden_.forward(features));
  return classifier_.forward(features);
}

template <typename T>
void Head<T>::backward(const Matrix<T>& grad_logits) {
  Matrix<T> grad = classifier_.backward(grad_logits);
  if (has_hidden()) grad = hidden_.backward(hidden_relu_.backward(grad));
  if (spec_.kind != HeadKind::kMlff) return;
  const std::size_t width = spec_.fusion.branch_width();
  const std::size_t batch = grad.rows();
  for (std::size_t n = 0; n < branch_dense_.size(); ++n) {
    Matrix<T> slice(batch, width);
    for (std::size_t b = 0; b < batch; ++b) {
      auto src = grad.row(b).subspan(n * width, width);
      std::copy(src.begin(), src.end(), slice.row(b).begin());
    }
    slice = branch_relu_[n].backward(slice);
    slice = branch_norm_[n].backward(slice);
    branch_dense_[n].backward(slice);
  }
}

template <typename T>
std::vector<nn::ParamSlot<T>> Head<T>::parameters() {
  std::vector<nn::ParamSlot<T>> out;
  for (std::size_t n = 0; n < branch_dense_.size(); ++n) {
    const std::string prefix = "branch" + std::to_string(n);
    branch_dense_[n].append_params(prefix + ".dense", out);
    branch_norm_[n].append_params(prefix + ".norm", out);
  }
  if (has_hidden()) hidden_.append_params("hidden", out);
  classifier_.append_params("classifier", out);
  return out;
}

template <typename T>
std::size_t Head<T>::trainable_count() {
  std::size_t total = 0;
  for (const auto& slot : parameters()) total += slot.value.size();
  return total;
}

template <typename T>
T Head<T>::relu_margin() const {
  T margin = std::numeric_limits<T>::infinity();
  auto scan = [&margin](const nn::Relu<T>& relu) {
    for (T x : relu.last_input().values()) margin = std::min(margin, std::abs(x));
  };
  for (const auto& relu : branch_relu_) scan(relu);
  if (has_hidden()) scan(hidden_relu_);
  return margin;
}

template class Head<float>;
template class Head<double>;

// ---------------------------------------------------------------------------
// Prediction and training

std::uint32_t argmax_class(std::span<const float> logits) {
  std::uint32_t best = 0;
  for (std::uint32_t c = 1; c < logits.size(); ++c) {
    if (logits[c] > logits[best]) best = c;
  }
  return best;
}

std::vector<std::uint32_t> predict_labels(Head<float>& head,
                                          std::span<const Matrix<float>> levels) {
  const Matrix<float> logits = head.forward(levels, nn::Mode::kEval);
  std::vector<std::uint32_t> out(logits.rows());
  for (std::size_t b = 0; b < logits.rows(); ++b) out[b] = argmax_class(logits.row(b));
  return out;
}

LevelDataset gather(const LevelDataset& data, std::span<const std::size_t> rows) {
  LevelDataset out;
  out.levels.reserve(data.levels.size());
  for (const auto& level : data.levels) out.levels.push_back(gather_rows(level, rows));
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(data.labels[r]);
  return out;
}

float train_step(Head<float>& head, std::span<const Matrix<float>> levels,
                 std::span<const std::uint32_t> labels, double lr) {
  const Matrix<float> logits = head.forward(levels, nn::Mode::kTrain);
  auto result = nn::softmax_cross_entropy(logits, labels);
  head.backward(result.grad_logits);
  auto params = head.parameters();
  nn::adam_step<float>(params, head.optimizer(), lr);
  return result.loss;
}

std::vector<float> train_epochs(Head<float>& head, const LevelDataset& data,
                                const TrainSchedule& schedule, std::uint64_t seed) {
  if (data.size() == 0) throw ProtocolError("training on an empty dataset");
  if (schedule.batch_size < 2) throw ConfigError("batch size must be at least 2");
  if (schedule.epochs == 0) throw ConfigError("epochs must be at least 1");

  const std::size_t full = data.size() / schedule.batch_size;
  const std::size_t tail = data.size() % schedule.batch_size;
  const std::size_t per_epoch = full + (tail >= 2 ? 1 : 0);
  if (per_epoch == 0) throw ProtocolError("dataset smaller than a 2-sample batch");
  const std::uint64_t total_steps = per_epoch * schedule.epochs;

  head.optimizer() = nn::AdamState<float>{};
  Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  std::vector<float> epoch_loss;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    seeded_shuffle(order, rng);
    double loss_sum = 0.0;
    for (std::size_t k = 0; k < per_epoch; ++k) {
      const std::size_t begin = k * schedule.batch_size;
      const std::size_t end = std::min(begin + schedule.batch_size, data.size());
      std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const LevelDataset batch = gather(data, rows);
      const double lr = nn::cosine_lr(step, total_steps, schedule.lr_max, schedule.lr_min);
      loss_sum += train_step(head, batch.levels, batch.labels, lr);
      ++step;
    }
    epoch_loss.push_back(static_cast<float>(loss_sum / static_cast<double>(per_epoch)));
  }
  return epoch_loss;
}

}  // namespace mlff
