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

#ifndef MLFF_MODEL_HPP_
#define MLFF_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlff/matrix.hpp"
#include "mlff/nn.hpp"

namespace mlff {

// Architecture of the fusion head: N pooled levels of widths level_dims are
// each projected to fused_dim / N, normalized, rectified and concatenated.
struct FusionConfig {
  std::vector<std::size_t> level_dims;
  std::size_t fused_dim = 0;
  std::size_t num_classes = 2;

  std::size_t num_levels() const noexcept { return level_dims.size(); }
  std::size_t branch_width() const { return fused_dim / num_levels(); }
  // Throws ConfigError when any invariant is violated.
  void validate() const;

  // fused_dim defaults to the width of the deepest level.
  static FusionConfig with_default_width(std::vector<std::size_t> level_dims,
                                         std::size_t num_classes);
};

enum class HeadKind { kMlff, kLinearProbe, kMlpProbe };

std::string_view to_string(HeadKind kind);
HeadKind head_kind_from_string(std::string_view name);

// Everything needed to rebuild a head of any kind. Probes read exactly one
// level (probe_level) of the input; the MLFF head reads all of them.
struct HeadSpec {
  HeadKind kind = HeadKind::kMlff;
  FusionConfig fusion;
  std::size_t probe_level = 0;

  std::size_t input_dim() const;
  void validate() const;

  static HeadSpec mlff(FusionConfig config);
  // Probes over the last level of `level_dims` with hidden width `hidden`.
  static HeadSpec probe(HeadKind kind, std::vector<std::size_t> level_dims,
                        std::size_t hidden, std::size_t num_classes);
};

struct ParamBreakdown {
  std::size_t branches = 0;    // per-level projection + batchnorm affine
  std::size_t hidden = 0;      // d -> d (or in -> d for the MLP probe)
  std::size_t classifier = 0;  // -> C
  std::size_t total() const noexcept { return branches + hidden + classifier; }
};

// Closed-form trainable-parameter count; batchnorm running statistics are
// buffers, not parameters.
ParamBreakdown param_count(const FusionConfig& config);
ParamBreakdown param_count(const HeadSpec& spec);
ParamBreakdown probe_param_count(HeadKind kind, std::size_t in_dim, std::size_t hidden,
                                 std::size_t num_classes);

template <typename T>
class Head {
 public:
  Head() = default;
  Head(HeadSpec spec, std::uint64_t seed);

  const HeadSpec& spec() const noexcept { return spec_; }
  std::uint64_t seed() const noexcept { return seed_; }

  // `levels` holds one B x c_n matrix per level in extraction order.
  Matrix<T> forward(std::span<const Matrix<T>> levels, nn::Mode mode);
  // Backpropagates d(loss)/d(logits) from the last forward call.
  void backward(const Matrix<T>& grad_logits);

  std::vector<nn::ParamSlot<T>> parameters();
  std::size_t trainable_count();

  // Smallest |pre-activation| seen by any ReLU in the last forward pass.
  T relu_margin() const;

  std::vector<nn::Dense<T>>& branch_dense() noexcept { return branch_dense_; }
  std::vector<nn::BatchNorm<T>>& branch_norm() noexcept { return branch_norm_; }
  nn::Dense<T>& hidden() noexcept { return hidden_; }
  nn::Dense<T>& classifier() noexcept { return classifier_; }
  nn::AdamState<T>& optimizer() noexcept { return optimizer_; }
  const std::vector<nn::BatchNorm<T>>& branch_norm() const noexcept { return branch_norm_; }

 private:
  bool has_hidden() const noexcept { return spec_.kind != HeadKind::kLinearProbe; }

  HeadSpec spec_;
  std::uint64_t seed_ = 0;
  std::vector<nn::Dense<T>> branch_dense_;
  std::vector<nn::BatchNorm<T>> branch_norm_;
  std::vector<nn::Relu<T>> branch_relu_;
  nn::Dense<T> hidden_;
  nn::Relu<T> hidden_relu_;
  nn::Dense<T> classifier_;
  nn::AdamState<T> optimizer_;
};

struct Prediction {
  std::vector<float> logits;
  std::uint32_t label = 0;
};

// Argmax with ties broken towards the lowest class index.
std::uint32_t argmax_class(std::span<const float> logits);
std::vector<std::uint32_t> predict_labels(Head<float>& head,
                                          std::span<const Matrix<float>> levels);

// A labeled set of level vectors: levels[n] is count x c_n.
struct LevelDataset {
  std::vector<Matrix<float>> levels;
  std::vector<std::uint32_t> labels;
  std::size_t size() const noexcept { return labels.size(); }
};

LevelDataset gather(const LevelDataset& data, std::span<const std::size_t> rows);

struct TrainSchedule {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  double lr_max = 1e-3;
  double lr_min = 0.0;
};

// One optimizer step on a batch; returns the batch loss.
float train_step(Head<float>& head, std::span<const Matrix<float>> levels,
                 std::span<const std::uint32_t> labels, double lr);

// Seeded mini-batch training with a fresh Adam state and a cosine schedule
// over all optimizer steps. A trailing batch smaller than 2 is dropped.
// Returns the mean loss of every epoch.
std::vector<float> train_epochs(Head<float>& head, const LevelDataset& data,
                                const TrainSchedule& schedule, std::uint64_t seed);

}  // namespace mlff

#endif  // MLFF_MODEL_HPP_
