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

// Minimal dense network engine. Every layer has an explicit forward pass that
// caches what its backward pass needs; backward() overwrites the layer's
// parameter gradients (no accumulation across calls).
//
// Templates are explicitly instantiated for float (training) and double
// (finite-difference gradient checks) in nn.cpp.

#ifndef MLFF_NN_HPP_
#define MLFF_NN_HPP_

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mlff/matrix.hpp"

namespace mlff::nn {

enum class Mode { kTrain, kEval };

// A view onto one trainable tensor and its gradient buffer.
template <typename T>
struct ParamSlot {
  std::string name;
  std::span<T> value;
  std::span<T> grad;
};

template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(std::size_t in, std::size_t out);

  // Glorot-uniform weights in +-sqrt(6 / (in + out)), zero bias.
  void init(std::mt19937_64& rng);

  Matrix<T> forward(const Matrix<T>& input);
  Matrix<T> backward(const Matrix<T>& grad_out);

  std::size_t in_dim() const noexcept { return weight_.rows(); }
  std::size_t out_dim() const noexcept { return weight_.cols(); }
  std::size_t param_count() const noexcept { return weight_.size() + bias_.size(); }

  Matrix<T>& weight() noexcept { return weight_; }
  const Matrix<T>& weight() const noexcept { return weight_; }
  std::vector<T>& bias() noexcept { return bias_; }
  const std::vector<T>& bias() const noexcept { return bias_; }
  const Matrix<T>& grad_weight() const noexcept { return grad_weight_; }
  const std::vector<T>& grad_bias() const noexcept { return grad_bias_; }

  void append_params(const std::string& prefix, std::vector<ParamSlot<T>>& out);

 private:
  Matrix<T> weight_;  // in x out
  std::vector<T> bias_;
  Matrix<T> grad_weight_;
  std::vector<T> grad_bias_;
  Matrix<T> input_;
};

struct BatchNormOptions {
  double momentum = 0.1;
  double epsilon = 1e-5;
};

// Per-feature batch normalization. Train mode normalizes with the biased
// batch variance; the running variance tracks the unbiased estimate.
template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(std::size_t features, BatchNormOptions options = {});

  Matrix<T> forward(const Matrix<T>& input, Mode mode);
  Matrix<T> backward(const Matrix<T>& grad_out);

  std::size_t features() const noexcept { return gamma_.size(); }
  const BatchNormOptions& options() const noexcept { return options_; }

  std::vector<T>& gamma() noexcept { return gamma_; }
  std::vector<T>& beta() noexcept { return beta_; }
  std::vector<T>& running_mean() noexcept { return running_mean_; }
  std::vector<T>& running_var() noexcept { return running_var_; }
  const std::vector<T>& gamma() const noexcept { return gamma_; }
  const std::vector<T>& beta() const noexcept { return beta_; }
  const std::vector<T>& running_mean() const noexcept { return running_mean_; }
  const std::vector<T>& running_var() const noexcept { return running_var_; }
  const std::vector<T>& grad_gamma() const noexcept { return grad_gamma_; }
  const std::vector<T>& grad_beta() const noexcept { return grad_beta_; }

  void append_params(const std::string& prefix, std::vector<ParamSlot<T>>& out);

 private:
  BatchNormOptions options_;
  std::vector<T> gamma_, beta_;
  std::vector<T> running_mean_, running_var_;
  std::vector<T> grad_gamma_, grad_beta_;
  // Cached from the last forward pass.
  Mode mode_ = Mode::kEval;
  Matrix<T> normalized_;
  std::vector<T> inv_std_;
};

template <typename T>
class Relu {
 public:
  Matrix<T> forward(const Matrix<T>& input);
  // Subgradient at exactly zero is zero.
  Matrix<T> backward(const Matrix<T>& grad_out) const;
  const Matrix<T>& last_input() const noexcept { return input_; }

 private:
  Matrix<T> input_;
};

template <typename T>
struct LossResult {
  T loss;
  Matrix<T> grad_logits;
};

// Mean softmax cross-entropy over the batch and its gradient wrt the logits.
template <typename T>
LossResult<T> softmax_cross_entropy(const Matrix<T>& logits,
                                    std::span<const std::uint32_t> labels);

template <typename T>
Matrix<T> softmax(const Matrix<T>& logits);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

// One bias-corrected Adam update over all slots. An empty state is sized on
// first use; afterwards every slot must keep its size.
template <typename T>
void adam_step(std::span<const ParamSlot<T>> params, AdamState<T>& state, double lr);

// Cosine annealing from lr_max (step 0) to lr_min (step == total_steps).
double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_max,
                 double lr_min);

}  // namespace mlff::nn

#endif  // MLFF_NN_HPP_
