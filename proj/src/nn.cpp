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

#include "mlff/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mlff::nn {
namespace {

std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename T>
void require_finite(const Matrix<T>& m, const char* where) {
  if (!m.all_finite()) {
    throw NumericError(std::string("non-finite value entering ") + where);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Dense

template <typename T>
Dense<T>::Dense(std::size_t in, std::size_t out)
    : weight_(in, out), bias_(out, T{0}), grad_weight_(in, out), grad_bias_(out, T{0}) {
  if (in == 0 || out == 0) throw ConfigError("dense layer needs nonzero dims");
}

template <typename T>
void Dense<T>::init(std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in_dim() + out_dim()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (T& w : weight_.values()) w = static_cast<T>(dist(rng));
  std::fill(bias_.begin(), bias_.end(), T{0});
}

template <typename T>
Matrix<T> Dense<T>::forward(const Matrix<T>& input) {
  if (input.cols() != in_dim()) {
    throw ConfigError("dense input " + shape_str(input.rows(), input.cols()) +
                      " does not match weight " + shape_str(in_dim(), out_dim()));
  }
  require_finite(input, "dense layer");
  input_ = input;
  const std::size_t batch = input.rows();
  const std::size_t out_dim_ = out_dim();
  Matrix<T> out(batch, out_dim_);
  for (std::size_t b = 0; b < batch; ++b) {
    auto dst = out.row(b);
    std::copy(bias_.begin(), bias_.end(), dst.begin());
    auto src = input.row(b);
    for (std::size_t k = 0; k < in_dim(); ++k) {
      const T x = src[k];
      auto w = weight_.row(k);
      for (std::size_t j = 0; j < out_dim_; ++j) dst[j] += x * w[j];
    }
  }
  return out;
}

template <typename T>
Matrix<T> Dense<T>::backward(const Matrix<T>& grad_out) {
  if (grad_out.rows() != input_.rows() || grad_out.cols() != out_dim()) {
    throw ConfigError("dense backward got " + shape_str(grad_out.rows(), grad_out.cols()));
  }
  const std::size_t batch = grad_out.rows();
  grad_weight_.fill(T{0});
  std::fill(grad_bias_.begin(), grad_bias_.end(), T{0});
  Matrix<T> grad_in(batch, in_dim());
  for (std::size_t b = 0; b < batch; ++b) {
    auto g = grad_out.row(b);
    auto x = input_.row(b);
    auto gi = grad_in.row(b);
    for (std::size_t j = 0; j < out_dim(); ++j) grad_bias_[j] += g[j];
    for (std::size_t k = 0; k < in_dim(); ++k) {
      auto w = weight_.row(k);
      auto gw = grad_weight_.row(k);
      T acc{0};
      const T xk = x[k];
      for (std::size_t j = 0; j < out_dim(); ++j) {
        acc += g[j] * w[j];
        gw[j] += xk * g[j];
      }
      gi[k] = acc;
    }
  }
  return grad_in;
}

template <typename T>
void Dense<T>::append_params(const std::string& prefix, std::vector<ParamSlot<T>>& out) {
  out.push_back({prefix + ".weight", weight_.values(), grad_weight_.values()});
  out.push_back({prefix + ".bias", std::span<T>(bias_), std::span<T>(grad_bias_)});
}

// ---------------------------------------------------------------------------
// BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t features, BatchNormOptions options)
    : options_(options),
      gamma_(features, T{1}),
      beta_(features, T{0}),
      running_mean_(features, T{0}),
      running_var_(features, T{1}),
      grad_gamma_(features, T{0}),
      grad_beta_(features, T{0}) {
  if (features == 0) throw ConfigError("batchnorm needs at least one feature");
  if (!(options.momentum > 0.0 && options.momentum < 1.0)) {
    throw ConfigError("batchnorm momentum must lie in (0, 1)");
  }
  if (!(options.epsilon > 0.0)) throw ConfigError("batchnorm epsilon must be positive");
}

template <typename T>
Matrix<T> BatchNorm<T>::forward(const Matrix<T>& input, Mode mode) {
  const std::size_t batch = input.rows();
  const std::size_t width = features();
  if (input.cols() != width) {
    throw ConfigError("batchnorm expects " + std::to_string(width) + " features, got " +
                      std::to_string(input.cols()));
  }
  if (mode == Mode::kTrain && batch < 2) {
    throw ProtocolError("batchnorm train mode needs a batch of at least 2");
  }
  mode_ = mode;
  normalized_ = Matrix<T>(batch, width);
  inv_std_.assign(width, T{0});
  Matrix<T> out(batch, width);
  const T eps = static_cast<T>(options_.epsilon);

  for (std::size_t c = 0; c < width; ++c) {
    T mean, var;
    if (mode == Mode::kTrain) {
      T sum{0};
      for (std::size_t b = 0; b < batch; ++b) sum += input(b, c);
      mean = sum / static_cast<T>(batch);
      T sq{0};
      for (std::size_t b = 0; b < batch; ++b) {
        const T d = input(b, c) - mean;
        sq += d * d;
      }
      var = sq / static_cast<T>(batch);
      const T m = static_cast<T>(options_.momentum);
      const T unbiased = sq / static_cast<T>(batch - 1);
      running_mean_[c] = (T{1} - m) * running_mean_[c] + m * mean;
      running_var_[c] = (T{1} - m) * running_var_[c] + m * unbiased;
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const T inv_std = T{1} / std::sqrt(var + eps);
    inv_std_[c] = inv_std;
    for (std::size_t b = 0; b < batch; ++b) {
      const T xhat = (input(b, c) - mean) * inv_std;
      normalized_(b, c) = xhat;
      out(b, c) = gamma_[c] * xhat + beta_[c];
    }
  }
  return out;
}

template <typename T>
Matrix<T> BatchNorm<T>::backward(const Matrix<T>& grad_out) {
  const std::size_t batch = normalized_.rows();
  const std::size_t width = features();
  if (grad_out.rows() != batch || grad_out.cols() != width) {
    throw ConfigError("batchnorm backward got " + shape_str(grad_out.rows(), grad_out.cols()));
  }
  Matrix<T> grad_in(batch, width);
  const T n = static_cast<T>(batch);
  for (std::size_t c = 0; c < width; ++c) {
    T sum_g{0}, sum_gx{0};
    for (std::size_t b = 0; b < batch; ++b) {
      sum_g += grad_out(b, c);
      sum_gx += grad_out(b, c) * normalized_(b, c);
    }
    grad_beta_[c] = sum_g;
    grad_gamma_[c] = sum_gx;
    const T scale = gamma_[c] * inv_std_[c];
    if (mode_ == Mode::kTrain) {
      for (std::size_t b = 0; b < batch; ++b) {
        grad_in(b, c) =
            scale * (grad_out(b, c) - sum_g / n - normalized_(b, c) * sum_gx / n);
      }
    } else {
      for (std::size_t b = 0; b < batch; ++b) grad_in(b, c) = scale * grad_out(b, c);
    }
  }
  return grad_in;
}

template <typename T>
void BatchNorm<T>::append_params(const std::string& prefix, std::vector<ParamSlot<T>>& out) {
  out.push_back({prefix + ".gamma", std::span<T>(gamma_), std::span<T>(grad_gamma_)});
  out.push_back({prefix + ".beta", std::span<T>(beta_), std::span<T>(grad_beta_)});
}

// ---------------------------------------------------------------------------
// Relu

template <typename T>
Matrix<T> Relu<T>::forward(const Matrix<T>& input) {
  input_ = input;
  Matrix<T> out(input.rows(), input.cols());
  auto src = input.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
  return out;
}

template <typename T>
Matrix<T> Relu<T>::backward(const Matrix<T>& grad_out) const {
  if (grad_out.rows() != input_.rows() || grad_out.cols() != input_.cols()) {
    throw ConfigError("relu backward got " + shape_str(grad_out.rows(), grad_out.cols()));
  }
  Matrix<T> grad_in(grad_out.rows(), grad_out.cols());
  auto x = input_.values();
  auto g = grad_out.values();
  auto dst = grad_in.values();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] = x[i] > T{0} ? g[i] : T{0};
  return grad_in;
}

// ---------------------------------------------------------------------------
// Loss

template <typename T>
Matrix<T> softmax(const Matrix<T>& logits) {
  Matrix<T> probs(logits.rows(), logits.cols());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto z = logits.row(b);
    auto p = probs.row(b);
    const T max_z = *std::max_element(z.begin(), z.end());
    T sum{0};
    for (std::size_t c = 0; c < z.size(); ++c) {
      p[c] = std::exp(z[c] - max_z);
      sum += p[c];
    }
    for (T& v : p) v /= sum;
  }
  return probs;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Matrix<T>& logits,
                                    std::span<const std::uint32_t> labels) {
  if (labels.size() != logits.rows()) {
    throw ConfigError("label count " + std::to_string(labels.size()) +
                      " does not match batch " + std::to_string(logits.rows()));
  }
  if (logits.rows() == 0) throw ProtocolError("cross-entropy over an empty batch");
  require_finite(logits, "cross-entropy");
  const std::size_t classes = logits.cols();
  for (std::uint32_t y : labels) {
    if (y >= classes) {
      throw DataError("label " + std::to_string(y) + " out of range for " +
                      std::to_string(classes) + " classes");
    }
  }
  const T batch = static_cast<T>(logits.rows());
  LossResult<T> result{T{0}, Matrix<T>(logits.rows(), classes)};
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto z = logits.row(b);
    const T max_z = *std::max_element(z.begin(), z.end());
    T sum{0};
    for (T v : z) sum += std::exp(v - max_z);
    const T log_sum = std::log(sum);
    result.loss -= z[labels[b]] - max_z - log_sum;
    auto g = result.grad_logits.row(b);
    for (std::size_t c = 0; c < classes; ++c) {
      g[c] = std::exp(z[c] - max_z - log_sum) / batch;
    }
    g[labels[b]] -= T{1} / batch;
  }
  result.loss /= batch;
  return result;
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

template <typename T>
void adam_step(std::span<const ParamSlot<T>> params, AdamState<T>& state, double lr) {
  if (lr < 0.0) throw ConfigError("learning rate must be non-negative");
  if (state.first_moment.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value.size(), T{0});
      state.second_moment.emplace_back(p.value.size(), T{0});
    }
  }
  if (state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ConfigError("adam state has " + std::to_string(state.first_moment.size()) +
                      " slots, parameters have " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value.size() != state.first_moment[i].size() ||
        params[i].grad.size() != params[i].value.size()) {
      throw ConfigError("adam slot '" + params[i].name + "' changed shape");
    }
  }

  state.step += 1;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  const T b1 = static_cast<T>(o.beta1);
  const T b2 = static_cast<T>(o.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto value = params[i].value;
    auto grad = params[i].grad;
    for (std::size_t k = 0; k < value.size(); ++k) {
      const T g = grad[k];
      m[k] = b1 * m[k] + (T{1} - b1) * g;
      v[k] = b2 * v[k] + (T{1} - b2) * g * g;
      const double m_hat = static_cast<double>(m[k]) / correction1;
      const double v_hat = static_cast<double>(v[k]) / correction2;
      value[k] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + o.epsilon));
    }
  }
}

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_max, double lr_min) {
  if (total_steps == 0) throw ConfigError("cosine schedule needs total_steps >= 1");
  if (step > total_steps) {
    throw ProtocolError("schedule step " + std::to_string(step) + " exceeds total " +
                        std::to_string(total_steps));
  }
  const double phase = std::numbers::pi * static_cast<double>(step) /
                       static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

template class Dense<float>;
template class Dense<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class Relu<float>;
template class Relu<double>;
template Matrix<float> softmax(const Matrix<float>&);
template Matrix<double> softmax(const Matrix<double>&);
template LossResult<float> softmax_cross_entropy(const Matrix<float>&,
                                                 std::span<const std::uint32_t>);
template LossResult<double> softmax_cross_entropy(const Matrix<double>&,
                                                  std::span<const std::uint32_t>);
template void adam_step(std::span<const ParamSlot<float>>, AdamState<float>&, double);
template void adam_step(std::span<const ParamSlot<double>>, AdamState<double>&, double);

}  // namespace mlff::nn
