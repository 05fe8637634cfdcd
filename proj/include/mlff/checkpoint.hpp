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

#ifndef MLFF_CHECKPOINT_HPP_
#define MLFF_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mlff/model.hpp"

namespace mlff {

// Head checkpoints reuse the dataset container with record_kind
// "head-params". The manifest carries the head spec, seed, batchnorm and Adam
// settings plus a tensor directory; the payload is the listed f32 tensors in
// directory order: trainable parameters, batchnorm running statistics, then
// Adam first and second moments.
std::vector<std::uint8_t> encode_checkpoint(Head<float>& head);
Head<float> decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(Head<float>& head, const std::filesystem::path& path);
Head<float> read_checkpoint(const std::filesystem::path& path);

}  // namespace mlff

#endif  // MLFF_CHECKPOINT_HPP_
