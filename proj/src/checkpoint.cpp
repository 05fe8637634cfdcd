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

#include "mlff/checkpoint.hpp"

#include <bit>
#include <string>
#include <utility>

#include "mlff/error.hpp"
#include "mlff/store.hpp"

namespace mlff {
namespace {

struct Tensor {
  std::string name;
  std::span<float> data;
};

// Fixed enumeration order shared by encode and decode.
std::vector<Tensor> tensors_of(Head<float>& head) {
  std::vector<Tensor> out;
  auto params = head.parameters();
  for (auto& p : params) out.push_back({p.name, p.value});
  auto& norms = head.branch_norm();
  for (std::size_t n = 0; n < norms.size(); ++n) {
    const std::string prefix = "branch" + std::to_string(n) + ".norm";
    out.push_back({prefix + ".running_mean", norms[n].running_mean()});
    out.push_back({prefix + ".running_var", norms[n].running_var()});
  }
  auto& adam = head.optimizer();
  for (std::size_t i = 0; i < adam.first_moment.size(); ++i) {
    out.push_back({"adam.m." + params[i].name, adam.first_moment[i]});
    out.push_back({"adam.v." + params[i].name, adam.second_moment[i]});
  }
  return out;
}

nlohmann::json spec_to_json(const HeadSpec& spec) {
  return {{"kind", std::string(to_string(spec.kind))},
          {"level_dims", spec.fusion.level_dims},
          {"fused_dim", spec.fusion.fused_dim},
          {"num_classes", spec.fusion.num_classes},
          {"probe_level", spec.probe_level}};
}

HeadSpec spec_from_json(const nlohmann::json& j) {
  HeadSpec spec;
  spec.kind = head_kind_from_string(j.at("kind").get<std::string>());
  spec.fusion.level_dims = j.at("level_dims").get<std::vector<std::size_t>>();
  spec.fusion.fused_dim = j.at("fused_dim").get<std::size_t>();
  spec.fusion.num_classes = j.at("num_classes").get<std::size_t>();
  spec.probe_level = j.at("probe_level").get<std::size_t>();
  return spec;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(Head<float>& head) {
  const auto tensors = tensors_of(head);
  nlohmann::json directory = nlohmann::json::array();
  std::vector<std::uint8_t> payload;
  for (const auto& t : tensors) {
    directory.push_back({{"name", t.name}, {"count", t.data.size()}});
    for (float v : t.data) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) payload.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  const auto& adam = head.optimizer();
  const auto& norms = head.branch_norm();
  const nn::BatchNormOptions bn = norms.empty() ? nn::BatchNormOptions{} : norms.front().options();
  nlohmann::json manifest{
      {"format_version", kFormatVersion},
      {"record_kind", kRecordKindHeadParams},
      {"record_count", tensors.size()},
      {"head", spec_to_json(head.spec())},
      {"seed", head.seed()},
      {"batchnorm", {{"momentum", bn.momentum}, {"epsilon", bn.epsilon}}},
      {"adam",
       {{"step", adam.step},
        {"beta1", adam.options.beta1},
        {"beta2", adam.options.beta2},
        {"epsilon", adam.options.epsilon}}},
      {"tensors", directory}};
  return encode_container(manifest, payload);
}

Head<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Container c = decode_container(bytes);
  const auto& m = c.manifest;
  try {
    if (m.at("record_kind").get<std::string>() != kRecordKindHeadParams) {
      throw FormatError("container does not hold head parameters");
    }
    Head<float> head(spec_from_json(m.at("head")), m.at("seed").get<std::uint64_t>());
    auto& adam = head.optimizer();
    adam.step = m.at("adam").at("step").get<std::uint64_t>();
    adam.options.beta1 = m.at("adam").at("beta1").get<double>();
    adam.options.beta2 = m.at("adam").at("beta2").get<double>();
    adam.options.epsilon = m.at("adam").at("epsilon").get<double>();

    const auto& directory = m.at("tensors");
    const auto param_count = head.parameters().size();
    if (directory.size() > tensors_of(head).size()) {
      // Adam moments are present: size them before enumerating.
      for (const auto& p : head.parameters()) {
        adam.first_moment.emplace_back(p.value.size(), 0.0f);
        adam.second_moment.emplace_back(p.value.size(), 0.0f);
      }
    }
    auto tensors = tensors_of(head);
    if (directory.size() != tensors.size() || m.at("record_count").get<std::size_t>() != tensors.size()) {
      throw DataError("checkpoint lists " + std::to_string(directory.size()) +
                      " tensors, head has " + std::to_string(tensors.size()) + " (" +
                      std::to_string(param_count) + " parameters)");
    }
    std::size_t offset = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto name = directory[i].at("name").get<std::string>();
      const auto count = directory[i].at("count").get<std::size_t>();
      if (name != tensors[i].name || count != tensors[i].data.size()) {
        throw DataError("checkpoint tensor '" + name + "' does not match head tensor '" +
                        tensors[i].name + "'");
      }
      if (c.payload.size() < offset + 4 * count) throw CorruptionError("truncated checkpoint payload");
      for (float& v : tensors[i].data) {
        std::uint32_t bits = 0;
        for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(c.payload[offset++]) << (8 * k);
        v = std::bit_cast<float>(bits);
      }
    }
    if (offset != c.payload.size()) throw CorruptionError("trailing bytes in checkpoint payload");
    return head;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
  }
}

void write_checkpoint(Head<float>& head, const std::filesystem::path& path) {
  write_bytes(path, encode_checkpoint(head));
}

Head<float> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_bytes(path));
}

}  // namespace mlff
