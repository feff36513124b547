/* Copyright 2026 The skillneo Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "skillneo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "skillneo/errors.hpp"

namespace skillneo::model {

static_assert(std::endian::native == std::endian::little,
              "payload format assumes a little-endian host");

namespace {

std::string payload_bytes(const ParamSet& tensors) {
  std::string bytes;
  bytes.reserve(tensors.numel() * sizeof(float));
  for (const auto& t : tensors) {
    bytes.append(reinterpret_cast<const char*>(t.data.data()),
                 t.data.size() * sizeof(float));
  }
  return bytes;
}

}  // namespace

std::string parameters_digest(const ParamSet& params) {
  return sha256_hex(payload_bytes(params));
}

void save_tensor_bundle(const std::filesystem::path& dir, const ParamSet& tensors,
                        nlohmann::json manifest) {
  std::filesystem::create_directories(dir);
  const std::string bytes = payload_bytes(tensors);
  auto index = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    index.push_back({{"name", t.name},
                     {"shape", t.shape},
                     {"offset", offset},
                     {"numel", t.numel()}});
    offset += t.numel() * sizeof(float);
  }
  manifest["format"] = kCheckpointFormat;
  manifest["dtype"] = "float32-le";
  manifest["tensors"] = index;
  manifest["digest_algorithm"] = kDigestAlgorithm;
  manifest["digest"] = sha256_hex(bytes);
  manifest["payload_bytes"] = bytes.size();
  write_text_file(dir / "payload.bin", bytes);
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

nlohmann::json load_tensor_bundle(const std::filesystem::path& dir,
                                  ParamSet& tensors) {
  const auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  if (manifest.value("format", "") != kCheckpointFormat) {
    throw ConfigError("unknown checkpoint format in " + dir.string());
  }
  const std::string bytes = read_text_file(dir / "payload.bin");
  if (sha256_hex(bytes) != manifest.at("digest").get<std::string>()) {
    throw DigestError("payload digest mismatch in " + dir.string());
  }
  tensors = ParamSet();
  for (const auto& entry : manifest.at("tensors")) {
    const int i = tensors.add(entry.at("name").get<std::string>(),
                              entry.at("shape").get<std::vector<int>>());
    auto& t = tensors[i];
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t nbytes = t.numel() * sizeof(float);
    if (entry.at("numel").get<std::size_t>() != t.numel() ||
        offset + nbytes > bytes.size()) {
      throw ConfigError("tensor index out of payload bounds: " + t.name);
    }
    std::memcpy(t.data.data(), bytes.data() + offset, nbytes);
  }
  return manifest;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  nlohmann::json m;
  m["kind"] = "base";
  m["config"] = to_json(ckpt.config);
  m["vocab"] = ckpt.vocab.tokens();
  auto ops = nlohmann::json::array();
  for (auto s : ckpt.vocab.ops()) ops.push_back(skills::token(s));
  m["vocab_ops"] = ops;
  m["metadata"] = ckpt.metadata;
  save_tensor_bundle(dir, ckpt.params, std::move(m));
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint c;
  const auto m = load_tensor_bundle(dir, c.params);
  if (m.value("kind", "") != "base") {
    throw ConfigError(dir.string() + " is not a base checkpoint");
  }
  c.config = model_config_from_json(m.at("config"));
  std::vector<skills::Skill> ops;
  for (const auto& t : m.at("vocab_ops")) ops.push_back(skills::parse(t.get<std::string>()));
  c.vocab = Vocab(skills::SkillSet(std::move(ops), skills::Role::kPretrain));
  if (c.vocab.tokens() != m.at("vocab").get<std::vector<std::string>>()) {
    throw ConfigError("vocabulary in manifest does not match its op list");
  }
  const auto expected = make_parameters(c.config);
  if (expected.size() != c.params.size()) {
    throw ConfigError("tensor count does not match config");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& a = expected[static_cast<int>(i)];
    const auto& b = c.params[static_cast<int>(i)];
    if (a.name != b.name || a.shape != b.shape) {
      throw ConfigError("tensor " + b.name + " does not match config layout");
    }
  }
  c.digest = m.at("digest").get<std::string>();
  c.metadata = m.value("metadata", nlohmann::json::object());
  return c;
}

}  // namespace skillneo::model
