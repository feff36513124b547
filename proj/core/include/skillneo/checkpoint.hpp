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
#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "skillneo/model.hpp"

namespace skillneo::model {

inline constexpr const char* kCheckpointFormat = "skillneo-checkpoint/1";
inline constexpr const char* kDigestAlgorithm = "sha256";

/// SHA-256 over the little-endian float32 payload in registry order.
std::string parameters_digest(const ParamSet& params);

struct Checkpoint {
  ModelConfig config;
  Vocab vocab;
  ParamSet params;
  std::string digest;
  nlohmann::json metadata = nlohmann::json::object();
};

/// Directory with manifest.json (config, vocab, tensor index, digest) and
/// payload.bin (raw float32 LE row-major tensors in index order).
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
/// Verifies the payload digest; throws DigestError on mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Lower-level pair used by checkpoints and adapter artifacts alike.
void save_tensor_bundle(const std::filesystem::path& dir, const ParamSet& tensors,
                        nlohmann::json manifest);
/// Returns the manifest; fills `tensors`. Verifies the digest.
nlohmann::json load_tensor_bundle(const std::filesystem::path& dir,
                                  ParamSet& tensors);

}  // namespace skillneo::model
