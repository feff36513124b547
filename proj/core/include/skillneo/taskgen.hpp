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

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillneo/skills.hpp"

namespace skillneo::taskgen {

using skills::DigitSeq;
using skills::OpChain;
using skills::Skill;
using skills::SkillSet;

inline constexpr const char* kGeneratorVersion = "skillneo-taskgen/1";

/// One rendered instance "[OP-1]...[OP-k]x=y".
///
/// `label_ops` is what the text shows; `exec_ops` is what produced `target`.
/// The two differ only after label-noise injection.
struct Sample {
  OpChain label_ops;
  OpChain exec_ops;
  DigitSeq input;
  DigitSeq target;
  std::string text;

  std::size_t k() const { return label_ops.size(); }
  bool operator==(const Sample&) const = default;
};

Sample render_sample(const OpChain& chain, const DigitSeq& x);
/// Text of the prompt part only, "[OP-1]...[OP-k]x=".
std::string render_prompt(const OpChain& chain, const DigitSeq& x);

struct ParsedText {
  OpChain ops;
  DigitSeq input;
  DigitSeq target;
};
/// Inverse of render_sample's text. Throws InputError on malformed text.
ParsedText parse_text(std::string_view text);

/// How chain lengths are assigned across a dataset.
enum class KDistribution : std::uint8_t {
  kUniform,    ///< each sample draws k uniformly from 1..k_max
  kEvenSplit,  ///< exactly n/k_max samples per k (remainder to the smallest k)
};

struct DatasetSpec {
  std::optional<Skill> target_skill;
  SkillSet skill_pool;
  int k_max = 3;
  KDistribution k_distribution = KDistribution::kUniform;
  std::size_t n_samples = 0;
  std::vector<int> seq_lengths = {2, 3, 4, 6, 8};
  std::vector<int> held_out_lengths = {5, 7, 9};
  double held_out_combo_fraction = 0.0;
  std::uint64_t seed = 0;
};

/// Unordered 3-multiset of skills, stored sorted.
using Combo = std::array<Skill, 3>;
using ComboSet = std::set<Combo>;
Combo make_combo(Skill a, Skill b, Skill c);

struct Manifest {
  std::string kind;  // "pretrain-phase1", "skill-centered", "permutation-k2", ...
  std::string generator_version = kGeneratorVersion;
  std::uint64_t seed = 0;
  double noise_rate = 0.0;
  std::uint64_t noise_seed = 0;
  std::size_t corrupted = 0;
  /// Pretrain chains may repeat a skill within one chain.
  bool chains_with_replacement = true;
  std::vector<Combo> held_out_combos;
  nlohmann::json extra = nlohmann::json::object();
};

struct SkillCenteredDataset {
  DatasetSpec spec;
  std::vector<Sample> samples;
  Manifest manifest;
};

/// All 3-multisets over `pool` (C(n+2, 3) of them).
std::vector<Combo> all_combos(const SkillSet& pool);

/// Deterministic subset of ceil(fraction * |combos|) 3-multisets.
ComboSet select_held_out_combos(const SkillSet& pool, double fraction,
                                std::uint64_t seed);

/// Phase 1: single ops. Phase 2: k uniform on {1, 2, 3}, skills drawn with
/// replacement, held-out 3-combinations rejected. Never emits held-out lengths.
SkillCenteredDataset gen_pretrain_corpus(const DatasetSpec& spec, int phase,
                                         const ComboSet& held_out_combos);

/// Test grid for the base model: `n_per_cell` samples per length for chains
/// of exactly `k` ops. With `ood_combos` set, every 3-chain is a random
/// ordering of one held-out combination; otherwise held-out combinations are
/// avoided.
SkillCenteredDataset gen_pretrain_testset(const SkillSet& pool, int k,
                                          const std::vector<int>& lengths,
                                          std::size_t n_per_cell,
                                          const ComboSet& held_out_combos,
                                          bool ood_combos, std::uint64_t seed);

/// Every chain contains `target` exactly once at a uniform position; the
/// other slots are filled i.i.d. from `train_pool`.
SkillCenteredDataset gen_skill_centered(Skill target, const SkillSet& train_pool,
                                        const DatasetSpec& spec);

struct NoiseSpec {
  double rate = 0.0;
  std::uint64_t seed = 0;
};

/// Per sample with probability `rate`, executes a different pool skill in
/// place of the target while the text keeps the target token.
SkillCenteredDataset inject_label_noise(const SkillCenteredDataset& ds,
                                        const NoiseSpec& noise);

/// Exhaustive-ordering test set. For k = 2 every ordering of
/// (target, partner) gets `n_per_cell` samples per length; for k = 3 a
/// third op is drawn from `train_pool` per instance and all 6 orderings are
/// covered. The partner of each instance is drawn from `partner_pool`
/// (a single held-out skill for OOD, the train pool for ID).
SkillCenteredDataset gen_permutation_testset(Skill target,
                                             const SkillSet& partner_pool,
                                             const SkillSet& train_pool, int k,
                                             std::size_t n_per_cell,
                                             const std::vector<int>& lengths,
                                             std::uint64_t seed);

/// Samples whose chain contains both `a` and `b` once, in both orders,
/// `n_per_cell` per ordering and length.
SkillCenteredDataset gen_joint_testset(Skill a, Skill b,
                                       const std::vector<int>& lengths,
                                       std::size_t n_per_cell,
                                       std::uint64_t seed);

/// JSON-lines file with fields label_ops, exec_ops, input, target, text, plus
/// a "<path>.manifest.json" sidecar.
void write_dataset(const SkillCenteredDataset& ds,
                   const std::filesystem::path& path);
SkillCenteredDataset read_dataset(const std::filesystem::path& path);

std::string serialize_samples(const std::vector<Sample>& samples);
nlohmann::json manifest_json(const SkillCenteredDataset& ds);
std::filesystem::path manifest_path(const std::filesystem::path& dataset_path);

}  // namespace skillneo::taskgen
