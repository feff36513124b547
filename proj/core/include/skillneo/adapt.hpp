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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillneo/checkpoint.hpp"
#include "skillneo/model.hpp"
#include "skillneo/taskgen.hpp"
#include "skillneo/train.hpp"

namespace skillneo::adapt {

using model::Checkpoint;
using model::Encoded;
using model::LowRank;
using model::Tensor;
using skills::Skill;

enum class Method : std::uint8_t { kNeologism, kPrefix, kLowRank };
std::string method_name(Method m);
Method parse_method(const std::string& name);

enum class InitMode : std::uint8_t { kMeanOfPretrainOps, kRandom };
std::string init_mode_name(InitMode m);
InitMode parse_init_mode(const std::string& name);

/// Learned soft tokens standing in for one skill. `weights` holds one soft
/// token per row ([l, d_model]).
struct Neologism {
  Skill skill = Skill::kId;
  Tensor weights;
  InitMode init_mode = InitMode::kMeanOfPretrainOps;

  int length() const { return weights.rows(); }
  /// "<SHIFT_1>" ... "<SHIFT_l>".
  std::vector<std::string> token_names() const;
};

/// Soft tokens placed in front of every prompt, right after the PAD run.
struct PromptPrefix {
  Skill skill = Skill::kId;
  Tensor weights;  // [l, d_model]
  InitMode init_mode = InitMode::kMeanOfPretrainOps;

  int length() const { return weights.rows(); }
};

struct LowRankAdapter {
  Skill skill = Skill::kId;
  LowRank factors;
};

/// Soft-token rows: every row equal to the mean of `op_rows` of
/// `embeddings`, or i.i.d. N(0, sigma^2).
Tensor init_soft_tokens(InitMode mode, const Tensor& embeddings,
                        const std::vector<int>& op_rows, int l, double sigma,
                        std::uint64_t seed);

/// Mean mode averages the embedding rows of the pretrain op tokens.
Neologism init_neologism(InitMode mode, const Checkpoint& base,
                         const skills::SkillSet& pretrain, Skill skill, int l,
                         double sigma, std::uint64_t seed);

/// Extension ids handed out to soft tokens on top of a base vocabulary.
class ExtendedVocab {
 public:
  struct Range {
    std::string owner;
    int first = 0;
    int length = 0;
  };

  ExtendedVocab(int base_size, int d_model);

  /// Appends `rows` at the next free id (or `first_id`). Overlapping ranges
  /// or a repeated owner throw ConfigError. Returns the first id.
  int add(const std::string& owner, const Tensor& rows,
          std::optional<int> first_id = std::nullopt);

  int base_size() const { return base_size_; }
  int size() const { return base_size_ + table_.rows(); }
  const Range& range(const std::string& owner) const;
  const std::vector<Range>& ranges() const { return ranges_; }
  /// Rows for ids base_size()..size()-1.
  const Tensor& table() const { return table_; }

 private:
  int base_size_;
  int d_model_;
  std::vector<Range> ranges_;
  Tensor table_;
};

/// Non-destructive: the checkpoint is only read.
ExtendedVocab extend_vocab(const Checkpoint& base,
                           const std::vector<const Neologism*>& neologisms);

enum class InsertionMode : std::uint8_t {
  kReplaceOpToken,      ///< each "[S]" token becomes the soft tokens
  kReplaceNameSpan,     ///< each occurrence of `marker` becomes the soft tokens
  kPrependInstruction,  ///< soft tokens placed before the text
};

struct InsertionRule {
  InsertionMode mode = InsertionMode::kReplaceOpToken;
  Skill skill = Skill::kId;
  std::string marker;  // for kReplaceNameSpan; op token text otherwise
  int first_id = 0;    // extension id of the first soft token
  int length = 0;

  std::string effective_marker() const;
};

InsertionRule op_token_rule(Skill skill, const ExtendedVocab::Range& range);

/// Tokenizes `text` with every rule applied. Markers must be present for
/// the replacing modes (InsertionError otherwise). The result starts with
/// `pad_count` PADs; EOS is appended when `append_eos` is set.
Encoded insert_skill_tokens(const model::Vocab& vocab, const std::string& text,
                            const std::vector<InsertionRule>& rules,
                            int pad_count = 0, bool append_eos = false);

/// One rule per neologism, applied independently.
Encoded compose_neologisms(const model::Vocab& vocab, const std::string& prompt,
                           const std::vector<InsertionRule>& rules);

struct AdapterTrainConfig {
  Method method = Method::kNeologism;
  int length = 20;  // soft tokens for neologism and prefix
  int rank = 16;
  float alpha = 16.0F;
  InitMode init_mode = InitMode::kMeanOfPretrainOps;
  double init_sigma = 0.2;
  model::TrainConfig train;

  void validate() const;
  /// Paper-default optimizer settings for `method`.
  static AdapterTrainConfig defaults(Method method);
};

nlohmann::json to_json(const AdapterTrainConfig& c);
AdapterTrainConfig adapter_config_from_json(const nlohmann::json& j);

/// Trained adapter of any method plus its training log.
struct Adapter {
  Method method = Method::kNeologism;
  Skill skill = Skill::kId;
  AdapterTrainConfig config;
  std::string base_digest;
  std::optional<Neologism> neologism;
  std::optional<PromptPrefix> prefix;
  std::optional<LowRankAdapter> low_rank;
  std::vector<model::EpochLog> log;

  std::size_t trainable_parameters() const;
  std::string digest() const;
};

/// Train against a frozen base. The base digest is checked before and after;
/// a change throws DigestError.
Adapter train_neologism(const Checkpoint& base, const taskgen::SkillCenteredDataset& ds,
                        const AdapterTrainConfig& cfg, const model::EpochCallback& cb = {});
Adapter train_prompt_prefix(const Checkpoint& base,
                            const taskgen::SkillCenteredDataset& ds,
                            const AdapterTrainConfig& cfg,
                            const model::EpochCallback& cb = {});
Adapter train_lowrank(const Checkpoint& base, const taskgen::SkillCenteredDataset& ds,
                      const AdapterTrainConfig& cfg, const model::EpochCallback& cb = {});
/// Dispatches on cfg.method.
Adapter train_adapter(const Checkpoint& base, const taskgen::SkillCenteredDataset& ds,
                      const AdapterTrainConfig& cfg, const model::EpochCallback& cb = {});

/// Sees the adapter as trained so far after each epoch; true stops early.
using AdapterProbe = std::function<bool(const Adapter& current, const model::EpochLog& log)>;

/// Same variants over an explicit list of samples (used for overfit runs).
Adapter train_adapter_on(const Checkpoint& base, const std::vector<taskgen::Sample>& samples,
                         Skill skill, const AdapterTrainConfig& cfg,
                         const model::EpochCallback& cb = {}, const AdapterProbe& probe = {});

/// Everything needed to run prompts through base + adapters.
struct AdaptedModel {
  const Checkpoint* base = nullptr;
  ExtendedVocab extension;
  std::vector<InsertionRule> rules;
  std::optional<int> prefix_first;  // prefix soft tokens, if any
  int prefix_length = 0;
  const LowRank* low_rank = nullptr;

  model::View view() const;
  /// Prompt "...x=" with rules and prefix applied.
  Encoded encode_prompt(const std::string& prompt) const;
};

/// A single adapter (any method) on top of `base`.
AdaptedModel attach(const Checkpoint& base, const Adapter& adapter);
/// Several neologisms composed zero-shot.
AdaptedModel attach_neologisms(const Checkpoint& base,
                               const std::vector<const Neologism*>& neologisms);
/// The bare base model.
AdaptedModel attach_none(const Checkpoint& base);

void save_adapter(const std::filesystem::path& dir, const Adapter& adapter);
/// Throws DigestError if `base` is not the checkpoint the adapter was
/// trained against.
Adapter load_adapter(const std::filesystem::path& dir, const Checkpoint& base);

}  // namespace skillneo::adapt
