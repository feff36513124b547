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
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillneo/skills.hpp"
#include "skillneo/tensor.hpp"
#include "skillneo/util.hpp"

namespace skillneo::model {

/// Token inventory of the base model.
///
/// Ids: digits 0-9, one token per skill (in the order given to build_vocab),
/// "=", PAD, BOS, EOS. Extension (soft) tokens occupy ids >= size().
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(const skills::SkillSet& skills);

  int size() const { return static_cast<int>(tokens_.size()); }
  int digit(int d) const { return d; }
  int op(skills::Skill s) const;
  bool has_op(skills::Skill s) const;
  int eq() const { return eq_; }
  int pad() const { return eq_ + 1; }
  int bos() const { return eq_ + 2; }
  int eos() const { return eq_ + 3; }
  bool is_digit(int id) const { return id >= 0 && id < 10; }
  bool is_op(int id) const { return id >= 10 && id < eq_; }

  /// "\n" maps to EOS so several rendered samples can share one context.
  std::vector<int> tokenize(std::string_view text) const;
  std::string detokenize(std::span<const int> ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<skills::Skill>& ops() const { return ops_; }

 private:
  std::vector<std::string> tokens_;
  std::vector<skills::Skill> ops_;
  int eq_ = 0;
};

Vocab build_vocab(const skills::SkillSet& skills);
/// Vocab over all nine skills (23 tokens).
Vocab default_vocab();

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int ffn_width = 512;
  int context_len = 512;
  int vocab_size = 23;
  bool tie_output_head = false;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Linear projections that low-rank adapters can attach to.
enum class LinearSlot : int { kQ = 0, kK, kV, kO, kUp, kDown };
inline constexpr int kLinearSlots = 6;

/// Registry layout: fixed tensor order so the engine indexes by position.
struct Layout {
  static constexpr int kTokEmb = 0;
  static constexpr int kPosEmb = 1;
  static constexpr int kPerLayer = 16;
  // Offsets inside one layer block.
  static constexpr int kLn1G = 0, kLn1B = 1, kQW = 2, kQB = 3, kKW = 4,
                       kKB = 5, kVW = 6, kVB = 7, kOW = 8, kOB = 9, kLn2G = 10,
                       kLn2B = 11, kUpW = 12, kUpB = 13, kDownW = 14,
                       kDownB = 15;
  static int layer(int l, int slot) { return 2 + l * kPerLayer + slot; }
  static int final_norm_g(const ModelConfig& c) { return 2 + c.n_layers * kPerLayer; }
  static int final_norm_b(const ModelConfig& c) { return final_norm_g(c) + 1; }
  static int head_w(const ModelConfig& c) { return final_norm_g(c) + 2; }
  static int head_b(const ModelConfig& c) { return final_norm_g(c) + 3; }
  static int weight_of(int l, LinearSlot s);
};

/// Allocates the registry for `config`; all zeros.
ParamSet make_parameters(const ModelConfig& config);
/// Scaled Gaussian initialization, layer-norm gains at one.
void init_parameters(ParamSet& params, const ModelConfig& config,
                     std::uint64_t seed);

/// Low-rank factor pairs for every (layer, slot) target. A is d_out x r and
/// starts at zero; B is r x d_in. Effective delta is (alpha / r) A B.
template <typename T>
struct LowRankT {
  int rank = 0;
  float alpha = 0.0F;
  ParamSetT<T> factors;  // A then B for index layer * 6 + slot

  T scale() const { return static_cast<T>(alpha / static_cast<float>(rank)); }
  const TensorT<T>& a(int l, LinearSlot s) const {
    return factors[2 * (l * kLinearSlots + static_cast<int>(s))];
  }
  const TensorT<T>& b(int l, LinearSlot s) const {
    return factors[2 * (l * kLinearSlots + static_cast<int>(s)) + 1];
  }
};
using LowRank = LowRankT<float>;

LowRank make_low_rank(const ModelConfig& config, int rank, float alpha,
                      std::uint64_t seed);

/// Read-only view of everything the forward pass consumes. `extension`
/// rows are the soft tokens, addressed as ids vocab_size + row.
template <typename T>
struct ViewT {
  const ParamSetT<T>* base = nullptr;
  const TensorT<T>* extension = nullptr;
  const LowRankT<T>* low_rank = nullptr;
};
using View = ViewT<float>;

/// Gradient sinks; a null member means that group is frozen.
template <typename T>
struct GradsT {
  ParamSetT<T>* base = nullptr;
  TensorT<T>* extension = nullptr;
  ParamSetT<T>* low_rank = nullptr;
};
using Grads = GradsT<float>;

/// B sequences of equal (padded) length T. `targets[i]` is the id expected
/// at position i + 1, or -1 when position i carries no loss.
struct Batch {
  int batch = 0;
  int seq = 0;
  std::vector<int> ids;
  std::vector<int> targets;
};

enum class MaskPolicy : std::uint8_t { kAnswerOnly, kFullSequence };

/// Token sequence plus the position of "=" (answer starts right after).
struct Encoded {
  std::vector<int> ids;
  int eq_pos = -1;
};

/// PAD^pad_count, op tokens, digits, "=", answer digits, EOS.
Encoded encode_sample(const Vocab& vocab, const std::string& text, int pad_count);
/// Prompt up to and including "=".
Encoded encode_prompt(const Vocab& vocab, const std::string& prompt_text);

/// Right-pads with PAD. Answer-only masks every position before "=";
/// full-sequence trains every next-token prediction whose target is a base
/// non-PAD token.
Batch make_batch(std::span<const Encoded> seqs, MaskPolicy policy,
                 const Vocab& vocab);

/// Forward/backward workspace for a decoder-only pre-norm transformer.
template <typename T>
class Engine {
 public:
  explicit Engine(const ModelConfig& config);
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  /// Logits for every position, row-major [batch * seq, vocab_size].
  const std::vector<T>& forward(const ViewT<T>& view, const Batch& batch);
  /// Mean next-token cross-entropy over positions with a target.
  T loss(const ViewT<T>& view, const Batch& batch);
  /// Loss plus gradients accumulated (added) into the non-null sinks.
  T loss_and_grad(const ViewT<T>& view, const Batch& batch,
                  const GradsT<T>& grads);

  const ModelConfig& config() const { return config_; }

 private:
  struct Impl;
  ModelConfig config_;
  std::unique_ptr<Impl> impl_;
};

/// Greedy argmax continuation of each prompt for up to `n_new` tokens.
/// Generation for a prompt stops after it emits `eos_id` (EOS is not
/// included in the result). Prompts of equal length are decoded together.
std::vector<std::vector<int>> greedy_decode(
    Engine<float>& engine, const View& view,
    const std::vector<std::vector<int>>& prompts, int n_new, int eos_id);

/// Digits of a decoded answer, up to the first non-digit token.
std::string answer_digits(const Vocab& vocab, std::span<const int> generated);

}  // namespace skillneo::model
