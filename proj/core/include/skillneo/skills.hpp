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
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace skillneo::skills {

/// A digit string. Leading zeros are significant; length never changes
/// under any skill.
using DigitSeq = std::vector<std::uint8_t>;

enum class Skill : std::uint8_t {
  kAsc,
  kDesc,
  kAdd,
  kSub,
  kRev,
  kPol,
  kId,
  kShift,
  kInvPol,
};

inline constexpr int kNumSkills = 9;

inline constexpr std::array<Skill, kNumSkills> kAllSkills = {
    Skill::kAsc, Skill::kDesc, Skill::kAdd,   Skill::kSub,   Skill::kRev,
    Skill::kPol, Skill::kId,   Skill::kShift, Skill::kInvPol};

/// Bare name, e.g. "INV-POL".
std::string_view name(Skill s);
/// Bracketed token as it appears in rendered text, e.g. "[INV-POL]".
std::string token(Skill s);
/// Accepts "ASC" or "[ASC]"; also the long aliases "POLARITY" and "REVERSE".
/// Throws ConfigError for anything else.
Skill parse(std::string_view name_or_token);

DigitSeq apply_skill(Skill s, const DigitSeq& x);

/// Ops are applied first-listed-first: y = (ops[k-1] o ... o ops[0])(x).
using OpChain = std::vector<Skill>;
DigitSeq apply_chain(std::span<const Skill> chain, const DigitSeq& x);

DigitSeq parse_digits(std::string_view s);
std::string to_string(const DigitSeq& x);

enum class Role : std::uint8_t { kPretrain, kTrain, kTest, kHeldOut };

/// Ordered, duplicate-free collection of skills with a role tag.
class SkillSet {
 public:
  SkillSet() = default;
  SkillSet(std::initializer_list<Skill> members, Role role = Role::kPretrain);
  SkillSet(std::vector<Skill> members, Role role);

  const std::vector<Skill>& members() const { return members_; }
  Role role() const { return role_; }
  std::size_t size() const { return members_.size(); }
  bool empty() const { return members_.empty(); }
  bool contains(Skill s) const;
  Skill operator[](std::size_t i) const { return members_[i]; }

  /// Copy without `s`, tagged with `role`.
  SkillSet without(Skill s, Role role) const;
  bool is_subset_of(const SkillSet& other) const;

  auto begin() const { return members_.begin(); }
  auto end() const { return members_.end(); }

 private:
  std::vector<Skill> members_;
  Role role_ = Role::kPretrain;
};

/// ASC, DESC, ADD, SUB, REV, POL, ID.
SkillSet pretrain_skills();
/// SHIFT, INV-POL.
SkillSet test_skills();
/// Pretrain skills that may be held out: every pretrain skill except REV.
std::vector<Skill> held_out_candidates();

/// Role invariants between a pretrain set, a train set and a held-out skill:
/// train is a subset of pretrain, held-out is in pretrain but not train, and
/// test is disjoint from pretrain. Throws ConfigError on violation.
void check_roles(const SkillSet& pretrain, const SkillSet& train,
                 Skill held_out, const SkillSet& test);

}  // namespace skillneo::skills
