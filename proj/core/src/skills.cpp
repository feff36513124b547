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
#include "skillneo/skills.hpp"

#include <algorithm>

#include "skillneo/errors.hpp"

namespace skillneo::skills {

std::string_view name(Skill s) {
  switch (s) {
    case Skill::kAsc: return "ASC";
    case Skill::kDesc: return "DESC";
    case Skill::kAdd: return "ADD";
    case Skill::kSub: return "SUB";
    case Skill::kRev: return "REV";
    case Skill::kPol: return "POL";
    case Skill::kId: return "ID";
    case Skill::kShift: return "SHIFT";
    case Skill::kInvPol: return "INV-POL";
  }
  throw ConfigError("invalid skill enumerator");
}

std::string token(Skill s) { return "[" + std::string(name(s)) + "]"; }

Skill parse(std::string_view s) {
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') {
    s = s.substr(1, s.size() - 2);
  }
  for (Skill k : kAllSkills) {
    if (name(k) == s) return k;
  }
  if (s == "POLARITY") return Skill::kPol;
  if (s == "REVERSE") return Skill::kRev;
  throw ConfigError("unknown skill: '" + std::string(s) + "'");
}

DigitSeq apply_skill(Skill s, const DigitSeq& x) {
  DigitSeq y = x;
  switch (s) {
    case Skill::kAsc:
      std::stable_sort(y.begin(), y.end());
      break;
    case Skill::kDesc:
      std::stable_sort(y.begin(), y.end(), std::greater<>());
      break;
    case Skill::kAdd:
      for (auto& d : y) d = static_cast<std::uint8_t>((d + 1) % 10);
      break;
    case Skill::kSub:
      for (auto& d : y) d = static_cast<std::uint8_t>((d + 9) % 10);
      break;
    case Skill::kRev:
      std::reverse(y.begin(), y.end());
      break;
    case Skill::kPol:
      for (auto& d : y) d = static_cast<std::uint8_t>(d % 2);
      break;
    case Skill::kId:
      break;
    case Skill::kShift:
      if (!y.empty()) std::rotate(y.rbegin(), y.rbegin() + 1, y.rend());
      break;
    case Skill::kInvPol:
      for (auto& d : y) d = static_cast<std::uint8_t>(1 - d % 2);
      break;
  }
  return y;
}

DigitSeq apply_chain(std::span<const Skill> chain, const DigitSeq& x) {
  DigitSeq y = x;
  for (Skill s : chain) y = apply_skill(s, y);
  return y;
}

DigitSeq parse_digits(std::string_view s) {
  DigitSeq out;
  out.reserve(s.size());
  for (char c : s) {
    if (c < '0' || c > '9') {
      throw InputError("non-digit character in digit sequence: '" +
                       std::string(s) + "'");
    }
    out.push_back(static_cast<std::uint8_t>(c - '0'));
  }
  return out;
}

std::string to_string(const DigitSeq& x) {
  std::string s;
  s.reserve(x.size());
  for (auto d : x) s.push_back(static_cast<char>('0' + d));
  return s;
}

SkillSet::SkillSet(std::initializer_list<Skill> members, Role role)
    : SkillSet(std::vector<Skill>(members), role) {}

SkillSet::SkillSet(std::vector<Skill> members, Role role)
    : members_(std::move(members)), role_(role) {
  for (std::size_t i = 0; i < members_.size(); ++i) {
    for (std::size_t j = i + 1; j < members_.size(); ++j) {
      if (members_[i] == members_[j]) {
        throw ConfigError("duplicate skill in set: " +
                          std::string(name(members_[i])));
      }
    }
  }
}

bool SkillSet::contains(Skill s) const {
  return std::find(members_.begin(), members_.end(), s) != members_.end();
}

SkillSet SkillSet::without(Skill s, Role role) const {
  std::vector<Skill> kept;
  for (Skill m : members_) {
    if (m != s) kept.push_back(m);
  }
  return SkillSet(std::move(kept), role);
}

bool SkillSet::is_subset_of(const SkillSet& other) const {
  return std::all_of(members_.begin(), members_.end(),
                     [&](Skill s) { return other.contains(s); });
}

SkillSet pretrain_skills() {
  return SkillSet({Skill::kAsc, Skill::kDesc, Skill::kAdd, Skill::kSub,
                   Skill::kRev, Skill::kPol, Skill::kId},
                  Role::kPretrain);
}

SkillSet test_skills() {
  return SkillSet({Skill::kShift, Skill::kInvPol}, Role::kTest);
}

std::vector<Skill> held_out_candidates() {
  return {Skill::kAdd, Skill::kAsc, Skill::kDesc,
          Skill::kId,  Skill::kPol, Skill::kSub};
}

void check_roles(const SkillSet& pretrain, const SkillSet& train,
                 Skill held_out, const SkillSet& test) {
  if (!train.is_subset_of(pretrain)) {
    throw ConfigError("train skills must be a subset of pretrain skills");
  }
  if (!pretrain.contains(held_out) || train.contains(held_out)) {
    throw ConfigError("held-out skill must be in pretrain and not in train");
  }
  for (Skill s : test) {
    if (pretrain.contains(s)) {
      throw ConfigError("test skill " + std::string(name(s)) +
                        " overlaps the pretrain set");
    }
  }
}

}  // namespace skillneo::skills
