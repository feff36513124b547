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
#include <gtest/gtest.h>

#include "checks.hpp"
#include "skillneo/errors.hpp"
#include "skillneo/skills.hpp"

namespace {

using namespace skillneo;
using skills::Skill;

std::string run(Skill s, const std::string& x) {
  return skills::to_string(skills::apply_skill(s, skills::parse_digits(x)));
}

std::string chain(std::vector<Skill> ops, const std::string& x) {
  return skills::to_string(skills::apply_chain(ops, skills::parse_digits(x)));
}

TEST(Skills, SingleOpExamples) {
  EXPECT_EQ(run(Skill::kAsc, "472"), "247");
  EXPECT_EQ(run(Skill::kId, "472"), "472");
  EXPECT_EQ(run(Skill::kAdd, "999"), "000");
  EXPECT_EQ(run(Skill::kShift, "472"), "247");
  EXPECT_EQ(run(Skill::kInvPol, "472"), "101");
  EXPECT_EQ(run(Skill::kShift, "5"), "5");
  EXPECT_EQ(run(Skill::kDesc, "0301"), "3100");
}

TEST(Skills, ChainExamples) {
  EXPECT_EQ(chain({Skill::kAsc, Skill::kAdd}, "4165"), "2567");
  EXPECT_EQ(chain({Skill::kId, Skill::kId}, "907"), "907");
  EXPECT_EQ(chain({Skill::kShift, Skill::kShift, Skill::kShift}, "472"), "472");
  EXPECT_EQ(chain({Skill::kAdd, Skill::kShift}, "7283"), "4839");
  EXPECT_EQ(checks::oracle_chain({Skill::kAdd, Skill::kShift}, "7283"), "4839");
}

TEST(Skills, LeadingZerosKept) {
  EXPECT_EQ(run(Skill::kSub, "10"), "09");
  EXPECT_EQ(run(Skill::kRev, "100"), "001");
}

TEST(Skills, ParseNamesAndAliases) {
  EXPECT_EQ(skills::parse("[INV-POL]"), Skill::kInvPol);
  EXPECT_EQ(skills::parse("POLARITY"), Skill::kPol);
  EXPECT_EQ(skills::parse("[POLARITY]"), Skill::kPol);
  EXPECT_EQ(skills::token(Skill::kPol), "[POL]");
  EXPECT_THROW(skills::parse("[MUL]"), ConfigError);
}

TEST(Skills, ExhaustiveAgainstOracle) {
  const auto r = checks::oracle_exhaustive();
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Skills, AlgebraicIdentities) {
  const auto r = checks::algebraic_identities(10000, 17);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Skills, LengthPreservedAndInputUntouched) {
  for (const auto& x : checks::all_digit_strings(3)) {
    const auto in = skills::parse_digits(x);
    for (Skill s : skills::kAllSkills) {
      const auto copy = in;
      EXPECT_EQ(skills::apply_skill(s, in).size(), in.size());
      EXPECT_EQ(in, copy);
    }
  }
}

TEST(Skills, SkillSets) {
  EXPECT_EQ(skills::pretrain_skills().size(), 7U);
  EXPECT_EQ(skills::held_out_candidates().size(), 6U);
  EXPECT_FALSE(skills::pretrain_skills().contains(Skill::kShift));
  const auto train = skills::pretrain_skills().without(Skill::kAdd, skills::Role::kTrain);
  EXPECT_NO_THROW(skills::check_roles(skills::pretrain_skills(), train, Skill::kAdd,
                                      skills::test_skills()));
  EXPECT_THROW(skills::check_roles(skills::pretrain_skills(), skills::pretrain_skills(),
                                   Skill::kAdd, skills::test_skills()),
               ConfigError);
}

}  // namespace
