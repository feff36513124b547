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

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "skillneo/errors.hpp"
#include "skillneo/taskgen.hpp"
#include "skillneo/util.hpp"

namespace {

using namespace skillneo;
using skills::Skill;
using taskgen::DatasetSpec;

skills::SkillSet train_pool(Skill held) {
  return skills::pretrain_skills().without(held, skills::Role::kTrain);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("skillneo_taskgen_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TEST(Render, Examples) {
  EXPECT_EQ(taskgen::render_sample({Skill::kAsc}, skills::parse_digits("472")).text, "[ASC]472=247");
  EXPECT_EQ(taskgen::render_sample({Skill::kId}, skills::parse_digits("5")).text, "[ID]5=5");
  EXPECT_EQ(taskgen::render_sample({Skill::kAdd, Skill::kShift}, skills::parse_digits("7283")).text,
            "[ADD][SHIFT]7283=4839");
  EXPECT_EQ(taskgen::render_prompt({Skill::kAdd, Skill::kShift}, skills::parse_digits("7283")),
            "[ADD][SHIFT]7283=");
}

TEST(Render, ParseRoundTrip) {
  const auto s = taskgen::render_sample({Skill::kInvPol, Skill::kRev}, skills::parse_digits("0451"));
  const auto p = taskgen::parse_text(s.text);
  EXPECT_EQ(p.ops, s.label_ops);
  EXPECT_EQ(p.input, s.input);
  EXPECT_EQ(p.target, s.target);
  EXPECT_THROW(taskgen::parse_text("[ASC]47"), InputError);
  EXPECT_THROW(taskgen::parse_text("472=247"), InputError);
}

TEST(Combos, HeldOutCount) {
  const auto pool = skills::pretrain_skills();
  EXPECT_EQ(taskgen::all_combos(pool).size(), 84U);
  EXPECT_TRUE(taskgen::select_held_out_combos(pool, 0.0, 1).empty());
  const auto a = taskgen::select_held_out_combos(pool, 0.25, 9);
  EXPECT_EQ(a.size(), 21U);
  EXPECT_EQ(a, taskgen::select_held_out_combos(pool, 0.25, 9));
}

TEST(Pretrain, PhaseOneAllSingleOps) {
  DatasetSpec spec;
  spec.skill_pool = skills::pretrain_skills();
  spec.n_samples = 2000;
  spec.seed = 3;
  const auto ds = taskgen::gen_pretrain_corpus(spec, 1, {});
  ASSERT_EQ(ds.samples.size(), 2000U);
  for (const auto& s : ds.samples) EXPECT_EQ(s.k(), 1U);
}

TEST(Pretrain, PhaseTwoAvoidsHeldOutLengthsAndCombos) {
  DatasetSpec spec;
  spec.skill_pool = skills::pretrain_skills();
  spec.n_samples = 6000;
  spec.seed = 4;
  const auto held = taskgen::select_held_out_combos(spec.skill_pool, 0.25, 5);
  const auto ds = taskgen::gen_pretrain_corpus(spec, 2, held);
  std::map<std::size_t, int> per_k;
  for (const auto& s : ds.samples) {
    ++per_k[s.k()];
    const int len = static_cast<int>(s.input.size());
    EXPECT_TRUE(len != 5 && len != 7 && len != 9) << s.text;
    EXPECT_EQ(skills::apply_chain(s.exec_ops, s.input), s.target);
    if (s.k() == 3) {
      EXPECT_FALSE(held.count(taskgen::make_combo(s.label_ops[0], s.label_ops[1], s.label_ops[2])));
    }
  }
  // Uniform k: each count within 4 sigma of n/3.
  const double sigma = std::sqrt(6000.0 * (1.0 / 3) * (2.0 / 3));
  for (int k = 1; k <= 3; ++k) EXPECT_NEAR(per_k[k], 2000.0, 4 * sigma);
}

TEST(Pretrain, Deterministic) {
  DatasetSpec spec;
  spec.skill_pool = skills::pretrain_skills();
  spec.n_samples = 500;
  spec.seed = 11;
  const auto a = taskgen::gen_pretrain_corpus(spec, 2, {});
  const auto b = taskgen::gen_pretrain_corpus(spec, 2, {});
  EXPECT_EQ(taskgen::serialize_samples(a.samples), taskgen::serialize_samples(b.samples));
  spec.seed = 12;
  EXPECT_NE(taskgen::serialize_samples(a.samples),
            taskgen::serialize_samples(taskgen::gen_pretrain_corpus(spec, 2, {}).samples));
}

TEST(SkillCentered, EvenSplitAndTargetOnce) {
  DatasetSpec spec;
  spec.k_max = 3;
  spec.k_distribution = taskgen::KDistribution::kEvenSplit;
  spec.n_samples = 99999;
  spec.seed = 1;
  const auto ds = taskgen::gen_skill_centered(Skill::kShift, train_pool(Skill::kAdd), spec);
  std::map<std::size_t, std::size_t> per_k;
  for (const auto& s : ds.samples) {
    ++per_k[s.k()];
    EXPECT_EQ(std::count(s.label_ops.begin(), s.label_ops.end(), Skill::kShift), 1);
    EXPECT_EQ(std::count(s.label_ops.begin(), s.label_ops.end(), Skill::kAdd), 0);
    if (s.k() == 1) EXPECT_EQ(s.text.rfind("[SHIFT]", 0), 0U);
  }
  EXPECT_EQ(per_k[1], 33333U);
  EXPECT_EQ(per_k[2], 33333U);
  EXPECT_EQ(per_k[3], 33333U);
}

TEST(SkillCentered, TargetInPoolRejected) {
  DatasetSpec spec;
  spec.n_samples = 10;
  EXPECT_THROW(taskgen::gen_skill_centered(Skill::kAsc, skills::pretrain_skills(), spec), ConfigError);
}

TEST(Noise, RateZeroUnchanged) {
  DatasetSpec spec;
  spec.n_samples = 300;
  spec.seed = 2;
  const auto ds = taskgen::gen_skill_centered(Skill::kInvPol, train_pool(Skill::kAdd), spec);
  const auto noisy = taskgen::inject_label_noise(ds, {0.0, 5});
  EXPECT_EQ(noisy.samples, ds.samples);
  EXPECT_EQ(noisy.manifest.corrupted, 0U);
}

TEST(Noise, RateOneRelabelsEverySample) {
  DatasetSpec spec;
  spec.n_samples = 300;
  spec.seed = 2;
  const auto ds = taskgen::gen_skill_centered(Skill::kInvPol, train_pool(Skill::kAdd), spec);
  const auto noisy = taskgen::inject_label_noise(ds, {1.0, 5});
  for (const auto& s : noisy.samples) {
    const auto parsed = taskgen::parse_text(s.text);
    EXPECT_EQ(std::count(parsed.ops.begin(), parsed.ops.end(), Skill::kInvPol), 1);
    EXPECT_EQ(std::count(s.exec_ops.begin(), s.exec_ops.end(), Skill::kInvPol), 0);
    EXPECT_EQ(skills::apply_chain(s.exec_ops, s.input), s.target);
    EXPECT_NE(s.exec_ops, s.label_ops);
  }
}

TEST(Noise, BinomialCount) {
  DatasetSpec spec;
  spec.n_samples = 10000;
  spec.seed = 8;
  const auto ds = taskgen::gen_skill_centered(Skill::kShift, train_pool(Skill::kAdd), spec);
  const auto noisy = taskgen::inject_label_noise(ds, {0.4, 21});
  const double sigma = std::sqrt(10000 * 0.4 * 0.6);
  EXPECT_NEAR(static_cast<double>(noisy.manifest.corrupted), 4000.0, 3 * sigma);
}

TEST(Permutation, Sizes) {
  const auto pool = train_pool(Skill::kAdd);
  const skills::SkillSet partner({Skill::kAdd}, skills::Role::kHeldOut);
  EXPECT_EQ(taskgen::gen_permutation_testset(Skill::kShift, partner, pool, 2, 200, {4}, 1).samples.size(),
            400U);
  EXPECT_EQ(taskgen::gen_permutation_testset(Skill::kShift, partner, pool, 3, 200, {4}, 1).samples.size(),
            1200U);
  const auto two = taskgen::gen_permutation_testset(Skill::kShift, partner, pool, 2, 1, {3}, 1);
  ASSERT_EQ(two.samples.size(), 2U);
  std::set<skills::OpChain> orders;
  for (const auto& s : two.samples) orders.insert(s.label_ops);
  EXPECT_EQ(orders.size(), 2U);
  EXPECT_TRUE(orders.count({Skill::kShift, Skill::kAdd}));
  EXPECT_TRUE(orders.count({Skill::kAdd, Skill::kShift}));
}

TEST(Permutation, ThreeOpsCoverAllOrderings) {
  const auto pool = train_pool(Skill::kAdd);
  const skills::SkillSet partner({Skill::kAdd}, skills::Role::kHeldOut);
  const auto ds = taskgen::gen_permutation_testset(Skill::kShift, partner, pool, 3, 5, {2, 6}, 3);
  std::map<std::pair<int, int>, int> slots;  // (shift pos, add pos) per length
  for (const auto& s : ds.samples) {
    ASSERT_EQ(s.k(), 3U);
    const auto shift = std::find(s.label_ops.begin(), s.label_ops.end(), Skill::kShift) - s.label_ops.begin();
    const auto add = std::find(s.label_ops.begin(), s.label_ops.end(), Skill::kAdd) - s.label_ops.begin();
    ASSERT_LT(shift, 3);
    ASSERT_LT(add, 3);
    ++slots[{static_cast<int>(shift), static_cast<int>(add)}];
  }
  EXPECT_EQ(slots.size(), 6U);
}

TEST(Joint, BothOrders) {
  const auto ds = taskgen::gen_joint_testset(Skill::kShift, Skill::kInvPol, {2, 3}, 4, 1);
  EXPECT_EQ(ds.samples.size(), 16U);
  int shift_first = 0;
  for (const auto& s : ds.samples) {
    ASSERT_EQ(s.k(), 2U);
    EXPECT_NE(s.label_ops[0], s.label_ops[1]);
    if (s.label_ops[0] == Skill::kShift) ++shift_first;
  }
  EXPECT_EQ(shift_first, 8);
}

TEST(Files, RoundTrip) {
  const auto dir = temp_dir("roundtrip");
  DatasetSpec spec;
  spec.n_samples = 200;
  spec.seed = 6;
  const auto ds = taskgen::inject_label_noise(
      taskgen::gen_skill_centered(Skill::kShift, train_pool(Skill::kSub), spec), {0.5, 3});
  taskgen::write_dataset(ds, dir / "d.jsonl");
  const auto back = taskgen::read_dataset(dir / "d.jsonl");
  EXPECT_EQ(back.samples, ds.samples);
  EXPECT_EQ(back.manifest.corrupted, ds.manifest.corrupted);
  EXPECT_TRUE(std::filesystem::exists(taskgen::manifest_path(dir / "d.jsonl")));
}

TEST(Files, RecordFields) {
  const auto dir = temp_dir("fields");
  taskgen::SkillCenteredDataset ds;
  ds.samples.push_back(taskgen::render_sample({Skill::kAsc}, skills::parse_digits("472")));
  ds.spec.n_samples = 1;
  taskgen::write_dataset(ds, dir / "one.jsonl");
  const auto line = read_text_file(dir / "one.jsonl");
  const auto j = nlohmann::json::parse(line.substr(0, line.find('\n')));
  EXPECT_EQ(j.at("label_ops"), nlohmann::json::array({"[ASC]"}));
  EXPECT_EQ(j.at("text"), "[ASC]472=247");
}

TEST(Files, MalformedLineReportsLineNumber) {
  const auto dir = temp_dir("bad");
  write_text_file(dir / "bad.jsonl", "{\"text\": \"[ASC]1=1\"}\nnot json\n");
  try {
    taskgen::read_dataset(dir / "bad.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_GE(e.line(), 1U);
  }
}

}  // namespace
