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

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "checks.hpp"
#include "skillneo/adapt.hpp"
#include "skillneo/checkpoint.hpp"
#include "skillneo/errors.hpp"
#include "skillneo/train.hpp"

namespace {

using namespace skillneo;
using adapt::ExtendedVocab;
using adapt::InitMode;
using adapt::Method;
using skills::Skill;

model::Checkpoint toy_base(std::uint64_t seed = 3) {
  return model::init_checkpoint(checks::toy_config(), model::default_vocab(), seed);
}

adapt::Neologism random_neologism(const model::Checkpoint& base, Skill s, int l,
                                  std::uint64_t seed) {
  return adapt::init_neologism(InitMode::kRandom, base, skills::pretrain_skills(), s, l, 0.2,
                               seed);
}

taskgen::SkillCenteredDataset shift_data(std::size_t n, std::uint64_t seed) {
  taskgen::DatasetSpec spec;
  spec.k_max = 2;
  spec.n_samples = n;
  spec.seq_lengths = {2, 3};
  spec.seed = seed;
  return taskgen::gen_skill_centered(
      Skill::kShift, skills::pretrain_skills().without(Skill::kAdd, skills::Role::kTrain), spec);
}

adapt::AdapterTrainConfig quick(Method m, int l = 4) {
  auto c = adapt::AdapterTrainConfig::defaults(m);
  c.length = l;
  c.rank = 4;
  c.alpha = 4.0F;
  c.train.epochs = 1;
  c.train.batch_size = 16;
  c.train.warmup_steps = 2;
  c.train.seed = 11;
  return c;
}

TEST(Insertion, ReplacesOpTokenInOrder) {
  const auto v = model::default_vocab();
  adapt::InsertionRule rule;
  rule.skill = Skill::kShift;
  rule.first_id = v.size();
  rule.length = 2;
  const auto e = adapt::insert_skill_tokens(v, "[ADD][SHIFT]7283=", {rule});
  const std::vector<int> want = {v.op(Skill::kAdd), 23, 24, 7, 2, 8, 3, v.eq()};
  EXPECT_EQ(e.ids, want);
  EXPECT_EQ(e.eq_pos, 7);
}

TEST(Insertion, SingleSoftToken) {
  const auto v = model::default_vocab();
  adapt::InsertionRule rule;
  rule.skill = Skill::kShift;
  rule.first_id = v.size();
  rule.length = 1;
  const auto e = adapt::insert_skill_tokens(v, "[SHIFT]5=", {rule});
  EXPECT_EQ(e.ids, (std::vector<int>{23, 5, v.eq()}));
}

TEST(Insertion, MissingMarkerThrows) {
  const auto v = model::default_vocab();
  adapt::InsertionRule rule;
  rule.skill = Skill::kShift;
  rule.first_id = v.size();
  rule.length = 2;
  EXPECT_THROW(adapt::insert_skill_tokens(v, "[ASC]12=", {rule}), InsertionError);
}

TEST(Insertion, RepeatedMarkerReplacedEachTime) {
  const auto v = model::default_vocab();
  adapt::InsertionRule rule;
  rule.skill = Skill::kShift;
  rule.first_id = v.size();
  rule.length = 3;
  const auto e = adapt::insert_skill_tokens(v, "[SHIFT][SHIFT]12=", {rule});
  EXPECT_EQ(e.ids, (std::vector<int>{23, 24, 25, 23, 24, 25, 1, 2, v.eq()}));
}

TEST(Insertion, PrependAfterPad) {
  const auto v = model::default_vocab();
  adapt::InsertionRule rule;
  rule.mode = adapt::InsertionMode::kPrependInstruction;
  rule.first_id = v.size();
  rule.length = 2;
  const auto e = adapt::insert_skill_tokens(v, "[ASC]12=21", {rule}, 3, true);
  const std::vector<int> want = {v.pad(), v.pad(), v.pad(), 23, 24, v.op(Skill::kAsc),
                                 1,       2,       v.eq(),  2,  1,  v.eos()};
  EXPECT_EQ(e.ids, want);
}

TEST(Insertion, ComposeTwoNeologisms) {
  const auto base = toy_base();
  const auto a = random_neologism(base, Skill::kShift, 20, 1);
  const auto b = random_neologism(base, Skill::kInvPol, 20, 2);
  const auto ext = adapt::extend_vocab(base, {&a, &b});
  const auto ra = adapt::op_token_rule(Skill::kShift, ext.range("[SHIFT]"));
  const auto rb = adapt::op_token_rule(Skill::kInvPol, ext.range("[INV-POL]"));
  const auto ab = adapt::compose_neologisms(base.vocab, "[SHIFT][INV-POL]472=", {ra, rb});
  const auto ba = adapt::compose_neologisms(base.vocab, "[SHIFT][INV-POL]472=", {rb, ra});
  EXPECT_EQ(ab.ids, ba.ids);
  ASSERT_EQ(ab.ids.size(), 44U);
  int soft = 0;
  for (int id : ab.ids) soft += id >= base.vocab.size() ? 1 : 0;
  EXPECT_EQ(soft, 40);
  EXPECT_EQ(ab.ids[40], 4);
  EXPECT_EQ(ab.ids[43], base.vocab.eq());
  EXPECT_THROW(adapt::compose_neologisms(base.vocab, "[SHIFT]472=", {ra, rb}), InsertionError);
  EXPECT_EQ(adapt::compose_neologisms(base.vocab, "[SHIFT]47=", {ra}).ids,
            adapt::insert_skill_tokens(base.vocab, "[SHIFT]47=", {ra}).ids);
}

TEST(ExtendedVocab, SizesAndRanges) {
  const auto base = toy_base();
  const auto before = model::parameters_digest(base.params);
  const auto a = random_neologism(base, Skill::kShift, 20, 1);
  const auto b = random_neologism(base, Skill::kInvPol, 20, 2);
  EXPECT_EQ(adapt::extend_vocab(base, {&a}).size(), 43);
  const auto two = adapt::extend_vocab(base, {&a, &b});
  EXPECT_EQ(two.size(), 63);
  const auto& ra = two.range("[SHIFT]");
  const auto& rb = two.range("[INV-POL]");
  EXPECT_TRUE(ra.first + ra.length <= rb.first || rb.first + rb.length <= ra.first);
  EXPECT_EQ(model::parameters_digest(base.params), before);
}

TEST(ExtendedVocab, CollisionsRejected) {
  ExtendedVocab ext(23, 4);
  model::Tensor rows("r", {3, 4});
  EXPECT_EQ(ext.add("a", rows), 23);
  EXPECT_THROW(ext.add("b", rows, 24), ConfigError);
  EXPECT_THROW(ext.add("a", rows), ConfigError);
  EXPECT_EQ(ext.add("b", rows), 26);
}

TEST(Init, MeanOfRows) {
  model::Tensor emb("emb", {2, 2});
  emb.data = {1, 3, 3, 1};
  const auto t = adapt::init_soft_tokens(InitMode::kMeanOfPretrainOps, emb, {0, 1}, 2, 0.2, 0);
  ASSERT_EQ(t.rows(), 2);
  for (int r = 0; r < 2; ++r) {
    EXPECT_FLOAT_EQ(t.row(r)[0], 2.0F);
    EXPECT_FLOAT_EQ(t.row(r)[1], 2.0F);
  }
  EXPECT_THROW(adapt::init_soft_tokens(InitMode::kMeanOfPretrainOps, emb, {}, 2, 0.2, 0),
               ConfigError);
}

TEST(Init, MeanIsDeterministicAndUsesPretrainOps) {
  const auto base = toy_base();
  const auto a = adapt::init_neologism(InitMode::kMeanOfPretrainOps, base,
                                       skills::pretrain_skills(), Skill::kShift, 3, 0.2, 1);
  const auto b = adapt::init_neologism(InitMode::kMeanOfPretrainOps, base,
                                       skills::pretrain_skills(), Skill::kShift, 3, 0.2, 2);
  EXPECT_EQ(a.weights.data, b.weights.data);
  const auto& emb = base.params[model::Layout::kTokEmb];
  const auto pool = skills::pretrain_skills();
  for (int c = 0; c < base.config.d_model; ++c) {
    double mean = 0.0;
    for (Skill s : pool) mean += emb.row(base.vocab.op(s))[c];
    mean /= static_cast<double>(pool.size());
    EXPECT_NEAR(a.weights.row(2)[c], mean, 1e-6);
  }
}

TEST(Init, RandomGaussianSigma) {
  model::Tensor emb("emb", {1, 128});
  const auto t = adapt::init_soft_tokens(InitMode::kRandom, emb, {}, 200, 0.2, 99);
  double sum = 0.0;
  double sq = 0.0;
  for (float v : t.data) sum += v;
  const double mean = sum / static_cast<double>(t.numel());
  for (float v : t.data) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(t.numel()));
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_GE(sd, 0.18);
  EXPECT_LE(sd, 0.22);
}

TEST(Adapter, ParameterCountsAtDeskScale) {
  const auto base = model::init_checkpoint(model::ModelConfig{}, model::default_vocab(), 1);
  adapt::Adapter n;
  n.method = Method::kNeologism;
  n.neologism = random_neologism(base, Skill::kShift, 20, 1);
  EXPECT_EQ(n.trainable_parameters(), 2560U);
  adapt::Adapter p;
  p.method = Method::kPrefix;
  adapt::PromptPrefix prefix;
  prefix.weights = n.neologism->weights;
  p.prefix = prefix;
  EXPECT_EQ(p.trainable_parameters(), 2560U);
  adapt::Adapter r;
  r.method = Method::kLowRank;
  adapt::LowRankAdapter lr;
  lr.factors = model::make_low_rank(base.config, 16, 16.0F, 1);
  r.low_rank = lr;
  // Per layer: q, k, v, o at 128x128, up 512x128, down 128x512.
  const std::size_t per_layer = 4 * 16 * (128 + 128) + 2 * 16 * (512 + 128);
  EXPECT_EQ(r.trainable_parameters(), 4 * per_layer);
  EXPECT_EQ(lr.factors.a(0, model::LinearSlot::kQ).numel() +
                lr.factors.b(0, model::LinearSlot::kQ).numel(),
            4096U);
}

TEST(Adapter, SoftTokenEquivalence) {
  const auto base = toy_base();
  for (Skill s : {Skill::kAsc, Skill::kRev, Skill::kPol}) {
    EXPECT_LE(checks::soft_token_equivalence(base, s), 1e-5) << skills::name(s);
  }
}

class FrozenBase : public ::testing::TestWithParam<Method> {};

TEST_P(FrozenBase, DigestUnchangedAndAdapterChanges) {
  const auto base = toy_base();
  const auto before = model::parameters_digest(base.params);
  const auto ds = shift_data(64, 5);
  auto cfg = quick(GetParam());
  cfg.train.epochs = 0;
  const auto init = adapt::train_adapter(base, ds, cfg);
  cfg.train.epochs = 1;
  const auto trained = adapt::train_adapter(base, ds, cfg);
  EXPECT_EQ(model::parameters_digest(base.params), before);
  EXPECT_EQ(base.digest, before);
  EXPECT_NE(init.digest(), trained.digest());
  EXPECT_EQ(trained.base_digest, before);
  ASSERT_EQ(trained.log.size(), 1U);
  EXPECT_TRUE(std::isfinite(trained.log[0].mean_loss));
}

INSTANTIATE_TEST_SUITE_P(Methods, FrozenBase,
                         ::testing::Values(Method::kNeologism, Method::kPrefix, Method::kLowRank),
                         [](const auto& info) {
                           auto n = adapt::method_name(info.param);
                           n.erase(std::remove(n.begin(), n.end(), '-'), n.end());
                           return n;
                         });

TEST(Adapter, ZeroEpochsKeepsInitialization) {
  const auto base = toy_base();
  auto cfg = quick(Method::kNeologism);
  cfg.train.epochs = 0;
  const auto a = adapt::train_adapter(base, shift_data(16, 1), cfg);
  const auto want = adapt::init_neologism(cfg.init_mode, base, skills::pretrain_skills(),
                                          Skill::kShift, cfg.length, cfg.init_sigma,
                                          cfg.train.seed);
  ASSERT_TRUE(a.neologism.has_value());
  EXPECT_EQ(a.neologism->weights.data, want.weights.data);
}

TEST(Adapter, LowRankZeroAMatchesBase) {
  const auto base = toy_base();
  auto cfg = quick(Method::kLowRank);
  cfg.train.epochs = 0;
  const auto a = adapt::train_adapter(base, shift_data(16, 1), cfg);
  const auto with = adapt::attach(base, a);
  const auto without = adapt::attach_none(base);
  model::Engine<float> engine(base.config);
  const auto e = without.encode_prompt("[ASC][SHIFT]4721=");
  const auto batch = model::make_batch(std::vector<model::Encoded>{e},
                                       model::MaskPolicy::kAnswerOnly, base.vocab);
  const auto x = engine.forward(with.view(), batch);
  const auto y = engine.forward(without.view(), batch);
  EXPECT_EQ(x, y);
}

TEST(Adapter, PrefixSitsInFront) {
  const auto base = toy_base();
  auto cfg = quick(Method::kPrefix, 3);
  cfg.train.epochs = 0;
  const auto a = adapt::train_adapter(base, shift_data(16, 1), cfg);
  const auto m = adapt::attach(base, a);
  const auto e = m.encode_prompt("[ASC][SHIFT]12=");
  ASSERT_GE(e.ids.size(), 3U);
  for (int i = 0; i < 3; ++i) EXPECT_GE(e.ids[i], base.vocab.size());
  for (std::size_t i = 3; i < e.ids.size(); ++i) EXPECT_LT(e.ids[i], base.vocab.size());
}

TEST(Adapter, SaveLoadRoundTripAndWrongBase) {
  const auto base = toy_base();
  auto cfg = quick(Method::kNeologism);
  const auto a = adapt::train_adapter(base, shift_data(32, 2), cfg);
  const auto dir = std::filesystem::temp_directory_path() / "skillneo_adapt_test";
  std::filesystem::remove_all(dir);
  adapt::save_adapter(dir, a);
  const auto b = adapt::load_adapter(dir, base);
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_EQ(b.method, Method::kNeologism);
  EXPECT_EQ(b.skill, Skill::kShift);
  const auto other = toy_base(4);
  EXPECT_THROW(adapt::load_adapter(dir, other), DigestError);
  std::filesystem::remove_all(dir);
}

TEST(Adapter, TrainingIsDeterministic) {
  const auto base = toy_base();
  const auto ds = shift_data(32, 2);
  const auto a = adapt::train_adapter(base, ds, quick(Method::kPrefix));
  const auto b = adapt::train_adapter(base, ds, quick(Method::kPrefix));
  EXPECT_EQ(a.digest(), b.digest());
}

TEST(Adapter, ConfigRoundTrip) {
  auto c = quick(Method::kLowRank);
  c.init_mode = InitMode::kRandom;
  const auto back = adapt::adapter_config_from_json(adapt::to_json(c));
  EXPECT_EQ(adapt::to_json(back), adapt::to_json(c));
  c.length = 0;
  c.method = Method::kNeologism;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
