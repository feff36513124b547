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
#include "checks.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "skillneo/eval.hpp"
#include "skillneo/taskgen.hpp"
#include "skillneo/util.hpp"

namespace skillneo::checks {

using skills::Skill;

std::string oracle_apply(Skill s, const std::string& x) {
  const std::string n = x;
  std::string y(n.size(), '?');
  switch (s) {
    case Skill::kAsc:
    case Skill::kDesc: {
      int count[10] = {};
      for (char c : n) ++count[c - '0'];
      std::size_t at = 0;
      for (int i = 0; i < 10; ++i) {
        const int d = s == Skill::kAsc ? i : 9 - i;
        for (int j = 0; j < count[d]; ++j) y[at++] = static_cast<char>('0' + d);
      }
      break;
    }
    case Skill::kAdd:
      for (std::size_t i = 0; i < n.size(); ++i) y[i] = "1234567890"[n[i] - '0'];
      break;
    case Skill::kSub:
      for (std::size_t i = 0; i < n.size(); ++i) y[i] = "9012345678"[n[i] - '0'];
      break;
    case Skill::kRev:
      for (std::size_t i = 0; i < n.size(); ++i) y[i] = n[n.size() - 1 - i];
      break;
    case Skill::kPol:
      for (std::size_t i = 0; i < n.size(); ++i) y[i] = "0101010101"[n[i] - '0'];
      break;
    case Skill::kInvPol:
      for (std::size_t i = 0; i < n.size(); ++i) y[i] = "1010101010"[n[i] - '0'];
      break;
    case Skill::kId:
      y = n;
      break;
    case Skill::kShift:
      for (std::size_t i = 0; i < n.size(); ++i) y[(i + 1) % n.size()] = n[i];
      break;
  }
  return y;
}

std::string oracle_chain(const std::vector<Skill>& chain, const std::string& x) {
  std::string y = x;
  for (Skill s : chain) y = oracle_apply(s, y);
  return y;
}

std::vector<std::string> all_digit_strings(int n) {
  std::vector<std::string> out;
  int total = 1;
  for (int i = 0; i < n; ++i) total *= 10;
  for (int v = 0; v < total; ++v) {
    std::string s(static_cast<std::size_t>(n), '0');
    int r = v;
    for (int i = n - 1; i >= 0; --i, r /= 10) s[static_cast<std::size_t>(i)] = static_cast<char>('0' + r % 10);
    out.push_back(s);
  }
  return out;
}

CheckOutcome oracle_exhaustive() {
  std::size_t checked = 0;
  std::size_t wrong = 0;
  std::string first_bad;
  auto check = [&](const std::vector<Skill>& chain, const std::string& x) {
    const auto got = skills::to_string(skills::apply_chain(chain, skills::parse_digits(x)));
    ++checked;
    if (got != oracle_chain(chain, x)) {
      if (wrong++ == 0) first_bad = x;
    }
  };
  for (int n : {2, 3}) {
    for (const auto& x : all_digit_strings(n)) {
      for (Skill s : skills::kAllSkills) check({s}, x);
    }
  }
  std::vector<std::vector<Skill>> chains;
  for (Skill a : skills::kAllSkills) {
    chains.push_back({a});
    for (Skill b : skills::kAllSkills) {
      chains.push_back({a, b});
      for (Skill c : skills::kAllSkills) chains.push_back({a, b, c});
    }
  }
  for (const auto& x : all_digit_strings(2)) {
    for (const auto& chain : chains) check(chain, x);
  }
  CheckOutcome out;
  out.pass = wrong == 0;
  out.detail = std::to_string(checked - wrong) + "/" + std::to_string(checked) + " agree";
  if (wrong) out.detail += ", first mismatch on input " + first_bad;
  return out;
}

CheckOutcome algebraic_identities(std::size_t n, std::uint64_t seed) {
  using skills::apply_skill;
  Rng rng(seed);
  std::map<std::string, std::size_t> failures;
  const std::vector<std::string> names = {"SUB.ADD=ID",        "ADD.SUB=ID",
                                          "REV.REV=ID",        "ASC.ASC=ASC",
                                          "DESC.DESC=DESC",    "DESC=REV.ASC",
                                          "INV-POL.INV-POL=POL", "POL.POL=POL",
                                          "POL+INV-POL=1",     "SHIFT^n=ID"};
  for (const auto& name : names) failures[name] = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int len = 1 + static_cast<int>(uniform_index(rng, 12));
    skills::DigitSeq x(static_cast<std::size_t>(len));
    for (auto& d : x) d = static_cast<std::uint8_t>(uniform_index(rng, 10));
    auto f = [&](const std::string& name, bool ok) { failures[name] += ok ? 0 : 1; };
    f("SUB.ADD=ID", apply_skill(Skill::kSub, apply_skill(Skill::kAdd, x)) == x);
    f("ADD.SUB=ID", apply_skill(Skill::kAdd, apply_skill(Skill::kSub, x)) == x);
    f("REV.REV=ID", apply_skill(Skill::kRev, apply_skill(Skill::kRev, x)) == x);
    const auto asc = apply_skill(Skill::kAsc, x);
    const auto desc = apply_skill(Skill::kDesc, x);
    f("ASC.ASC=ASC", apply_skill(Skill::kAsc, asc) == asc);
    f("DESC.DESC=DESC", apply_skill(Skill::kDesc, desc) == desc);
    f("DESC=REV.ASC", desc == apply_skill(Skill::kRev, asc));
    const auto pol = apply_skill(Skill::kPol, x);
    const auto inv = apply_skill(Skill::kInvPol, x);
    f("INV-POL.INV-POL=POL", apply_skill(Skill::kInvPol, inv) == pol);
    f("POL.POL=POL", apply_skill(Skill::kPol, pol) == pol);
    bool sums = true;
    for (std::size_t j = 0; j < x.size(); ++j) sums = sums && pol[j] + inv[j] == 1;
    f("POL+INV-POL=1", sums);
    auto y = x;
    for (int j = 0; j < len; ++j) y = apply_skill(Skill::kShift, y);
    f("SHIFT^n=ID", y == x);
  }
  CheckOutcome out;
  out.pass = true;
  for (const auto& [name, bad] : failures) {
    if (bad) {
      out.pass = false;
      out.detail += name + " failed " + std::to_string(bad) + "x; ";
    }
  }
  if (out.pass) {
    out.detail = std::to_string(names.size()) + " identities x " + std::to_string(n) + " sequences";
  }
  return out;
}

model::ModelConfig toy_config() {
  model::ModelConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ffn_width = 32;
  c.context_len = 64;
  c.vocab_size = 23;
  return c;
}

std::string grad_mask_name(GradMask m) {
  switch (m) {
    case GradMask::kSoftTokens: return "soft tokens";
    case GradMask::kPrefix: return "prefix";
    case GradMask::kLowRank: return "low-rank";
    case GradMask::kFull: return "full";
  }
  return "?";
}

model::GradCheckResult grad_check_mask(GradMask mask, std::size_t n_coords, std::uint64_t seed) {
  const auto config = toy_config();
  const auto base = model::init_checkpoint(config, model::default_vocab(), seed);
  const auto& vocab = base.vocab;
  const int l = 8;
  model::Tensor ext = adapt::init_soft_tokens(adapt::InitMode::kRandom, base.params[0], {}, l, 0.5,
                                              seed + 1);
  adapt::InsertionRule rule;
  rule.skill = Skill::kShift;
  rule.first_id = vocab.size();
  rule.length = l;
  rule.mode = mask == GradMask::kPrefix ? adapt::InsertionMode::kPrependInstruction
                                        : adapt::InsertionMode::kReplaceOpToken;
  const std::vector<std::string> texts = {"[SHIFT]4721=1472", "[ADD][SHIFT]7283=4839",
                                          "[SHIFT][REV]905=059", "[ASC][SHIFT]31=13"};
  std::vector<model::Encoded> seqs;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (mask == GradMask::kSoftTokens || mask == GradMask::kPrefix) {
      seqs.push_back(adapt::insert_skill_tokens(vocab, texts[i], {rule}, static_cast<int>(i % 2), true));
    } else {
      seqs.push_back(model::encode_sample(vocab, texts[i], static_cast<int>(i % 2)));
    }
  }
  const auto batch = model::make_batch(seqs, model::MaskPolicy::kAnswerOnly, vocab);

  model::GradCheckTarget target;
  const model::Tensor* ext_ptr = nullptr;
  model::LowRank lr;
  const model::LowRank* lr_ptr = nullptr;
  switch (mask) {
    case GradMask::kSoftTokens:
    case GradMask::kPrefix:
      target.extension = true;
      ext_ptr = &ext;
      break;
    case GradMask::kLowRank: {
      target.low_rank = true;
      lr = model::make_low_rank(config, 4, 8.0F, seed + 2);
      // A starts at zero; give it values so B receives gradient too.
      Rng rng(seed + 3);
      for (auto& t : lr.factors) {
        for (auto& v : t.data) {
          if (v == 0.0F) v = static_cast<float>(0.2 * standard_normal(rng));
        }
      }
      lr_ptr = &lr;
      break;
    }
    case GradMask::kFull:
      target.base = true;
      break;
  }
  return model::grad_check(config, base.params, ext_ptr, lr_ptr, target, batch, 1e-3, n_coords,
                           seed + 4);
}

double soft_token_equivalence(const model::Checkpoint& base, Skill op) {
  adapt::Neologism n;
  n.skill = op;
  n.weights = model::Tensor("neologism", {1, base.config.d_model});
  const auto& emb = base.params[model::Layout::kTokEmb];
  std::copy_n(emb.row(base.vocab.op(op)), base.config.d_model, n.weights.row(0));
  const auto adapted = adapt::attach_neologisms(base, {&n});
  const auto none = adapt::attach_none(base);
  const std::string prompt = "[ADD]" + skills::token(op) + "[REV]40718=";
  const auto soft = adapted.encode_prompt(prompt);
  const auto hard = none.encode_prompt(prompt);
  model::Engine<float> engine(base.config);
  const auto batch_of = [&](const model::Encoded& e) {
    return model::make_batch(std::vector<model::Encoded>{e}, model::MaskPolicy::kAnswerOnly,
                             base.vocab);
  };
  const auto a = engine.forward(adapted.view(), batch_of(soft));
  const auto b = engine.forward(none.view(), batch_of(hard));
  if (a.size() != b.size() || soft.ids == hard.ids) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

double exact_match_rate(const adapt::AdaptedModel& adapted,
                        const std::vector<taskgen::Sample>& samples) {
  model::Engine<float> engine(adapted.base->config);
  std::vector<std::vector<int>> prompts;
  int longest = 0;
  for (const auto& s : samples) {
    prompts.push_back(adapted.encode_prompt(taskgen::render_prompt(s.label_ops, s.input)).ids);
    longest = std::max(longest, static_cast<int>(s.target.size()));
  }
  const auto out = model::greedy_decode(engine, adapted.view(), prompts, longest + 1,
                                        adapted.base->vocab.eos());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (eval::exact_match(adapted.base->vocab, out[i], samples[i].target)) ++correct;
  }
  return samples.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(samples.size());
}

OverfitResult overfit(const model::Checkpoint& base, adapt::Method method, long max_steps,
                      double learning_rate, std::uint64_t seed) {
  taskgen::DatasetSpec spec;
  spec.k_max = 1;
  spec.n_samples = 64;
  spec.seq_lengths = {2, 3, 4};
  spec.seed = seed;
  const auto ds = taskgen::gen_skill_centered(
      Skill::kShift, skills::pretrain_skills().without(Skill::kAdd, skills::Role::kTrain), spec);

  auto cfg = adapt::AdapterTrainConfig::defaults(method);
  cfg.length = 20;
  cfg.train.learning_rate = learning_rate;
  cfg.train.batch_size = 64;
  cfg.train.epochs = static_cast<int>(max_steps);
  cfg.train.max_pad = 0;
  cfg.train.seed = seed;
  // Fixed rate after a short warmup, so every step runs at the stated rate.
  cfg.train.warmup_steps = 20;
  cfg.train.linear_decay = false;

  OverfitResult r;
  r.base_digest_before = model::parameters_digest(base.params);
  const auto probe = [&](const adapt::Adapter& current, const model::EpochLog& log) {
    if (log.steps % 10 != 0 && log.steps != max_steps) return false;
    r.accuracy = exact_match_rate(adapt::attach(base, current), ds.samples);
    r.steps = log.steps;
    return r.accuracy == 1.0;
  };
  adapt::train_adapter_on(base, ds.samples, Skill::kShift, cfg, {}, probe);
  r.reached = r.accuracy == 1.0;
  r.base_digest_after = model::parameters_digest(base.params);
  return r;
}

}  // namespace skillneo::checks
