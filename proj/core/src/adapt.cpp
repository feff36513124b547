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
#include "skillneo/adapt.hpp"

#include <algorithm>

#include "skillneo/errors.hpp"

namespace skillneo::adapt {

using model::ParamSet;
using taskgen::Sample;

std::string method_name(Method m) {
  switch (m) {
    case Method::kNeologism: return "neologism";
    case Method::kPrefix: return "prefix";
    case Method::kLowRank: return "low-rank";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "neologism") return Method::kNeologism;
  if (name == "prefix") return Method::kPrefix;
  if (name == "low-rank" || name == "lowrank") return Method::kLowRank;
  throw ConfigError("unknown adaptation method " + name);
}

std::string init_mode_name(InitMode m) {
  return m == InitMode::kMeanOfPretrainOps ? "mean" : "random";
}

InitMode parse_init_mode(const std::string& name) {
  if (name == "mean") return InitMode::kMeanOfPretrainOps;
  if (name == "random") return InitMode::kRandom;
  throw ConfigError("unknown init mode " + name);
}

std::vector<std::string> Neologism::token_names() const {
  std::vector<std::string> out;
  const std::string base(skills::name(skill));
  for (int i = 1; i <= length(); ++i) out.push_back("<" + base + "_" + std::to_string(i) + ">");
  return out;
}

Tensor init_soft_tokens(InitMode mode, const Tensor& embeddings,
                        const std::vector<int>& op_rows, int l, double sigma,
                        std::uint64_t seed) {
  if (l < 1) throw ConfigError("soft token length must be >= 1");
  const int d = embeddings.cols();
  Tensor out("soft_tokens", {l, d});
  if (mode == InitMode::kMeanOfPretrainOps) {
    if (op_rows.empty()) throw ConfigError("mean init needs at least one op embedding");
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (int r : op_rows) {
      if (r < 0 || r >= embeddings.rows()) throw ConfigError("op row out of range");
      const float* e = embeddings.row(r);
      for (int j = 0; j < d; ++j) mean[j] += e[j];
    }
    for (int i = 0; i < l; ++i) {
      for (int j = 0; j < d; ++j) {
        out.row(i)[j] = static_cast<float>(mean[j] / static_cast<double>(op_rows.size()));
      }
    }
  } else {
    if (!(sigma > 0.0)) throw ConfigError("random init sigma must be > 0");
    Rng rng(stream_seed(seed, 0x50F7));
    for (auto& v : out.data) v = static_cast<float>(sigma * standard_normal(rng));
  }
  return out;
}

Neologism init_neologism(InitMode mode, const Checkpoint& base,
                         const skills::SkillSet& pretrain, Skill skill, int l,
                         double sigma, std::uint64_t seed) {
  std::vector<int> rows;
  for (Skill s : pretrain) {
    if (base.vocab.has_op(s)) rows.push_back(base.vocab.op(s));
  }
  Neologism n;
  n.skill = skill;
  n.init_mode = mode;
  n.weights = init_soft_tokens(mode, base.params[model::Layout::kTokEmb], rows, l,
                               sigma, seed);
  n.weights.name = "neologism";
  return n;
}

ExtendedVocab::ExtendedVocab(int base_size, int d_model)
    : base_size_(base_size), d_model_(d_model), table_("extension", {0, d_model}) {}

int ExtendedVocab::add(const std::string& owner, const Tensor& rows,
                       std::optional<int> first_id) {
  if (rows.cols() != d_model_ || rows.rows() < 1) {
    throw ConfigError("soft tokens for " + owner + " have the wrong shape");
  }
  const int first = first_id.value_or(size());
  const int last = first + rows.rows();
  if (first < base_size_) {
    throw ConfigError("extension id " + std::to_string(first) + " collides with base vocabulary");
  }
  for (const auto& r : ranges_) {
    if (r.owner == owner) throw ConfigError("duplicate extension owner " + owner);
    if (first < r.first + r.length && r.first < last) {
      throw ConfigError("extension ids of " + owner + " collide with " + r.owner);
    }
  }
  const int need = last - base_size_;
  if (need > table_.rows()) {
    Tensor grown("extension", {need, d_model_});
    std::copy(table_.data.begin(), table_.data.end(), grown.data.begin());
    table_ = std::move(grown);
  }
  std::copy(rows.data.begin(), rows.data.end(), table_.row(first - base_size_));
  ranges_.push_back({owner, first, rows.rows()});
  return first;
}

const ExtendedVocab::Range& ExtendedVocab::range(const std::string& owner) const {
  for (const auto& r : ranges_) {
    if (r.owner == owner) return r;
  }
  throw ConfigError("no extension range for " + owner);
}

ExtendedVocab extend_vocab(const Checkpoint& base,
                           const std::vector<const Neologism*>& neologisms) {
  ExtendedVocab ext(base.vocab.size(), base.config.d_model);
  for (const Neologism* n : neologisms) ext.add(skills::token(n->skill), n->weights);
  return ext;
}

std::string InsertionRule::effective_marker() const {
  if (mode == InsertionMode::kReplaceNameSpan && !marker.empty()) return marker;
  return skills::token(skill);
}

InsertionRule op_token_rule(Skill skill, const ExtendedVocab::Range& range) {
  InsertionRule r;
  r.mode = InsertionMode::kReplaceOpToken;
  r.skill = skill;
  r.first_id = range.first;
  r.length = range.length;
  return r;
}

Encoded insert_skill_tokens(const model::Vocab& vocab, const std::string& text,
                            const std::vector<InsertionRule>& rules, int pad_count,
                            bool append_eos) {
  Encoded e;
  e.ids.assign(static_cast<std::size_t>(std::max(pad_count, 0)), vocab.pad());
  auto push_soft = [&](const InsertionRule& r) {
    for (int i = 0; i < r.length; ++i) e.ids.push_back(r.first_id + i);
  };
  std::vector<std::string> markers;
  for (const auto& r : rules) {
    markers.push_back(r.effective_marker());
    if (r.mode == InsertionMode::kPrependInstruction) push_soft(r);
  }
  std::vector<bool> used(rules.size(), false);
  std::string pending;
  auto flush = [&] {
    const auto ids = vocab.tokenize(pending);
    e.ids.insert(e.ids.end(), ids.begin(), ids.end());
    pending.clear();
  };
  std::size_t p = 0;
  while (p < text.size()) {
    bool matched = false;
    for (std::size_t i = 0; i < rules.size() && !matched; ++i) {
      if (rules[i].mode == InsertionMode::kPrependInstruction) continue;
      if (text.compare(p, markers[i].size(), markers[i]) == 0) {
        flush();
        push_soft(rules[i]);
        used[i] = true;
        p += markers[i].size();
        matched = true;
      }
    }
    if (!matched) pending += text[p++];
  }
  flush();
  for (std::size_t i = 0; i < rules.size(); ++i) {
    if (rules[i].mode != InsertionMode::kPrependInstruction && !used[i]) {
      throw InsertionError("marker " + markers[i] + " not found in " + text);
    }
  }
  if (append_eos) e.ids.push_back(vocab.eos());
  const auto it = std::find(e.ids.begin(), e.ids.end(), vocab.eq());
  if (it == e.ids.end()) throw InputError("text has no '=': " + text);
  e.eq_pos = static_cast<int>(it - e.ids.begin());
  return e;
}

Encoded compose_neologisms(const model::Vocab& vocab, const std::string& prompt,
                           const std::vector<InsertionRule>& rules) {
  return insert_skill_tokens(vocab, prompt, rules);
}

void AdapterTrainConfig::validate() const {
  if (length < 1) throw ConfigError("soft token length must be >= 1");
  if (rank < 1) throw ConfigError("rank must be >= 1");
  if (!(alpha > 0.0F)) throw ConfigError("alpha must be > 0");
  train.validate();
}

AdapterTrainConfig AdapterTrainConfig::defaults(Method method) {
  AdapterTrainConfig c;
  c.method = method;
  c.train.epochs = 3;
  c.train.batch_size = 32;
  c.train.warmup_steps = 100;
  c.train.max_pad = 0;
  c.train.learning_rate = method == Method::kLowRank ? 1e-4 : 5e-3;
  return c;
}

nlohmann::json to_json(const AdapterTrainConfig& c) {
  return {{"method", method_name(c.method)},
          {"length", c.length},
          {"rank", c.rank},
          {"alpha", c.alpha},
          {"init_mode", init_mode_name(c.init_mode)},
          {"init_sigma", c.init_sigma},
          {"train", model::to_json(c.train)}};
}

AdapterTrainConfig adapter_config_from_json(const nlohmann::json& j) {
  const Method m = parse_method(j.value("method", std::string("neologism")));
  AdapterTrainConfig c = AdapterTrainConfig::defaults(m);
  c.length = j.value("length", c.length);
  c.rank = j.value("rank", c.rank);
  c.alpha = j.value("alpha", static_cast<float>(c.rank));
  if (j.contains("init_mode")) c.init_mode = parse_init_mode(j.at("init_mode").get<std::string>());
  c.init_sigma = j.value("init_sigma", c.init_sigma);
  if (j.contains("train")) c.train = model::train_config_from_json(j.at("train"), c.train);
  c.validate();
  return c;
}

namespace {

ParamSet adapter_tensors(const Adapter& a) {
  ParamSet out;
  auto put = [&](const Tensor& t) {
    const int i = out.add(t.name, t.shape);
    out[i].data = t.data;
  };
  if (a.neologism) put(a.neologism->weights);
  if (a.prefix) put(a.prefix->weights);
  if (a.low_rank) {
    for (const auto& t : a.low_rank->factors.factors) put(t);
  }
  return out;
}

void require_base_digest(const Checkpoint& base, const std::string& expected,
                         const char* when) {
  if (model::parameters_digest(base.params) != expected) {
    throw DigestError(std::string("base parameters changed ") + when);
  }
}

Adapter train_impl(const Checkpoint& base, const std::vector<Sample>& samples,
                   Skill skill, const AdapterTrainConfig& cfg,
                   const model::EpochCallback& cb, const AdapterProbe& probe = {}) {
  cfg.validate();
  const std::string digest = model::parameters_digest(base.params);
  if (!base.digest.empty() && base.digest != digest) {
    throw DigestError("base checkpoint does not match its recorded digest");
  }
  Adapter a;
  a.method = cfg.method;
  a.skill = skill;
  a.config = cfg;
  a.base_digest = digest;

  const model::Vocab& vocab = base.vocab;
  const std::uint64_t init_seed = stream_seed(cfg.train.seed, 0x1417);
  model::Engine<float> engine(base.config);
  model::TrainTarget target;
  target.view.base = &base.params;
  Tensor soft;
  Tensor soft_grad;
  ParamSet lr_grad;
  std::vector<InsertionRule> rules;
  const int max_pad = cfg.train.max_pad;

  if (cfg.method == Method::kLowRank) {
    a.low_rank = LowRankAdapter{skill, model::make_low_rank(base.config, cfg.rank,
                                                            cfg.alpha, init_seed)};
    auto& f = a.low_rank->factors;
    lr_grad = f.factors.zeros_like();
    target.view.low_rank = &f;
    target.grads.low_rank = &lr_grad;
    for (int i = 0; i < static_cast<int>(f.factors.size()); ++i) {
      target.params.emplace_back(f.factors[i].data);
      target.grad_buffers.emplace_back(lr_grad[i].data);
    }
  } else {
    Neologism n = init_neologism(cfg.init_mode, base, skills::pretrain_skills(), skill,
                                 cfg.length, cfg.init_sigma, init_seed);
    soft = n.weights;
    soft_grad = Tensor(soft.name, soft.shape);
    target.view.extension = &soft;
    target.grads.extension = &soft_grad;
    target.params.emplace_back(soft.data);
    target.grad_buffers.emplace_back(soft_grad.data);
    InsertionRule r;
    r.mode = cfg.method == Method::kNeologism ? InsertionMode::kReplaceOpToken
                                              : InsertionMode::kPrependInstruction;
    r.skill = skill;
    r.first_id = vocab.size();
    r.length = cfg.length;
    rules.push_back(r);
  }

  const auto encode = [&](std::size_t index, Rng& rng) {
    const int pad = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_pad) + 1));
    if (rules.empty()) return model::encode_sample(vocab, samples[index].text, pad);
    return insert_skill_tokens(vocab, samples[index].text, rules, pad, true);
  };
  const auto finish = [&](Adapter& out) {
    if (cfg.method == Method::kNeologism) {
      out.neologism = Neologism{skill, soft, cfg.init_mode};
      out.neologism->weights.name = "neologism";
    } else if (cfg.method == Method::kPrefix) {
      out.prefix = PromptPrefix{skill, soft, cfg.init_mode};
      out.prefix->weights.name = "prefix";
    }
  };
  model::StopFn stop;
  if (probe) {
    stop = [&](const model::EpochLog& log) {
      Adapter current = a;
      finish(current);
      return probe(current, log);
    };
  }
  a.log = model::train_loop(engine, target, samples.size(), encode, cfg.train, vocab, cb, stop);
  require_base_digest(base, digest, "during adapter training");
  finish(a);
  return a;
}

Skill dataset_skill(const taskgen::SkillCenteredDataset& ds) {
  if (!ds.spec.target_skill) throw ConfigError("adapter training needs a skill-centered dataset");
  return *ds.spec.target_skill;
}

}  // namespace

std::size_t Adapter::trainable_parameters() const { return adapter_tensors(*this).numel(); }

std::string Adapter::digest() const { return model::parameters_digest(adapter_tensors(*this)); }

Adapter train_neologism(const Checkpoint& base, const taskgen::SkillCenteredDataset& ds,
                        const AdapterTrainConfig& cfg, const model::EpochCallback& cb) {
  AdapterTrainConfig c = cfg;
  c.method = Method::kNeologism;
  return train_impl(base, ds.samples, dataset_skill(ds), c, cb);
}

Adapter train_prompt_prefix(const Checkpoint& base, const taskgen::SkillCenteredDataset& ds,
                            const AdapterTrainConfig& cfg, const model::EpochCallback& cb) {
  AdapterTrainConfig c = cfg;
  c.method = Method::kPrefix;
  return train_impl(base, ds.samples, dataset_skill(ds), c, cb);
}

Adapter train_lowrank(const Checkpoint& base, const taskgen::SkillCenteredDataset& ds,
                      const AdapterTrainConfig& cfg, const model::EpochCallback& cb) {
  AdapterTrainConfig c = cfg;
  c.method = Method::kLowRank;
  return train_impl(base, ds.samples, dataset_skill(ds), c, cb);
}

Adapter train_adapter(const Checkpoint& base, const taskgen::SkillCenteredDataset& ds,
                      const AdapterTrainConfig& cfg, const model::EpochCallback& cb) {
  return train_impl(base, ds.samples, dataset_skill(ds), cfg, cb);
}

Adapter train_adapter_on(const Checkpoint& base, const std::vector<Sample>& samples,
                         Skill skill, const AdapterTrainConfig& cfg,
                         const model::EpochCallback& cb, const AdapterProbe& probe) {
  return train_impl(base, samples, skill, cfg, cb, probe);
}

model::View AdaptedModel::view() const {
  model::View v;
  v.base = &base->params;
  if (extension.table().rows() > 0) v.extension = &extension.table();
  v.low_rank = low_rank;
  return v;
}

Encoded AdaptedModel::encode_prompt(const std::string& prompt) const {
  return insert_skill_tokens(base->vocab, prompt, rules);
}

AdaptedModel attach_none(const Checkpoint& base) {
  return AdaptedModel{&base, ExtendedVocab(base.vocab.size(), base.config.d_model), {},
                      std::nullopt, 0, nullptr};
}

AdaptedModel attach_neologisms(const Checkpoint& base,
                               const std::vector<const Neologism*>& neologisms) {
  AdaptedModel m = attach_none(base);
  m.extension = extend_vocab(base, neologisms);
  for (const Neologism* n : neologisms) {
    m.rules.push_back(op_token_rule(n->skill, m.extension.range(skills::token(n->skill))));
  }
  return m;
}

AdaptedModel attach(const Checkpoint& base, const Adapter& adapter) {
  if (adapter.neologism) return attach_neologisms(base, {&*adapter.neologism});
  AdaptedModel m = attach_none(base);
  if (adapter.prefix) {
    const int first = m.extension.add("prefix", adapter.prefix->weights);
    InsertionRule r;
    r.mode = InsertionMode::kPrependInstruction;
    r.skill = adapter.skill;
    r.first_id = first;
    r.length = adapter.prefix->length();
    m.rules.push_back(r);
    m.prefix_first = first;
    m.prefix_length = r.length;
  }
  if (adapter.low_rank) m.low_rank = &adapter.low_rank->factors;
  return m;
}

void save_adapter(const std::filesystem::path& dir, const Adapter& adapter) {
  nlohmann::json m;
  m["kind"] = "adapter";
  m["method"] = method_name(adapter.method);
  m["skill_name"] = skills::token(adapter.skill);
  m["init_mode"] = init_mode_name(adapter.config.init_mode);
  if (adapter.method == Method::kLowRank) {
    m["rank"] = adapter.config.rank;
    m["alpha"] = adapter.config.alpha;
  } else {
    m["length"] = adapter.config.length;
  }
  m["training_config"] = to_json(adapter.config);
  m["base_digest"] = adapter.base_digest;
  auto log = nlohmann::json::array();
  for (const auto& e : adapter.log) {
    log.push_back({{"epoch", e.epoch}, {"steps", e.steps}, {"mean_loss", e.mean_loss}});
  }
  m["epoch_log"] = log;
  save_tensor_bundle(dir, adapter_tensors(adapter), std::move(m));
}

Adapter load_adapter(const std::filesystem::path& dir, const Checkpoint& base) {
  ParamSet tensors;
  const auto m = model::load_tensor_bundle(dir, tensors);
  if (m.value("kind", "") != "adapter") throw ConfigError(dir.string() + " is not an adapter");
  Adapter a;
  a.base_digest = m.at("base_digest").get<std::string>();
  if (a.base_digest != model::parameters_digest(base.params)) {
    throw DigestError("adapter " + dir.string() + " was trained against a different base");
  }
  a.method = parse_method(m.at("method").get<std::string>());
  a.skill = skills::parse(m.at("skill_name").get<std::string>());
  a.config = adapter_config_from_json(m.at("training_config"));
  for (const auto& e : m.value("epoch_log", nlohmann::json::array())) {
    a.log.push_back({e.at("epoch").get<int>(), e.at("steps").get<long>(),
                     e.at("mean_loss").get<double>()});
  }
  switch (a.method) {
    case Method::kNeologism:
      a.neologism = Neologism{a.skill, tensors.at("neologism"), a.config.init_mode};
      break;
    case Method::kPrefix:
      a.prefix = PromptPrefix{a.skill, tensors.at("prefix"), a.config.init_mode};
      break;
    case Method::kLowRank: {
      LowRankAdapter lr;
      lr.skill = a.skill;
      lr.factors.rank = a.config.rank;
      lr.factors.alpha = a.config.alpha;
      const auto expect = model::make_low_rank(base.config, a.config.rank, a.config.alpha, 0);
      if (expect.factors.size() != tensors.size()) {
        throw ConfigError("low-rank factor count does not match the base config");
      }
      for (const auto& t : expect.factors) {
        const auto& got = tensors.at(t.name);
        if (got.shape != t.shape) throw ConfigError("low-rank factor shape mismatch: " + t.name);
        const int i = lr.factors.factors.add(got.name, got.shape);
        lr.factors.factors[i].data = got.data;
      }
      a.low_rank = std::move(lr);
      break;
    }
  }
  return a;
}

}  // namespace skillneo::adapt
