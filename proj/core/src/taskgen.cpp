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
#include "skillneo/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "skillneo/errors.hpp"
#include "skillneo/util.hpp"

namespace skillneo::taskgen {

namespace {

DigitSeq random_digits(Rng& rng, int n) {
  DigitSeq x(static_cast<std::size_t>(n));
  for (auto& d : x) d = static_cast<std::uint8_t>(uniform_index(rng, 10));
  return x;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[uniform_index(rng, v.size())];
}

Skill pick(Rng& rng, const SkillSet& pool) {
  return pool[uniform_index(rng, pool.size())];
}

Combo combo_of(const OpChain& c) { return make_combo(c[0], c[1], c[2]); }

void check_lengths(const DatasetSpec& spec) {
  if (spec.seq_lengths.empty()) throw ConfigError("no sequence lengths");
  for (int n : spec.seq_lengths) {
    if (n < 1) throw ConfigError("sequence length must be >= 1");
    if (std::find(spec.held_out_lengths.begin(), spec.held_out_lengths.end(),
                  n) != spec.held_out_lengths.end()) {
      throw ConfigError("training length " + std::to_string(n) +
                        " is also held out");
    }
  }
}

std::vector<int> k_schedule(const DatasetSpec& spec) {
  std::vector<int> ks(spec.n_samples);
  if (spec.k_distribution == KDistribution::kEvenSplit) {
    const std::size_t base = spec.n_samples / spec.k_max;
    const std::size_t rem = spec.n_samples % spec.k_max;
    std::size_t i = 0;
    for (int k = 1; k <= spec.k_max; ++k) {
      const std::size_t count = base + (static_cast<std::size_t>(k - 1) < rem);
      for (std::size_t j = 0; j < count; ++j) ks[i++] = k;
    }
  } else {
    for (std::size_t i = 0; i < ks.size(); ++i) {
      Rng rng(stream_seed(spec.seed ^ 0x6B5F6B5FULL, i));
      ks[i] = 1 + static_cast<int>(uniform_index(rng, spec.k_max));
    }
  }
  return ks;
}

nlohmann::json ops_json(const OpChain& ops) {
  auto arr = nlohmann::json::array();
  for (Skill s : ops) arr.push_back(skills::token(s));
  return arr;
}

OpChain ops_from_json(const nlohmann::json& arr) {
  OpChain ops;
  for (const auto& t : arr) ops.push_back(skills::parse(t.get<std::string>()));
  return ops;
}

nlohmann::json skills_json(const SkillSet& set) {
  auto arr = nlohmann::json::array();
  for (Skill s : set) arr.push_back(skills::token(s));
  return arr;
}

}  // namespace

Sample render_sample(const OpChain& chain, const DigitSeq& x) {
  if (chain.empty()) throw ConfigError("empty op chain");
  if (x.empty()) throw InputError("empty digit sequence");
  Sample s;
  s.label_ops = chain;
  s.exec_ops = chain;
  s.input = x;
  s.target = skills::apply_chain(chain, x);
  s.text = render_prompt(chain, x) + skills::to_string(s.target);
  return s;
}

std::string render_prompt(const OpChain& chain, const DigitSeq& x) {
  std::string text;
  for (Skill op : chain) text += skills::token(op);
  text += skills::to_string(x);
  text += '=';
  return text;
}

ParsedText parse_text(std::string_view text) {
  ParsedText out;
  std::size_t pos = 0;
  while (pos < text.size() && text[pos] == '[') {
    const auto close = text.find(']', pos);
    if (close == std::string_view::npos) {
      throw InputError("unterminated op token in '" + std::string(text) + "'");
    }
    out.ops.push_back(skills::parse(text.substr(pos, close - pos + 1)));
    pos = close + 1;
  }
  const auto eq = text.find('=', pos);
  if (out.ops.empty() || eq == std::string_view::npos) {
    throw InputError("malformed sample text '" + std::string(text) + "'");
  }
  out.input = skills::parse_digits(text.substr(pos, eq - pos));
  out.target = skills::parse_digits(text.substr(eq + 1));
  return out;
}

Combo make_combo(Skill a, Skill b, Skill c) {
  Combo combo{a, b, c};
  std::sort(combo.begin(), combo.end());
  return combo;
}

std::vector<Combo> all_combos(const SkillSet& pool) {
  std::vector<Skill> sorted(pool.begin(), pool.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<Combo> out;
  const std::size_t n = sorted.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      for (std::size_t k = j; k < n; ++k) {
        out.push_back({sorted[i], sorted[j], sorted[k]});
      }
    }
  }
  return out;
}

ComboSet select_held_out_combos(const SkillSet& pool, double fraction,
                                std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) {
    throw ConfigError("held-out combination fraction must be in [0, 1)");
  }
  auto combos = all_combos(pool);
  const auto take = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(combos.size()) - 1e-9));
  Rng rng(stream_seed(seed, 0xC0B0));
  // Fisher-Yates with our own index draw so the subset is library-independent.
  for (std::size_t i = combos.size(); i > 1; --i) {
    std::swap(combos[i - 1], combos[uniform_index(rng, i)]);
  }
  return ComboSet(combos.begin(), combos.begin() + static_cast<long>(take));
}

SkillCenteredDataset gen_pretrain_corpus(const DatasetSpec& spec, int phase,
                                         const ComboSet& held_out_combos) {
  if (spec.target_skill) {
    throw ConfigError("pretraining corpus must not have a target skill");
  }
  if (spec.skill_pool.empty()) throw ConfigError("empty skill pool");
  if (phase != 1 && phase != 2) throw ConfigError("phase must be 1 or 2");
  check_lengths(spec);
  DatasetSpec eff = spec;
  if (phase == 1) {
    eff.k_max = 1;
  } else {
    eff.k_max = 3;
    eff.k_distribution = KDistribution::kUniform;
  }
  if (held_out_combos.size() >= all_combos(spec.skill_pool).size()) {
    throw ConfigError("every 3-combination is held out");
  }

  SkillCenteredDataset ds;
  ds.spec = eff;
  ds.samples.reserve(eff.n_samples);
  const auto ks = k_schedule(eff);
  for (std::size_t i = 0; i < eff.n_samples; ++i) {
    Rng rng(stream_seed(eff.seed, i));
    const int n = pick(rng, eff.seq_lengths);
    OpChain chain;
    do {
      chain.clear();
      for (int j = 0; j < ks[i]; ++j) chain.push_back(pick(rng, eff.skill_pool));
    } while (chain.size() == 3 && held_out_combos.count(combo_of(chain)));
    ds.samples.push_back(render_sample(chain, random_digits(rng, n)));
  }
  ds.manifest.kind = phase == 1 ? "pretrain-phase1" : "pretrain-phase2";
  ds.manifest.seed = eff.seed;
  ds.manifest.chains_with_replacement = true;
  ds.manifest.held_out_combos.assign(held_out_combos.begin(),
                                     held_out_combos.end());
  return ds;
}

SkillCenteredDataset gen_pretrain_testset(const SkillSet& pool, int k,
                                          const std::vector<int>& lengths,
                                          std::size_t n_per_cell,
                                          const ComboSet& held_out_combos,
                                          bool ood_combos, std::uint64_t seed) {
  if (pool.empty()) throw ConfigError("empty skill pool");
  if (k < 1 || k > 3) throw ConfigError("k must be in 1..3");
  if (ood_combos && (k != 3 || held_out_combos.empty())) {
    throw ConfigError("OOD-combination test sets need k = 3 and held-out combos");
  }
  const std::vector<Combo> ood(held_out_combos.begin(), held_out_combos.end());
  SkillCenteredDataset ds;
  ds.spec.skill_pool = pool;
  ds.spec.k_max = k;
  ds.spec.seq_lengths = lengths;
  ds.spec.held_out_lengths.clear();
  ds.spec.n_samples = lengths.size() * n_per_cell;
  ds.spec.seed = seed;
  std::uint64_t counter = 0;
  for (int n : lengths) {
    for (std::size_t j = 0; j < n_per_cell; ++j) {
      Rng rng(stream_seed(seed, counter++));
      OpChain chain;
      if (ood_combos) {
        const Combo& c = ood[uniform_index(rng, ood.size())];
        chain.assign(c.begin(), c.end());
        for (std::size_t i = chain.size(); i > 1; --i) {
          std::swap(chain[i - 1], chain[uniform_index(rng, i)]);
        }
      } else {
        do {
          chain.clear();
          for (int m = 0; m < k; ++m) chain.push_back(pick(rng, pool));
        } while (k == 3 && held_out_combos.count(combo_of(chain)));
      }
      ds.samples.push_back(render_sample(chain, random_digits(rng, n)));
    }
  }
  ds.manifest.kind = std::string("pretrain-test-k") + std::to_string(k) +
                     (ood_combos ? "-ood" : "-id");
  ds.manifest.seed = seed;
  ds.manifest.held_out_combos.assign(held_out_combos.begin(),
                                     held_out_combos.end());
  return ds;
}

SkillCenteredDataset gen_skill_centered(Skill target, const SkillSet& train_pool,
                                        const DatasetSpec& spec) {
  if (train_pool.contains(target)) {
    throw ConfigError("target skill " + std::string(skills::name(target)) +
                      " must not be in the train pool");
  }
  if (spec.k_max < 1) throw ConfigError("k_max must be >= 1");
  if (spec.k_max > 1 && train_pool.empty()) {
    throw ConfigError("empty train pool for k_max > 1");
  }
  check_lengths(spec);
  SkillCenteredDataset ds;
  ds.spec = spec;
  ds.spec.target_skill = target;
  ds.spec.skill_pool = train_pool;
  ds.samples.reserve(spec.n_samples);
  const auto ks = k_schedule(spec);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    Rng rng(stream_seed(spec.seed, i));
    const int n = pick(rng, spec.seq_lengths);
    const int k = ks[i];
    const auto slot = uniform_index(rng, static_cast<std::size_t>(k));
    OpChain chain(static_cast<std::size_t>(k));
    for (std::size_t j = 0; j < chain.size(); ++j) {
      chain[j] = j == slot ? target : pick(rng, train_pool);
    }
    ds.samples.push_back(render_sample(chain, random_digits(rng, n)));
  }
  ds.manifest.kind = "skill-centered";
  ds.manifest.seed = spec.seed;
  ds.manifest.chains_with_replacement = true;
  return ds;
}

SkillCenteredDataset inject_label_noise(const SkillCenteredDataset& ds,
                                        const NoiseSpec& noise) {
  if (noise.rate < 0.0 || noise.rate > 1.0) {
    throw ConfigError("noise rate must be in [0, 1]");
  }
  if (!ds.spec.target_skill) {
    throw ConfigError("label noise needs a skill-centered dataset");
  }
  const Skill target = *ds.spec.target_skill;
  std::vector<Skill> others;
  for (Skill s : ds.spec.skill_pool) {
    if (s != target) others.push_back(s);
  }
  if (others.empty() && noise.rate > 0.0) {
    throw ConfigError("no replacement skills available for label noise");
  }
  SkillCenteredDataset out = ds;
  std::size_t corrupted = 0;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    Rng rng(stream_seed(noise.seed, i));
    if (uniform01(rng) >= noise.rate) continue;
    Sample& s = out.samples[i];
    const Skill replacement = pick(rng, others);
    for (auto& op : s.exec_ops) {
      if (op == target) op = replacement;
    }
    s.target = skills::apply_chain(s.exec_ops, s.input);
    s.text = render_prompt(s.label_ops, s.input) + skills::to_string(s.target);
    ++corrupted;
  }
  out.manifest.noise_rate = noise.rate;
  out.manifest.noise_seed = noise.seed;
  out.manifest.corrupted = corrupted;
  return out;
}

SkillCenteredDataset gen_permutation_testset(Skill target,
                                             const SkillSet& partner_pool,
                                             const SkillSet& train_pool, int k,
                                             std::size_t n_per_cell,
                                             const std::vector<int>& lengths,
                                             std::uint64_t seed) {
  if (k != 2 && k != 3) throw ConfigError("permutation test sets need k in {2, 3}");
  if (partner_pool.empty()) throw ConfigError("empty partner pool");
  if (k == 3 && train_pool.empty()) throw ConfigError("empty train pool");
  // Orderings over role slots: 0 = target, 1 = partner, 2 = train op.
  std::vector<std::vector<int>> orders;
  std::vector<int> roles(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) roles[i] = i;
  do {
    orders.push_back(roles);
  } while (std::next_permutation(roles.begin(), roles.end()));

  SkillCenteredDataset ds;
  ds.spec.target_skill = target;
  ds.spec.skill_pool = train_pool;
  ds.spec.k_max = k;
  ds.spec.seq_lengths = lengths;
  ds.spec.held_out_lengths.clear();
  ds.spec.n_samples = lengths.size() * orders.size() * n_per_cell;
  ds.spec.seed = seed;
  std::uint64_t counter = 0;
  for (int n : lengths) {
    for (const auto& order : orders) {
      for (std::size_t j = 0; j < n_per_cell; ++j) {
        Rng rng(stream_seed(seed, counter++));
        const std::array<Skill, 3> by_role = {
            target, pick(rng, partner_pool),
            k == 3 ? pick(rng, train_pool) : target};
        OpChain chain;
        for (int r : order) chain.push_back(by_role[static_cast<std::size_t>(r)]);
        ds.samples.push_back(render_sample(chain, random_digits(rng, n)));
      }
    }
  }
  ds.manifest.kind = "permutation-k" + std::to_string(k);
  ds.manifest.seed = seed;
  ds.manifest.extra["partner_pool"] = skills_json(partner_pool);
  return ds;
}

SkillCenteredDataset gen_joint_testset(Skill a, Skill b,
                                       const std::vector<int>& lengths,
                                       std::size_t n_per_cell,
                                       std::uint64_t seed) {
  if (a == b) throw ConfigError("joint test set needs two distinct skills");
  SkillCenteredDataset ds;
  ds.spec.target_skill = a;
  ds.spec.skill_pool = SkillSet({b}, skills::Role::kTest);
  ds.spec.k_max = 2;
  ds.spec.seq_lengths = lengths;
  ds.spec.held_out_lengths.clear();
  ds.spec.n_samples = lengths.size() * 2 * n_per_cell;
  ds.spec.seed = seed;
  std::uint64_t counter = 0;
  for (int n : lengths) {
    for (const OpChain& chain : {OpChain{a, b}, OpChain{b, a}}) {
      for (std::size_t j = 0; j < n_per_cell; ++j) {
        Rng rng(stream_seed(seed, counter++));
        ds.samples.push_back(render_sample(chain, random_digits(rng, n)));
      }
    }
  }
  ds.manifest.kind = "joint";
  ds.manifest.seed = seed;
  return ds;
}

std::string serialize_samples(const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["label_ops"] = ops_json(s.label_ops);
    j["exec_ops"] = ops_json(s.exec_ops);
    j["input"] = skills::to_string(s.input);
    j["target"] = skills::to_string(s.target);
    j["text"] = s.text;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::filesystem::path manifest_path(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p += ".manifest.json";
  return p;
}

nlohmann::json manifest_json(const SkillCenteredDataset& ds) {
  nlohmann::json spec;
  spec["target_skill"] = ds.spec.target_skill
                             ? nlohmann::json(skills::token(*ds.spec.target_skill))
                             : nlohmann::json(nullptr);
  spec["skill_pool"] = skills_json(ds.spec.skill_pool);
  spec["k_max"] = ds.spec.k_max;
  spec["k_distribution"] =
      ds.spec.k_distribution == KDistribution::kUniform ? "uniform" : "even";
  spec["n_samples"] = ds.spec.n_samples;
  spec["seq_lengths"] = ds.spec.seq_lengths;
  spec["held_out_lengths"] = ds.spec.held_out_lengths;
  spec["held_out_combo_fraction"] = ds.spec.held_out_combo_fraction;
  spec["seed"] = ds.spec.seed;

  nlohmann::json m;
  m["kind"] = ds.manifest.kind;
  m["generator_version"] = ds.manifest.generator_version;
  m["seed"] = ds.manifest.seed;
  m["noise_rate"] = ds.manifest.noise_rate;
  m["noise_seed"] = ds.manifest.noise_seed;
  m["corrupted"] = ds.manifest.corrupted;
  m["chains_with_replacement"] = ds.manifest.chains_with_replacement;
  auto combos = nlohmann::json::array();
  for (const auto& c : ds.manifest.held_out_combos) {
    combos.push_back({skills::token(c[0]), skills::token(c[1]),
                      skills::token(c[2])});
  }
  m["held_out_combos"] = combos;
  m["extra"] = ds.manifest.extra;
  m["spec"] = spec;
  m["n_records"] = ds.samples.size();
  return m;
}

void write_dataset(const SkillCenteredDataset& ds,
                   const std::filesystem::path& path) {
  write_text_file(path, serialize_samples(ds.samples));
  write_text_file(manifest_path(path), manifest_json(ds).dump(2) + "\n");
}

SkillCenteredDataset read_dataset(const std::filesystem::path& path) {
  SkillCenteredDataset ds;
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Sample s;
      s.label_ops = ops_from_json(j.at("label_ops"));
      s.exec_ops = ops_from_json(j.at("exec_ops"));
      s.input = skills::parse_digits(j.at("input").get<std::string>());
      s.target = skills::parse_digits(j.at("target").get<std::string>());
      s.text = j.at("text").get<std::string>();
      const auto parsed = parse_text(s.text);
      if (parsed.ops != s.label_ops || parsed.input != s.input ||
          parsed.target != s.target) {
        throw InputError("text disagrees with structured fields");
      }
      ds.samples.push_back(std::move(s));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }

  const auto mpath = manifest_path(path);
  if (std::filesystem::exists(mpath)) {
    const auto m = nlohmann::json::parse(read_text_file(mpath));
    ds.manifest.kind = m.value("kind", "");
    ds.manifest.generator_version = m.value("generator_version", "");
    ds.manifest.seed = m.value("seed", std::uint64_t{0});
    ds.manifest.noise_rate = m.value("noise_rate", 0.0);
    ds.manifest.noise_seed = m.value("noise_seed", std::uint64_t{0});
    ds.manifest.corrupted = m.value("corrupted", std::size_t{0});
    ds.manifest.chains_with_replacement = m.value("chains_with_replacement", true);
    for (const auto& c : m.value("held_out_combos", nlohmann::json::array())) {
      ds.manifest.held_out_combos.push_back(
          make_combo(skills::parse(c[0].get<std::string>()),
                     skills::parse(c[1].get<std::string>()),
                     skills::parse(c[2].get<std::string>())));
    }
    ds.manifest.extra = m.value("extra", nlohmann::json::object());
    const auto& spec = m.at("spec");
    if (!spec.at("target_skill").is_null()) {
      ds.spec.target_skill =
          skills::parse(spec.at("target_skill").get<std::string>());
    }
    std::vector<Skill> pool;
    for (const auto& t : spec.at("skill_pool")) {
      pool.push_back(skills::parse(t.get<std::string>()));
    }
    ds.spec.skill_pool = SkillSet(std::move(pool), skills::Role::kTrain);
    ds.spec.k_max = spec.at("k_max").get<int>();
    ds.spec.k_distribution = spec.at("k_distribution") == "uniform"
                                 ? KDistribution::kUniform
                                 : KDistribution::kEvenSplit;
    ds.spec.n_samples = spec.at("n_samples").get<std::size_t>();
    ds.spec.seq_lengths = spec.at("seq_lengths").get<std::vector<int>>();
    ds.spec.held_out_lengths = spec.at("held_out_lengths").get<std::vector<int>>();
    ds.spec.held_out_combo_fraction = spec.at("held_out_combo_fraction").get<double>();
    ds.spec.seed = spec.at("seed").get<std::uint64_t>();
  } else {
    ds.spec.n_samples = ds.samples.size();
  }
  return ds;
}

}  // namespace skillneo::taskgen
