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
#include "skillneo/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "skillneo/errors.hpp"

namespace skillneo::harness {

namespace fs = std::filesystem;
using adapt::AdapterTrainConfig;
using adapt::InitMode;
using adapt::Method;
using eval::CompetenceReport;
using eval::Split;
using taskgen::SkillCenteredDataset;

namespace {

std::string skill_name(Skill s) { return std::string(skills::name(s)); }

nlohmann::json skills_to_json(const std::vector<Skill>& v) {
  auto a = nlohmann::json::array();
  for (Skill s : v) a.push_back(skill_name(s));
  return a;
}

std::vector<Skill> skills_from_json(const nlohmann::json& j) {
  std::vector<Skill> out;
  for (const auto& s : j) out.push_back(skills::parse(s.get<std::string>()));
  return out;
}

std::string fmt_rate(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", r);
  return buf;
}

std::uint64_t derive_seed(const ExperimentConfig& c, const std::string& key) {
  return seed_from_key(c.seed, c.experiment_id + "/" + key);
}

std::string short_digest(const std::string& d) { return d.substr(0, 16); }

}  // namespace

const AdapterTrainConfig& ExperimentConfig::method_config(Method m) const {
  auto it = adapters.methods.find(m);
  if (it == adapters.methods.end()) {
    throw ConfigError("no training config for method " + adapt::method_name(m));
  }
  return it->second;
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  for (Method m : {Method::kNeologism, Method::kPrefix, Method::kLowRank}) {
    c.adapters.methods[m] = AdapterTrainConfig::defaults(m);
  }
  c.sweep.held_out = skills::held_out_candidates();
  // Learned positions must cover prompts lengthened by soft tokens.
  c.pretrain.train.max_pad = 48;
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["experiment_id"] = c.experiment_id;
  j["seed"] = c.seed;
  if (c.base_checkpoint) j["base_checkpoint"] = c.base_checkpoint->string();
  j["model"] = model::to_json(c.model);
  j["pretrain"] = {{"phase1_samples", c.pretrain.phase1_samples},
                   {"phase2_samples", c.pretrain.phase2_samples},
                   {"held_out_combo_fraction", c.pretrain.held_out_combo_fraction},
                   {"test_n_per_cell", c.pretrain.test_n_per_cell},
                   {"test_lengths", c.pretrain.test_lengths},
                   {"train", model::to_json(c.pretrain.train)}};
  nlohmann::json methods;
  for (const auto& [m, cfg] : c.adapters.methods) methods[adapt::method_name(m)] = adapt::to_json(cfg);
  j["adapters"] = {{"samples", c.adapters.samples}, {"k_max", c.adapters.k_max}, {"methods", methods}};
  j["eval"] = {{"n_per_cell", c.eval.n_per_cell}, {"lengths", c.eval.lengths}, {"ks", c.eval.ks}};
  auto ms = nlohmann::json::array();
  for (Method m : c.sweep.methods) ms.push_back(adapt::method_name(m));
  j["sweep"] = {{"new_skills", skills_to_json(c.sweep.new_skills)},
                {"held_out", skills_to_json(c.sweep.held_out)},
                {"methods", ms}};
  j["p3"] = {{"lengths", c.p3.lengths},
             {"n_per_length", c.p3.n_per_length},
             {"icl_n", c.p3.icl_n},
             {"icl_pool_size", c.p3.icl_pool_size}};
  const auto& a = c.ablate;
  auto modes = nlohmann::json::array();
  for (InitMode m : a.init_modes) modes.push_back(adapt::init_mode_name(m));
  j["ablate"] = {
      {"length", {{"lengths", a.lengths},
                  {"held_out", skill_name(a.length_held_out)},
                  {"new_skills", skills_to_json(a.length_new_skills)},
                  {"k_max", a.length_k_max},
                  {"epochs", a.length_epochs}}},
      {"kmax", {{"values", a.k_max_values},
                {"epochs", a.k_max_epochs},
                {"held_out", skills_to_json(a.k_max_held_out)}}},
      {"init", {{"modes", modes}, {"epochs", a.init_epochs}, {"held_out", skills_to_json(a.init_held_out)}}},
      {"noise", {{"rates", a.noise_rates},
                 {"length", a.noise_length},
                 {"new_skill", skill_name(a.noise_new_skill)},
                 {"held_out", skill_name(a.noise_held_out)}}}};
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c = default_config();
  c.experiment_id = j.value("experiment_id", c.experiment_id);
  c.seed = j.value("seed", c.seed);
  if (j.contains("base_checkpoint")) c.base_checkpoint = j.at("base_checkpoint").get<std::string>();
  if (j.contains("model")) {
    nlohmann::json m = model::to_json(c.model);
    m.update(j.at("model"));
    c.model = model::model_config_from_json(m);
  }
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    c.pretrain.phase1_samples = p.value("phase1_samples", c.pretrain.phase1_samples);
    c.pretrain.phase2_samples = p.value("phase2_samples", c.pretrain.phase2_samples);
    c.pretrain.held_out_combo_fraction =
        p.value("held_out_combo_fraction", c.pretrain.held_out_combo_fraction);
    c.pretrain.test_n_per_cell = p.value("test_n_per_cell", c.pretrain.test_n_per_cell);
    c.pretrain.test_lengths = p.value("test_lengths", c.pretrain.test_lengths);
    if (p.contains("train")) {
      c.pretrain.train = model::train_config_from_json(p.at("train"), c.pretrain.train);
    }
  }
  if (j.contains("adapters")) {
    const auto& a = j.at("adapters");
    c.adapters.samples = a.value("samples", c.adapters.samples);
    c.adapters.k_max = a.value("k_max", c.adapters.k_max);
    if (a.contains("methods")) {
      for (const auto& [name, cfg] : a.at("methods").items()) {
        const Method m = adapt::parse_method(name);
        nlohmann::json merged = adapt::to_json(c.adapters.methods[m]);
        merged["method"] = adapt::method_name(m);
        for (const auto& [k, v] : cfg.items()) {
          if (k == "train") {
            merged["train"].update(v);
          } else {
            merged[k] = v;
          }
        }
        c.adapters.methods[m] = adapt::adapter_config_from_json(merged);
      }
    }
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    c.eval.n_per_cell = e.value("n_per_cell", c.eval.n_per_cell);
    c.eval.lengths = e.value("lengths", c.eval.lengths);
    c.eval.ks = e.value("ks", c.eval.ks);
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    if (s.contains("new_skills")) c.sweep.new_skills = skills_from_json(s.at("new_skills"));
    if (s.contains("held_out")) c.sweep.held_out = skills_from_json(s.at("held_out"));
    if (s.contains("methods")) {
      c.sweep.methods.clear();
      for (const auto& m : s.at("methods")) c.sweep.methods.push_back(adapt::parse_method(m.get<std::string>()));
    }
  }
  if (j.contains("p3")) {
    const auto& p = j.at("p3");
    c.p3.lengths = p.value("lengths", c.p3.lengths);
    c.p3.n_per_length = p.value("n_per_length", c.p3.n_per_length);
    c.p3.icl_n = p.value("icl_n", c.p3.icl_n);
    c.p3.icl_pool_size = p.value("icl_pool_size", c.p3.icl_pool_size);
  }
  if (j.contains("ablate")) {
    const auto& a = j.at("ablate");
    auto& t = c.ablate;
    if (a.contains("length")) {
      const auto& l = a.at("length");
      t.lengths = l.value("lengths", t.lengths);
      if (l.contains("held_out")) t.length_held_out = skills::parse(l.at("held_out").get<std::string>());
      if (l.contains("new_skills")) t.length_new_skills = skills_from_json(l.at("new_skills"));
      t.length_k_max = l.value("k_max", t.length_k_max);
      t.length_epochs = l.value("epochs", t.length_epochs);
    }
    if (a.contains("kmax")) {
      const auto& k = a.at("kmax");
      t.k_max_values = k.value("values", t.k_max_values);
      t.k_max_epochs = k.value("epochs", t.k_max_epochs);
      if (k.contains("held_out")) t.k_max_held_out = skills_from_json(k.at("held_out"));
    }
    if (a.contains("init")) {
      const auto& i = a.at("init");
      if (i.contains("modes")) {
        t.init_modes.clear();
        for (const auto& m : i.at("modes")) t.init_modes.push_back(adapt::parse_init_mode(m.get<std::string>()));
      }
      t.init_epochs = i.value("epochs", t.init_epochs);
      if (i.contains("held_out")) t.init_held_out = skills_from_json(i.at("held_out"));
    }
    if (a.contains("noise")) {
      const auto& n = a.at("noise");
      t.noise_rates = n.value("rates", t.noise_rates);
      t.noise_length = n.value("length", t.noise_length);
      if (n.contains("new_skill")) t.noise_new_skill = skills::parse(n.at("new_skill").get<std::string>());
      if (n.contains("held_out")) t.noise_held_out = skills::parse(n.at("held_out").get<std::string>());
    }
  }
  c.model.validate();
  if (c.adapters.k_max < 1) throw ConfigError("adapters.k_max must be >= 1");
  for (double r : c.ablate.noise_rates) {
    if (r < 0.0 || r > 1.0) throw ConfigError("noise rates must be in [0, 1]");
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  try {
    return config_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

nlohmann::json to_json(const RunRecord& r) {
  return {{"id", r.id},
          {"kind", r.kind},
          {"config_digest", r.config_digest},
          {"inputs", r.inputs},
          {"outputs", r.outputs},
          {"wall_time_s", r.wall_time_s},
          {"status", r.status},
          {"error", r.error}};
}

RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.id = j.at("id").get<std::string>();
  r.kind = j.value("kind", "");
  r.config_digest = j.at("config_digest").get<std::string>();
  r.inputs = j.value("inputs", nlohmann::json::object());
  r.outputs = j.value("outputs", nlohmann::json::object());
  r.wall_time_s = j.value("wall_time_s", 0.0);
  r.status = j.at("status").get<std::string>();
  r.error = j.value("error", "");
  return r;
}

RunLedger::RunLedger(fs::path path) : path_(std::move(path)) {
  if (!fs::exists(path_)) return;
  std::istringstream in(read_text_file(path_));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      cache_.push_back(run_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path_.string() + ": " + e.what(), lineno);
    }
  }
}

void RunLedger::append(const RunRecord& r) {
  std::lock_guard<std::mutex> lock(mu_);
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  out << to_json(r).dump() << "\n";
  out.flush();
  if (!out) throw InputError("cannot append to ledger " + path_.string());
  cache_.push_back(r);
}

std::vector<RunRecord> RunLedger::records() const {
  std::lock_guard<std::mutex> lock(mu_);
  return cache_;
}

std::optional<RunRecord> RunLedger::latest(const std::string& id,
                                           const std::string& config_digest) const {
  std::lock_guard<std::mutex> lock(mu_);
  for (auto it = cache_.rbegin(); it != cache_.rend(); ++it) {
    if (it->config_digest == config_digest && (id.empty() || it->id == id || it->status == "ok")) {
      return *it;
    }
  }
  return std::nullopt;
}

void CommandResult::merge(const CommandResult& o) {
  requested += o.requested;
  completed += o.completed;
  skipped += o.skipped;
  failed += o.failed;
  failures.insert(failures.end(), o.failures.begin(), o.failures.end());
}

nlohmann::json AdapterJob::content() const {
  nlohmann::json j;
  j["new_skill"] = skill_name(new_skill);
  j["held_out"] = skill_name(held_out);
  j["config"] = adapt::to_json(config);
  j["samples"] = samples;
  j["k_max"] = k_max;
  if (with_noise) j["noise_rate"] = noise_rate;
  return j;
}

std::string AdapterJob::id() const {
  std::string variant = adapt::method_name(config.method);
  if (config.method == Method::kLowRank) {
    variant += "-r" + std::to_string(config.rank);
  } else {
    variant += "-l" + std::to_string(config.length) + "-" + adapt::init_mode_name(config.init_mode);
  }
  variant += "-k" + std::to_string(k_max) + "-e" + std::to_string(config.train.epochs);
  if (with_noise) variant += "-noise" + fmt_rate(noise_rate);
  return family + "/" + skill_name(new_skill) + "/held-" + skill_name(held_out) + "/" + variant;
}

Workspace::Workspace(ExperimentConfig config, RunOptions options)
    : config_(std::move(config)),
      options_(std::move(options)),
      ledger_(options_.out / "ledger.jsonl") {
  fs::create_directories(options_.out);
}

void Workspace::log(const std::string& msg) const {
  static std::mutex mu;
  if (!options_.log) return;
  std::lock_guard<std::mutex> lock(mu);
  options_.log(msg);
}

std::uint64_t Workspace::seed(const std::string& key) const { return derive_seed(config_, key); }

skills::SkillSet Workspace::pretrain_pool() const { return skills::pretrain_skills(); }

std::vector<Skill> Workspace::held_out_skills() const {
  return config_.sweep.held_out.empty() ? skills::held_out_candidates() : config_.sweep.held_out;
}

taskgen::ComboSet Workspace::held_out_combos() const {
  return taskgen::select_held_out_combos(pretrain_pool(),
                                         config_.pretrain.held_out_combo_fraction,
                                         seed("data/held-out-combos"));
}

SkillCenteredDataset Workspace::pretrain_corpus(int phase) const {
  taskgen::DatasetSpec spec;
  spec.skill_pool = pretrain_pool();
  spec.k_max = phase == 1 ? 1 : 3;
  spec.n_samples = phase == 1 ? config_.pretrain.phase1_samples : config_.pretrain.phase2_samples;
  spec.seed = seed("data/pretrain/phase" + std::to_string(phase));
  return taskgen::gen_pretrain_corpus(spec, phase, held_out_combos());
}

SkillCenteredDataset Workspace::adapter_dataset(Skill new_skill, Skill held_out,
                                                std::size_t samples, int k_max) const {
  taskgen::DatasetSpec spec;
  spec.k_max = k_max;
  spec.k_distribution = taskgen::KDistribution::kEvenSplit;
  spec.n_samples = samples;
  spec.seed = seed("data/adapter/" + skill_name(new_skill) + "/held-" + skill_name(held_out) +
                   "/k" + std::to_string(k_max) + "/n" + std::to_string(samples));
  return taskgen::gen_skill_centered(
      new_skill, pretrain_pool().without(held_out, skills::Role::kTrain), spec);
}

SkillCenteredDataset Workspace::single_op_testset(Skill new_skill) const {
  SkillCenteredDataset out;
  for (int len : config_.eval.lengths) {
    taskgen::DatasetSpec spec;
    spec.k_max = 1;
    spec.n_samples = config_.eval.n_per_cell;
    spec.seq_lengths = {len};
    spec.held_out_lengths.clear();
    spec.seed = seed("test/single/" + skill_name(new_skill) + "/len" + std::to_string(len));
    auto part = taskgen::gen_skill_centered(new_skill, skills::SkillSet({}, skills::Role::kTrain), spec);
    if (out.samples.empty()) {
      out = std::move(part);
    } else {
      out.samples.insert(out.samples.end(), part.samples.begin(), part.samples.end());
    }
  }
  out.manifest.kind = "single-op";
  return out;
}

SkillCenteredDataset Workspace::permutation_testset(Skill new_skill, Skill held_out, int k,
                                                    bool ood) const {
  const auto train = pretrain_pool().without(held_out, skills::Role::kTrain);
  const auto partners = ood ? skills::SkillSet({held_out}, skills::Role::kHeldOut) : train;
  return taskgen::gen_permutation_testset(
      new_skill, partners, train, k, config_.eval.n_per_cell, config_.eval.lengths,
      seed("test/perm/" + skill_name(new_skill) + "/held-" + skill_name(held_out) + "/k" +
           std::to_string(k) + (ood ? "/ood" : "/id")));
}

SkillCenteredDataset Workspace::joint_testset() const {
  return taskgen::gen_joint_testset(Skill::kShift, Skill::kInvPol, config_.p3.lengths,
                                    std::max<std::size_t>(1, config_.p3.n_per_length / 2),
                                    seed("test/joint"));
}

std::vector<taskgen::Sample> Workspace::icl_pool(Skill skill, Skill held_out) const {
  taskgen::DatasetSpec spec;
  spec.k_max = 1;
  spec.n_samples = config_.p3.icl_pool_size;
  spec.seed = seed("data/icl-pool/" + skill_name(skill));
  return taskgen::gen_skill_centered(
             skill, pretrain_pool().without(held_out, skills::Role::kTrain), spec)
      .samples;
}

std::string Workspace::pretrain_digest() const {
  nlohmann::json j = to_json(config_);
  nlohmann::json key = {{"experiment_id", j["experiment_id"]},
                        {"seed", j["seed"]},
                        {"model", j["model"]},
                        {"pretrain", j["pretrain"]}};
  return sha256_hex(key.dump());
}

fs::path Workspace::base_dir() const {
  return options_.out / "pretrain" / short_digest(pretrain_digest());
}

const model::Checkpoint& Workspace::base() {
  std::lock_guard<std::mutex> lock(base_mu_);
  if (!base_) {
    const fs::path dir = config_.base_checkpoint ? *config_.base_checkpoint : base_dir() / "checkpoint";
    if (!fs::exists(dir / "manifest.json")) {
      throw DependencyError("base checkpoint missing at " + dir.string() + "; run pretrain first");
    }
    base_ = model::load_checkpoint(dir);
  }
  return *base_;
}

std::string Workspace::job_digest(const AdapterJob& job) {
  nlohmann::json j = job.content();
  j["base_digest"] = base().digest;
  j["eval"] = to_json(config_)["eval"];
  j["experiment_id"] = config_.experiment_id;
  j["seed"] = config_.seed;
  return sha256_hex(j.dump());
}

fs::path Workspace::job_dir(const AdapterJob& job) {
  return options_.out / "adapters" / short_digest(job_digest(job));
}

namespace {

fs::path relative_to(const fs::path& p, const fs::path& root) {
  return fs::relative(p, root);
}

bool outputs_intact(const RunRecord& r, const fs::path& root) {
  for (const auto& [path, digest] : r.outputs.items()) {
    const fs::path p = root / path;
    if (!fs::exists(p) || sha256_file(p) != digest.get<std::string>()) return false;
  }
  return true;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

bool Workspace::run_once(const std::string& id, const std::string& kind,
                         const std::string& digest, const nlohmann::json& inputs,
                         const std::function<std::vector<fs::path>()>& fn,
                         CommandResult& result) {
  ++result.requested;
  if (auto prev = ledger_.latest(id, digest)) {
    if (prev->status == "ok") {
      if (!outputs_intact(*prev, options_.out)) {
        throw DigestError("outputs of " + prev->id + " no longer match the ledger");
      }
      log("skip " + id + " (done as " + prev->id + ")");
      ++result.completed;
      ++result.skipped;
      return true;
    }
    if (!options_.resume) {
      ++result.failed;
      result.failures.push_back(id + ": failed earlier (" + prev->error + "); pass --resume to retry");
      return false;
    }
  }
  log("run " + id);
  RunRecord rec;
  rec.id = id;
  rec.kind = kind;
  rec.config_digest = digest;
  rec.inputs = inputs;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    for (const auto& p : fn()) {
      rec.outputs[relative_to(p, options_.out).generic_string()] = sha256_file(p);
    }
    rec.status = "ok";
  } catch (const std::exception& e) {
    rec.status = "failed";
    rec.error = e.what();
  }
  rec.wall_time_s = seconds_since(t0);
  ledger_.append(rec);
  if (rec.status == "ok") {
    ++result.completed;
    log("done " + id + " in " + fmt_rate(rec.wall_time_s) + " s");
    return true;
  }
  ++result.failed;
  result.failures.push_back(id + ": " + rec.error);
  log("FAILED " + id + ": " + rec.error);
  return false;
}

namespace {

std::string digest_of(const SkillCenteredDataset& ds) {
  return sha256_hex(taskgen::serialize_samples(ds.samples));
}

CompetenceReport evaluate_adapter(Workspace& ws, const AdapterJob& job,
                                  const adapt::AdaptedModel& m, const std::string& adapter_digest) {
  eval::ReportHeader h;
  h.method = adapt::method_name(job.config.method);
  h.target_skill = skills::token(job.new_skill);
  h.held_out_skill = skills::token(job.held_out);
  h.seed = job.config.train.seed;
  h.adapter_digest = adapter_digest;
  CompetenceReport report;
  bool first = true;
  auto add = [&](const CompetenceReport& r) {
    if (first) {
      report = r;
      first = false;
    } else {
      eval::append_cells(report, r);
    }
  };
  for (int k : ws.config().eval.ks) {
    if (k == 1) {
      add(eval::competence(m, ws.single_op_testset(job.new_skill), Split::kId, h));
    } else {
      add(eval::competence(m, ws.permutation_testset(job.new_skill, job.held_out, k, false),
                           Split::kId, h));
      add(eval::competence(m, ws.permutation_testset(job.new_skill, job.held_out, k, true),
                           Split::kOodSkill, h));
    }
  }
  return report;
}

}  // namespace

CommandResult run_adapter_job(Workspace& ws, const AdapterJob& job) {
  CommandResult result;
  const std::string digest = ws.job_digest(job);
  const fs::path dir = ws.job_dir(job);
  const auto& base = ws.base();
  const auto ds_key = job.content();
  ws.run_once(job.id(), "adapter", digest, {{"base", base.digest}, {"job", ds_key}}, [&] {
    auto ds = ws.adapter_dataset(job.new_skill, job.held_out, job.samples, job.k_max);
    if (job.with_noise) {
      ds = taskgen::inject_label_noise(
          ds, {job.noise_rate, ws.seed("noise/" + skill_name(job.new_skill) + "/held-" +
                                       skill_name(job.held_out))});
    }
    const auto t0 = std::chrono::steady_clock::now();
    const adapt::Adapter a = adapt::train_adapter(base, ds, job.config, [&](const model::EpochLog& l) {
      ws.log(job.id() + " epoch " + std::to_string(l.epoch) + " loss " + fmt_rate(l.mean_loss) +
             " (" + fmt_rate(seconds_since(t0)) + " s)");
    });
    if (model::parameters_digest(base.params) != base.digest) {
      throw DigestError("base checkpoint changed while training " + job.id());
    }
    adapt::save_adapter(dir / "adapter", a);
    const adapt::AdaptedModel m = adapt::attach(base, a);
    const CompetenceReport report = evaluate_adapter(ws, job, m, a.digest());
    eval::write_report({report}, dir / "report.csv");
    nlohmann::json summary = {{"id", job.id()},
                              {"job", job.content()},
                              {"dataset_digest", digest_of(ds)},
                              {"corrupted", ds.manifest.corrupted},
                              {"trainable_parameters", a.trainable_parameters()},
                              {"adapter_digest", a.digest()},
                              {"tau_id", report.tau_id()},
                              {"tau_ood", report.tau_ood()}};
    write_text_file(dir / "summary.json", summary.dump(2) + "\n");
    return std::vector<fs::path>{dir / "adapter" / "manifest.json", dir / "adapter" / "payload.bin",
                                 dir / "report.csv", dir / "summary.json"};
  }, result);
  return result;
}

CommandResult run_adapter_jobs(Workspace& ws, const std::vector<AdapterJob>& jobs) {
  CommandResult total;
  try {
    ws.base();
  } catch (const DependencyError& e) {
    total.requested = jobs.size();
    total.failed = jobs.size();
    total.failures.push_back(e.what());
    ws.log(e.what());
    return total;
  }
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      CommandResult r;
      try {
        r = run_adapter_job(ws, jobs[i]);
      } catch (const std::exception& e) {
        r.requested = 1;
        r.failed = 1;
        r.failures.push_back(jobs[i].id() + ": " + e.what());
      }
      std::lock_guard<std::mutex> lock(mu);
      total.merge(r);
    }
  };
  const int n = std::max(1, std::min<int>(ws.options().workers, static_cast<int>(jobs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int i = 0; i < n; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  return total;
}

std::vector<CompetenceReport> job_report(Workspace& ws, const AdapterJob& job) {
  const auto rec = ws.ledger().latest("", ws.job_digest(job));
  if (!rec || rec->status != "ok") throw DependencyError("no completed run for " + job.id());
  return eval::read_report(ws.job_dir(job) / "report.csv");
}

namespace {

AdapterJob make_job(const ExperimentConfig& c, const std::string& family, Skill s, Skill held,
                    Method m) {
  AdapterJob job;
  job.family = family;
  job.new_skill = s;
  job.held_out = held;
  job.config = c.method_config(m);
  job.samples = c.adapters.samples;
  job.k_max = c.adapters.k_max;
  return job;
}

void seed_job(const ExperimentConfig& c, AdapterJob& job) {
  job.config.train.seed =
      derive_seed(c, "train/" + skill_name(job.new_skill) + "/held-" + skill_name(job.held_out) +
                         "/" + adapt::method_name(job.config.method) + "/k" +
                         std::to_string(job.k_max));
}

std::vector<Skill> or_sweep(const ExperimentConfig& c, const std::vector<Skill>& v) {
  if (!v.empty()) return v;
  return c.sweep.held_out.empty() ? skills::held_out_candidates() : c.sweep.held_out;
}

}  // namespace

std::vector<AdapterJob> p2_jobs(const ExperimentConfig& c) {
  std::vector<AdapterJob> jobs;
  for (Skill s : c.sweep.new_skills) {
    for (Skill h : or_sweep(c, c.sweep.held_out)) {
      for (Method m : c.sweep.methods) {
        AdapterJob job = make_job(c, "p2", s, h, m);
        seed_job(c, job);
        jobs.push_back(job);
      }
    }
  }
  return jobs;
}

std::vector<AdapterJob> ablation_jobs(const ExperimentConfig& c, const std::string& which) {
  std::vector<AdapterJob> jobs;
  const auto& a = c.ablate;
  const bool all = which == "all";
  if (!all && which != "length" && which != "kmax" && which != "init" && which != "noise") {
    throw ConfigError("unknown ablation " + which);
  }
  auto length_job = [&](Skill s, int l) {
    AdapterJob job = make_job(c, "length", s, a.length_held_out, Method::kNeologism);
    job.config.length = l;
    job.config.train.epochs = a.length_epochs;
    job.k_max = a.length_k_max;
    seed_job(c, job);
    return job;
  };
  if (all || which == "length") {
    for (Skill s : a.length_new_skills) {
      for (int l : a.lengths) jobs.push_back(length_job(s, l));
    }
  }
  if (all || which == "kmax") {
    for (Skill s : c.sweep.new_skills) {
      for (Skill h : or_sweep(c, a.k_max_held_out)) {
        for (int k : a.k_max_values) {
          AdapterJob job = make_job(c, "kmax", s, h, Method::kNeologism);
          job.k_max = k;
          job.config.train.epochs = a.k_max_epochs;
          seed_job(c, job);
          jobs.push_back(job);
        }
      }
    }
  }
  if (all || which == "init") {
    for (Skill s : c.sweep.new_skills) {
      for (Skill h : or_sweep(c, a.init_held_out)) {
        for (InitMode m : a.init_modes) {
          AdapterJob job = make_job(c, "init", s, h, Method::kNeologism);
          job.config.init_mode = m;
          job.config.train.epochs = a.init_epochs;
          seed_job(c, job);
          jobs.push_back(job);
        }
      }
    }
  }
  if (all || which == "noise") {
    // Un-noised reference run; shares its digest with the matching
    // length-ablation point when there is one.
    AdapterJob baseline = length_job(a.noise_new_skill, a.noise_length);
    baseline.family = "noise";
    baseline.held_out = a.noise_held_out;
    seed_job(c, baseline);
    jobs.push_back(baseline);
    for (double r : a.noise_rates) {
      AdapterJob job = length_job(a.noise_new_skill, a.noise_length);
      job.family = "noise";
      job.held_out = a.noise_held_out;
      seed_job(c, job);
      job.with_noise = true;
      job.noise_rate = r;
      jobs.push_back(job);
    }
  }
  return jobs;
}

namespace {

/// Test grid of the base model: (k, split) -> dataset.
struct BaseGrid {
  int k;
  bool ood_combo;
  SkillCenteredDataset ds;
};

std::vector<BaseGrid> base_grids(const Workspace& ws) {
  const auto& p = ws.config().pretrain;
  const auto combos = ws.held_out_combos();
  std::vector<BaseGrid> out;
  for (int k = 1; k <= 3; ++k) {
    for (bool ood : {false, true}) {
      if (ood && k < 3) continue;
      out.push_back({k, ood,
                     taskgen::gen_pretrain_testset(
                         ws.pretrain_pool(), k, p.test_lengths, p.test_n_per_cell, combos, ood,
                         ws.seed("test/pretrain/k" + std::to_string(k) + (ood ? "/ood" : "/id")))});
    }
  }
  return out;
}

std::vector<CompetenceReport> base_report(Workspace& ws, const model::Checkpoint& base) {
  const auto held = taskgen::DatasetSpec{}.held_out_lengths;
  const std::set<int> ood_lengths(held.begin(), held.end());
  const adapt::AdaptedModel m = adapt::attach_none(base);
  eval::ReportHeader h;
  h.method = "base";
  h.seed = ws.config().pretrain.train.seed;
  std::vector<CompetenceReport> out;
  CompetenceReport all;
  bool first = true;
  for (const auto& g : base_grids(ws)) {
    auto r = g.ood_combo ? eval::competence(m, g.ds, Split::kOodCombo, h)
                         : eval::competence(m, g.ds, Split::kId, h, ood_lengths);
    if (first) {
      all = r;
      first = false;
    } else {
      eval::append_cells(all, r);
    }
  }
  out.push_back(all);
  const auto& p = ws.config().pretrain;
  for (Skill s : ws.pretrain_pool()) {
    eval::ReportHeader ho = h;
    ho.method = "base-per-op";
    ho.target_skill = skills::token(s);
    const auto ds = taskgen::gen_pretrain_testset(
        skills::SkillSet({s}, skills::Role::kPretrain), 1, p.test_lengths, p.test_n_per_cell, {},
        false, ws.seed("test/pretrain/per-op/" + skill_name(s)));
    out.push_back(eval::competence(m, ds, Split::kId, ho, ood_lengths));
  }
  return out;
}

}  // namespace

CommandResult cmd_gen(Workspace& ws) {
  CommandResult result;
  const fs::path root = ws.options().out / "data";
  const std::string digest = sha256_hex(to_json(ws.config()).dump());
  ws.run_once("gen", "gen", digest, {}, [&] {
    std::vector<fs::path> outs;
    auto put = [&](const SkillCenteredDataset& ds, const fs::path& rel) {
      const fs::path p = root / rel;
      taskgen::write_dataset(ds, p);
      outs.push_back(p);
      outs.push_back(taskgen::manifest_path(p));
    };
    put(ws.pretrain_corpus(1), "pretrain/phase1.jsonl");
    put(ws.pretrain_corpus(2), "pretrain/phase2.jsonl");
    for (const auto& g : base_grids(ws)) {
      put(g.ds, "pretrain/test-k" + std::to_string(g.k) + (g.ood_combo ? "-ood-combo" : "-id") +
                    ".jsonl");
    }
    const auto& c = ws.config();
    for (Skill s : c.sweep.new_skills) {
      put(ws.single_op_testset(s), "tests/single-" + skill_name(s) + ".jsonl");
      for (Skill h : ws.held_out_skills()) {
        const std::string pair = skill_name(s) + "-held-" + skill_name(h);
        put(ws.adapter_dataset(s, h, c.adapters.samples, c.adapters.k_max),
            "adapters/" + pair + "-k" + std::to_string(c.adapters.k_max) + ".jsonl");
        for (int k : {2, 3}) {
          for (bool ood : {false, true}) {
            const auto full = ws.permutation_testset(s, h, k, ood);
            for (int len : c.eval.lengths) {
              SkillCenteredDataset part = full;
              part.samples.clear();
              for (const auto& smp : full.samples) {
                if (static_cast<int>(smp.input.size()) == len) part.samples.push_back(smp);
              }
              part.spec.seq_lengths = {len};
              part.spec.n_samples = part.samples.size();
              put(part, "tests/perm-" + pair + "-k" + std::to_string(k) + (ood ? "-ood" : "-id") +
                            "-len" + std::to_string(len) + ".jsonl");
            }
          }
        }
      }
    }
    put(ws.joint_testset(), "tests/joint-SHIFT-INV-POL.jsonl");
    return outs;
  }, result);
  return result;
}

CommandResult cmd_pretrain(Workspace& ws) {
  CommandResult result;
  const fs::path dir = ws.base_dir();
  ws.run_once("pretrain", "pretrain", ws.pretrain_digest(), {}, [&] {
    const auto p1 = ws.pretrain_corpus(1);
    const auto p2 = ws.pretrain_corpus(2);
    model::TrainConfig tc = ws.config().pretrain.train;
    tc.seed = ws.seed("train/pretrain");
    // A run interrupted after saving its checkpoint resumes at evaluation.
    const fs::path saved = dir / "checkpoint" / "manifest.json";
    if (fs::exists(saved)) {
      auto ckpt = model::load_checkpoint(dir / "checkpoint");
      const auto& m = ckpt.metadata;
      if (model::to_json(ckpt.config) == model::to_json(ws.config().model) &&
          m.value("phase1_digest", "") == digest_of(p1) &&
          m.value("phase2_digest", "") == digest_of(p2) &&
          m.value("train_config", nlohmann::json()) == model::to_json(tc)) {
        ws.log("reusing trained checkpoint " + ckpt.digest.substr(0, 16));
        const auto reports = base_report(ws, ckpt);
        eval::write_report(reports, dir / "report.csv");
        return std::vector<fs::path>{saved, dir / "checkpoint" / "payload.bin", dir / "report.csv"};
      }
    }
    const auto t0 = std::chrono::steady_clock::now();
    int phase_epochs = 0;
    auto ckpt = model::train_base(ws.config().model, p1, p2, tc, [&](const model::EpochLog& l) {
      ++phase_epochs;
      ws.log("pretrain epoch " + std::to_string(phase_epochs) + " loss " + fmt_rate(l.mean_loss) +
             " (" + fmt_rate(seconds_since(t0)) + " s)");
    });
    ckpt.metadata["phase1_digest"] = digest_of(p1);
    ckpt.metadata["phase2_digest"] = digest_of(p2);
    model::save_checkpoint(dir / "checkpoint", ckpt);
    const auto reports = base_report(ws, ckpt);
    eval::write_report(reports, dir / "report.csv");
    return std::vector<fs::path>{dir / "checkpoint" / "manifest.json",
                                 dir / "checkpoint" / "payload.bin", dir / "report.csv"};
  }, result);
  return result;
}

CommandResult cmd_p2(Workspace& ws) { return run_adapter_jobs(ws, p2_jobs(ws.config())); }

namespace {

struct P3Point {
  std::string id;
  std::string digest;
  fs::path dir;
  bool composed = false;
  Skill held_out = Skill::kAdd;
  int icl_n = 0;
  AdapterJob shift;
  AdapterJob inv_pol;
};

std::vector<P3Point> p3_points(Workspace& ws, const std::string& joint_digest) {
  const auto& c = ws.config();
  std::vector<P3Point> out;
  for (Skill h : ws.held_out_skills()) {
    P3Point p;
    p.composed = true;
    p.held_out = h;
    p.shift = make_job(c, "p2", Skill::kShift, h, Method::kNeologism);
    p.inv_pol = make_job(c, "p2", Skill::kInvPol, h, Method::kNeologism);
    seed_job(c, p.shift);
    seed_job(c, p.inv_pol);
    p.digest = sha256_hex(ws.job_digest(p.shift) + ws.job_digest(p.inv_pol) + joint_digest);
    p.id = "p3/composed/held-" + skill_name(h);
    p.dir = ws.options().out / "p3" / short_digest(p.digest);
    out.push_back(p);
  }
  for (int n : c.p3.icl_n) {
    P3Point p;
    p.icl_n = n;
    p.digest = sha256_hex(ws.base().digest + joint_digest + "icl" + std::to_string(n) + "/" +
                          std::to_string(c.p3.icl_pool_size) + "/" +
                          std::to_string(ws.seed("icl/examples")));
    p.id = "p3/icl/N" + std::to_string(n);
    p.dir = ws.options().out / "p3" / short_digest(p.digest);
    out.push_back(p);
  }
  return out;
}

bool job_done(Workspace& ws, const AdapterJob& job) {
  const auto rec = ws.ledger().latest("", ws.job_digest(job));
  return rec && rec->status == "ok";
}

}  // namespace

CommandResult cmd_p3(Workspace& ws) {
  CommandResult result;
  const auto& c = ws.config();
  const model::Checkpoint* base = nullptr;
  try {
    base = &ws.base();
  } catch (const DependencyError& e) {
    result.requested = 1;
    result.failed = 1;
    result.failures.push_back(e.what());
    return result;
  }
  const auto joint = ws.joint_testset();
  const std::string joint_digest = digest_of(joint);
  for (const auto& p : p3_points(ws, joint_digest)) {
    if (p.composed) {
      bool ready = true;
      for (const auto* j : {&p.shift, &p.inv_pol}) {
        if (!job_done(ws, *j)) {
          ready = false;
          ++result.requested;
          ++result.failed;
          result.failures.push_back(p.id + ": dependency missing, P2 neologism " + j->id() +
                                    " has not completed (run p2 first)");
          ws.log(result.failures.back());
        }
      }
      if (!ready) continue;
      ws.run_once(p.id, "p3", p.digest,
                  {{"shift", ws.job_digest(p.shift)},
                   {"inv_pol", ws.job_digest(p.inv_pol)},
                   {"joint", joint_digest}},
                  [&] {
                    const auto na = adapt::load_adapter(ws.job_dir(p.shift) / "adapter", *base);
                    const auto nb = adapt::load_adapter(ws.job_dir(p.inv_pol) / "adapter", *base);
                    const auto m = adapt::attach_neologisms(*base, {&*na.neologism, &*nb.neologism});
                    eval::ReportHeader hd;
                    hd.method = "composed-neologism";
                    hd.target_skill = skills::token(Skill::kShift) + "+" + skills::token(Skill::kInvPol);
                    hd.held_out_skill = skills::token(p.held_out);
                    hd.seed = c.seed;
                    hd.adapter_digest = sha256_hex(na.digest() + nb.digest());
                    eval::write_report({eval::competence(m, joint, Split::kOodSkill, hd)},
                                       p.dir / "report.csv");
                    return std::vector<fs::path>{p.dir / "report.csv"};
                  },
                  result);
      continue;
    }
    ws.run_once(p.id, "p3", p.digest, {{"base", base->digest}, {"joint", joint_digest}}, [&] {
      // Pools are single-op, so the held-out skill passed here plays no role.
      const auto pa = ws.icl_pool(Skill::kShift, Skill::kAdd);
      const auto pb = ws.icl_pool(Skill::kInvPol, Skill::kAdd);
      const eval::IclConfig icl{p.icl_n, ws.seed("icl/examples"), c.p3.icl_pool_size};
      eval::ReportHeader hd;
      hd.method = "icl-N" + std::to_string(p.icl_n);
      hd.target_skill = skills::token(Skill::kShift) + "+" + skills::token(Skill::kInvPol);
      hd.seed = icl.example_seed;
      const auto r = eval::icl_eval(*base, icl, pa, pb, joint, hd);
      eval::write_report({r}, p.dir / "report.csv");
      nlohmann::json meta = r.metadata;
      meta["cell_errors"] = nlohmann::json::array();
      for (const auto& cell : r.cells) {
        if (!cell.error.empty()) {
          meta["cell_errors"].push_back({{"seq_len", cell.seq_len}, {"error", cell.error}});
        }
      }
      write_text_file(p.dir / "metadata.json", meta.dump(2) + "\n");
      return std::vector<fs::path>{p.dir / "report.csv", p.dir / "metadata.json"};
    }, result);
  }
  return result;
}

CommandResult cmd_ablate(Workspace& ws, const std::string& which) {
  return run_adapter_jobs(ws, ablation_jobs(ws.config(), which));
}


std::string family_label(const AdapterJob& job) {
  const std::string m = adapt::method_name(job.config.method);
  if (job.family == "length") return m + "-l" + std::to_string(job.config.length);
  if (job.family == "kmax") return m + "-kmax" + std::to_string(job.k_max);
  if (job.family == "init") return m + "-init-" + adapt::init_mode_name(job.config.init_mode);
  if (job.family == "noise") {
    return job.with_noise ? m + "-noise" + fmt_rate(job.noise_rate) : m + "-noise-baseline";
  }
  return m;
}

namespace {

constexpr int kWindowLo = 2;
constexpr int kWindowHi = 4;

/// Pooled accuracy over cells with chain length k, the given split and a
/// sequence length inside the summary window; nullopt if there are none.
std::optional<double> window_accuracy(const std::vector<CompetenceReport>& reports, int k,
                                      Split split, int lo = kWindowLo, int hi = kWindowHi) {
  std::size_t n = 0;
  std::size_t c = 0;
  for (const auto& r : reports) {
    for (const auto& cell : r.cells) {
      if (cell.k != k || cell.split != split || cell.seq_len < lo || cell.seq_len > hi) continue;
      n += cell.n;
      c += cell.correct;
    }
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(c) / static_cast<double>(n);
}

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json mean_std_json(const std::vector<double>& xs) {
  const auto [m, sd] = eval::mean_std(xs);
  return {{"mean", m}, {"std", sd}, {"runs", xs.size()}};
}

std::vector<CompetenceReport> labelled(std::vector<CompetenceReport> rs, const std::string& label) {
  for (auto& r : rs) r.method = label;
  return rs;
}

bool same_rows(const std::vector<CompetenceReport>& a, const std::vector<CompetenceReport>& b) {
  auto rows = [](const std::vector<CompetenceReport>& rs) {
    std::vector<std::tuple<int, int, int, std::size_t, std::size_t, std::string>> out;
    for (const auto& r : rs) {
      for (const auto& c : r.cells) {
        out.emplace_back(c.k, c.seq_len, static_cast<int>(c.split), c.n, c.correct, r.adapter_digest);
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  return !a.empty() && rows(a) == rows(b);
}

}  // namespace

Summary summarize(Workspace& ws) {
  Summary s;
  auto& v = s.values;
  const auto& c = ws.config();

  // Base model.
  const auto pre = ws.ledger().latest("", ws.pretrain_digest());
  if (pre && pre->status == "ok") {
    const auto reports = eval::read_report(ws.base_dir() / "report.csv");
    std::vector<CompetenceReport> base;
    for (const auto& r : reports) {
      if (r.method == "base") base.push_back(r);
    }
    double min_id = 1.0;
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& r : base) {
      for (const auto& cell : r.cells) {
        if ((cell.k == 1 || cell.k == 2) && cell.split == Split::kId && cell.seq_len >= kWindowLo &&
            cell.seq_len <= kWindowHi) {
          min_id = std::min(min_id, cell.accuracy());
        }
      }
    }
    v["pretrain"]["id_c1_c2_len2_4_min"] = min_id;
    v["pretrain"]["ood_length5_c1"] = opt_json(window_accuracy(base, 1, Split::kOodLength, 5, 5));
    for (int k = 1; k <= 3; ++k) {
      v["pretrain"]["id_len2_4"][std::to_string(k)] = opt_json(window_accuracy(base, k, Split::kId));
    }
    v["pretrain"]["ood_combo_c3_len2_4"] = opt_json(window_accuracy(base, 3, Split::kOodCombo));
    v["pretrain"]["base_digest"] = ws.base().digest;
  } else {
    s.missing.push_back("pretrain");
  }

  auto collect = [&](const std::vector<AdapterJob>& jobs) {
    std::vector<std::pair<AdapterJob, std::vector<CompetenceReport>>> out;
    for (const auto& job : jobs) {
      if (pre && pre->status == "ok" && job_done(ws, job)) {
        out.emplace_back(job, labelled(job_report(ws, job), family_label(job)));
      } else {
        s.missing.push_back(job.id());
      }
    }
    return out;
  };
  if (!pre || pre->status != "ok") {
    for (const auto& j : p2_jobs(c)) s.missing.push_back(j.id());
    for (const auto& j : ablation_jobs(c, "all")) s.missing.push_back(j.id());
    v["complete"] = false;
    return s;
  }

  // P2.
  const auto p2 = collect(p2_jobs(c));
  {
    std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> acc;
    for (const auto& [job, rs] : p2) {
      const std::string sk = skill_name(job.new_skill);
      const std::string m = adapt::method_name(job.config.method);
      auto& slot = v["p2"][sk][m]["held_out"][skill_name(job.held_out)];
      for (int k : {2, 3}) {
        for (Split sp : {Split::kId, Split::kOodSkill}) {
          const std::string key = (sp == Split::kId ? "id_k" : "ood_k") + std::to_string(k);
          const auto a = window_accuracy(rs, k, sp);
          slot[key] = opt_json(a);
          if (a) acc[sk][m][key].push_back(*a);
        }
      }
    }
    for (const auto& [sk, methods] : acc) {
      for (const auto& [m, keys] : methods) {
        for (const auto& [key, xs] : keys) v["p2"][sk][m]["mean"][key] = mean_std_json(xs);
      }
    }
  }

  // P3.
  const auto joint_digest = digest_of(ws.joint_testset());
  {
    std::vector<double> composed;
    std::map<int, std::vector<double>> composed_trace;
    nlohmann::json icl = nlohmann::json::object();
    std::map<int, std::vector<double>> icl_trace;
    std::optional<double> best_icl;
    for (const auto& p : p3_points(ws, joint_digest)) {
      const auto rec = ws.ledger().latest("", p.digest);
      if (!rec || rec->status != "ok") {
        s.missing.push_back(p.id);
        continue;
      }
      const auto rs = eval::read_report(p.dir / "report.csv");
      const auto a = window_accuracy(rs, 2, Split::kOodSkill);
      for (const auto& r : rs) {
        for (const auto& cell : r.cells) {
          if (cell.n == 0) continue;
          (p.composed ? composed_trace : icl_trace)[cell.seq_len].push_back(cell.accuracy());
        }
      }
      if (p.composed) {
        if (a) composed.push_back(*a);
      } else {
        icl[std::to_string(p.icl_n)] = opt_json(a);
        if (a && (!best_icl || *a > *best_icl)) best_icl = a;
      }
    }
    v["p3"]["composed_len2_4"] = mean_std_json(composed);
    v["p3"]["icl_len2_4"] = icl;
    v["p3"]["best_icl_len2_4"] = opt_json(best_icl);
    for (const auto& [len, xs] : composed_trace) v["p3"]["trace"]["composed-neologism"][std::to_string(len)] = mean_std_json(xs);
    for (const auto& [len, xs] : icl_trace) v["p3"]["trace"]["icl"][std::to_string(len)] = mean_std_json(xs);
  }

  // Ablations.
  const auto length = collect(ablation_jobs(c, "length"));
  {
    std::map<std::string, std::vector<std::pair<int, double>>> ood_by_l;
    for (const auto& [job, rs] : length) {
      const std::string sk = skill_name(job.new_skill);
      const auto id = window_accuracy(rs, 2, Split::kId);
      const auto ood = window_accuracy(rs, 2, Split::kOodSkill);
      v["ablate"]["length"][sk][std::to_string(job.config.length)] = {{"id_k2", opt_json(id)},
                                                                     {"ood_k2", opt_json(ood)}};
      if (ood) ood_by_l[sk].emplace_back(job.config.length, *ood);
    }
    for (auto& [sk, pts] : ood_by_l) {
      std::sort(pts.begin(), pts.end());
      const auto best = std::max_element(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
        return a.second < b.second;
      });
      const bool interior = best != pts.begin() && best + 1 != pts.end();
      v["ablate"]["length"][sk]["trend"] = interior ? "pass" : "observe";
    }
  }
  auto table = [&](const std::string& family, const std::vector<std::pair<AdapterJob, std::vector<CompetenceReport>>>& runs,
                   const std::function<std::string(const AdapterJob&)>& variant) {
    std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> acc;
    for (const auto& [job, rs] : runs) {
      for (int k : {2, 3}) {
        const auto a = window_accuracy(rs, k, Split::kOodSkill);
        if (a) acc[skill_name(job.new_skill)][variant(job)]["ood_k" + std::to_string(k)].push_back(*a);
      }
    }
    for (const auto& [sk, vs] : acc) {
      for (const auto& [var, keys] : vs) {
        for (const auto& [key, xs] : keys) v["ablate"][family][sk][var][key] = mean_std_json(xs);
      }
    }
  };
  const auto kmax = collect(ablation_jobs(c, "kmax"));
  table("kmax", kmax, [](const AdapterJob& j) { return std::to_string(j.k_max); });
  for (const auto& sk : c.sweep.new_skills) {
    const auto& t = v["ablate"]["kmax"][skill_name(sk)];
    if (t.contains("1") && t.contains("3") && t["1"].contains("ood_k2") && t["3"].contains("ood_k2")) {
      const bool up = t["3"]["ood_k2"]["mean"].get<double>() >= t["1"]["ood_k2"]["mean"].get<double>();
      v["ablate"]["kmax"][skill_name(sk)]["trend"] = up ? "pass" : "observe";
    }
  }
  const auto init = collect(ablation_jobs(c, "init"));
  table("init", init, [](const AdapterJob& j) { return adapt::init_mode_name(j.config.init_mode); });

  const auto noise = collect(ablation_jobs(c, "noise"));
  {
    std::vector<CompetenceReport> baseline;
    std::vector<CompetenceReport> rate0;
    for (const auto& [job, rs] : noise) {
      const std::string key = job.with_noise ? fmt_rate(job.noise_rate) : "baseline";
      for (int k : {1, 2, 3}) {
        v["ablate"]["noise"][key]["id_k" + std::to_string(k)] = opt_json(window_accuracy(rs, k, Split::kId));
        if (k > 1) {
          v["ablate"]["noise"][key]["ood_k" + std::to_string(k)] =
              opt_json(window_accuracy(rs, k, Split::kOodSkill));
        }
      }
      if (!job.with_noise) baseline = rs;
      if (job.with_noise && job.noise_rate == 0.0) rate0 = rs;
    }
    v["ablate"]["noise"]["rate0_equals_baseline"] = same_rows(baseline, rate0);
  }
  v["complete"] = s.missing.empty();
  return s;
}

namespace {

std::vector<CompetenceReport> flatten(
    const std::vector<std::pair<AdapterJob, std::vector<CompetenceReport>>>& runs) {
  std::vector<CompetenceReport> out;
  for (const auto& [job, rs] : runs) out.insert(out.end(), rs.begin(), rs.end());
  return out;
}

}  // namespace

CommandResult cmd_report(Workspace& ws) {
  CommandResult result;
  for (const auto& rec : ws.ledger().records()) {
    if (rec.status == "ok" && !outputs_intact(rec, ws.options().out)) {
      throw DigestError("artifact of " + rec.id + " does not match its ledger digest");
    }
  }
  const auto& c = ws.config();
  const fs::path dir = ws.options().out / "report";
  fs::create_directories(dir);
  const Summary summary = summarize(ws);

  std::vector<CompetenceReport> all;
  auto emit = [&](const std::string& name, const std::vector<CompetenceReport>& rs, bool merged) {
    write_text_file(dir / (name + ".csv"), eval::report_csv(rs));
    if (merged) write_text_file(dir / (name + "_merged.csv"), eval::merged_csv(eval::merge_reports(rs)));
    all.insert(all.end(), rs.begin(), rs.end());
  };

  const bool have_base = std::find(summary.missing.begin(), summary.missing.end(), "pretrain") ==
                         summary.missing.end();
  if (have_base) {
    const auto reports = eval::read_report(ws.base_dir() / "report.csv");
    std::vector<CompetenceReport> base, per_op;
    for (const auto& r : reports) (r.method == "base" ? base : per_op).push_back(r);
    emit("table4_base", base, false);
    emit("figA1_per_op", per_op, false);
    auto gather = [&](const std::vector<AdapterJob>& jobs) {
      std::vector<std::pair<AdapterJob, std::vector<CompetenceReport>>> out;
      for (const auto& j : jobs) {
        if (job_done(ws, j)) out.emplace_back(j, labelled(job_report(ws, j), family_label(j)));
      }
      return out;
    };
    emit("fig4_p2", flatten(gather(p2_jobs(c))), true);
    std::vector<CompetenceReport> p3;
    for (const auto& p : p3_points(ws, digest_of(ws.joint_testset()))) {
      const auto rec = ws.ledger().latest("", p.digest);
      if (rec && rec->status == "ok") {
        const auto rs = eval::read_report(p.dir / "report.csv");
        p3.insert(p3.end(), rs.begin(), rs.end());
      }
    }
    emit("fig5_p3", p3, true);
    emit("fig6_length", flatten(gather(ablation_jobs(c, "length"))), false);
    emit("table5_kmax", flatten(gather(ablation_jobs(c, "kmax"))), true);
    emit("table6_init", flatten(gather(ablation_jobs(c, "init"))), true);
    emit("figA6_noise", flatten(gather(ablation_jobs(c, "noise"))), false);
  }
  write_text_file(dir / "all_rows.csv", eval::report_csv(all));
  write_text_file(dir / "summary.json", summary.values.dump(2) + "\n");
  std::string missing;
  for (const auto& m : summary.missing) missing += m + "\n";
  write_text_file(dir / "missing.txt", missing);
  result.requested = 1;
  result.completed = 1;
  ws.log("report written to " + dir.string() + " (" + std::to_string(summary.missing.size()) +
         " missing points)");
  return result;
}

}  // namespace skillneo::harness
