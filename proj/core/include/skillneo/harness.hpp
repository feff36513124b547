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
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillneo/adapt.hpp"
#include "skillneo/checkpoint.hpp"
#include "skillneo/eval.hpp"
#include "skillneo/taskgen.hpp"

namespace skillneo::harness {

using skills::Skill;

struct PretrainSettings {
  std::size_t phase1_samples = 100000;
  std::size_t phase2_samples = 200000;
  double held_out_combo_fraction = 0.25;
  std::size_t test_n_per_cell = 50;
  std::vector<int> test_lengths = {2, 3, 4, 5, 6, 7, 8, 9};
  model::TrainConfig train;
};

struct AdapterSettings {
  std::size_t samples = 30000;
  int k_max = 3;
  std::map<adapt::Method, adapt::AdapterTrainConfig> methods;
};

struct EvalSettings {
  std::size_t n_per_cell = 50;
  std::vector<int> lengths = {2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<int> ks = {1, 2, 3};
};

struct SweepSettings {
  std::vector<Skill> new_skills = {Skill::kShift, Skill::kInvPol};
  std::vector<Skill> held_out;  // defaults to every candidate
  std::vector<adapt::Method> methods = {adapt::Method::kNeologism, adapt::Method::kPrefix,
                                        adapt::Method::kLowRank};
};

struct P3Settings {
  std::vector<int> lengths = {2, 3, 4, 5, 6, 7, 8};
  std::size_t n_per_length = 50;
  std::vector<int> icl_n = {5, 10, 20};
  std::size_t icl_pool_size = 10000;
};

struct AblationSettings {
  // length
  std::vector<int> lengths = {1, 5, 10, 20, 50, 100, 200};
  Skill length_held_out = Skill::kAdd;
  std::vector<Skill> length_new_skills = {Skill::kShift, Skill::kInvPol};
  int length_k_max = 2;
  int length_epochs = 1;
  // k_max
  std::vector<int> k_max_values = {1, 2, 3};
  int k_max_epochs = 2;
  std::vector<Skill> k_max_held_out;  // defaults to the sweep's held-out list
  // init
  std::vector<adapt::InitMode> init_modes = {adapt::InitMode::kMeanOfPretrainOps,
                                             adapt::InitMode::kRandom};
  int init_epochs = 2;
  std::vector<Skill> init_held_out;  // defaults to the sweep's held-out list
  // noise (length-ablation training settings, one length)
  std::vector<double> noise_rates = {0.0, 0.1, 0.2, 0.4, 0.6};
  int noise_length = 5;
  Skill noise_new_skill = Skill::kInvPol;
  Skill noise_held_out = Skill::kAdd;
};

struct ExperimentConfig {
  std::string experiment_id = "desk";
  std::uint64_t seed = 20260101;
  std::optional<std::filesystem::path> base_checkpoint;
  model::ModelConfig model;
  PretrainSettings pretrain;
  AdapterSettings adapters;
  EvalSettings eval;
  SweepSettings sweep;
  P3Settings p3;
  AblationSettings ablate;

  const adapt::AdapterTrainConfig& method_config(adapt::Method m) const;
};

/// Desk-scale defaults.
ExperimentConfig default_config();
/// Fields absent from `j` keep their default values.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

/// One row of the ledger.
struct RunRecord {
  std::string id;
  std::string kind;
  std::string config_digest;
  nlohmann::json inputs = nlohmann::json::object();   // name -> digest
  nlohmann::json outputs = nlohmann::json::object();  // relative path -> digest
  double wall_time_s = 0.0;
  std::string status;  // "ok" or "failed"
  std::string error;
};

nlohmann::json to_json(const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

/// Append-only JSON-lines file of run records. Thread safe.
class RunLedger {
 public:
  explicit RunLedger(std::filesystem::path path);

  void append(const RunRecord& r);
  std::vector<RunRecord> records() const;
  /// Latest record with this config digest: completed under any id, or
  /// failed under `id` (any id when `id` is empty).
  std::optional<RunRecord> latest(const std::string& id,
                                  const std::string& config_digest) const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::vector<RunRecord> cache_;
};

struct RunOptions {
  std::filesystem::path out = "out";
  int workers = 1;
  /// Retry points whose latest ledger record failed. Completed points are
  /// always skipped.
  bool resume = false;
  std::function<void(const std::string&)> log;
};

struct CommandResult {
  std::size_t requested = 0;
  std::size_t completed = 0;  // ran now or skipped as already done
  std::size_t skipped = 0;
  std::size_t failed = 0;
  std::vector<std::string> failures;

  bool ok() const { return failed == 0; }
  void merge(const CommandResult& other);
};

/// One adapter training run plus its evaluation.
struct AdapterJob {
  std::string family;  // "p2", "length", "kmax", "init", "noise"
  Skill new_skill = Skill::kShift;
  Skill held_out = Skill::kAdd;
  adapt::AdapterTrainConfig config;
  std::size_t samples = 0;
  int k_max = 3;
  double noise_rate = 0.0;
  bool with_noise = false;  // run the noise-injection step, even at rate 0

  /// Everything that determines the trained weights and the report.
  nlohmann::json content() const;
  /// Human-readable run id, e.g. "p2/SHIFT/held-ADD/neologism-l20".
  std::string id() const;
};

/// Output paths and datasets shared by the commands.
class Workspace {
 public:
  Workspace(ExperimentConfig config, RunOptions options);

  const ExperimentConfig& config() const { return config_; }
  const RunOptions& options() const { return options_; }
  RunLedger& ledger() { return ledger_; }
  void log(const std::string& msg) const;

  std::uint64_t seed(const std::string& key) const;
  skills::SkillSet pretrain_pool() const;
  std::vector<Skill> held_out_skills() const;
  taskgen::ComboSet held_out_combos() const;

  taskgen::SkillCenteredDataset pretrain_corpus(int phase) const;
  taskgen::SkillCenteredDataset adapter_dataset(Skill new_skill, Skill held_out,
                                                std::size_t samples, int k_max) const;
  /// k = 1 test rows ("[S]x=") for `new_skill`, per length.
  taskgen::SkillCenteredDataset single_op_testset(Skill new_skill) const;
  taskgen::SkillCenteredDataset permutation_testset(Skill new_skill, Skill held_out,
                                                    int k, bool ood) const;
  taskgen::SkillCenteredDataset joint_testset() const;
  std::vector<taskgen::Sample> icl_pool(Skill skill, Skill held_out) const;

  std::string pretrain_digest() const;
  std::filesystem::path base_dir() const;
  /// Loads the base checkpoint (config override or the pretrain output);
  /// throws DependencyError if it does not exist yet.
  const model::Checkpoint& base();

  std::string job_digest(const AdapterJob& job);
  std::filesystem::path job_dir(const AdapterJob& job);

  /// Runs `fn` unless the ledger already has a completed record for
  /// `digest` whose outputs still match. `fn` returns the paths of the
  /// files it wrote, all under the output directory.
  bool run_once(const std::string& id, const std::string& kind, const std::string& digest,
                const nlohmann::json& inputs,
                const std::function<std::vector<std::filesystem::path>()>& fn,
                CommandResult& result);

 private:
  ExperimentConfig config_;
  RunOptions options_;
  RunLedger ledger_;
  std::mutex base_mu_;
  std::optional<model::Checkpoint> base_;
};

/// Trains and evaluates one adapter job (idempotent through the ledger).
CommandResult run_adapter_job(Workspace& ws, const AdapterJob& job);
/// Runs jobs on the worker pool.
CommandResult run_adapter_jobs(Workspace& ws, const std::vector<AdapterJob>& jobs);
/// Reads the report a completed job wrote.
std::vector<eval::CompetenceReport> job_report(Workspace& ws, const AdapterJob& job);

std::vector<AdapterJob> p2_jobs(const ExperimentConfig& c);
std::vector<AdapterJob> ablation_jobs(const ExperimentConfig& c, const std::string& which);

CommandResult cmd_gen(Workspace& ws);
CommandResult cmd_pretrain(Workspace& ws);
CommandResult cmd_p2(Workspace& ws);
CommandResult cmd_p3(Workspace& ws);
/// which: "length", "kmax", "init", "noise" or "all".
CommandResult cmd_ablate(Workspace& ws, const std::string& which);
/// Headline numbers of every completed experiment family, plus the list
/// of sweep points that have not completed.
struct Summary {
  nlohmann::json values = nlohmann::json::object();
  std::vector<std::string> missing;
};
Summary summarize(Workspace& ws);

/// Report label used for a job in consolidated tables,
/// e.g. "neologism-l5" for a length-ablation point.
std::string family_label(const AdapterJob& job);

/// Consolidated tables under <out>/report. Throws DigestError if an
/// artifact no longer matches the ledger.
CommandResult cmd_report(Workspace& ws);

}  // namespace skillneo::harness
