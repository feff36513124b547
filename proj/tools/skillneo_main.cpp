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
// Command-line driver for the experiment harness.

#include <cstdio>
#include <cstdint>
#include <ctime>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "skillneo/errors.hpp"
#include "skillneo/harness.hpp"

namespace {

using skillneo::harness::CommandResult;
using skillneo::harness::ExperimentConfig;
using skillneo::harness::RunOptions;
using skillneo::harness::Workspace;

void log_line(const std::string& msg) {
  char stamp[32];
  const std::time_t now = std::time(nullptr);
  std::strftime(stamp, sizeof(stamp), "%H:%M:%S", std::localtime(&now));
  std::fprintf(stderr, "[%s] %s\n", stamp, msg.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"skillneo: skill neologism experiments on a tiny transformer"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out = "out";
  long long seed = -1;
  int workers = 1;
  bool resume = false;
  bool quiet = false;
  app.add_option("--config", config_path, "JSON experiment config (defaults when absent)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Global seed, overrides the config");
  app.add_option("--out", out, "Output directory")->capture_default_str();
  app.add_option("--workers", workers, "Concurrent sweep points")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("--resume", resume, "Retry points whose last run failed");
  app.add_flag("-q,--quiet", quiet, "No progress log");

  auto* gen = app.add_subcommand("gen", "Write every dataset and test set as JSON lines");
  auto* pretrain = app.add_subcommand("pretrain", "Train and evaluate the base model");
  auto* p2 = app.add_subcommand("p2", "Adapter sweep over new skills, held-out skills and methods");
  auto* p3 = app.add_subcommand("p3", "Composed neologisms against the few-shot baseline");
  auto* ablate = app.add_subcommand("ablate", "Length, k_max, init and label-noise ablations");
  std::string which = "all";
  ablate->add_option("which", which, "Ablation family")
      ->check(CLI::IsMember({"length", "kmax", "init", "noise", "all"}))
      ->capture_default_str();
  auto* report = app.add_subcommand("report", "Consolidated tables under <out>/report");
  auto* show = app.add_subcommand("config", "Print the effective config as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig config = config_path.empty() ? skillneo::harness::default_config()
                                                   : skillneo::harness::load_config(config_path);
    if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);
    if (*show) {
      std::printf("%s\n", skillneo::harness::to_json(config).dump(2).c_str());
      return 0;
    }
    RunOptions opts;
    opts.out = out;
    opts.workers = workers;
    opts.resume = resume;
    if (!quiet) opts.log = log_line;
    Workspace ws(std::move(config), std::move(opts));

    CommandResult r;
    if (*gen) r = skillneo::harness::cmd_gen(ws);
    if (*pretrain) r = skillneo::harness::cmd_pretrain(ws);
    if (*p2) r = skillneo::harness::cmd_p2(ws);
    if (*p3) r = skillneo::harness::cmd_p3(ws);
    if (*ablate) r = skillneo::harness::cmd_ablate(ws, which);
    if (*report) r = skillneo::harness::cmd_report(ws);

    std::printf("requested %zu, completed %zu (skipped %zu), failed %zu\n", r.requested,
                r.completed, r.skipped, r.failed);
    for (const auto& f : r.failures) std::printf("  failed: %s\n", f.c_str());
    return r.ok() ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
