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
// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Sweep outputs are cached in --work, so a
// second run only re-evaluates the cheap checks.
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "checks.hpp"
#include "skillneo/checkpoint.hpp"
#include "skillneo/harness.hpp"

namespace {

using namespace skillneo;
using nlohmann::json;
namespace fs = std::filesystem;

struct Line {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<Line> g_lines;

void emit(const std::string& name, bool pass, const std::string& detail) {
  g_lines.push_back({name, pass, detail});
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Summary numbers are null when a cell is missing; treat that as failing.
double num(const json& j, double missing = -1.0) {
  return j.is_number() ? j.get<double>() : missing;
}

const json& at(const json& j, std::initializer_list<const char*> path) {
  static const json null_json;
  const json* cur = &j;
  for (const char* key : path) {
    if (!cur->is_object() || !cur->contains(key)) return null_json;
    cur = &(*cur)[key];
  }
  return *cur;
}

void log_line(const std::string& msg) {
  char stamp[32];
  const std::time_t now = std::time(nullptr);
  std::strftime(stamp, sizeof(stamp), "%H:%M:%S", std::localtime(&now));
  std::fprintf(stderr, "[%s] %s\n", stamp, msg.c_str());
}

void check_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = checks::oracle_exhaustive();
  const double s = seconds_since(t0);
  emit("skill oracle exhaustive", r.pass && s < 5.0, r.detail + ", " + fmt("%.2f s", s));
}

void check_identities() {
  const auto r = checks::algebraic_identities(10000, 20260101);
  emit("algebraic identities", r.pass, r.detail);
}

void check_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  for (auto m : {checks::GradMask::kSoftTokens, checks::GradMask::kPrefix,
                 checks::GradMask::kLowRank, checks::GradMask::kFull}) {
    const auto r = checks::grad_check_mask(m, 128, 7);
    ok = ok && r.coords_checked >= 100 && r.max_rel_error <= 1e-3 && r.max_frozen_grad == 0.0;
    detail += checks::grad_mask_name(m) + " " + fmt("%.2e", r.max_rel_error) + " (" +
              std::to_string(r.coords_checked) + " coords); ";
  }
  const double s = seconds_since(t0);
  emit("gradient correctness", ok && s < 60.0, detail + fmt("%.1f s", s));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string work = "acceptance-work";
  std::string config_path;
  bool quiet = false;
  app.add_option("--work", work, "Cached output directory")->capture_default_str();
  app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_flag("-q,--quiet", quiet, "No progress log");
  CLI11_PARSE(app, argc, argv);

  check_oracle();
  check_identities();
  check_gradients();

  try {
    const harness::ExperimentConfig config = config_path.empty()
                                                 ? harness::default_config()
                                                 : harness::load_config(config_path);
    harness::RunOptions opts;
    opts.out = work;
    opts.resume = true;
    if (quiet) {
      opts.log = [](const std::string&) {};
    } else {
      opts.log = log_line;
    }
    harness::Workspace ws(config, opts);

    const auto pre = harness::cmd_pretrain(ws);
    const model::Checkpoint& base = ws.base();
    const std::string base_digest = model::parameters_digest(base.params);

    // Adapter runs in this binary: overfit checks below plus the sweeps.
    {
      double worst = 0.0;
      for (auto s : {skills::Skill::kAsc, skills::Skill::kAdd, skills::Skill::kRev,
                     skills::Skill::kPol}) {
        worst = std::max(worst, checks::soft_token_equivalence(base, s));
      }
      emit("soft-token equivalence", worst <= 1e-5, "max |logit diff| " + fmt("%.2e", worst));
    }

    bool frozen = base_digest == base.digest;
    {
      const auto t0 = std::chrono::steady_clock::now();
      struct Case {
        adapt::Method method;
        long max_steps;
        double lr;
      };
      bool ok = true;
      std::string detail;
      for (const Case& c : {Case{adapt::Method::kNeologism, 500, 5e-3},
                            Case{adapt::Method::kPrefix, 2000, 5e-3},
                            Case{adapt::Method::kLowRank, 2000, 1e-4}}) {
        const auto r = checks::overfit(base, c.method, c.max_steps, c.lr, 31);
        ok = ok && r.reached && r.steps <= c.max_steps;
        frozen = frozen && r.base_digest_before == base_digest && r.base_digest_after == base_digest;
        detail += adapt::method_name(c.method) + " " + fmt("%.3f", r.accuracy) + " at " +
                  std::to_string(r.steps) + " steps; ";
      }
      const double s = seconds_since(t0);
      emit("overfit sanity", ok && s < 300.0, detail + fmt("%.0f s", s));
    }

    // Pretraining.
    auto summary = harness::summarize(ws);
    {
      const auto& p = summary.values["pretrain"];
      const double id = num(at(p, {"id_c1_c2_len2_4_min"}));
      const double ood5 = num(at(p, {"ood_length5_c1"}));
      emit("desk-scale pretraining", pre.ok() && id >= 0.90 && ood5 >= 0.70,
           "min ID C1/C2 len 2-4 " + fmt("%.3f", id) + ", OOD-length 5 C1 " + fmt("%.3f", ood5));
    }

    const auto p2 = harness::cmd_p2(ws);
    const auto p3 = harness::cmd_p3(ws);
    const auto ab = harness::cmd_ablate(ws, "all");
    const auto rep = harness::cmd_report(ws);
    summary = harness::summarize(ws);
    frozen = frozen && model::parameters_digest(ws.base().params) == base_digest;
    emit("frozen-base contract", frozen,
         std::string("base digest ") + base_digest.substr(0, 16) +
             (frozen ? " unchanged" : " changed"));

    {
      const auto& m = summary.values["p2"]["SHIFT"];
      const auto& neo = at(m, {"neologism", "mean"});
      const auto& lr = at(m, {"low-rank", "mean"});
      const double id = num(at(neo, {"id_k2", "mean"}));
      const double ood = num(at(neo, {"ood_k2", "mean"}));
      const double lr_ood = num(at(lr, {"ood_k2", "mean"}), 2.0);
      const auto runs = at(neo, {"id_k2", "runs"});
      emit("P2 directional", p2.ok() && id >= 0.85 && ood >= lr_ood,
           "SHIFT len 2-4 over " + runs.dump() + " held-out: neologism ID " + fmt("%.3f", id) +
               ", neologism OOD " + fmt("%.3f", ood) + ", low-rank OOD " + fmt("%.3f", lr_ood) +
               ", prefix OOD " + fmt("%.3f", num(at(m, {"prefix", "mean", "ood_k2", "mean"}))));
    }
    {
      const auto& p = summary.values["p3"];
      const double composed = num(at(p, {"composed_len2_4", "mean"}));
      const double icl = num(at(p, {"best_icl_len2_4"}), 2.0);
      emit("P3 directional", p3.ok() && composed > icl,
           "composed " + fmt("%.3f", composed) + " vs best ICL " + fmt("%.3f", icl));
    }
    {
      bool tables = ab.ok() && rep.ok();
      for (const auto& id : summary.missing) {
        tables = false;
        log_line("missing " + id);
      }
      const auto& a = summary.values["ablate"];
      const bool rate0 = at(a, {"noise", "rate0_equals_baseline"}) == json(true);
      std::string trends;
      for (const char* sk : {"SHIFT", "INV-POL"}) {
        const auto& l = at(a, {"length", sk, "trend"});
        const auto& k = at(a, {"kmax", sk, "trend"});
        if (l.is_string()) trends += std::string(" length/") + sk + " " + l.get<std::string>() + ";";
        if (k.is_string()) trends += std::string(" kmax/") + sk + " " + k.get<std::string>() + ";";
      }
      emit("ablation pipelines", tables && rate0,
           std::string(tables ? "all tables complete" : "tables incomplete") +
               (rate0 ? ", rate-0 row equals baseline" : ", rate-0 row differs") + "; trends:" +
               trends);
    }

    // Determinism: rerun the noise baseline into a fresh directory on the
    // same base checkpoint and compare report rows.
    {
      const fs::path fresh = fs::path(work) / "determinism";
      fs::remove_all(fresh);
      harness::ExperimentConfig c2 = config;
      c2.base_checkpoint = ws.base_dir() / "checkpoint";
      harness::RunOptions o2 = opts;
      o2.out = fresh;
      harness::Workspace ws2(c2, o2);
      const auto jobs = harness::ablation_jobs(config, "noise");
      const auto& job = jobs.front();
      const auto r = harness::run_adapter_job(ws2, job);
      const std::string a = eval::report_csv(harness::job_report(ws, job));
      const std::string b = r.ok() ? eval::report_csv(harness::job_report(ws2, job)) : "";
      emit("determinism", r.ok() && a == b,
           job.id() + (a == b ? ": identical report rows" : ": report rows differ"));
      fs::remove_all(fresh);
    }
  } catch (const std::exception& e) {
    emit("pipeline", false, std::string("error: ") + e.what());
  }

  std::size_t failed = 0;
  for (const auto& l : g_lines) failed += l.pass ? 0 : 1;
  std::printf("%zu/%zu criteria passed\n", g_lines.size() - failed, g_lines.size());
  return failed == 0 ? 0 : 1;
}
