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
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillneo/adapt.hpp"
#include "skillneo/model.hpp"
#include "skillneo/taskgen.hpp"

namespace skillneo::eval {

enum class Split : std::uint8_t { kId, kOodSkill, kOodLength, kOodCombo };
std::string split_name(Split s);
Split parse_split(std::string_view name);
bool is_ood(Split s);

struct EvalCell {
  int k = 0;
  int seq_len = 0;
  Split split = Split::kId;
  std::size_t n = 0;
  std::size_t correct = 0;
  /// Non-empty when part or all of the cell could not be evaluated.
  std::string error;

  double accuracy() const {
    return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
  }
};

struct CompetenceReport {
  std::string method;
  std::string target_skill;
  std::string held_out_skill;
  std::vector<EvalCell> cells;
  std::uint64_t seed = 0;
  std::string base_digest;
  std::string adapter_digest;
  nlohmann::json metadata = nlohmann::json::object();

  /// Sample-weighted accuracy over cells accepted by the filter.
  double tau(const std::function<bool(const EvalCell&)>& keep) const;
  double tau_id() const;
  double tau_ood() const;
};

/// True iff the decoded answer digits equal `target` exactly.
bool exact_match(std::string_view answer, const skills::DigitSeq& target);
bool exact_match(const model::Vocab& vocab, std::span<const int> generated,
                 const skills::DigitSeq& target);

/// Identification written into every report row.
struct ReportHeader {
  std::string method;
  std::string target_skill;
  std::string held_out_skill;
  std::uint64_t seed = 0;
  std::string adapter_digest;
};

/// Greedy-decodes every sample's prompt through `m` and scores it. Cells
/// are keyed by (k, length); lengths in `ood_lengths` are tagged
/// OOD-length, everything else gets `split`. Throws InputError on an
/// empty dataset.
CompetenceReport competence(const adapt::AdaptedModel& m,
                            const taskgen::SkillCenteredDataset& ds, Split split,
                            const ReportHeader& header,
                            const std::set<int>& ood_lengths = {});

/// Adds the cells of `other` to `into` (same header required).
void append_cells(CompetenceReport& into, const CompetenceReport& other);

struct GapCell {
  int k = 0;
  int seq_len = 0;
  double tau_id = 0.0;
  double tau_ood = 0.0;
  double gap() const { return tau_id - tau_ood; }
};

struct P2Summary {
  std::vector<GapCell> cells;
  double tau_id = 0.0;
  double tau_ood = 0.0;
  double gap() const { return tau_id - tau_ood; }
};

/// Per-(k, length) and aggregate ID minus OOD accuracy. Reports must share
/// method and target skill.
P2Summary p2_compare(const CompetenceReport& id, const CompetenceReport& ood);

struct IclConfig {
  int n_per_skill = 10;
  std::uint64_t example_seed = 0;
  std::size_t pool_size = 10000;
};

/// Few-shot evaluation of the bare base model. Each query gets
/// 2 * n_per_skill worked examples drawn from the two pools, alternating
/// between skills, separated by newlines. Prompts that do not fit the
/// context are left out of the cell and noted in its error field.
CompetenceReport icl_eval(const model::Checkpoint& base, const IclConfig& icl,
                          const std::vector<taskgen::Sample>& pool_a,
                          const std::vector<taskgen::Sample>& pool_b,
                          const taskgen::SkillCenteredDataset& testset,
                          const ReportHeader& header);

/// The prompt icl_eval builds for one query.
std::string icl_prompt(const std::vector<const taskgen::Sample*>& examples,
                       const std::string& query_prompt);

/// Report rows as CSV with the fixed header.
inline constexpr const char* kReportHeader =
    "method,target_skill,held_out_skill,k,seq_len,split,n,correct,accuracy,seed,"
    "base_digest,adapter_digest";
std::string report_csv(const std::vector<CompetenceReport>& reports);
void write_report(const std::vector<CompetenceReport>& reports,
                  const std::filesystem::path& path);
/// Parses a file written by write_report (one report per distinct header).
std::vector<CompetenceReport> read_report(const std::filesystem::path& path);

struct MergedRow {
  std::string method;
  std::string target_skill;
  int k = 0;
  int seq_len = 0;
  Split split = Split::kId;
  std::size_t runs = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation across runs
  std::size_t n = 0;
  std::size_t correct = 0;
};

/// Mean and standard deviation of cell accuracies across reports (usually
/// one per held-out skill), grouped by method, target skill, k, length and
/// split.
std::vector<MergedRow> merge_reports(const std::vector<CompetenceReport>& reports);

inline constexpr const char* kMergedHeader =
    "method,target_skill,k,seq_len,split,runs,mean_accuracy,std_accuracy,n,correct";
std::string merged_csv(const std::vector<MergedRow>& rows);

/// Mean and population standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& xs);

}  // namespace skillneo::eval
