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
#include "skillneo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <tuple>

#include "skillneo/errors.hpp"

namespace skillneo::eval {

using taskgen::Sample;

std::string split_name(Split s) {
  switch (s) {
    case Split::kId: return "ID";
    case Split::kOodSkill: return "OOD-skill";
    case Split::kOodLength: return "OOD-length";
    case Split::kOodCombo: return "OOD-combo";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "ID") return Split::kId;
  if (name == "OOD-skill") return Split::kOodSkill;
  if (name == "OOD-length") return Split::kOodLength;
  if (name == "OOD-combo") return Split::kOodCombo;
  throw ParseError("unknown split " + std::string(name), 0);
}

bool is_ood(Split s) { return s != Split::kId; }

double CompetenceReport::tau(const std::function<bool(const EvalCell&)>& keep) const {
  std::size_t n = 0;
  std::size_t c = 0;
  for (const auto& cell : cells) {
    if (!keep(cell)) continue;
    n += cell.n;
    c += cell.correct;
  }
  return n == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(n);
}

double CompetenceReport::tau_id() const {
  return tau([](const EvalCell& c) { return c.split == Split::kId; });
}

double CompetenceReport::tau_ood() const {
  return tau([](const EvalCell& c) { return is_ood(c.split); });
}

bool exact_match(std::string_view answer, const skills::DigitSeq& target) {
  if (answer.size() != target.size()) return false;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (answer[i] != static_cast<char>('0' + target[i])) return false;
  }
  return true;
}

bool exact_match(const model::Vocab& vocab, std::span<const int> generated,
                 const skills::DigitSeq& target) {
  return exact_match(model::answer_digits(vocab, generated), target);
}

namespace {

CompetenceReport make_report(const ReportHeader& h, const std::string& base_digest) {
  CompetenceReport r;
  r.method = h.method;
  r.target_skill = h.target_skill;
  r.held_out_skill = h.held_out_skill;
  r.seed = h.seed;
  r.base_digest = base_digest;
  r.adapter_digest = h.adapter_digest;
  r.metadata["decoding"] = "greedy";
  return r;
}

struct Query {
  std::vector<int> ids;
  const Sample* sample;
};

using CellKey = std::tuple<int, int, Split>;

/// Decodes every query (grouped by answer length) and tallies by cell.
void score(model::Engine<float>& engine, const model::View& view,
           const model::Vocab& vocab, const std::vector<Query>& queries,
           const std::function<Split(const Sample&)>& split_of,
           std::map<CellKey, EvalCell>& cells) {
  std::map<std::size_t, std::vector<const Query*>> by_len;
  for (const auto& q : queries) by_len[q.sample->target.size()].push_back(&q);
  for (const auto& [len, group] : by_len) {
    std::vector<std::vector<int>> prompts;
    prompts.reserve(group.size());
    for (const Query* q : group) prompts.push_back(q->ids);
    const auto out = model::greedy_decode(engine, view, prompts, static_cast<int>(len) + 1,
                                          vocab.eos());
    for (std::size_t i = 0; i < group.size(); ++i) {
      const Sample& s = *group[i]->sample;
      const CellKey key{static_cast<int>(s.k()), static_cast<int>(len), split_of(s)};
      auto& cell = cells[key];
      cell.k = std::get<0>(key);
      cell.seq_len = std::get<1>(key);
      cell.split = std::get<2>(key);
      ++cell.n;
      if (exact_match(vocab, out[i], s.target)) ++cell.correct;
    }
  }
}

}  // namespace

CompetenceReport competence(const adapt::AdaptedModel& m,
                            const taskgen::SkillCenteredDataset& ds, Split split,
                            const ReportHeader& header, const std::set<int>& ood_lengths) {
  if (ds.samples.empty()) throw InputError("competence on an empty dataset");
  const auto& base = *m.base;
  CompetenceReport report = make_report(header, model::parameters_digest(base.params));
  report.metadata["dataset"] = ds.manifest.kind;
  std::vector<Query> queries;
  queries.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    auto e = m.encode_prompt(taskgen::render_prompt(s.label_ops, s.input));
    if (static_cast<int>(e.ids.size() + s.target.size()) + 1 > base.config.context_len) {
      throw InputError("prompt does not fit the context: " + s.text);
    }
    queries.push_back({std::move(e.ids), &s});
  }
  model::Engine<float> engine(base.config);
  std::map<CellKey, EvalCell> cells;
  score(engine, m.view(), base.vocab, queries,
        [&](const Sample& s) {
          return ood_lengths.count(static_cast<int>(s.input.size())) ? Split::kOodLength : split;
        },
        cells);
  for (auto& [key, cell] : cells) report.cells.push_back(cell);
  return report;
}

void append_cells(CompetenceReport& into, const CompetenceReport& other) {
  if (into.method != other.method || into.target_skill != other.target_skill ||
      into.held_out_skill != other.held_out_skill) {
    throw InputError("cannot append cells from a report with a different header");
  }
  into.cells.insert(into.cells.end(), other.cells.begin(), other.cells.end());
}

P2Summary p2_compare(const CompetenceReport& id, const CompetenceReport& ood) {
  if (id.method != ood.method || id.target_skill != ood.target_skill) {
    throw InputError("p2_compare needs reports of the same method and skill");
  }
  auto key_acc = [](const CompetenceReport& r) {
    std::map<std::pair<int, int>, std::pair<std::size_t, std::size_t>> m;
    for (const auto& c : r.cells) {
      auto& v = m[{c.k, c.seq_len}];
      v.first += c.n;
      v.second += c.correct;
    }
    return m;
  };
  const auto a = key_acc(id);
  const auto b = key_acc(ood);
  P2Summary s;
  std::size_t na = 0, ca = 0, nb = 0, cb = 0;
  for (const auto& [key, va] : a) {
    auto it = b.find(key);
    if (it == b.end()) continue;
    const auto& vb = it->second;
    GapCell g;
    g.k = key.first;
    g.seq_len = key.second;
    g.tau_id = va.first ? static_cast<double>(va.second) / va.first : 0.0;
    g.tau_ood = vb.first ? static_cast<double>(vb.second) / vb.first : 0.0;
    s.cells.push_back(g);
    na += va.first;
    ca += va.second;
    nb += vb.first;
    cb += vb.second;
  }
  s.tau_id = na ? static_cast<double>(ca) / na : 0.0;
  s.tau_ood = nb ? static_cast<double>(cb) / nb : 0.0;
  return s;
}

std::string icl_prompt(const std::vector<const Sample*>& examples,
                       const std::string& query_prompt) {
  std::string out;
  for (const Sample* e : examples) {
    out += e->text;
    out += '\n';
  }
  out += query_prompt;
  return out;
}

CompetenceReport icl_eval(const model::Checkpoint& base, const IclConfig& icl,
                          const std::vector<Sample>& pool_a,
                          const std::vector<Sample>& pool_b,
                          const taskgen::SkillCenteredDataset& testset,
                          const ReportHeader& header) {
  if (icl.n_per_skill < 0) throw ConfigError("ICL example count must be >= 0");
  if (icl.n_per_skill > 0 && (pool_a.empty() || pool_b.empty())) {
    throw ConfigError("ICL needs non-empty example pools");
  }
  if (testset.samples.empty()) throw InputError("ICL evaluation on an empty dataset");
  CompetenceReport report = make_report(header, model::parameters_digest(base.params));
  report.metadata["icl_n_per_skill"] = icl.n_per_skill;
  report.metadata["icl_ordering"] = "alternating";
  report.metadata["icl_separator"] = "newline";
  const std::size_t na = std::min(icl.pool_size, pool_a.size());
  const std::size_t nb = std::min(icl.pool_size, pool_b.size());

  std::vector<Query> fits;
  std::map<CellKey, std::size_t> overflow;
  for (std::size_t qi = 0; qi < testset.samples.size(); ++qi) {
    const Sample& s = testset.samples[qi];
    Rng rng(stream_seed(icl.example_seed, qi));
    std::vector<const Sample*> examples;
    for (int i = 0; i < icl.n_per_skill; ++i) {
      examples.push_back(&pool_a[uniform_index(rng, na)]);
      examples.push_back(&pool_b[uniform_index(rng, nb)]);
    }
    auto ids = base.vocab.tokenize(icl_prompt(examples, taskgen::render_prompt(s.label_ops, s.input)));
    if (static_cast<int>(ids.size() + s.target.size()) + 1 > base.config.context_len) {
      ++overflow[{static_cast<int>(s.k()), static_cast<int>(s.input.size()), Split::kOodSkill}];
      continue;
    }
    fits.push_back({std::move(ids), &s});
  }
  model::Engine<float> engine(base.config);
  std::map<CellKey, EvalCell> cells;
  score(engine, model::View{&base.params, nullptr, nullptr}, base.vocab, fits,
        [](const Sample&) { return Split::kOodSkill; }, cells);
  for (const auto& [key, count] : overflow) {
    auto& cell = cells[key];
    cell.k = std::get<0>(key);
    cell.seq_len = std::get<1>(key);
    cell.split = std::get<2>(key);
    cell.error = "context overflow on " + std::to_string(count) + " prompts";
  }
  for (auto& [key, cell] : cells) report.cells.push_back(cell);
  return report;
}

namespace {

std::string fmt_accuracy(double a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", a);
  return buf;
}

std::string fmt_field(const std::string& s) { return s.empty() ? "-" : s; }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string report_csv(const std::vector<CompetenceReport>& reports) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : reports) {
    for (const auto& c : r.cells) {
      out += fmt_field(r.method) + "," + fmt_field(r.target_skill) + "," +
             fmt_field(r.held_out_skill) + "," + std::to_string(c.k) + "," +
             std::to_string(c.seq_len) + "," + split_name(c.split) + "," +
             std::to_string(c.n) + "," + std::to_string(c.correct) + "," +
             fmt_accuracy(c.accuracy()) + "," + std::to_string(r.seed) + "," +
             fmt_field(r.base_digest) + "," + fmt_field(r.adapter_digest) + "\n";
    }
  }
  return out;
}

void write_report(const std::vector<CompetenceReport>& reports,
                  const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text_file(path, report_csv(reports));
}

std::vector<CompetenceReport> read_report(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) {
    throw ParseError("report header mismatch in " + path.string(), 1);
  }
  auto unfield = [](const std::string& s) { return s == "-" ? std::string() : s; };
  std::vector<CompetenceReport> out;
  std::map<std::string, std::size_t> index;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 12) throw ParseError("expected 12 fields", lineno);
    try {
      const std::string key = f[0] + "|" + f[1] + "|" + f[2] + "|" + f[9] + "|" + f[10] + "|" + f[11];
      auto it = index.find(key);
      if (it == index.end()) {
        CompetenceReport r;
        r.method = unfield(f[0]);
        r.target_skill = unfield(f[1]);
        r.held_out_skill = unfield(f[2]);
        r.seed = std::stoull(f[9]);
        r.base_digest = unfield(f[10]);
        r.adapter_digest = unfield(f[11]);
        it = index.emplace(key, out.size()).first;
        out.push_back(std::move(r));
      }
      EvalCell c;
      c.k = std::stoi(f[3]);
      c.seq_len = std::stoi(f[4]);
      c.split = parse_split(f[5]);
      c.n = std::stoull(f[6]);
      c.correct = std::stoull(f[7]);
      if (c.correct > c.n) throw ParseError("correct exceeds n", lineno);
      out[it->second].cells.push_back(c);
    } catch (const std::logic_error&) {
      throw ParseError("malformed number", lineno);
    }
  }
  return out;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double x : xs) sum += x;
  const double mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(xs.size()))};
}

std::vector<MergedRow> merge_reports(const std::vector<CompetenceReport>& reports) {
  using Key = std::tuple<std::string, std::string, int, int, Split>;
  struct Acc {
    std::vector<double> accs;
    std::size_t n = 0;
    std::size_t correct = 0;
  };
  std::map<Key, Acc> groups;
  for (const auto& r : reports) {
    for (const auto& c : r.cells) {
      if (c.n == 0) continue;
      auto& g = groups[{r.method, r.target_skill, c.k, c.seq_len, c.split}];
      g.accs.push_back(c.accuracy());
      g.n += c.n;
      g.correct += c.correct;
    }
  }
  std::vector<MergedRow> rows;
  for (const auto& [key, g] : groups) {
    MergedRow row;
    std::tie(row.method, row.target_skill, row.k, row.seq_len, row.split) = key;
    row.runs = g.accs.size();
    std::tie(row.mean, row.stddev) = mean_std(g.accs);
    row.n = g.n;
    row.correct = g.correct;
    rows.push_back(row);
  }
  return rows;
}

std::string merged_csv(const std::vector<MergedRow>& rows) {
  std::string out = std::string(kMergedHeader) + "\n";
  for (const auto& r : rows) {
    out += fmt_field(r.method) + "," + fmt_field(r.target_skill) + "," + std::to_string(r.k) +
           "," + std::to_string(r.seq_len) + "," + split_name(r.split) + "," +
           std::to_string(r.runs) + "," + fmt_accuracy(r.mean) + "," +
           fmt_accuracy(r.stddev) + "," + std::to_string(r.n) + "," +
           std::to_string(r.correct) + "\n";
  }
  return out;
}

}  // namespace skillneo::eval
