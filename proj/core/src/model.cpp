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
#include <algorithm>
#include <cmath>

#include "skillneo/errors.hpp"
#include "skillneo/model.hpp"

namespace skillneo::model {

Vocab::Vocab(const skills::SkillSet& skills) {
  if (skills.empty()) throw ConfigError("vocabulary needs at least one skill");
  for (int d = 0; d < 10; ++d) tokens_.push_back(std::string(1, static_cast<char>('0' + d)));
  for (auto s : skills) {
    tokens_.push_back(skills::token(s));
    ops_.push_back(s);
  }
  eq_ = static_cast<int>(tokens_.size());
  tokens_.push_back("=");
  tokens_.push_back("<pad>");
  tokens_.push_back("<bos>");
  tokens_.push_back("<eos>");
}

int Vocab::op(skills::Skill s) const {
  for (std::size_t i = 0; i < ops_.size(); ++i) {
    if (ops_[i] == s) return 10 + static_cast<int>(i);
  }
  throw ConfigError("skill " + std::string(skills::name(s)) + " not in vocabulary");
}

bool Vocab::has_op(skills::Skill s) const {
  return std::find(ops_.begin(), ops_.end(), s) != ops_.end();
}

std::vector<int> Vocab::tokenize(std::string_view text) const {
  std::vector<int> ids;
  std::size_t i = 0;
  while (i < text.size()) {
    const char ch = text[i];
    if (ch >= '0' && ch <= '9') {
      ids.push_back(ch - '0');
      ++i;
    } else if (ch == '=') {
      ids.push_back(eq());
      ++i;
    } else if (ch == '\n') {
      ids.push_back(eos());
      ++i;
    } else if (ch == '[') {
      const auto close = text.find(']', i);
      if (close == std::string_view::npos) {
        throw InputError("unterminated op token in '" + std::string(text) + "'");
      }
      const auto tok = text.substr(i, close - i + 1);
      try {
        ids.push_back(op(skills::parse(tok)));
      } catch (const ConfigError&) {
        throw InputError("unknown op token " + std::string(tok));
      }
      i = close + 1;
    } else {
      throw InputError(std::string("untokenizable character '") + ch + "'");
    }
  }
  return ids;
}

std::string Vocab::detokenize(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == eos()) {
      out += '\n';
    } else if (id >= 0 && id < size()) {
      out += tokens_[static_cast<std::size_t>(id)];
    } else {
      out += "<s" + std::to_string(id - size()) + ">";
    }
  }
  return out;
}

Vocab build_vocab(const skills::SkillSet& skills) { return Vocab(skills); }

Vocab default_vocab() {
  return Vocab(skills::SkillSet(
      std::vector<skills::Skill>(skills::kAllSkills.begin(), skills::kAllSkills.end()),
      skills::Role::kPretrain));
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_width <= 0 ||
      context_len <= 0 || vocab_size <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model must be divisible by n_heads");
  }
  if (tie_output_head) {
    throw ConfigError("tied output head is not supported: extension tokens "
                      "must never be predictable outputs");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},         {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},         {"ffn_width", c.ffn_width},
          {"context_len", c.context_len}, {"vocab_size", c.vocab_size},
          {"tie_output_head", c.tie_output_head}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.ffn_width = j.value("ffn_width", c.ffn_width);
  c.context_len = j.value("context_len", c.context_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.tie_output_head = j.value("tie_output_head", c.tie_output_head);
  c.validate();
  return c;
}

int Layout::weight_of(int l, LinearSlot s) {
  switch (s) {
    case LinearSlot::kQ: return layer(l, kQW);
    case LinearSlot::kK: return layer(l, kKW);
    case LinearSlot::kV: return layer(l, kVW);
    case LinearSlot::kO: return layer(l, kOW);
    case LinearSlot::kUp: return layer(l, kUpW);
    case LinearSlot::kDown: return layer(l, kDownW);
  }
  throw ConfigError("invalid linear slot");
}

ParamSet make_parameters(const ModelConfig& c) {
  c.validate();
  const int d = c.d_model, F = c.ffn_width;
  ParamSet p;
  p.add("tok_emb", {c.vocab_size, d});
  p.add("pos_emb", {c.context_len, d});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    p.add(pre + "ln1.g", {d});
    p.add(pre + "ln1.b", {d});
    for (const char* proj : {"q", "k", "v", "o"}) {
      p.add(pre + "attn." + proj + ".w", {d, d});
      p.add(pre + "attn." + proj + ".b", {d});
    }
    p.add(pre + "ln2.g", {d});
    p.add(pre + "ln2.b", {d});
    p.add(pre + "mlp.up.w", {F, d});
    p.add(pre + "mlp.up.b", {F});
    p.add(pre + "mlp.down.w", {d, F});
    p.add(pre + "mlp.down.b", {d});
  }
  p.add("ln_f.g", {d});
  p.add("ln_f.b", {d});
  p.add("head.w", {c.vocab_size, d});
  p.add("head.b", {c.vocab_size});
  return p;
}

void init_parameters(ParamSet& p, const ModelConfig& c, std::uint64_t seed) {
  Rng rng(stream_seed(seed, 0x1A17));
  auto fill = [&](Tensor& t, double std) {
    for (auto& v : t.data) v = static_cast<float>(std * standard_normal(rng));
  };
  const double residual_std = 0.02 / std::sqrt(2.0 * c.n_layers);
  for (auto& t : p) {
    const auto& nm = t.name;
    const bool is_bias = nm.size() > 2 && nm.compare(nm.size() - 2, 2, ".b") == 0;
    if (nm.find(".g") != std::string::npos && nm.rfind(".g") == nm.size() - 2) {
      std::fill(t.data.begin(), t.data.end(), 1.0F);
    } else if (is_bias) {
      std::fill(t.data.begin(), t.data.end(), 0.0F);
    } else if (nm == "pos_emb") {
      fill(t, 0.01);
    } else if (nm.find("attn.o.w") != std::string::npos ||
               nm.find("mlp.down.w") != std::string::npos) {
      fill(t, residual_std);
    } else {
      fill(t, 0.02);
    }
  }
}

LowRank make_low_rank(const ModelConfig& c, int rank, float alpha,
                      std::uint64_t seed) {
  if (rank < 1) throw ConfigError("low-rank adapter rank must be >= 1");
  LowRank lr;
  lr.rank = rank;
  lr.alpha = alpha;
  Rng rng(stream_seed(seed, 0x10AA));
  const ParamSet shapes = make_parameters(c);
  static constexpr const char* kSlotNames[] = {"q", "k", "v", "o", "up", "down"};
  for (int l = 0; l < c.n_layers; ++l) {
    for (int s = 0; s < kLinearSlots; ++s) {
      const auto& w = shapes[Layout::weight_of(l, static_cast<LinearSlot>(s))];
      const std::string pre = "layers." + std::to_string(l) + "." + kSlotNames[s];
      lr.factors.add(pre + ".lora_a", {w.rows(), rank});
      const int bi = lr.factors.add(pre + ".lora_b", {rank, w.cols()});
      const double std = 1.0 / std::sqrt(static_cast<double>(w.cols()));
      for (auto& v : lr.factors[bi].data) {
        v = static_cast<float>(std * standard_normal(rng));
      }
    }
  }
  return lr;
}

Encoded encode_sample(const Vocab& vocab, const std::string& text, int pad_count) {
  Encoded e;
  e.ids.assign(static_cast<std::size_t>(std::max(pad_count, 0)), vocab.pad());
  const auto body = vocab.tokenize(text);
  e.ids.insert(e.ids.end(), body.begin(), body.end());
  e.ids.push_back(vocab.eos());
  const auto it = std::find(e.ids.begin(), e.ids.end(), vocab.eq());
  if (it == e.ids.end()) throw InputError("sample has no '=': " + text);
  e.eq_pos = static_cast<int>(it - e.ids.begin());
  return e;
}

Encoded encode_prompt(const Vocab& vocab, const std::string& prompt_text) {
  Encoded e;
  e.ids = vocab.tokenize(prompt_text);
  if (e.ids.empty() || e.ids.back() != vocab.eq()) {
    throw InputError("prompt must end with '=': " + prompt_text);
  }
  e.eq_pos = static_cast<int>(e.ids.size()) - 1;
  return e;
}

Batch make_batch(std::span<const Encoded> seqs, MaskPolicy policy,
                 const Vocab& vocab) {
  if (seqs.empty()) throw InputError("empty batch");
  Batch b;
  b.batch = static_cast<int>(seqs.size());
  for (const auto& s : seqs) b.seq = std::max(b.seq, static_cast<int>(s.ids.size()));
  const std::size_t total = static_cast<std::size_t>(b.batch) * b.seq;
  b.ids.assign(total, vocab.pad());
  b.targets.assign(total, -1);
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    const auto& s = seqs[r];
    const std::size_t off = r * static_cast<std::size_t>(b.seq);
    std::copy(s.ids.begin(), s.ids.end(), b.ids.begin() + static_cast<long>(off));
    for (std::size_t i = 0; i + 1 < s.ids.size(); ++i) {
      const int next = s.ids[i + 1];
      bool keep;
      if (policy == MaskPolicy::kAnswerOnly) {
        keep = static_cast<int>(i) >= s.eq_pos;
      } else {
        keep = next != vocab.pad() && next < vocab.size();
      }
      if (keep) b.targets[off + i] = next;
    }
  }
  return b;
}

std::string answer_digits(const Vocab& vocab, std::span<const int> generated) {
  std::string out;
  for (int id : generated) {
    if (!vocab.is_digit(id)) break;
    out.push_back(static_cast<char>('0' + id));
  }
  return out;
}

}  // namespace skillneo::model
