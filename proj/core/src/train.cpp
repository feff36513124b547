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
#include "skillneo/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "skillneo/errors.hpp"

namespace skillneo::model {

namespace {
constexpr std::size_t kBucketWindow = 32;
}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (warmup_steps < 0) throw ConfigError("warmup steps must be >= 0");
  if (max_pad < 0) throw ConfigError("max_pad must be >= 0");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"warmup_steps", c.warmup_steps},
          {"seed", c.seed},
          {"mask_policy", c.mask_policy == MaskPolicy::kAnswerOnly ? "answer-only"
                                                                    : "full-sequence"},
          {"max_pad", c.max_pad},
          {"clip_norm", c.clip_norm},
          {"linear_decay", c.linear_decay}};
}

TrainConfig train_config_from_json(const nlohmann::json& j,
                                   const TrainConfig& defaults) {
  TrainConfig c = defaults;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.seed = j.value("seed", c.seed);
  if (j.contains("mask_policy")) {
    const auto p = j.at("mask_policy").get<std::string>();
    if (p == "answer-only") {
      c.mask_policy = MaskPolicy::kAnswerOnly;
    } else if (p == "full-sequence") {
      c.mask_policy = MaskPolicy::kFullSequence;
    } else {
      throw ConfigError("unknown mask policy " + p);
    }
  }
  c.max_pad = j.value("max_pad", c.max_pad);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.linear_decay = j.value("linear_decay", c.linear_decay);
  c.validate();
  return c;
}

double scheduled_lr(const TrainConfig& c, long step, long total) {
  if (c.warmup_steps > 0 && step < c.warmup_steps) {
    return c.learning_rate * static_cast<double>(step + 1) / c.warmup_steps;
  }
  if (!c.linear_decay || total <= c.warmup_steps) return c.learning_rate;
  const double remaining = static_cast<double>(total - step) /
                           static_cast<double>(total - c.warmup_steps);
  return c.learning_rate * std::max(remaining, 0.0);
}

Adam::Adam(std::vector<std::span<float>> params, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0F);
    v_.emplace_back(p.size(), 0.0F);
  }
}

void Adam::step(std::span<const std::span<float>> grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto b1 = static_cast<float>(beta1_);
  const auto b2 = static_cast<float>(beta2_);
  const auto step_size = static_cast<float>(lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    float* p = params_[i].data();
    const float* g = grads[i].data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    for (std::size_t j = 0; j < params_[i].size(); ++j) {
      m[j] = b1 * m[j] + (1.0F - b1) * g[j];
      v[j] = b2 * v[j] + (1.0F - b2) * g[j] * g[j];
      p[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
    }
  }
}

std::size_t Adam::state_size() const {
  std::size_t n = 0;
  for (const auto& m : m_) n += 2 * m.size();
  return n;
}

double clip_grad_norm(std::span<const std::span<float>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (float x : g) sq += static_cast<double>(x) * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto s = static_cast<float>(max_norm / (norm + 1e-12));
    for (const auto& g : grads) {
      for (float& x : g) x *= s;
    }
  }
  return norm;
}

std::vector<EpochLog> train_loop(Engine<float>& engine, TrainTarget& target,
                                 std::size_t n_samples, const EncodeFn& encode,
                                 const TrainConfig& tc, const Vocab& vocab,
                                 const EpochCallback& on_epoch, const StopFn& stop) {
  tc.validate();
  std::vector<EpochLog> logs;
  if (tc.epochs == 0 || n_samples == 0) return logs;
  const long steps_per_epoch =
      static_cast<long>((n_samples + tc.batch_size - 1) / tc.batch_size);
  const long total = steps_per_epoch * tc.epochs;
  Adam adam(target.params);
  std::vector<std::size_t> order(n_samples);
  long step = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(stream_seed(tc.seed, 0xE90C0000ULL + epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
    }
    double loss_sum = 0.0;
    long loss_count = 0;
    // Encode a window of batches, group by length so padding stays short,
    // then visit the batches of the window in random order.
    const std::size_t window = static_cast<std::size_t>(tc.batch_size) * kBucketWindow;
    std::vector<Encoded> pool;
    std::vector<std::size_t> by_len;
    std::vector<Encoded> seqs;
    for (std::size_t w0 = 0; w0 < n_samples; w0 += window) {
      const std::size_t w1 = std::min(n_samples, w0 + window);
      pool.clear();
      for (std::size_t i = w0; i < w1; ++i) {
        Rng rng(stream_seed(tc.seed ^ (0x9AD0ULL + static_cast<std::uint64_t>(epoch) * 0x100000001B3ULL),
                            order[i]));
        pool.push_back(encode(order[i], rng));
      }
      by_len.resize(pool.size());
      std::iota(by_len.begin(), by_len.end(), std::size_t{0});
      std::stable_sort(by_len.begin(), by_len.end(), [&](std::size_t a, std::size_t b) {
        return pool[a].ids.size() < pool[b].ids.size();
      });
      std::vector<std::size_t> batch_starts;
      for (std::size_t s = 0; s < pool.size(); s += tc.batch_size) batch_starts.push_back(s);
      for (std::size_t i = batch_starts.size(); i > 1; --i) {
        std::swap(batch_starts[i - 1], batch_starts[uniform_index(shuffle_rng, i)]);
      }
      for (std::size_t s : batch_starts) {
        const std::size_t stop = std::min(pool.size(), s + tc.batch_size);
        seqs.clear();
        for (std::size_t i = s; i < stop; ++i) seqs.push_back(pool[by_len[i]]);
        const Batch batch = make_batch(seqs, tc.mask_policy, vocab);
        for (auto& g : target.grad_buffers) std::fill(g.begin(), g.end(), 0.0F);
        const float loss = engine.loss_and_grad(target.view, batch, target.grads);
        if (!std::isfinite(loss)) {
          throw TrainingError("non-finite training loss", step);
        }
        clip_grad_norm(target.grad_buffers, tc.clip_norm);
        adam.step(target.grad_buffers, scheduled_lr(tc, step, total));
        loss_sum += loss;
        ++loss_count;
        ++step;
      }
    }
    EpochLog log{epoch, step, loss_sum / static_cast<double>(loss_count)};
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
    if (stop && stop(log)) break;
  }
  return logs;
}

Checkpoint init_checkpoint(const ModelConfig& config, const Vocab& vocab,
                           std::uint64_t init_seed) {
  if (config.vocab_size != vocab.size()) {
    throw ConfigError("config vocab_size does not match the vocabulary");
  }
  Checkpoint c;
  c.config = config;
  c.vocab = vocab;
  c.params = make_parameters(config);
  init_parameters(c.params, config, init_seed);
  c.digest = parameters_digest(c.params);
  return c;
}

void train_base_phase(Checkpoint& ckpt, const taskgen::SkillCenteredDataset& ds,
                      const TrainConfig& tc, const EpochCallback& on_epoch) {
  Engine<float> engine(ckpt.config);
  ParamSet grads = ckpt.params.zeros_like();
  TrainTarget target;
  target.view.base = &ckpt.params;
  target.grads.base = &grads;
  for (int i = 0; i < static_cast<int>(ckpt.params.size()); ++i) {
    target.params.emplace_back(ckpt.params[i].data);
    target.grad_buffers.emplace_back(grads[i].data);
  }
  const Vocab& vocab = ckpt.vocab;
  const auto encode = [&](std::size_t index, Rng& rng) {
    const int pad = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(tc.max_pad) + 1));
    return encode_sample(vocab, ds.samples[index].text, pad);
  };
  train_loop(engine, target, ds.samples.size(), encode, tc, vocab, on_epoch);
  ckpt.digest = parameters_digest(ckpt.params);
}

Checkpoint train_base(const ModelConfig& config,
                      const taskgen::SkillCenteredDataset& phase1,
                      const taskgen::SkillCenteredDataset& phase2,
                      const TrainConfig& tc, const EpochCallback& on_epoch) {
  Checkpoint ckpt = init_checkpoint(config, default_vocab(), tc.seed);
  TrainConfig p1 = tc;
  p1.seed = stream_seed(tc.seed, 1);
  train_base_phase(ckpt, phase1, p1, on_epoch);
  TrainConfig p2 = tc;
  p2.seed = stream_seed(tc.seed, 2);
  train_base_phase(ckpt, phase2, p2, on_epoch);
  ckpt.metadata["train_config"] = to_json(tc);
  return ckpt;
}

namespace {

template <typename T>
ParamSetT<double> to_double(const ParamSetT<T>& p) {
  return p.template cast<double>();
}

TensorT<double> to_double(const Tensor& t) {
  TensorT<double> out(t.name, t.shape);
  std::copy(t.data.begin(), t.data.end(), out.data.begin());
  return out;
}

}  // namespace

GradCheckResult grad_check(const ModelConfig& config, const ParamSet& base,
                           const Tensor* extension, const LowRank* low_rank,
                           const GradCheckTarget& target, const Batch& batch,
                           double eps, std::size_t n_coords, std::uint64_t seed) {
  if (!(eps > 0.0)) throw ConfigError("finite-difference step must be > 0");
  if (target.extension && !extension) throw ConfigError("no extension to check");
  if (target.low_rank && !low_rank) throw ConfigError("no low-rank factors to check");

  // Backprop in float32 with sinks for every group; frozen sinks are not
  // handed to the engine, so they must stay exactly zero.
  ParamSet g_base = base.zeros_like();
  Tensor g_ext;
  if (extension) g_ext = Tensor(extension->name, extension->shape);
  ParamSet g_lr;
  if (low_rank) g_lr = low_rank->factors.zeros_like();
  {
    Engine<float> engine(config);
    View view{&base, extension, low_rank};
    Grads sinks;
    if (target.base) sinks.base = &g_base;
    if (target.extension) sinks.extension = &g_ext;
    if (target.low_rank) sinks.low_rank = &g_lr;
    engine.loss_and_grad(view, batch, sinks);
  }

  GradCheckResult result;
  auto frozen_max = [&](const auto& values) {
    for (float v : values) {
      result.max_frozen_grad = std::max(result.max_frozen_grad, std::fabs(static_cast<double>(v)));
    }
  };
  if (!target.base) {
    for (const auto& t : g_base) frozen_max(t.data);
  }
  if (extension && !target.extension) frozen_max(g_ext.data);
  if (low_rank && !target.low_rank) {
    for (const auto& t : g_lr) frozen_max(t.data);
  }

  // Double-precision copies used by the finite-difference side.
  ParamSetT<double> d_base = to_double(base);
  TensorT<double> d_ext;
  if (extension) d_ext = to_double(*extension);
  LowRankT<double> d_lr;
  if (low_rank) {
    d_lr.rank = low_rank->rank;
    d_lr.alpha = low_rank->alpha;
    d_lr.factors = to_double(low_rank->factors);
  }
  ViewT<double> dview{&d_base, extension ? &d_ext : nullptr,
                      low_rank ? &d_lr : nullptr};
  Engine<double> dengine(config);

  std::vector<std::pair<double*, const float*>> buffers;  // (value, grad)
  std::vector<std::size_t> sizes;
  auto add_group = [&](auto& dst, const auto& grad) {
    buffers.emplace_back(dst.data.data(), grad.data.data());
    sizes.push_back(dst.data.size());
  };
  if (target.base) {
    for (int i = 0; i < static_cast<int>(d_base.size()); ++i) add_group(d_base[i], g_base[i]);
  }
  if (target.extension) add_group(d_ext, g_ext);
  if (target.low_rank) {
    for (int i = 0; i < static_cast<int>(d_lr.factors.size()); ++i) {
      add_group(d_lr.factors[i], g_lr[i]);
    }
  }
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total == 0) return result;

  Rng rng(stream_seed(seed, 0x6C4EC));
  const std::size_t n = std::min(n_coords, total);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t flat = uniform_index(rng, total);
    std::size_t group = 0;
    while (flat >= sizes[group]) flat -= sizes[group++];
    double* value = buffers[group].first + flat;
    const double analytic = buffers[group].second[flat];
    const double saved = *value;
    auto central = [&](double h) {
      *value = saved + h;
      const double up = dengine.loss(dview, batch);
      *value = saved - h;
      const double down = dengine.loss(dview, batch);
      *value = saved;
      return (up - down) / (2.0 * h);
    };
    // Richardson step removes the O(eps^2) truncation term.
    const double numeric = (4.0 * central(eps / 2.0) - central(eps)) / 3.0;
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
    result.max_rel_error = std::max(result.max_rel_error,
                                    std::fabs(analytic - numeric) / denom);
    ++result.coords_checked;
  }
  return result;
}

}  // namespace skillneo::model
