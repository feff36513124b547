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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skillneo/checkpoint.hpp"
#include "skillneo/model.hpp"
#include "skillneo/taskgen.hpp"

namespace skillneo::model {

struct TrainConfig {
  double learning_rate = 2e-4;
  int epochs = 3;
  int batch_size = 64;
  int warmup_steps = 500;
  std::uint64_t seed = 0;
  MaskPolicy mask_policy = MaskPolicy::kAnswerOnly;
  int max_pad = 16;
  double clip_norm = 1.0;
  /// Linear decay to zero after warmup; constant rate otherwise.
  bool linear_decay = true;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j,
                                   const TrainConfig& defaults = {});

/// Learning rate at optimizer step `step` (0-based) of `total`.
double scheduled_lr(const TrainConfig& c, long step, long total);

/// Adam over a fixed list of parameter buffers.
class Adam {
 public:
  Adam(std::vector<std::span<float>> params, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<const std::span<float>> grads, double lr);
  std::size_t state_size() const;

 private:
  std::vector<std::span<float>> params_;
  std::vector<std::vector<float>> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Scales grads in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
double clip_grad_norm(std::span<const std::span<float>> grads, double max_norm);

struct EpochLog {
  int epoch = 0;
  long steps = 0;
  double mean_loss = 0.0;
};

/// What an optimization run updates: a view for the forward pass, gradient
/// sinks, and flat spans over trainable buffers and their gradients
/// (pairwise aligned).
struct TrainTarget {
  View view;
  Grads grads;
  std::vector<std::span<float>> params;
  std::vector<std::span<float>> grad_buffers;
};

/// Produces the training sequence for sample `index`; `rng` supplies any
/// per-visit randomness such as the PAD prefix length.
using EncodeFn = std::function<Encoded(std::size_t index, Rng& rng)>;
using EpochCallback = std::function<void(const EpochLog&)>;
/// Checked after each epoch; returning true ends training early.
using StopFn = std::function<bool(const EpochLog&)>;

/// Mini-batch Adam with clipping and the configured schedule. Throws
/// TrainingError on a non-finite loss.
std::vector<EpochLog> train_loop(Engine<float>& engine, TrainTarget& target,
                                 std::size_t n_samples, const EncodeFn& encode,
                                 const TrainConfig& tc, const Vocab& vocab,
                                 const EpochCallback& on_epoch = {},
                                 const StopFn& stop = {});

/// Fresh model with Gaussian init.
Checkpoint init_checkpoint(const ModelConfig& config, const Vocab& vocab,
                           std::uint64_t init_seed);

/// Full-parameter training on phase 1 then phase 2. Each sample is prefixed
/// with a uniform 0..max_pad PAD run, redrawn every epoch.
Checkpoint train_base(const ModelConfig& config,
                      const taskgen::SkillCenteredDataset& phase1,
                      const taskgen::SkillCenteredDataset& phase2,
                      const TrainConfig& tc, const EpochCallback& on_epoch = {});

/// Continues training `ckpt` in place on one dataset.
void train_base_phase(Checkpoint& ckpt, const taskgen::SkillCenteredDataset& ds,
                      const TrainConfig& tc, const EpochCallback& on_epoch = {});

/// Which parameter groups receive gradients in a gradient check.
struct GradCheckTarget {
  bool base = false;
  bool extension = false;
  bool low_rank = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  double max_frozen_grad = 0.0;  // largest |grad| seen on frozen coordinates
};

/// Backprop (float32) against central finite differences of the same loss
/// evaluated in double precision at the float32 parameter values.
GradCheckResult grad_check(const ModelConfig& config, const ParamSet& base,
                           const Tensor* extension, const LowRank* low_rank,
                           const GradCheckTarget& target, const Batch& batch,
                           double eps, std::size_t n_coords, std::uint64_t seed);

}  // namespace skillneo::model
