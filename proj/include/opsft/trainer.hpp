// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "opsft/env.hpp"
#include "opsft/grad_engines.hpp"
#include "opsft/metrics.hpp"
#include "opsft/policy.hpp"
#include "opsft/rewards.hpp"

namespace opsft {

enum class EngineKind { OnPolicySft, Grpo, SimplifiedPg, Reinforce };
enum class Regime { OnPolicy, OffPolicy };

std::string_view to_string(EngineKind e);
EngineKind parse_engine(std::string_view name);
std::string_view to_string(Regime r);
Regime parse_regime(std::string_view name);

struct WarmStartConfig {
  int n_demos = 5000;
  double verbosity = 2.0;
  int epochs = 8000;
  double learning_rate = 3.0;
  std::uint64_t seed = 7;
  int modulus = 10;
  int max_operands = 4;
};

struct TrainConfig {
  // Task.
  int modulus = 10;
  int max_operands = 4;
  int train_questions = 4096;
  int probe_questions = 256;
  std::uint64_t seed = 1;
  std::uint64_t probe_seed = 1001;

  // Rollouts and updates.
  int group_size = 8;
  int length_limit = 40;
  int batch_size = 64;
  double learning_rate = 0.05;
  int total_steps = 300;
  double rollout_temperature = 1.0;
  int max_gen_len = 64;
  EngineKind engine = EngineKind::OnPolicySft;
  LengthNorm length_norm = LengthNorm::BatchMax;
  RewardSpec reward;
  AdvantageConfig advantage;
  GrpoConfig grpo;
  RewardMode pg_reward_mode = RewardMode::Raw;
  double discount = 1.0;

  Regime regime = Regime::OnPolicy;
  int offpolicy_refresh_steps = 50;

  // Evaluation on the held-out probe set.
  int eval_every = 50;
  int eval_samples = 4;
  double eval_temperature = 1.0;

  // Initial policy: a checkpoint if given, otherwise a warm start on teacher demos.
  std::string init_checkpoint;
  WarmStartConfig warm_start;

  int checkpoint_every = 100;
  int workers = 1;

  void validate() const;
};

struct StepLog {
  int step = 0;
  double mean_length = 0.0;
  double accuracy = 0.0;
  double c_L = 0.0;
  double grad_norm = 0.0;
  double loss = 0.0;
  int degenerate_groups = 0;
  int fallback_groups = 0;
  int rollouts_used = 0;

  friend bool operator==(const StepLog&, const StepLog&) = default;
};

nlohmann::json to_json(const StepLog& log);

struct TrainState {
  PolicyParams params;
  PolicyParams reference;  // KL anchor, frozen at the start of training
  std::optional<LaserThreshold> laser;
};

TrainState make_state(const PolicyParams& init);

// ---------------------------------------------------------------------------
// Warm start.

struct WarmStartResult {
  PolicyParams params;
  std::vector<double> mean_loglik;  // per-token demo log-likelihood, one entry per epoch (after update)
};

/// Gradient ascent on the mean per-token log-likelihood of teacher demos.
/// Throws TrainingError if the objective falls for 10 consecutive epochs.
WarmStartResult warm_start(const PolicyParams& init, const WarmStartConfig& cfg);

// ---------------------------------------------------------------------------
// Steps.

/// Seed for the rollouts of training step `step`.
std::uint64_t step_seed(std::uint64_t run_seed, int step);

/// G rollouts per question from `behaviour`. Question b draws from its own RNG
/// stream derived from (seed, b), so the result does not depend on `workers`.
std::vector<RolloutGroup> sample_groups(const PolicyParams& behaviour, std::span<const Question> batch,
                                        int group_size, double temperature, int max_len, std::uint64_t seed,
                                        int workers = 1);

/// One step of on-policy SFT: snapshot, sample, filter by correctness and
/// length_limit, and ascend the filtered log-likelihood with the batch-max
/// normaliser. Parameters are untouched when nothing passes the filter.
StepLog sft_train_step(TrainState& state, std::span<const Question> batch, const TrainConfig& cfg,
                       std::uint64_t seed, int step = 0);

/// One gradient-ascent step with the configured engine and reward.
StepLog rl_train_step(TrainState& state, std::span<const Question> batch, const TrainConfig& cfg,
                      std::uint64_t seed, int step = 0);

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalResult {
  EvalReport report;
  std::vector<QuestionSamples> samples;
};

EvalResult evaluate_policy(const PolicyParams& p, std::span<const Question> probe, int n_samples, double temperature,
                           int max_len, std::uint64_t seed, double baseline_tokens, int workers = 1);

// ---------------------------------------------------------------------------
// Off-policy ablation: rollouts drawn once from a frozen policy, filtered, and
// replayed as a fixed SFT dataset.

struct OffPolicyChunk {
  std::vector<Question> questions;
  std::vector<std::vector<Rollout>> kept;  // filtered rollouts per question
  int sampled = 0;                         // rollouts drawn before filtering
  int correct = 0;
  double total_length = 0.0;               // over all drawn rollouts
};

struct OffPolicyDataset {
  std::vector<OffPolicyChunk> chunks;  // one per replayed training step

  std::size_t size() const;
  bool empty() const { return size() == 0; }
};

/// Splits `questions` into chunks of cfg.batch_size and draws cfg.group_size
/// rollouts per question from `frozen`, chunk k seeded like training step
/// first_step + k.
OffPolicyDataset build_offpolicy_dataset(const PolicyParams& frozen, std::span<const Question> questions,
                                         const TrainConfig& cfg, int first_step = 0);

/// SFT over the fixed dataset, one update per chunk per epoch. RefusalError on an empty dataset.
std::vector<StepLog> train_offpolicy(TrainState& state, const OffPolicyDataset& dataset, int epochs,
                                     const TrainConfig& cfg, int first_step = 0);

// ---------------------------------------------------------------------------
// Full runs.

struct RunCallbacks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(int step, const EvalReport&)> on_eval;
  std::function<void(int step, const PolicyParams&)> on_checkpoint;
};

struct RunResult {
  PolicyParams initial;
  PolicyParams final_params;
  std::vector<StepLog> logs;
  std::vector<std::pair<int, EvalReport>> evals;
};

/// Training questions for step `step` (batch_size uniform draws from the pool).
std::vector<Question> step_batch(std::span<const Question> pool, const TrainConfig& cfg, int step);

std::vector<Question> training_pool(const TrainConfig& cfg);
std::vector<Question> probe_set(const TrainConfig& cfg);

/// Seed of the probe evaluations made during a run.
std::uint64_t eval_seed(const TrainConfig& cfg);

/// The initial policy for a config: its checkpoint or a warm start.
PolicyParams initial_policy(const TrainConfig& cfg);

RunResult run(const TrainConfig& cfg, const RunCallbacks& callbacks = {});
/// Same, from a given initial policy.
RunResult run_from(const PolicyParams& init, const TrainConfig& cfg, const RunCallbacks& callbacks = {});

}  // namespace opsft
