// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

// Gradient estimators over groups of rollouts:
//
//   grpo_gradient           clipped-ratio surrogate with per-token KL penalty
//   simplified_pg_gradient  no KL, no std: (1/G) sum_i R_i (1/norm_i) sum_t grad log pi
//   reinforce_gradient      Monte Carlo returns-to-go
//   onpolicy_sft_gradient   max-likelihood on rollouts that are correct and short enough
//
// All gradients are with respect to the PolicyParams weights (same flat layout)
// and point in the ascent direction of their objective.

#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "opsft/env.hpp"
#include "opsft/policy.hpp"

namespace opsft {

enum class LengthNorm {
  PerResponse,  // 1 / |o_i|
  BatchMax,     // 1 / max_j |o_j| over the responses that carry weight, floor 1
};

enum class StdMode { Sample, Population };

std::string_view to_string(LengthNorm n);
LengthNorm parse_length_norm(std::string_view name);

struct AdvantageConfig {
  bool subtract_mean = true;
  bool divide_std = true;
  double std_epsilon = 0.0;
  StdMode std_mode = StdMode::Sample;

  void validate() const;
};

struct Advantages {
  std::vector<double> values;
  /// All rewards equal with divide_std and zero epsilon; division was skipped
  /// and every advantage set to zero.
  bool degenerate = false;
};

Advantages group_advantages(std::span<const double> rewards, const AdvantageConfig& cfg);

struct GrpoConfig {
  double beta = 0.04;
  double clip_eps = 0.2;
  LengthNorm length_norm = LengthNorm::PerResponse;

  void validate() const;
};

struct RolloutGroup {
  Question question;
  std::vector<Rollout> rollouts;
  std::vector<double> rewards;
};

struct GradEstimate {
  std::vector<double> values;
  int n_rollouts_used = 0;
  /// Fraction of rollouts that pass the correctness-and-length filter (SFT),
  /// or that earn a positive reward (reward-weighted engines).
  double c_L_estimate = 0.0;
  int degenerate_groups = 0;

  double norm() const;
};

/// r - log r - 1 with r = p_ref / p_theta. Returns +infinity when either
/// probability is not strictly positive.
double kl_estimator(double p_theta, double p_ref);

/// Same estimator from log-probabilities; accurate when the two are close.
double kl_estimator_log(double logp_theta, double logp_ref);

/// Mean over groups of the clipped surrogate minus beta times the per-token KL
/// estimate. `p_old` is the behaviour policy, `p_ref` the KL anchor.
double grpo_objective(const PolicyParams& p, const PolicyParams& p_old, const PolicyParams& p_ref,
                      std::span<const RolloutGroup> groups, const AdvantageConfig& adv_cfg,
                      const GrpoConfig& grpo_cfg);

/// Exact gradient of grpo_objective. At p == p_old every ratio is 1 and the
/// per-token weight reduces to A_i + beta * (pi_ref / pi_theta - 1).
GradEstimate grpo_gradient(const PolicyParams& p, const PolicyParams& p_old, const PolicyParams& p_ref,
                           std::span<const RolloutGroup> groups, const AdvantageConfig& adv_cfg,
                           const GrpoConfig& grpo_cfg);

enum class RewardMode { Centered, Raw };

std::string_view to_string(RewardMode m);
RewardMode parse_reward_mode(std::string_view name);

GradEstimate simplified_pg_gradient(const PolicyParams& p, std::span<const RolloutGroup> groups, RewardMode mode,
                                    LengthNorm length_norm);

/// Surrogate whose gradient is simplified_pg_gradient (rewards held fixed).
double simplified_pg_objective(const PolicyParams& p, std::span<const RolloutGroup> groups, RewardMode mode,
                               LengthNorm length_norm);

struct Trajectory {
  Question question;
  Rollout rollout;
  std::vector<double> step_rewards;  // one per token
};

/// Terminal-reward trajectory: zeros everywhere except the last step.
Trajectory terminal_reward_trajectory(const Question& q, const Rollout& r, double reward);

/// (1/N) sum_n sum_t G_t grad log pi(o_t), G_t = sum_{k>=t} discount^(k-t) r_k.
GradEstimate reinforce_gradient(const PolicyParams& p, std::span<const Trajectory> trajectories, double discount);

/// Rollouts in the filtered set C_L: correct and no longer than `tau`.
bool passes_filter(const Rollout& r, int tau);

/// Gradient of the filtered SFT loss, averaged over the filtered set:
///   values = (1/|C_L|) sum_{o in C_L} (1/norm_o) sum_t grad log pi(o_t)
/// c_L_estimate = |C_L| / (total rollouts). The ascent direction of the full
/// on-policy objective is c_L_estimate * values (see sft_ascent_direction).
/// An empty filtered set yields a zero vector and n_rollouts_used = 0.
GradEstimate onpolicy_sft_gradient(const PolicyParams& p, std::span<const RolloutGroup> groups, int tau,
                                   LengthNorm length_norm);

/// c_L * values: the gradient of (1/(total rollouts)) sum_{C_L} (1/M) sum_t log pi.
std::vector<double> sft_ascent_direction(const GradEstimate& g);

/// (1/(total rollouts)) sum_{C_L} (1/norm) sum_t log pi(o_t): the on-policy SFT objective.
double sft_objective(const PolicyParams& p, std::span<const RolloutGroup> groups, int tau, LengthNorm length_norm);

/// Central differences (f(p + h e_k) - f(p - h e_k)) / 2h over every weight.
std::vector<double> finite_diff_gradient(const std::function<double(const PolicyParams&)>& objective,
                                         const PolicyParams& p, double h);

/// Per-rollout length normaliser. `weighted[i]` marks responses that carry
/// weight in the update; BatchMax takes the longest of those (at least 1).
std::vector<double> length_normalizers(std::span<const int> lengths, const std::vector<bool>& weighted,
                                       LengthNorm norm);

}  // namespace opsft
