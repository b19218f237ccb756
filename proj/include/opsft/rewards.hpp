// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

// Length-aware reward shaping. Every variant has the form
//
//   R(o | q) = R_acc(o | q) + gamma(o | q) * R_len(o | q)
//
// except Truncation, which is a single binary criterion.

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opsft/env.hpp"

namespace opsft {

enum class RewardVariant { Truncation, ErRl, Kimi, L1Exact, L1Max, LaserDe, MasteryGated };

std::string_view to_string(RewardVariant v);
/// Accepts the names produced by to_string (case-insensitive); throws ConfigError.
RewardVariant parse_reward_variant(std::string_view name);

struct RewardSpec {
  RewardVariant variant = RewardVariant::Truncation;
  int tau = 40;              // truncation limit
  double alpha = 0.5;        // length-term scale
  double delta = 0.5;        // L1-Max offset
  int target_len = 10;       // L1 target / maximum length
  int laser_threshold = 20;  // LASER-DE length threshold

  void validate() const;
};

/// Group statistics consumed by the group-relative variants.
struct GroupContext {
  std::vector<int> lengths;
  std::vector<bool> correct_flags;
  double mastery_rate = 0.0;
  // Defined only when the group has at least one correct rollout.
  std::optional<double> start_len;        // median length among correct rollouts
  std::optional<int> max_correct_len;     // longest correct rollout
  int group_min_len = 0;
  int group_max_len = 0;
  double mean_len = 0.0;
  double std_len = 0.0;  // population standard deviation over all rollouts

  int size() const { return static_cast<int>(lengths.size()); }
  bool has_correct() const { return start_len.has_value(); }

  static GroupContext from_rollouts(std::span<const Rollout> rollouts);
};

/// True when the variant's length term reads correct-rollout statistics.
bool needs_correct_stats(RewardVariant v);

double truncation_reward(const Rollout& r, int tau);

/// R_len for the variant. Falls back to 0 when the variant needs
/// correct-rollout statistics the group does not have.
double length_reward(RewardVariant variant, const Rollout& r, const GroupContext& ctx, const RewardSpec& spec);

double accuracy_reward(RewardVariant variant, const Rollout& r);
double length_gate(RewardVariant variant, const Rollout& r, const GroupContext& ctx);

double unified_reward(const Rollout& r, const GroupContext& ctx, const RewardSpec& spec);

struct GroupRewards {
  std::vector<double> rewards;
  bool fallback = false;  // length term zeroed for lack of correct rollouts
};

GroupRewards score_group(std::span<const Rollout> rollouts, const RewardSpec& spec);

/// LASER-DE threshold holder. The threshold stays fixed unless an update hook
/// is installed; the hook sees the current value and the latest group.
class LaserThreshold {
 public:
  using Hook = std::function<int(int current, const GroupContext& ctx)>;

  explicit LaserThreshold(int initial, Hook hook = {}) : value_(initial), hook_(std::move(hook)) {}

  int value() const { return value_; }
  void observe(const GroupContext& ctx) {
    if (hook_) {
      value_ = hook_(value_, ctx);
    }
  }

 private:
  int value_;
  Hook hook_;
};

}  // namespace opsft
