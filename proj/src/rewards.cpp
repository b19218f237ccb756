// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#include "opsft/rewards.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "opsft/errors.hpp"

namespace opsft {

namespace {

constexpr std::pair<RewardVariant, std::string_view> kVariantNames[] = {
    {RewardVariant::Truncation, "truncation"}, {RewardVariant::ErRl, "er_rl"},
    {RewardVariant::Kimi, "kimi"},             {RewardVariant::L1Exact, "l1_exact"},
    {RewardVariant::L1Max, "l1_max"},          {RewardVariant::LaserDe, "laser_de"},
    {RewardVariant::MasteryGated, "mastery_gated"},
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double indicator(bool b) { return b ? 1.0 : 0.0; }

}  // namespace

std::string_view to_string(RewardVariant v) {
  for (const auto& [variant, name] : kVariantNames) {
    if (variant == v) {
      return name;
    }
  }
  return "unknown";
}

RewardVariant parse_reward_variant(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& [variant, n] : kVariantNames) {
    if (n == lower) {
      return variant;
    }
  }
  throw ConfigError("unknown reward variant '" + std::string(name) + "'");
}

void RewardSpec::validate() const {
  if (tau < 1) {
    throw ConfigError("reward tau must be >= 1");
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw ConfigError("reward alpha must be finite and >= 0");
  }
  if (!std::isfinite(delta)) {
    throw ConfigError("reward delta must be finite");
  }
}

GroupContext GroupContext::from_rollouts(std::span<const Rollout> rollouts) {
  if (rollouts.empty()) {
    throw ConfigError("a group needs at least one rollout");
  }
  GroupContext ctx;
  std::vector<int> correct_lengths;
  double sum = 0.0;
  for (const Rollout& r : rollouts) {
    ctx.lengths.push_back(r.length());
    ctx.correct_flags.push_back(r.correct);
    sum += r.length();
    if (r.correct) {
      correct_lengths.push_back(r.length());
    }
  }
  const double n = static_cast<double>(rollouts.size());
  ctx.mastery_rate = static_cast<double>(correct_lengths.size()) / n;
  ctx.group_min_len = *std::min_element(ctx.lengths.begin(), ctx.lengths.end());
  ctx.group_max_len = *std::max_element(ctx.lengths.begin(), ctx.lengths.end());
  ctx.mean_len = sum / n;
  double ss = 0.0;
  for (int l : ctx.lengths) {
    ss += (l - ctx.mean_len) * (l - ctx.mean_len);
  }
  ctx.std_len = std::sqrt(ss / n);
  if (!correct_lengths.empty()) {
    std::sort(correct_lengths.begin(), correct_lengths.end());
    const std::size_t k = correct_lengths.size();
    ctx.start_len = k % 2 == 1 ? correct_lengths[k / 2] : 0.5 * (correct_lengths[k / 2 - 1] + correct_lengths[k / 2]);
    ctx.max_correct_len = correct_lengths.back();
  }
  return ctx;
}

bool needs_correct_stats(RewardVariant v) { return v == RewardVariant::MasteryGated; }

double truncation_reward(const Rollout& r, int tau) {
  if (tau < 1) {
    throw ConfigError("tau must be >= 1");
  }
  return indicator(r.correct && r.length() <= tau);
}

double accuracy_reward(RewardVariant variant, const Rollout& r) {
  switch (variant) {
    case RewardVariant::L1Max:
      return 0.0;
    default:
      return indicator(r.correct);
  }
}

double length_gate(RewardVariant variant, const Rollout& r, const GroupContext& ctx) {
  switch (variant) {
    case RewardVariant::ErRl:
    case RewardVariant::L1Max:
      return indicator(r.correct);
    case RewardVariant::MasteryGated:
      return indicator(ctx.mastery_rate == 1.0);
    default:
      return 1.0;
  }
}

double length_reward(RewardVariant variant, const Rollout& r, const GroupContext& ctx, const RewardSpec& spec) {
  const double len = r.length();
  switch (variant) {
    case RewardVariant::Truncation:
      return 0.0;
    case RewardVariant::ErRl: {
      // Zero spread: every rollout sits at the mean.
      const double z = ctx.std_len > 0.0 ? (len - ctx.mean_len) / ctx.std_len : 0.0;
      return -spec.alpha * sigmoid(z);
    }
    case RewardVariant::Kimi: {
      const double span = ctx.group_max_len - ctx.group_min_len;
      const double frac = span > 0.0 ? (len - ctx.group_min_len) / span : 0.0;
      const double value = 0.5 - frac;
      return r.correct ? value : std::min(0.0, value);
    }
    case RewardVariant::L1Exact:
      return -spec.alpha * std::abs(len - spec.target_len);
    case RewardVariant::L1Max:
      return std::clamp(spec.alpha * (len - spec.target_len) + spec.delta, 0.0, 1.0);
    case RewardVariant::LaserDe:
      return spec.alpha * indicator(r.correct) * indicator(len <= spec.laser_threshold) +
             spec.alpha * indicator(!r.correct) * indicator(len > spec.laser_threshold);
    case RewardVariant::MasteryGated: {
      if (!ctx.has_correct()) {
        return 0.0;
      }
      const double start = *ctx.start_len;
      const double longest = *ctx.max_correct_len;
      if (len <= start) {
        return 0.0;
      }
      if (len > longest) {
        return -1.0;
      }
      return -(len - start) / (longest - start);
    }
  }
  throw InternalError("unknown reward variant");
}

double unified_reward(const Rollout& r, const GroupContext& ctx, const RewardSpec& spec) {
  if (spec.variant == RewardVariant::Truncation) {
    return truncation_reward(r, spec.tau);
  }
  const double gate = length_gate(spec.variant, r, ctx);
  const double len_term = gate == 0.0 ? 0.0 : gate * length_reward(spec.variant, r, ctx, spec);
  return accuracy_reward(spec.variant, r) + len_term;
}

GroupRewards score_group(std::span<const Rollout> rollouts, const RewardSpec& spec) {
  const GroupContext ctx = GroupContext::from_rollouts(rollouts);
  GroupRewards out;
  out.fallback = needs_correct_stats(spec.variant) && !ctx.has_correct();
  out.rewards.reserve(rollouts.size());
  for (const Rollout& r : rollouts) {
    out.rewards.push_back(unified_reward(r, ctx, spec));
  }
  return out;
}

}  // namespace opsft
