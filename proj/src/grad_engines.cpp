// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#include "opsft/grad_engines.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "opsft/errors.hpp"

namespace opsft {

namespace {

std::string lowered(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

struct Flat {
  const Question* question;
  const Rollout* rollout;
  std::size_t group;
};

std::vector<Flat> flatten(std::span<const RolloutGroup> groups) {
  std::vector<Flat> out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const RolloutGroup& grp = groups[g];
    if (grp.rollouts.empty()) {
      throw ConfigError("empty rollout group");
    }
    for (const Rollout& r : grp.rollouts) {
      out.push_back({&grp.question, &r, g});
    }
  }
  return out;
}

void check_rewards(const RolloutGroup& g) {
  if (g.rewards.size() != g.rollouts.size()) {
    throw ConfigError("rollout group has " + std::to_string(g.rollouts.size()) + " rollouts but " +
                      std::to_string(g.rewards.size()) + " rewards");
  }
}

std::vector<int> lengths_of(const std::vector<Flat>& flat) {
  std::vector<int> out;
  out.reserve(flat.size());
  for (const Flat& f : flat) {
    out.push_back(f.rollout->length());
  }
  return out;
}

double positive_reward_fraction(std::span<const RolloutGroup> groups) {
  std::size_t total = 0;
  std::size_t positive = 0;
  for (const RolloutGroup& g : groups) {
    for (double r : g.rewards) {
      ++total;
      positive += r > 0.0 ? 1 : 0;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(positive) / static_cast<double>(total);
}

// Per-token quantities for GRPO at the current parameters.
struct GrpoTokenTerms {
  double surrogate = 0.0;    // min(r A, clip(r) A) - beta * kl
  double grad_weight = 0.0;  // d(term)/d log pi_theta(o_t)
};

GrpoTokenTerms grpo_token(double logp, double logp_old, double logp_ref, double adv, const GrpoConfig& cfg) {
  const double ratio = std::exp(logp - logp_old);
  const double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
  GrpoTokenTerms t;
  const double unclipped_term = ratio * adv;
  const double clipped_term = clipped * adv;
  // The min picks the unclipped branch unless clipping lowers the value.
  const bool unclipped_active = unclipped_term <= clipped_term;
  t.surrogate = std::min(unclipped_term, clipped_term);
  double w = unclipped_active ? ratio * adv : 0.0;
  if (cfg.beta != 0.0) {
    t.surrogate -= cfg.beta * kl_estimator_log(logp, logp_ref);
    w += cfg.beta * (std::exp(logp_ref - logp) - 1.0);
  }
  t.grad_weight = w;
  return t;
}

struct GrpoPass {
  double objective = 0.0;
  GradEstimate grad;
};

GrpoPass grpo_pass(const PolicyParams& p, const PolicyParams& p_old, const PolicyParams& p_ref,
                   std::span<const RolloutGroup> groups, const AdvantageConfig& adv_cfg, const GrpoConfig& grpo_cfg,
                   bool want_grad) {
  adv_cfg.validate();
  grpo_cfg.validate();
  if (groups.empty()) {
    throw ConfigError("no rollout groups");
  }
  GrpoPass out;
  if (want_grad) {
    out.grad.values.assign(p.size(), 0.0);
  }

  std::vector<double> adv_flat;
  std::vector<bool> weighted;
  const std::vector<Flat> flat = flatten(groups);
  for (const RolloutGroup& g : groups) {
    check_rewards(g);
    const Advantages a = group_advantages(g.rewards, adv_cfg);
    out.grad.degenerate_groups += a.degenerate ? 1 : 0;
    for (double v : a.values) {
      adv_flat.push_back(v);
      weighted.push_back(v != 0.0 || grpo_cfg.beta != 0.0);
    }
  }
  const std::vector<int> lengths = lengths_of(flat);
  const std::vector<double> norms = length_normalizers(lengths, weighted, grpo_cfg.length_norm);
  const double n_groups = static_cast<double>(groups.size());

  for (std::size_t i = 0; i < flat.size(); ++i) {
    const Flat& f = flat[i];
    const Rollout& r = *f.rollout;
    if (r.tokens.empty() || !weighted[i]) {
      continue;
    }
    ++out.grad.n_rollouts_used;
    const double scale = 1.0 / (n_groups * static_cast<double>(groups[f.group].rollouts.size()) * norms[i]);
    const std::vector<double> lp = token_logprobs(p, *f.question, r.tokens);
    const std::vector<double> lp_old = token_logprobs(p_old, *f.question, r.tokens);
    const std::vector<double> lp_ref = grpo_cfg.beta != 0.0 ? token_logprobs(p_ref, *f.question, r.tokens) : lp;
    std::vector<double> weights(r.tokens.size());
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      const GrpoTokenTerms term = grpo_token(lp[t], lp_old[t], lp_ref[t], adv_flat[i], grpo_cfg);
      out.objective += scale * term.surrogate;
      weights[t] = scale * term.grad_weight;
    }
    if (want_grad) {
      accumulate_weighted_grad(p, *f.question, r.tokens, weights, out.grad.values);
    }
  }
  out.grad.c_L_estimate = positive_reward_fraction(groups);
  return out;
}

void add_reward_weighted(const PolicyParams& p, const Flat& f, double scale, std::span<double> grad) {
  const std::vector<double> w(f.rollout->tokens.size(), scale);
  accumulate_weighted_grad(p, *f.question, f.rollout->tokens, w, grad);
}

std::vector<double> centered_or_raw(const RolloutGroup& g, RewardMode mode) {
  check_rewards(g);
  std::vector<double> out = g.rewards;
  if (mode == RewardMode::Centered) {
    const double mean = std::accumulate(out.begin(), out.end(), 0.0) / static_cast<double>(out.size());
    for (double& v : out) {
      v -= mean;
    }
  }
  return out;
}

struct FilteredBatch {
  std::vector<Flat> kept;
  std::vector<double> norms;
  std::size_t total = 0;
};

FilteredBatch filter_batch(std::span<const RolloutGroup> groups, int tau, LengthNorm length_norm) {
  const std::vector<Flat> flat = flatten(groups);
  std::vector<bool> pass;
  pass.reserve(flat.size());
  for (const Flat& f : flat) {
    pass.push_back(passes_filter(*f.rollout, tau));
  }
  const std::vector<double> norms = length_normalizers(lengths_of(flat), pass, length_norm);
  FilteredBatch out;
  out.total = flat.size();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (pass[i]) {
      out.kept.push_back(flat[i]);
      out.norms.push_back(norms[i]);
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(LengthNorm n) { return n == LengthNorm::PerResponse ? "per_response" : "batch_max"; }

LengthNorm parse_length_norm(std::string_view name) {
  const std::string s = lowered(name);
  if (s == "per_response") {
    return LengthNorm::PerResponse;
  }
  if (s == "batch_max") {
    return LengthNorm::BatchMax;
  }
  throw ConfigError("unknown length_norm '" + std::string(name) + "'");
}

std::string_view to_string(RewardMode m) { return m == RewardMode::Centered ? "centered" : "raw"; }

RewardMode parse_reward_mode(std::string_view name) {
  const std::string s = lowered(name);
  if (s == "centered") {
    return RewardMode::Centered;
  }
  if (s == "raw") {
    return RewardMode::Raw;
  }
  throw ConfigError("unknown reward mode '" + std::string(name) + "'");
}

void AdvantageConfig::validate() const {
  if (!std::isfinite(std_epsilon) || std_epsilon < 0.0) {
    throw ConfigError("std_epsilon must be finite and >= 0");
  }
}

void GrpoConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw ConfigError("beta must be finite and >= 0");
  }
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
    throw ConfigError("clip_eps must lie in (0, 1)");
  }
}

double GradEstimate::norm() const {
  double ss = 0.0;
  for (double v : values) {
    ss += v * v;
  }
  return std::sqrt(ss);
}

Advantages group_advantages(std::span<const double> rewards, const AdvantageConfig& cfg) {
  cfg.validate();
  if (rewards.empty()) {
    throw ConfigError("advantages need at least one reward");
  }
  if (cfg.divide_std && rewards.size() < 2) {
    throw ConfigError("std normalisation needs a group of at least 2");
  }
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  Advantages out;
  out.values.assign(rewards.begin(), rewards.end());
  if (cfg.subtract_mean) {
    for (double& v : out.values) {
      v -= mean;
    }
  }
  if (cfg.divide_std) {
    double ss = 0.0;
    for (double r : rewards) {
      ss += (r - mean) * (r - mean);
    }
    const double denom_n = cfg.std_mode == StdMode::Sample ? n - 1.0 : n;
    const double sd = std::sqrt(ss / denom_n) + cfg.std_epsilon;
    if (sd == 0.0) {
      out.degenerate = true;
      std::fill(out.values.begin(), out.values.end(), 0.0);
    } else {
      for (double& v : out.values) {
        v /= sd;
      }
    }
  }
  return out;
}

double kl_estimator(double p_theta, double p_ref) {
  if (!(p_theta > 0.0) || !(p_ref > 0.0)) {
    return std::numeric_limits<double>::infinity();
  }
  return kl_estimator_log(std::log(p_theta), std::log(p_ref));
}

double kl_estimator_log(double logp_theta, double logp_ref) {
  if (!std::isfinite(logp_theta) || !std::isfinite(logp_ref)) {
    return std::numeric_limits<double>::infinity();
  }
  // r - log r - 1 = expm1(d) - d with d = log r.
  const double d = logp_ref - logp_theta;
  return std::max(0.0, std::expm1(d) - d);
}

double grpo_objective(const PolicyParams& p, const PolicyParams& p_old, const PolicyParams& p_ref,
                      std::span<const RolloutGroup> groups, const AdvantageConfig& adv_cfg,
                      const GrpoConfig& grpo_cfg) {
  return grpo_pass(p, p_old, p_ref, groups, adv_cfg, grpo_cfg, false).objective;
}

GradEstimate grpo_gradient(const PolicyParams& p, const PolicyParams& p_old, const PolicyParams& p_ref,
                           std::span<const RolloutGroup> groups, const AdvantageConfig& adv_cfg,
                           const GrpoConfig& grpo_cfg) {
  return grpo_pass(p, p_old, p_ref, groups, adv_cfg, grpo_cfg, true).grad;
}

std::vector<double> length_normalizers(std::span<const int> lengths, const std::vector<bool>& weighted,
                                       LengthNorm norm) {
  std::vector<double> out(lengths.size(), 1.0);
  if (norm == LengthNorm::PerResponse) {
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      out[i] = std::max(1, lengths[i]);
    }
    return out;
  }
  int longest = 1;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (weighted[i]) {
      longest = std::max(longest, lengths[i]);
    }
  }
  std::fill(out.begin(), out.end(), static_cast<double>(longest));
  return out;
}

GradEstimate simplified_pg_gradient(const PolicyParams& p, std::span<const RolloutGroup> groups, RewardMode mode,
                                    LengthNorm length_norm) {
  if (groups.empty()) {
    throw ConfigError("no rollout groups");
  }
  GradEstimate out;
  out.values.assign(p.size(), 0.0);
  const std::vector<Flat> flat = flatten(groups);
  std::vector<double> weights;
  std::vector<bool> weighted;
  for (const RolloutGroup& g : groups) {
    for (double v : centered_or_raw(g, mode)) {
      weights.push_back(v);
      weighted.push_back(v != 0.0);
    }
  }
  const std::vector<double> norms = length_normalizers(lengths_of(flat), weighted, length_norm);
  const double n_groups = static_cast<double>(groups.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (!weighted[i]) {
      continue;
    }
    ++out.n_rollouts_used;
    const double g_size = static_cast<double>(groups[flat[i].group].rollouts.size());
    add_reward_weighted(p, flat[i], weights[i] / (n_groups * g_size * norms[i]), out.values);
  }
  out.c_L_estimate = positive_reward_fraction(groups);
  return out;
}

double simplified_pg_objective(const PolicyParams& p, std::span<const RolloutGroup> groups, RewardMode mode,
                               LengthNorm length_norm) {
  const std::vector<Flat> flat = flatten(groups);
  std::vector<double> weights;
  std::vector<bool> weighted;
  for (const RolloutGroup& g : groups) {
    for (double v : centered_or_raw(g, mode)) {
      weights.push_back(v);
      weighted.push_back(v != 0.0);
    }
  }
  const std::vector<double> norms = length_normalizers(lengths_of(flat), weighted, length_norm);
  const double n_groups = static_cast<double>(groups.size());
  double total = 0.0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (!weighted[i]) {
      continue;
    }
    const double g_size = static_cast<double>(groups[flat[i].group].rollouts.size());
    total += weights[i] / (n_groups * g_size * norms[i]) * logprob(p, *flat[i].question, flat[i].rollout->tokens);
  }
  return total;
}

Trajectory terminal_reward_trajectory(const Question& q, const Rollout& r, double reward) {
  Trajectory t{q, r, std::vector<double>(r.tokens.size(), 0.0)};
  if (!t.step_rewards.empty()) {
    t.step_rewards.back() = reward;
  }
  return t;
}

GradEstimate reinforce_gradient(const PolicyParams& p, std::span<const Trajectory> trajectories, double discount) {
  if (!(discount >= 0.0 && discount <= 1.0)) {
    throw ConfigError("discount must lie in [0, 1]");
  }
  GradEstimate out;
  out.values.assign(p.size(), 0.0);
  if (trajectories.empty()) {
    return out;
  }
  const double n = static_cast<double>(trajectories.size());
  std::size_t positive = 0;
  for (const Trajectory& tr : trajectories) {
    const std::size_t len = tr.rollout.tokens.size();
    if (tr.step_rewards.size() != len) {
      throw ConfigError("per-step rewards must align with rollout tokens");
    }
    std::vector<double> returns(len, 0.0);
    double running = 0.0;
    double episode = 0.0;
    for (std::size_t k = len; k-- > 0;) {
      running = tr.step_rewards[k] + discount * running;
      returns[k] = running / n;
      episode += tr.step_rewards[k];
    }
    positive += episode > 0.0 ? 1 : 0;
    if (std::any_of(returns.begin(), returns.end(), [](double v) { return v != 0.0; })) {
      ++out.n_rollouts_used;
      accumulate_weighted_grad(p, tr.question, tr.rollout.tokens, returns, out.values);
    }
  }
  out.c_L_estimate = static_cast<double>(positive) / n;
  return out;
}

bool passes_filter(const Rollout& r, int tau) { return r.correct && r.length() <= tau; }

GradEstimate onpolicy_sft_gradient(const PolicyParams& p, std::span<const RolloutGroup> groups, int tau,
                                   LengthNorm length_norm) {
  if (tau < 1) {
    throw ConfigError("length limit must be >= 1");
  }
  const FilteredBatch batch = filter_batch(groups, tau, length_norm);
  GradEstimate out;
  out.values.assign(p.size(), 0.0);
  out.n_rollouts_used = static_cast<int>(batch.kept.size());
  out.c_L_estimate = batch.total == 0 ? 0.0 : static_cast<double>(batch.kept.size()) / static_cast<double>(batch.total);
  if (batch.kept.empty()) {
    return out;
  }
  const double n_kept = static_cast<double>(batch.kept.size());
  for (std::size_t i = 0; i < batch.kept.size(); ++i) {
    add_reward_weighted(p, batch.kept[i], 1.0 / (n_kept * batch.norms[i]), out.values);
  }
  return out;
}

std::vector<double> sft_ascent_direction(const GradEstimate& g) {
  std::vector<double> out = g.values;
  for (double& v : out) {
    v *= g.c_L_estimate;
  }
  return out;
}

double sft_objective(const PolicyParams& p, std::span<const RolloutGroup> groups, int tau, LengthNorm length_norm) {
  const FilteredBatch batch = filter_batch(groups, tau, length_norm);
  if (batch.total == 0) {
    return 0.0;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < batch.kept.size(); ++i) {
    total += logprob(p, *batch.kept[i].question, batch.kept[i].rollout->tokens) / batch.norms[i];
  }
  return total / static_cast<double>(batch.total);
}

std::vector<double> finite_diff_gradient(const std::function<double(const PolicyParams&)>& objective,
                                         const PolicyParams& p, double h) {
  if (!(h > 0.0)) {
    throw ConfigError("finite-difference step must be > 0");
  }
  std::vector<double> out(p.size(), 0.0);
  PolicyParams probe = p;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double w = p.weights()[k];
    probe.weights()[k] = w + h;
    const double up = objective(probe);
    probe.weights()[k] = w - h;
    const double down = objective(probe);
    probe.weights()[k] = w;
    out[k] = (up - down) / (2.0 * h);
  }
  return out;
}

}  // namespace opsft
