// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#include "opsft/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <thread>

#include <nlohmann/json.hpp>

#include "opsft/errors.hpp"

namespace opsft {

namespace {

// Independent seed streams of a run.
enum Stream : std::uint64_t { kPoolStream = 1, kBatchStream = 2, kRolloutStream = 3, kEvalStream = 4 };

std::string lowered(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t w = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), 1, std::max<std::size_t>(n, 1));
  if (w == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(w);
  for (std::size_t k = 0; k < w; ++k) {
    pool.emplace_back([&, k] {
      for (std::size_t i = k; i < n; i += w) {
        fn(i);
      }
    });
  }
}

struct BatchStats {
  double mean_length = 0.0;
  double accuracy = 0.0;
};

BatchStats batch_stats(std::span<const RolloutGroup> groups) {
  std::size_t n = 0;
  std::size_t correct = 0;
  double len = 0.0;
  for (const RolloutGroup& g : groups) {
    for (const Rollout& r : g.rollouts) {
      ++n;
      correct += r.correct ? 1 : 0;
      len += r.length();
    }
  }
  if (n == 0) {
    return {};
  }
  return {len / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

double l2(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) {
    ss += x * x;
  }
  return std::sqrt(ss);
}

// Mean over rollouts of R * log pi(o): the surrogate behind terminal-reward REINFORCE.
double reinforce_surrogate(const PolicyParams& p, std::span<const Trajectory> trajectories, double discount) {
  double total = 0.0;
  for (const Trajectory& tr : trajectories) {
    const std::vector<double> lp = token_logprobs(p, tr.question, tr.rollout.tokens);
    double running = 0.0;
    for (std::size_t k = lp.size(); k-- > 0;) {
      running = tr.step_rewards[k] + discount * running;
      total += running * lp[k];
    }
  }
  return trajectories.empty() ? 0.0 : total / static_cast<double>(trajectories.size());
}

}  // namespace

std::string_view to_string(EngineKind e) {
  switch (e) {
    case EngineKind::OnPolicySft:
      return "onpolicy_sft";
    case EngineKind::Grpo:
      return "grpo";
    case EngineKind::SimplifiedPg:
      return "simplified_pg";
    case EngineKind::Reinforce:
      return "reinforce";
  }
  return "unknown";
}

EngineKind parse_engine(std::string_view name) {
  const std::string s = lowered(name);
  for (EngineKind e : {EngineKind::OnPolicySft, EngineKind::Grpo, EngineKind::SimplifiedPg, EngineKind::Reinforce}) {
    if (to_string(e) == s) {
      return e;
    }
  }
  throw ConfigError("unknown engine '" + std::string(name) + "'");
}

std::string_view to_string(Regime r) { return r == Regime::OnPolicy ? "onpolicy" : "offpolicy"; }

Regime parse_regime(std::string_view name) {
  const std::string s = lowered(name);
  if (s == "onpolicy") {
    return Regime::OnPolicy;
  }
  if (s == "offpolicy") {
    return Regime::OffPolicy;
  }
  throw ConfigError("unknown regime '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) {
      throw ConfigError(what);
    }
  };
  require(modulus >= 2, "modulus must be >= 2");
  require(max_operands >= 2 && max_operands <= 5, "max_operands must be in [2, 5]");
  require(train_questions >= 1, "train_questions must be >= 1");
  require(probe_questions >= 1, "probe_questions must be >= 1");
  require(group_size >= 1, "group_size must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(length_limit >= 1, "length_limit must be >= 1");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning_rate must be finite and >= 0");
  require(total_steps >= 0, "total_steps must be >= 0");
  require(rollout_temperature > 0.0 && std::isfinite(rollout_temperature), "rollout_temperature must be > 0");
  require(max_gen_len >= 1, "max_gen_len must be >= 1");
  require(discount >= 0.0 && discount <= 1.0, "discount must lie in [0, 1]");
  require(offpolicy_refresh_steps >= 1, "offpolicy_refresh_steps must be >= 1");
  require(eval_every >= 0, "eval_every must be >= 0");
  require(eval_samples >= 1, "eval_samples must be >= 1");
  require(eval_temperature > 0.0, "eval_temperature must be > 0");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(workers >= 1, "workers must be >= 1");
  require(warm_start.n_demos >= 1, "warmstart_demos must be >= 1");
  require(warm_start.epochs >= 0, "warmstart_epochs must be >= 0");
  require(warm_start.verbosity >= 0.0, "warmstart_verbosity must be >= 0");
  require(warm_start.learning_rate > 0.0, "warmstart_lr must be > 0");
  reward.validate();
  advantage.validate();
  grpo.validate();
  if (engine == EngineKind::Grpo && advantage.divide_std && group_size < 2) {
    throw ConfigError("std-normalised advantages need group_size >= 2");
  }
}

nlohmann::json to_json(const StepLog& log) {
  return {{"step", log.step},
          {"mean_length", log.mean_length},
          {"accuracy", log.accuracy},
          {"c_L", log.c_L},
          {"grad_norm", log.grad_norm},
          {"loss", log.loss},
          {"degenerate_groups", log.degenerate_groups},
          {"fallback_groups", log.fallback_groups},
          {"rollouts_used", log.rollouts_used}};
}

TrainState make_state(const PolicyParams& init) { return TrainState{init, init, std::nullopt}; }

WarmStartResult warm_start(const PolicyParams& init, const WarmStartConfig& cfg) {
  if (cfg.n_demos < 1) {
    throw ConfigError("warm start needs at least one demo");
  }
  if (cfg.epochs < 0 || !(cfg.learning_rate > 0.0)) {
    throw ConfigError("warm start needs epochs >= 0 and a positive learning rate");
  }
  if (init.modulus() != cfg.modulus) {
    throw ConfigError("warm start modulus does not match the policy");
  }
  WarmStartResult out{init, {}};
  if (cfg.epochs == 0) {
    return out;
  }

  // The features of every demo position are fixed. Positions with the same
  // active set share a softmax, so keep one row per set with target counts.
  const std::vector<Question> questions = gen_questions(derive_seed(cfg.seed, 11), cfg.n_demos, cfg.modulus,
                                                        cfg.max_operands);
  Rng rng(derive_seed(cfg.seed, 12));
  const Vocabulary vocab(cfg.modulus);
  const auto V = static_cast<std::size_t>(init.vocab_size());
  std::map<std::vector<int>, std::size_t> row_of;
  std::vector<std::vector<int>> row_features;
  std::vector<double> counts;  // row-major, rows x V
  double n_pos = 0.0;
  for (const Question& q : questions) {
    const TokenSeq demo = teacher_demo(q, cfg.verbosity, rng);
    for (std::size_t t = 0; t < demo.size(); ++t) {
      std::vector<int> active = features(q, std::span<const Token>(demo).first(t)).active;
      auto [it, fresh] = row_of.try_emplace(std::move(active), row_features.size());
      if (fresh) {
        row_features.push_back(it->first);
        counts.resize(counts.size() + V, 0.0);
      }
      counts[it->second * V + static_cast<std::size_t>(vocab.index(demo[t]))] += 1.0;
      n_pos += 1.0;
    }
  }
  std::vector<double> row_total(row_features.size(), 0.0);
  for (std::size_t i = 0; i < row_features.size(); ++i) {
    for (std::size_t y = 0; y < V; ++y) {
      row_total[i] += counts[i * V + y];
    }
  }

  PolicyParams& p = out.params;
  std::vector<double> grad(p.size());
  std::vector<double> z(V);
  auto loglik_and_grad = [&] {
    std::fill(grad.begin(), grad.end(), 0.0);
    double ll = 0.0;
    for (std::size_t i = 0; i < row_features.size(); ++i) {
      std::fill(z.begin(), z.end(), 0.0);
      for (int f : row_features[i]) {
        for (std::size_t y = 0; y < V; ++y) {
          z[y] += p.at(f, static_cast<int>(y));
        }
      }
      const double top = *std::max_element(z.begin(), z.end());
      double total = 0.0;
      for (double& zi : z) {
        zi = std::exp(zi - top);
        total += zi;
      }
      const double log_total = std::log(total);
      const double* c = counts.data() + i * V;
      for (std::size_t y = 0; y < V; ++y) {
        if (c[y] > 0.0) {
          ll += c[y] * (std::log(z[y]) - log_total);
        }
      }
      for (int f : row_features[i]) {
        double* row = grad.data() + static_cast<std::size_t>(f) * V;
        for (std::size_t y = 0; y < V; ++y) {
          row[y] += c[y] - row_total[i] * z[y] / total;
        }
      }
    }
    for (double& g : grad) {
      g /= n_pos;
    }
    return ll / n_pos;
  };

  double previous = loglik_and_grad();
  int falling = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    p.add_scaled(grad, cfg.learning_rate);
    const double ll = loglik_and_grad();
    out.mean_loglik.push_back(ll);
    falling = ll < previous ? falling + 1 : 0;
    if (falling >= 10) {
      throw TrainingError("warm start diverged: demo log-likelihood fell for 10 consecutive epochs");
    }
    previous = ll;
  }
  return out;
}

std::uint64_t step_seed(std::uint64_t run_seed, int step) {
  return derive_seed(run_seed, kRolloutStream, static_cast<std::uint64_t>(step));
}

std::vector<RolloutGroup> sample_groups(const PolicyParams& behaviour, std::span<const Question> batch,
                                        int group_size, double temperature, int max_len, std::uint64_t seed,
                                        int workers) {
  if (group_size < 1) {
    throw ConfigError("group_size must be >= 1");
  }
  std::vector<RolloutGroup> groups(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t b) {
    Rng rng(derive_seed(seed, b));
    RolloutGroup& g = groups[b];
    g.question = batch[b];
    g.rollouts.reserve(static_cast<std::size_t>(group_size));
    for (int i = 0; i < group_size; ++i) {
      g.rollouts.push_back(sample_rollout(behaviour, batch[b], temperature, max_len, rng));
    }
  });
  return groups;
}

namespace {

void set_truncation_rewards(std::vector<RolloutGroup>& groups, int limit) {
  for (RolloutGroup& g : groups) {
    g.rewards.clear();
    for (const Rollout& r : g.rollouts) {
      g.rewards.push_back(truncation_reward(r, limit));
    }
  }
}

}  // namespace

StepLog sft_train_step(TrainState& state, std::span<const Question> batch, const TrainConfig& cfg,
                       std::uint64_t seed, int step) {
  const PolicyParams old = state.params;  // on-policy snapshot
  std::vector<RolloutGroup> groups =
      sample_groups(old, batch, cfg.group_size, cfg.rollout_temperature, cfg.max_gen_len, seed, cfg.workers);
  set_truncation_rewards(groups, cfg.length_limit);

  const GradEstimate g = onpolicy_sft_gradient(state.params, groups, cfg.length_limit, cfg.length_norm);
  const std::vector<double> direction = sft_ascent_direction(g);

  StepLog log;
  log.step = step;
  const BatchStats stats = batch_stats(groups);
  log.mean_length = stats.mean_length;
  log.accuracy = stats.accuracy;
  log.c_L = g.c_L_estimate;
  log.grad_norm = l2(direction);
  log.loss = -sft_objective(old, groups, cfg.length_limit, cfg.length_norm);
  log.rollouts_used = g.n_rollouts_used;

  if (g.n_rollouts_used > 0) {
    state.params.add_scaled(direction, cfg.learning_rate);
  }
  return log;
}

StepLog rl_train_step(TrainState& state, std::span<const Question> batch, const TrainConfig& cfg,
                      std::uint64_t seed, int step) {
  if (cfg.engine == EngineKind::OnPolicySft) {
    return sft_train_step(state, batch, cfg, seed, step);
  }
  const PolicyParams old = state.params;
  std::vector<RolloutGroup> groups =
      sample_groups(old, batch, cfg.group_size, cfg.rollout_temperature, cfg.max_gen_len, seed, cfg.workers);

  StepLog log;
  log.step = step;
  RewardSpec spec = cfg.reward;
  for (RolloutGroup& g : groups) {
    if (spec.variant == RewardVariant::LaserDe && state.laser) {
      spec.laser_threshold = state.laser->value();
    }
    GroupRewards scored = score_group(g.rollouts, spec);
    g.rewards = std::move(scored.rewards);
    log.fallback_groups += scored.fallback ? 1 : 0;
    if (spec.variant == RewardVariant::LaserDe && state.laser) {
      state.laser->observe(GroupContext::from_rollouts(g.rollouts));
    }
  }

  GradEstimate g;
  switch (cfg.engine) {
    case EngineKind::Grpo: {
      GrpoConfig gc = cfg.grpo;
      gc.length_norm = cfg.length_norm;
      g = grpo_gradient(state.params, old, state.reference, groups, cfg.advantage, gc);
      log.loss = -grpo_objective(old, old, state.reference, groups, cfg.advantage, gc);
      break;
    }
    case EngineKind::SimplifiedPg:
      g = simplified_pg_gradient(state.params, groups, cfg.pg_reward_mode, cfg.length_norm);
      log.loss = -simplified_pg_objective(old, groups, cfg.pg_reward_mode, cfg.length_norm);
      break;
    case EngineKind::Reinforce: {
      std::vector<Trajectory> trajectories;
      for (const RolloutGroup& grp : groups) {
        for (std::size_t i = 0; i < grp.rollouts.size(); ++i) {
          trajectories.push_back(terminal_reward_trajectory(grp.question, grp.rollouts[i], grp.rewards[i]));
        }
      }
      g = reinforce_gradient(state.params, trajectories, cfg.discount);
      log.loss = -reinforce_surrogate(old, trajectories, cfg.discount);
      break;
    }
    case EngineKind::OnPolicySft:
      break;
  }

  const BatchStats stats = batch_stats(groups);
  log.mean_length = stats.mean_length;
  log.accuracy = stats.accuracy;
  log.c_L = g.c_L_estimate;
  log.grad_norm = g.norm();
  log.degenerate_groups = g.degenerate_groups;
  log.rollouts_used = g.n_rollouts_used;
  state.params.add_scaled(g.values, cfg.learning_rate);
  return log;
}

EvalResult evaluate_policy(const PolicyParams& p, std::span<const Question> probe, int n_samples, double temperature,
                           int max_len, std::uint64_t seed, double baseline_tokens, int workers) {
  if (probe.empty()) {
    throw RefusalError("empty probe set");
  }
  if (n_samples < 1) {
    throw ConfigError("n_samples must be >= 1");
  }
  const std::vector<RolloutGroup> groups = sample_groups(p, probe, n_samples, temperature, max_len, seed, workers);
  EvalResult out;
  out.samples.reserve(groups.size());
  for (const RolloutGroup& g : groups) {
    QuestionSamples qs{g.question.id, {}};
    for (const Rollout& r : g.rollouts) {
      qs.samples.push_back({r.length(), r.correct});
    }
    out.samples.push_back(std::move(qs));
  }
  out.report = make_report(out.samples, baseline_tokens);
  return out;
}

std::size_t OffPolicyDataset::size() const {
  std::size_t n = 0;
  for (const OffPolicyChunk& c : chunks) {
    for (const auto& kept : c.kept) {
      n += kept.size();
    }
  }
  return n;
}

OffPolicyDataset build_offpolicy_dataset(const PolicyParams& frozen, std::span<const Question> questions,
                                         const TrainConfig& cfg, int first_step) {
  OffPolicyDataset ds;
  const auto chunk = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0, k = 0; start < questions.size(); start += chunk, ++k) {
    const std::span<const Question> qs = questions.subspan(start, std::min(chunk, questions.size() - start));
    const std::vector<RolloutGroup> groups =
        sample_groups(frozen, qs, cfg.group_size, cfg.rollout_temperature, cfg.max_gen_len,
                      step_seed(cfg.seed, first_step + static_cast<int>(k)), cfg.workers);
    OffPolicyChunk c;
    for (const RolloutGroup& g : groups) {
      c.questions.push_back(g.question);
      std::vector<Rollout> kept;
      for (const Rollout& r : g.rollouts) {
        ++c.sampled;
        c.correct += r.correct ? 1 : 0;
        c.total_length += r.length();
        if (passes_filter(r, cfg.length_limit)) {
          kept.push_back(r);
        }
      }
      c.kept.push_back(std::move(kept));
    }
    ds.chunks.push_back(std::move(c));
  }
  return ds;
}

std::vector<StepLog> train_offpolicy(TrainState& state, const OffPolicyDataset& dataset, int epochs,
                                     const TrainConfig& cfg, int first_step) {
  if (dataset.empty()) {
    throw RefusalError("off-policy dataset is empty after filtering");
  }
  std::vector<StepLog> logs;
  int step = first_step;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (const OffPolicyChunk& c : dataset.chunks) {
      std::vector<RolloutGroup> groups;
      for (std::size_t i = 0; i < c.questions.size(); ++i) {
        if (!c.kept[i].empty()) {
          groups.push_back({c.questions[i], c.kept[i], std::vector<double>(c.kept[i].size(), 1.0)});
        }
      }
      StepLog log;
      log.step = step++;
      log.mean_length = c.sampled > 0 ? c.total_length / c.sampled : 0.0;
      log.accuracy = c.sampled > 0 ? static_cast<double>(c.correct) / c.sampled : 0.0;
      if (!groups.empty()) {
        // Every kept rollout passes the filter; rescale from |C_L| to the number drawn.
        const GradEstimate g = onpolicy_sft_gradient(state.params, groups, cfg.length_limit, cfg.length_norm);
        const double c_L = static_cast<double>(g.n_rollouts_used) / c.sampled;
        std::vector<double> direction = g.values;
        for (double& v : direction) {
          v *= c_L;
        }
        log.c_L = c_L;
        log.grad_norm = l2(direction);
        log.loss = -sft_objective(state.params, groups, cfg.length_limit, cfg.length_norm) *
                   static_cast<double>(g.n_rollouts_used) / c.sampled;
        log.rollouts_used = g.n_rollouts_used;
        state.params.add_scaled(direction, cfg.learning_rate);
      }
      logs.push_back(log);
    }
  }
  return logs;
}

std::vector<Question> training_pool(const TrainConfig& cfg) {
  return gen_questions(derive_seed(cfg.seed, kPoolStream), cfg.train_questions, cfg.modulus, cfg.max_operands);
}

std::vector<Question> probe_set(const TrainConfig& cfg) {
  std::vector<Question> probe = gen_questions(cfg.probe_seed, cfg.probe_questions, cfg.modulus, cfg.max_operands);
  return probe;
}

std::vector<Question> step_batch(std::span<const Question> pool, const TrainConfig& cfg, int step) {
  Rng rng(derive_seed(cfg.seed, kBatchStream, static_cast<std::uint64_t>(step)));
  std::vector<Question> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int b = 0; b < cfg.batch_size; ++b) {
    batch.push_back(pool[uniform_below(rng, pool.size())]);
  }
  return batch;
}

std::uint64_t eval_seed(const TrainConfig& cfg) { return derive_seed(cfg.seed, kEvalStream); }

PolicyParams initial_policy(const TrainConfig& cfg) {
  if (!cfg.init_checkpoint.empty()) {
    PolicyParams p = load_checkpoint(cfg.init_checkpoint);
    if (p.modulus() != cfg.modulus) {
      throw ConfigError("initial checkpoint modulus does not match the config");
    }
    return p;
  }
  WarmStartConfig ws = cfg.warm_start;
  ws.modulus = cfg.modulus;
  ws.max_operands = cfg.max_operands;
  return warm_start(PolicyParams(cfg.modulus), ws).params;
}

RunResult run(const TrainConfig& cfg, const RunCallbacks& callbacks) {
  cfg.validate();
  return run_from(initial_policy(cfg), cfg, callbacks);
}

RunResult run_from(const PolicyParams& init, const TrainConfig& cfg, const RunCallbacks& callbacks) {
  cfg.validate();
  if (init.modulus() != cfg.modulus) {
    throw ConfigError("initial policy modulus does not match the config");
  }
  const std::vector<Question> pool = training_pool(cfg);
  const std::vector<Question> probe = probe_set(cfg);
  const std::uint64_t probe_eval_seed = eval_seed(cfg);

  RunResult result{init, init, {}, {}};
  TrainState state = make_state(init);
  if (cfg.reward.variant == RewardVariant::LaserDe) {
    state.laser.emplace(cfg.reward.laser_threshold);
  }

  double baseline = 0.0;
  auto do_eval = [&](int step) {
    const EvalResult ev = evaluate_policy(state.params, probe, cfg.eval_samples, cfg.eval_temperature,
                                          cfg.max_gen_len, probe_eval_seed, baseline, cfg.workers);
    if (baseline <= 0.0) {
      baseline = ev.report.avg_tokens;
    }
    result.evals.emplace_back(step, ev.report);
    if (callbacks.on_eval) {
      callbacks.on_eval(step, ev.report);
    }
  };
  auto record = [&](const StepLog& log) {
    result.logs.push_back(log);
    if (callbacks.on_step) {
      callbacks.on_step(log);
    }
    const int done = log.step + 1;
    if (cfg.eval_every > 0 && done % cfg.eval_every == 0 && done != cfg.total_steps) {
      do_eval(done);
    }
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && callbacks.on_checkpoint) {
      callbacks.on_checkpoint(done, state.params);
    }
  };

  do_eval(0);
  if (cfg.regime == Regime::OnPolicy) {
    for (int step = 0; step < cfg.total_steps; ++step) {
      const std::vector<Question> batch = step_batch(pool, cfg, step);
      record(rl_train_step(state, batch, cfg, step_seed(cfg.seed, step), step));
    }
  } else {
    // Regenerate a fixed dataset from the current policy every refresh period
    // and replay it once; the question budget matches the on-policy run.
    for (int start = 0; start < cfg.total_steps; start += cfg.offpolicy_refresh_steps) {
      const int span_steps = std::min(cfg.offpolicy_refresh_steps, cfg.total_steps - start);
      std::vector<Question> questions;
      for (int s = start; s < start + span_steps; ++s) {
        const std::vector<Question> batch = step_batch(pool, cfg, s);
        questions.insert(questions.end(), batch.begin(), batch.end());
      }
      const OffPolicyDataset ds = build_offpolicy_dataset(state.params, questions, cfg, start);
      if (ds.empty()) {
        for (int s = start; s < start + span_steps; ++s) {
          StepLog log;
          log.step = s;
          record(log);
        }
        continue;
      }
      // Replay chunk by chunk so evaluation and checkpoints see the live policy.
      for (std::size_t k = 0; k < ds.chunks.size(); ++k) {
        OffPolicyDataset one;
        one.chunks.push_back(ds.chunks[k]);
        if (one.empty()) {
          StepLog log;
          log.step = start + static_cast<int>(k);
          const OffPolicyChunk& c = ds.chunks[k];
          log.mean_length = c.sampled > 0 ? c.total_length / c.sampled : 0.0;
          log.accuracy = c.sampled > 0 ? static_cast<double>(c.correct) / c.sampled : 0.0;
          record(log);
          continue;
        }
        for (const StepLog& log : train_offpolicy(state, one, 1, cfg, start + static_cast<int>(k))) {
          record(log);
        }
      }
    }
  }
  if (cfg.total_steps > 0) {
    do_eval(cfg.total_steps);
  }
  result.final_params = state.params;
  return result;
}

}  // namespace opsft
