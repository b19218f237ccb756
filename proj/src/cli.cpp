// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#include "opsft/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include <nlohmann/json.hpp>

#include "opsft/config.hpp"
#include "opsft/diagnostics.hpp"
#include "opsft/errors.hpp"
#include "opsft/grad_engines.hpp"
#include "opsft/metrics.hpp"
#include "opsft/policy.hpp"
#include "opsft/rng.hpp"
#include "opsft/trainer.hpp"

namespace fs = std::filesystem;

namespace opsft {

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw RefusalError("cannot write " + path.string());
  }
  out << std::setprecision(17);
  return out;
}

void prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw RefusalError("cannot create output directory " + dir);
  }
}

TrainConfig config_for(const CommandOptions& opts) {
  TrainConfig cfg;
  if (!opts.config_path.empty()) {
    cfg = load_config(opts.config_path);
  }
  return cfg;
}

// Maps the error taxonomy to exit codes.
template <typename Fn>
int guarded(std::ostream& err, Fn&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

void require_same_shape(const PolicyParams& a, const PolicyParams& b) {
  if (a.modulus() != b.modulus() || a.feature_dim() != b.feature_dim() || a.vocab_size() != b.vocab_size()) {
    throw ConfigError("checkpoints have different vocabularies or feature layouts");
  }
}

std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", x);
  return buf;
}

}  // namespace

int cmd_train(const CommandOptions& opts, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    if (opts.config_path.empty()) {
      throw ConfigError("train needs --config");
    }
    TrainConfig cfg = config_for(opts);
    if (opts.seed) {
      cfg.seed = *opts.seed;
    }
    if (opts.temperature) {
      cfg.rollout_temperature = *opts.temperature;
    }
    cfg.validate();
    prepare_out_dir(opts.out_dir);
    const fs::path out(opts.out_dir);

    {
      std::ofstream resolved = open_output(out / "config.txt");
      write_config(resolved, cfg);
    }
    std::ofstream steps = open_output(out / "steps.jsonl");
    std::ofstream evals = open_output(out / "evals.jsonl");
    std::ofstream evals_csv = open_output(out / "evals.csv");
    write_report_csv_header(evals_csv);

    const PolicyParams init = initial_policy(cfg);
    save_checkpoint((out / "initial.ckpt").string(), init);

    RunCallbacks cb;
    cb.on_step = [&](const StepLog& s) { steps << to_json(s).dump() << '\n'; };
    cb.on_eval = [&](int step, const EvalReport& r) {
      nlohmann::json j = to_json(r);
      j["step"] = step;
      evals << j.dump() << '\n';
      write_report_csv_row(evals_csv, r, step);
      log << "step " << step << ": accuracy " << r.accuracy << ", avg tokens " << r.avg_tokens << ", CR "
          << r.compression_rate << '\n';
    };
    cb.on_checkpoint = [&](int step, const PolicyParams& p) {
      save_checkpoint((out / ("step_" + std::to_string(step) + ".ckpt")).string(), p);
    };
    const RunResult result = run_from(init, cfg, cb);
    save_checkpoint((out / "final.ckpt").string(), result.final_params);
    log << "wrote " << result.logs.size() << " step logs to " << (out / "steps.jsonl").string() << '\n';
    return static_cast<int>(kExitOk);
  });
}

int cmd_eval(const CommandOptions& opts, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    if (opts.checkpoints.empty() || opts.checkpoints.size() > 2) {
      throw ConfigError("eval needs one --checkpoint (and optionally a baseline --checkpoint)");
    }
    TrainConfig cfg = config_for(opts);
    if (opts.seed) {
      cfg.probe_seed = *opts.seed;
    }
    const int n = opts.n.value_or(cfg.eval_samples);
    const double temperature = opts.temperature.value_or(cfg.eval_temperature);
    const PolicyParams p = load_checkpoint(opts.checkpoints[0]);
    if (p.modulus() != cfg.modulus) {
      throw ConfigError("checkpoint modulus " + std::to_string(p.modulus()) + " does not match config modulus " +
                        std::to_string(cfg.modulus));
    }
    const std::vector<Question> probe = probe_set(cfg);
    double baseline = 0.0;
    if (opts.checkpoints.size() == 2) {
      const PolicyParams base = load_checkpoint(opts.checkpoints[1]);
      require_same_shape(p, base);
      baseline = evaluate_policy(base, probe, n, temperature, cfg.max_gen_len, eval_seed(cfg), 0.0, cfg.workers)
                     .report.avg_tokens;
    }
    const EvalResult ev =
        evaluate_policy(p, probe, n, temperature, cfg.max_gen_len, eval_seed(cfg), baseline, cfg.workers);

    prepare_out_dir(opts.out_dir);
    const fs::path out(opts.out_dir);
    std::ofstream jl = open_output(out / "eval.jsonl");
    jl << to_json(ev.report).dump() << '\n';
    std::ofstream csv = open_output(out / "eval.csv");
    write_report_csv_header(csv);
    write_report_csv_row(csv, ev.report, 0);
    log << to_json(ev.report).dump(2) << '\n';
    return static_cast<int>(kExitOk);
  });
}

int cmd_diagnose(const CommandOptions& opts, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    if (opts.checkpoints.size() != 2) {
      throw ConfigError("diagnose needs --checkpoint <original> --checkpoint <efficient>");
    }
    if (opts.k < 1) {
      throw ConfigError("--k must be >= 1");
    }
    TrainConfig cfg = config_for(opts);
    if (opts.seed) {
      cfg.probe_seed = *opts.seed;
    }
    if (opts.n) {
      cfg.probe_questions = *opts.n;
    }
    cfg.validate();
    const PolicyParams orig = load_checkpoint(opts.checkpoints[0]);
    const PolicyParams eff = load_checkpoint(opts.checkpoints[1]);
    require_same_shape(orig, eff);
    if (orig.modulus() != cfg.modulus) {
      throw ConfigError("checkpoint modulus does not match config modulus");
    }
    const double temperature = opts.temperature.value_or(1.0);
    const std::vector<Question> probe = probe_set(cfg);
    // Rollouts come from the original policy; the efficient one is teacher-forced.
    const std::vector<RolloutGroup> groups =
        sample_groups(orig, probe, 1, temperature, cfg.max_gen_len, derive_seed(cfg.probe_seed, 5), cfg.workers);
    std::vector<KlTrace> traces;
    traces.reserve(groups.size());
    for (const RolloutGroup& g : groups) {
      traces.push_back(token_kl_trace(orig, eff, g.question, g.rollouts.front()));
    }
    const std::vector<TokenRank> ranking = top_divergent_tokens(traces, opts.k);

    prepare_out_dir(opts.out_dir);
    const fs::path out(opts.out_dir);
    std::ofstream tj = open_output(out / "kl_traces.jsonl");
    for (const KlTrace& t : traces) {
      write_trace_jsonl(tj, t);
    }
    std::ofstream csv = open_output(out / "top_tokens.csv");
    write_ranking_csv(csv, ranking);
    log << "rank token mean_divergence count\n";
    for (std::size_t i = 0; i < ranking.size(); ++i) {
      log << i + 1 << ' ' << format_tokens(TokenSeq{ranking[i].token}) << ' ' << ranking[i].mean_divergence << ' '
          << ranking[i].count << '\n';
    }
    return static_cast<int>(kExitOk);
  });
}

int cmd_verify_theory(const CommandOptions& opts, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    TheoryOptions t;
    if (opts.seed) {
      t.seed = *opts.seed;
    }
    t.inject_beta = opts.inject_beta;
    bool ok = true;
    for (const CheckResult& c : run_theory_checks(t)) {
      log << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << " = " << sci(c.measured)
          << " (tolerance " << sci(c.tolerance) << ")\n";
      ok = ok && c.passed;
    }
    return static_cast<int>(ok ? kExitOk : kExitFailure);
  });
}

// ---------------------------------------------------------------------------
// Theory checks.

namespace {

constexpr int kModulus = 10;

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) {
    m = std::max(m, std::abs(x));
  }
  return m;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

// A group whose rollouts mix policy samples with teacher demos, so that the
// filtered set is rarely empty even for a random policy.
RolloutGroup mixed_group(const PolicyParams& p, const Question& q, int group_size, int tau, int max_len, Rng& rng) {
  RolloutGroup g;
  g.question = q;
  for (int i = 0; i < group_size; ++i) {
    Rollout r;
    if (uniform01(rng) < 0.5) {
      r.question_id = q.id;
      r.tokens = teacher_demo(q, 1.0, rng);
      r.correct = verify(q, r.tokens);
    } else {
      r = sample_rollout(p, q, 1.0, max_len, rng);
    }
    g.rewards.push_back(truncation_reward(r, tau));
    g.rollouts.push_back(std::move(r));
  }
  return g;
}

}  // namespace

CheckResult check_reduction(const TheoryOptions& opts) {
  constexpr int kBatches = 50;
  constexpr int kGroup = 8;
  constexpr int kBatch = 4;
  constexpr int kTau = 10;
  Rng rng(derive_seed(opts.seed, 101));
  AdvantageConfig adv;
  adv.subtract_mean = false;
  adv.divide_std = false;
  GrpoConfig gc;
  gc.beta = opts.inject_beta;
  gc.length_norm = LengthNorm::BatchMax;

  double worst = 0.0;
  int nonempty = 0;
  for (int b = 0; b < kBatches; ++b) {
    const PolicyParams p = random_params(kModulus, 0.5, rng);
    const PolicyParams ref = random_params(kModulus, 0.5, rng);
    const std::vector<Question> qs = gen_questions(derive_seed(opts.seed, 102, b), kBatch, kModulus, 3);
    std::vector<RolloutGroup> groups;
    for (const Question& q : qs) {
      groups.push_back(mixed_group(p, q, kGroup, kTau, 16, rng));
    }
    const GradEstimate g = grpo_gradient(p, p, ref, groups, adv, gc);
    const GradEstimate s = onpolicy_sft_gradient(p, groups, kTau, LengthNorm::BatchMax);
    const std::vector<double> scaled = sft_ascent_direction(s);
    const double scale = std::max(max_abs(scaled), max_abs(g.values));
    nonempty += s.n_rollouts_used > 0 ? 1 : 0;
    if (scale > 0.0) {
      worst = std::max(worst, max_abs_diff(g.values, scaled) / scale);
    }
  }
  CheckResult r;
  r.name = "reduction";
  r.measured = worst;
  r.tolerance = 1e-10;
  r.passed = worst < r.tolerance && nonempty > 0;
  r.detail = "max relative deviation of GRPO from c_L * SFT over " + std::to_string(kBatches) + " batches (" +
             std::to_string(nonempty) + " with non-empty C_L)";
  return r;
}

CheckResult check_kl_unbiased(const TheoryOptions& opts) {
  Rng rng(derive_seed(opts.seed, 201));
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int v = 2 + static_cast<int>(uniform_below(rng, 13));
    std::vector<double> za(static_cast<std::size_t>(v));
    std::vector<double> zb(static_cast<std::size_t>(v));
    for (int i = 0; i < v; ++i) {
      za[static_cast<std::size_t>(i)] = 2.0 * uniform01(rng) - 1.0;
      zb[static_cast<std::size_t>(i)] = 2.0 * uniform01(rng) - 1.0;
    }
    const std::vector<double> p = softmax(za);
    const std::vector<double> q = softmax(zb);
    double expectation = 0.0;
    for (int i = 0; i < v; ++i) {
      const auto k = static_cast<std::size_t>(i);
      expectation += p[k] * kl_estimator(p[k], q[k]);
    }
    worst = std::max(worst, std::abs(expectation - kl_divergence(p, q)));
  }
  return {"kl_unbiased", worst < 1e-12, worst, 1e-12,
          "max |E_p[estimator] - KL(p||q)| over 100 random pairs, vocab 2..14"};
}

CheckResult check_ambiguity(const TheoryOptions&) {
  AdvantageConfig cfg;
  const std::vector<double> single{1.0, 0.0};  // component vectors (0,1), (0,0)
  const std::vector<double> double_{2.0, 0.0};  // component vectors (1,1), (0,0)
  const Advantages a = group_advantages(single, cfg);
  const Advantages b = group_advantages(double_, cfg);
  const double target = 0.7071067811865476;
  double err = std::max(std::abs(std::abs(a.values[0]) - target), std::abs(std::abs(a.values[1]) - target));
  err = std::max(err, max_abs_diff(a.values, b.values));
  return {"ambiguity", err < 1e-12, err, 1e-12,
          "max error of |A| against 1/sqrt(2) and between the two reward compositions"};
}

CheckResult check_finite_differences(const TheoryOptions& opts) {
  constexpr double kH = 1e-5;
  Rng rng(derive_seed(opts.seed, 301));
  double worst = 0.0;
  auto rel = [](std::span<const double> analytic, std::span<const double> numeric) {
    const double scale = std::max({max_abs(analytic), max_abs(numeric), 1e-12});
    return max_abs_diff(analytic, numeric) / scale;
  };
  AdvantageConfig adv;
  GrpoConfig gc;
  gc.beta = 0.04;
  for (int trial = 0; trial < 100; ++trial) {
    const PolicyParams p = random_params(kModulus, 0.5, rng);
    const Question q = gen_questions(derive_seed(opts.seed, 302, trial), 1, kModulus, 3).front();
    const Rollout r = sample_rollout(p, q, 1.0, 8, rng);
    const std::vector<double> analytic = grad_logprob(p, q, r);
    const std::vector<double> numeric =
        finite_diff_gradient([&](const PolicyParams& x) { return logprob(x, q, r); }, p, kH);
    worst = std::max(worst, rel(analytic, numeric));

    // GRPO away from the behaviour policy, with the KL term active.
    if (trial % 4 == 0) {
      const PolicyParams ref = random_params(kModulus, 0.5, rng);
      PolicyParams theta = p;
      for (double& w : theta.weights()) {
        w += 0.02 * (2.0 * uniform01(rng) - 1.0);
      }
      RolloutGroup g;
      g.question = q;
      for (int i = 0; i < 4; ++i) {
        g.rollouts.push_back(sample_rollout(p, q, 1.0, 6, rng));
        g.rewards.push_back(uniform01(rng));
      }
      const std::vector<RolloutGroup> groups{g};
      const GradEstimate ga = grpo_gradient(theta, p, ref, groups, adv, gc);
      const std::vector<double> gn = finite_diff_gradient(
          [&](const PolicyParams& x) { return grpo_objective(x, p, ref, groups, adv, gc); }, theta, kH);
      worst = std::max(worst, rel(ga.values, gn));
    }
  }
  return {"finite_differences", worst < 1e-5, worst, 1e-5,
          "max relative error of analytic gradients (log-prob and GRPO) against central differences"};
}

CheckResult check_temperature(const TheoryOptions& opts) {
  // Three tokens, the last one terminal; logits depend on the previous token.
  constexpr int kV = 3;
  constexpr int kEos = 2;
  Rng rng(derive_seed(opts.seed, 401));
  std::vector<std::vector<double>> table(kV + 1, std::vector<double>(kV));
  for (auto& row : table) {
    for (double& z : row) {
      z = 2.0 * uniform01(rng) - 1.0;
    }
  }
  auto next_at = [&](double t) {
    return [&table, t](std::span<const int> prefix) {
      const std::size_t row = prefix.empty() ? kV : static_cast<std::size_t>(prefix.back());
      return softmax(table[row], t);
    };
  };
  auto product = [&](const std::map<std::vector<int>, double>& support) {
    std::map<std::vector<int>, double> out;
    for (const auto& [seq, _] : support) {
      double prob = 1.0;
      for (std::size_t i = 0; i < seq.size(); ++i) {
        prob *= softmax(table[i == 0 ? kV : static_cast<std::size_t>(seq[i - 1])])[static_cast<std::size_t>(seq[i])];
      }
      out[seq] = prob;
    }
    return out;
  };
  const auto t1 = enumerate_sequences(kV, kEos, 2, next_at(1.0));
  const auto t2 = enumerate_sequences(kV, kEos, 2, next_at(2.0));
  const double tv1 = total_variation(t1, product(t1));
  const double tv2 = total_variation(t2, product(t2));
  CheckResult r;
  r.name = "temperature";
  r.measured = tv1;
  r.tolerance = 1e-12;
  r.passed = tv1 < 1e-12 && tv2 > 1e-3;
  r.detail = "TV(T=1, product) with TV(T=2, product) = " + sci(tv2) + " required > 1e-3; TV(T=1)";
  return r;
}

std::vector<CheckResult> run_theory_checks(const TheoryOptions& opts) {
  return {check_reduction(opts), check_kl_unbiased(opts), check_ambiguity(opts), check_finite_differences(opts),
          check_temperature(opts)};
}

}  // namespace opsft
