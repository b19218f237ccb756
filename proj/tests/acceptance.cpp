// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Reference values are computed here from first principles rather than taken
// from the library's own helpers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "opsft/config.hpp"
#include "opsft/diagnostics.hpp"
#include "opsft/grad_engines.hpp"
#include "opsft/metrics.hpp"
#include "opsft/policy.hpp"
#include "opsft/rewards.hpp"
#include "opsft/trainer.hpp"

using namespace opsft;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s %d %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += ok ? 0 : 1;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) {
    m = std::max(m, std::abs(x));
  }
  return m;
}

std::vector<double> softmax_of(const std::vector<double>& z, double t) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp((z[i] - mx) / t);
    s += p[i];
  }
  for (double& x : p) {
    x /= s;
  }
  return p;
}

std::vector<double> central_diff(const std::function<double(const PolicyParams&)>& f, const PolicyParams& p, double h) {
  std::vector<double> g(p.size());
  PolicyParams x = p;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double w = x.weights()[k];
    x.weights()[k] = w + h;
    const double up = f(x);
    x.weights()[k] = w - h;
    const double down = f(x);
    x.weights()[k] = w;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& ref) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    d = std::max(d, std::abs(a[k] - ref[k]));
  }
  return d / std::max(max_abs(ref), 1e-12);
}

// Groups of policy samples mixed with teacher demos so that most batches keep
// some rollouts under the filter; the identity holds for any rollout source.
std::vector<RolloutGroup> mixed_batch(const PolicyParams& p, Rng& rng, int batch, int group, int tau) {
  std::vector<RolloutGroup> out;
  for (const Question& q : gen_questions(rng(), batch, p.modulus(), 3)) {
    RolloutGroup g;
    g.question = q;
    for (int i = 0; i < group; ++i) {
      Rollout r;
      if (uniform01(rng) < 0.5) {
        r.tokens = teacher_demo(q, 1.5, rng);
        r.correct = verify(q, r.tokens);
        r.question_id = q.id;
      } else {
        r = sample_rollout(p, q, 1.0, 16, rng);
      }
      g.rewards.push_back(truncation_reward(r, tau));
      g.rollouts.push_back(std::move(r));
    }
    out.push_back(std::move(g));
  }
  return out;
}

void criterion_reduction() {
  const auto t0 = Clock::now();
  Rng rng(101);
  AdvantageConfig raw;
  raw.subtract_mean = false;
  raw.divide_std = false;
  GrpoConfig cfg;
  cfg.beta = 0.0;
  cfg.length_norm = LengthNorm::BatchMax;
  double worst = 0.0;
  int informative = 0;
  for (int b = 0; b < 50; ++b) {
    const int tau = 5 + static_cast<int>(uniform_below(rng, 10));
    const PolicyParams p = random_params(10, 0.5, rng);
    const auto groups = mixed_batch(p, rng, 4, 8, tau);
    int kept = 0;
    int total = 0;
    for (const auto& g : groups) {
      for (const auto& r : g.rollouts) {
        ++total;
        kept += (r.correct && r.length() <= tau) ? 1 : 0;
      }
    }
    const double c_l = static_cast<double>(kept) / total;
    const auto grpo = grpo_gradient(p, p, p, groups, raw, cfg).values;
    const auto sft = onpolicy_sft_gradient(p, groups, tau, LengthNorm::BatchMax).values;
    double dev = 0.0;
    for (std::size_t k = 0; k < grpo.size(); ++k) {
      dev = std::max(dev, std::abs(grpo[k] - c_l * sft[k]));
    }
    const double scale = max_abs(grpo);
    if (scale > 0.0) {
      ++informative;
      worst = std::max(worst, dev / scale);
    } else {
      worst = std::max(worst, dev);
    }
  }
  const double secs = seconds_since(t0);
  report(1, "reduction to on-policy SFT", worst < 1e-10 && secs < 10.0 && informative > 0,
         fmt("max relative deviation %.3g over 50 batches (%d with kept rollouts), %.2f s", worst, informative, secs));
}

void criterion_ambiguity() {
  AdvantageConfig sample_std;
  const auto a = group_advantages(std::vector<double>{1.0, 0.0}, sample_std).values;
  const auto b = group_advantages(std::vector<double>{2.0, 0.0}, sample_std).values;
  const double target = 0.7071067811865476;
  const double err = std::max(std::abs(std::abs(a[0]) - target), std::abs(std::abs(a[1]) - target));
  report(2, "normalisation ambiguity", err < 1e-12 && a == b,
         fmt("advantages [%.16f, %.16f], error %.3g, scenarios identical: %s", a[0], a[1], err, a == b ? "yes" : "no"));
}

void criterion_metrics() {
  const EffCr r = eff_and_cr(0.599, 2186.0, 10178.0);
  const bool ok = std::abs(r.eff - 2.74) < 0.005 && std::abs(r.cr - 0.215) < 0.0005;
  report(3, "Eff and CR anchor", ok, fmt("Eff %.4f (2.74 +- 0.005), CR %.5f (0.215 +- 0.0005)", r.eff, r.cr));
}

void criterion_kl() {
  Rng rng(303);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int v = 2 + static_cast<int>(uniform_below(rng, 13));
    std::vector<double> zt(v);
    std::vector<double> zr(v);
    for (int j = 0; j < v; ++j) {
      zt[j] = 3.0 * (2.0 * uniform01(rng) - 1.0);
      zr[j] = 3.0 * (2.0 * uniform01(rng) - 1.0);
    }
    const auto pt = softmax_of(zt, 1.0);
    const auto pr = softmax_of(zr, 1.0);
    double expectation = 0.0;
    double closed = 0.0;
    for (int j = 0; j < v; ++j) {
      expectation += pt[j] * kl_estimator(pt[j], pr[j]);
      closed += pt[j] * std::log(pt[j] / pr[j]);
    }
    worst = std::max(worst, std::abs(expectation - closed));
  }
  report(4, "KL estimator unbiased", worst < 1e-12, fmt("max |E[estimator] - KL| %.3g over 100 pairs", worst));
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  Rng rng(404);
  double worst_lp = 0.0;
  double worst_grpo = 0.0;
  constexpr double h = 1e-5;
  for (int i = 0; i < 100; ++i) {
    const PolicyParams p = random_params(10, 0.5, rng);
    const Question q = gen_questions(rng(), 1, 10, 3).front();
    const Rollout r = sample_rollout(p, q, 1.0, 10, rng);
    const auto fd = central_diff([&](const PolicyParams& x) { return logprob(x, q, r.tokens); }, p, h);
    worst_lp = std::max(worst_lp, rel_error(grad_logprob(p, q, r), fd));
  }
  AdvantageConfig adv;
  GrpoConfig cfg;
  cfg.beta = 0.04;
  for (int i = 0; i < 100; ++i) {
    const PolicyParams p_old = random_params(10, 0.5, rng);
    const PolicyParams ref = random_params(10, 0.5, rng);
    PolicyParams p = p_old;
    if (i % 2 == 1) {
      for (double& w : p.weights()) {
        w += 0.02 * (2.0 * uniform01(rng) - 1.0);
      }
    }
    auto groups = mixed_batch(p_old, rng, 1, 3, 8);
    for (auto& g : groups) {
      for (double& x : g.rewards) {
        x = uniform01(rng);
      }
    }
    const auto fd = central_diff([&](const PolicyParams& x) { return grpo_objective(x, p_old, ref, groups, adv, cfg); },
                                 p, h);
    worst_grpo = std::max(worst_grpo, rel_error(grpo_gradient(p, p_old, ref, groups, adv, cfg).values, fd));
  }
  report(5, "gradients against finite differences", worst_lp < 1e-5 && worst_grpo < 1e-5,
         fmt("max relative error: log-prob %.3g, GRPO %.3g (100 instances each, %.1f s)", worst_lp, worst_grpo,
             seconds_since(t0)));
}

void criterion_temperature() {
  constexpr int kV = 3;
  constexpr int kEos = 2;
  Rng rng(505);
  // Logits conditioned on the previous token (row kV for the empty prefix).
  std::vector<std::vector<double>> table(kV + 1, std::vector<double>(kV));
  for (auto& row : table) {
    for (double& z : row) {
      z = 2.0 * (2.0 * uniform01(rng) - 1.0);
    }
  }
  auto row_of = [&](std::span<const int> prefix) { return prefix.empty() ? kV : prefix.back(); };
  // Reference: every trajectory of length <= 2 under the untempered product.
  std::map<std::vector<int>, double> product;
  for (int a = 0; a < kV; ++a) {
    const double pa = softmax_of(table[kV], 1.0)[a];
    if (a == kEos) {
      product[{a}] = pa;
      continue;
    }
    for (int b = 0; b < kV; ++b) {
      product[{a, b}] = pa * softmax_of(table[a], 1.0)[b];
    }
  }
  auto tv_at = [&](double t) {
    const auto dist = enumerate_sequences(kV, kEos, 2, [&](std::span<const int> prefix) {
      return softmax_of(table[row_of(prefix)], t);
    });
    std::map<std::vector<int>, double> all = product;
    for (auto& [k, v] : all) {
      v = 0.0;
    }
    for (const auto& [k, v] : dist) {
      all[k] = 0.0;
    }
    double tv = 0.0;
    for (const auto& [k, _] : all) {
      const double a = dist.contains(k) ? dist.at(k) : 0.0;
      const double b = product.contains(k) ? product.at(k) : 0.0;
      tv += std::abs(a - b);
    }
    return 0.5 * tv;
  };
  const double tv1 = tv_at(1.0);
  const double tv2 = tv_at(2.0);
  report(6, "temperature enumeration", tv1 < 1e-12 && tv2 > 1e-3,
         fmt("TV at T=1 %.3g (< 1e-12), at T=2 %.4f (> 1e-3)", tv1, tv2));
}

// At the all-zero policy every next-token distribution is uniform, so the
// gradient entry (answer feature of a rollout, a token it never emits) is
// -w * length / V for that rollout alone when every rollout has its own answer.
void criterion_length_bias() {
  const int m = 10;
  const Vocabulary vocab(m);
  const int v = vocab.size();
  const PolicyParams zero(m);
  const FeatureLayout layout{m};
  const std::vector<int> fillers{0, 4, 1, 7, 2, 9};
  std::vector<RolloutGroup> groups;
  for (std::size_t i = 0; i < fillers.size(); ++i) {
    const Question q = make_question(static_cast<std::int64_t>(i), {static_cast<int>(i), 0}, m);
    Rollout r;
    r.tokens.assign(static_cast<std::size_t>(fillers[i]), Token::filler());
    r.tokens.insert(r.tokens.end(), {Token::equals(), Token::make_digit(q.answer), Token::eos()});
    r.correct = verify(q, r.tokens);
    r.question_id = q.id;
    groups.push_back({q, {r}, {1.0}});
  }
  {  // one incorrect rollout, weight 0 under the filter
    const Question q = make_question(99, {8, 0}, m);
    Rollout r;
    r.tokens = {Token::equals(), Token::make_digit(3), Token::eos()};
    r.correct = verify(q, r.tokens);
    groups.push_back({q, {r}, {0.0}});
  }
  const double n = static_cast<double>(groups.size());
  const int unused = vocab.index(Token::plus());
  int max_len = 0;
  for (const auto& g : groups) {
    if (g.rollouts[0].correct) {
      max_len = std::max(max_len, g.rollouts[0].length());
    }
  }
  double worst = 0.0;
  auto measure = [&](const std::vector<double>& direction, LengthNorm norm) {
    PolicyParams g(m);
    std::copy(direction.begin(), direction.end(), g.weights().begin());
    for (const auto& grp : groups) {
      const Rollout& r = grp.rollouts[0];
      const double measured = -n * v * g.at(layout.answer_offset() + grp.question.answer, unused) / r.length();
      const double expected = !r.correct ? 0.0 : norm == LengthNorm::PerResponse ? 1.0 / r.length() : 1.0 / max_len;
      worst = std::max(worst, std::abs(measured - expected) / std::max(expected, 1e-300));
    }
  };
  AdvantageConfig raw;
  raw.subtract_mean = false;
  raw.divide_std = false;
  GrpoConfig cfg;
  cfg.beta = 0.0;
  for (LengthNorm norm : {LengthNorm::PerResponse, LengthNorm::BatchMax}) {
    const GradEstimate sft = onpolicy_sft_gradient(zero, groups, 100, norm);
    measure(sft_ascent_direction(sft), norm);
    cfg.length_norm = norm;
    measure(grpo_gradient(zero, zero, zero, groups, raw, cfg).values, norm);
  }
  report(7, "length-bias weights", worst < 1e-12,
         fmt("max relative error of measured per-token weights %.3g (1/len per rollout, 1/%d under batch max)", worst,
             max_len));
}

struct Probe {
  double accuracy = 0.0;
  double mean_length = 0.0;
};

Probe probe_metrics(const PolicyParams& p, const TrainConfig& cfg) {
  const auto probe = probe_set(cfg);
  const EvalResult ev = evaluate_policy(p, probe, cfg.eval_samples, cfg.eval_temperature, cfg.max_gen_len,
                                        eval_seed(cfg), 0.0, cfg.workers);
  double n = 0.0;
  double correct = 0.0;
  double tokens = 0.0;
  for (const auto& q : ev.samples) {
    for (const Sample& s : q.samples) {
      n += 1.0;
      correct += s.correct ? 1.0 : 0.0;
      tokens += s.length;
    }
  }
  return {correct / n, tokens / n};
}

void fixtures() {
  const std::string dir = OPSFT_CONFIG_DIR;
  const TrainConfig on_cfg = load_config(dir + "/onpolicy_sft.conf");
  const TrainConfig off_cfg = load_config(dir + "/offpolicy_sft.conf");

  const auto t0 = Clock::now();
  const PolicyParams init = initial_policy(on_cfg);
  const RunResult on = run_from(init, on_cfg);
  const double secs = seconds_since(t0);
  const Probe before = probe_metrics(init, on_cfg);
  const Probe after = probe_metrics(on.final_params, on_cfg);
  const double reduction = 1.0 - after.mean_length / before.mean_length;
  const double acc_drop = std::abs(after.accuracy - before.accuracy);
  const bool start_ok = before.accuracy >= 0.9 && before.mean_length >= 9.0;
  report(8, "on-policy SFT compresses", start_ok && reduction >= 0.4 && acc_drop <= 0.02 && secs < 300.0,
         fmt("start acc %.4f len %.3f, final acc %.4f len %.3f, length -%.1f%%, |delta acc| %.2f pts, %.1f s",
             before.accuracy, before.mean_length, after.accuracy, after.mean_length, 100.0 * reduction,
             100.0 * acc_drop, secs));

  const RunResult off = run_from(init, off_cfg);
  const Probe off_after = probe_metrics(off.final_params, off_cfg);
  const double off_reduction = 1.0 - off_after.mean_length / before.mean_length;
  report(9, "off-policy ablation compresses less", off_reduction < reduction,
         fmt("off-policy length -%.1f%% (acc %.4f) vs on-policy -%.1f%%", 100.0 * off_reduction,
             off_after.accuracy, 100.0 * reduction));

  const auto probe = probe_set(on_cfg);
  const auto groups = sample_groups(init, probe, 1, 1.0, on_cfg.max_gen_len, derive_seed(on_cfg.probe_seed, 5));
  std::vector<KlTrace> traces;
  for (const auto& g : groups) {
    traces.push_back(token_kl_trace(init, on.final_params, g.question, g.rollouts.front()));
  }
  const auto ranking = top_divergent_tokens(traces, 3);
  std::string table;
  for (const TokenRank& r : ranking) {
    const Token t[] = {r.token};
    table += fmt("%s%s %.3f (n=%d)", table.empty() ? "" : ", ", format_tokens(t).c_str(), r.mean_divergence, r.count);
  }
  const bool filler_first = !ranking.empty() && ranking.front().token == Token::filler();
  report(10, "filler token ranks first in divergence", filler_first, "top tokens " + table);
}

void criterion_guard() {
  TrainConfig cfg;
  cfg.group_size = 4;
  cfg.length_limit = 2;  // no correct response is shorter than 3 tokens
  Rng rng(1111);
  TrainState state = make_state(random_params(10, 0.5, rng));
  const auto w0 = state.params.weights();
  const std::vector<double> before(w0.begin(), w0.end());
  const auto batch = gen_questions(12, 16, 10, 3);
  const StepLog log = sft_train_step(state, batch, cfg, 5);
  const bool same = before.size() == state.params.size() &&
                    std::equal(before.begin(), before.end(), state.params.weights().begin(),
                               [](double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; });
  report(11, "no update without filtered rollouts", log.rollouts_used == 0 && same,
         fmt("%d rollouts kept, parameters bitwise %s", log.rollouts_used, same ? "unchanged" : "changed"));
}

}  // namespace

int main() {
  criterion_reduction();
  criterion_ambiguity();
  criterion_metrics();
  criterion_kl();
  criterion_gradients();
  criterion_temperature();
  criterion_length_bias();
  fixtures();
  criterion_guard();
  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
