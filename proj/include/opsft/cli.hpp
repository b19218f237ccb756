// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

// Subcommands of the opsft tool. Each returns a process exit status and
// writes human-readable progress to `log` and problems to `err`.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace opsft {

struct CommandOptions {
  std::string config_path;                 // --config
  std::optional<std::uint64_t> seed;       // --seed
  std::string out_dir = ".";               // --out
  std::vector<std::string> checkpoints;    // --checkpoint (repeatable)
  std::optional<int> n;                    // --n
  int k = 10;                              // --k
  std::optional<double> temperature;       // --temperature
  double inject_beta = 0.0;                // verify-theory negative control
};

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

/// Runs training from --config; writes steps.jsonl, evals.jsonl, evals.csv,
/// config.txt and checkpoints under --out.
int cmd_train(const CommandOptions& opts, std::ostream& log, std::ostream& err);

/// Samples --n responses per probe question from --checkpoint and writes
/// eval.jsonl and eval.csv. A second --checkpoint supplies the CR baseline.
int cmd_eval(const CommandOptions& opts, std::ostream& log, std::ostream& err);

/// Token-level KL between two checkpoints (original, efficient) on --n probe
/// questions; writes kl_traces.jsonl and top_tokens.csv.
int cmd_diagnose(const CommandOptions& opts, std::ostream& log, std::ostream& err);

/// Self-contained algebra checks; nonzero exit if any fails.
int cmd_verify_theory(const CommandOptions& opts, std::ostream& log, std::ostream& err);

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct TheoryOptions {
  std::uint64_t seed = 2026;
  /// Nonzero values are added to the reduction check's GRPO config, which
  /// should then fail.
  double inject_beta = 0.0;
};

/// Reduction to on-policy SFT on 50 random batches (G=8, B=4).
CheckResult check_reduction(const TheoryOptions& opts);
/// Exact expectation of the per-token KL estimator against closed-form KL.
CheckResult check_kl_unbiased(const TheoryOptions& opts);
/// Advantages for rewards [1,0] and [2,0] under sample-std normalisation.
CheckResult check_ambiguity(const TheoryOptions& opts);
/// grad_logprob and grpo_gradient against central finite differences.
CheckResult check_finite_differences(const TheoryOptions& opts);
/// Trajectory enumeration at T=1 and T=2 against the per-token product.
CheckResult check_temperature(const TheoryOptions& opts);

std::vector<CheckResult> run_theory_checks(const TheoryOptions& opts);

}  // namespace opsft
