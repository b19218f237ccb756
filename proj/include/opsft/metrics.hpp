// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace opsft {

struct Sample {
  int length = 0;
  bool correct = false;
};

/// Samples for one question, in draw order.
struct QuestionSamples {
  std::int64_t question_id = 0;
  std::vector<Sample> samples;
};

/// Fraction of correct samples over all samples. RefusalError on empty input.
double accuracy(std::span<const QuestionSamples> groups);

/// Fraction of questions with at least one correct sample among their first
/// `n` samples. RefusalError if any question has fewer than n samples.
double pass_at_n(std::span<const QuestionSamples> groups, int n);

/// Mean generated length over all samples.
double avg_tokens(std::span<const QuestionSamples> groups);

struct EffCr {
  double eff = 0.0;  // accuracy in percent per token, in percent
  double cr = 0.0;   // avg_tokens / baseline_tokens
};

/// Eff = 100 * (100 * acc) / avg_tokens, CR = avg_tokens / baseline_tokens.
/// RefusalError for non-positive token counts.
EffCr eff_and_cr(double acc, double avg_tokens, double baseline_tokens);

struct NormStd {
  std::vector<double> per_question;
  double mean = 0.0;
};

/// Coefficient of variation of lengths (population std / mean) per question.
NormStd norm_std(std::span<const QuestionSamples> groups);

struct EvalReport {
  double accuracy = 0.0;
  double pass_at_n = 0.0;
  double avg_tokens = 0.0;
  double compression_rate = 0.0;
  double eff = 0.0;
  double norm_std_mean = 0.0;
  int n_samples = 0;  // per question
  double baseline_tokens = 0.0;
  int n_questions = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// All metrics at once. baseline_tokens <= 0 means "use this set as its own baseline".
/// NormStd is reported as 0 when fewer than 2 samples per question are available.
EvalReport make_report(std::span<const QuestionSamples> groups, double baseline_tokens);

nlohmann::json to_json(const EvalReport& r);
void write_report_csv_header(std::ostream& out);
void write_report_csv_row(std::ostream& out, const EvalReport& r, std::int64_t step);

}  // namespace opsft
