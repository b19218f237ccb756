// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#include "opsft/metrics.hpp"

#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "opsft/errors.hpp"

namespace opsft {

double accuracy(std::span<const QuestionSamples> groups) {
  std::size_t total = 0;
  std::size_t correct = 0;
  for (const QuestionSamples& g : groups) {
    for (const Sample& s : g.samples) {
      ++total;
      correct += s.correct ? 1 : 0;
    }
  }
  if (total == 0) {
    throw RefusalError("accuracy of an empty sample set");
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double pass_at_n(std::span<const QuestionSamples> groups, int n) {
  if (n < 1) {
    throw ConfigError("pass@n needs n >= 1");
  }
  if (groups.empty()) {
    throw RefusalError("pass@n of an empty sample set");
  }
  std::size_t solved = 0;
  for (const QuestionSamples& g : groups) {
    if (g.samples.size() < static_cast<std::size_t>(n)) {
      throw RefusalError("question " + std::to_string(g.question_id) + " has fewer than " + std::to_string(n) +
                         " samples");
    }
    for (int j = 0; j < n; ++j) {
      if (g.samples[static_cast<std::size_t>(j)].correct) {
        ++solved;
        break;
      }
    }
  }
  return static_cast<double>(solved) / static_cast<double>(groups.size());
}

double avg_tokens(std::span<const QuestionSamples> groups) {
  std::size_t total = 0;
  double sum = 0.0;
  for (const QuestionSamples& g : groups) {
    for (const Sample& s : g.samples) {
      ++total;
      sum += s.length;
    }
  }
  if (total == 0) {
    throw RefusalError("average length of an empty sample set");
  }
  return sum / static_cast<double>(total);
}

EffCr eff_and_cr(double acc, double avg_tokens, double baseline_tokens) {
  if (!(avg_tokens > 0.0) || !(baseline_tokens > 0.0)) {
    throw RefusalError("token counts must be positive");
  }
  return {100.0 * (100.0 * acc) / avg_tokens, avg_tokens / baseline_tokens};
}

NormStd norm_std(std::span<const QuestionSamples> groups) {
  if (groups.empty()) {
    throw RefusalError("NormStd of an empty sample set");
  }
  NormStd out;
  for (const QuestionSamples& g : groups) {
    const auto n = static_cast<double>(g.samples.size());
    if (g.samples.size() < 2) {
      throw RefusalError("NormStd needs at least 2 samples per question");
    }
    double mean = 0.0;
    for (const Sample& s : g.samples) {
      mean += s.length;
    }
    mean /= n;
    if (!(mean > 0.0)) {
      throw RefusalError("NormStd undefined for zero mean length");
    }
    double ss = 0.0;
    for (const Sample& s : g.samples) {
      ss += (s.length - mean) * (s.length - mean);
    }
    out.per_question.push_back(std::sqrt(ss / n) / mean);
  }
  for (double v : out.per_question) {
    out.mean += v;
  }
  out.mean /= static_cast<double>(out.per_question.size());
  return out;
}

EvalReport make_report(std::span<const QuestionSamples> groups, double baseline_tokens) {
  EvalReport r;
  r.accuracy = accuracy(groups);
  r.n_questions = static_cast<int>(groups.size());
  r.n_samples = static_cast<int>(groups.front().samples.size());
  for (const QuestionSamples& g : groups) {
    r.n_samples = std::min(r.n_samples, static_cast<int>(g.samples.size()));
  }
  r.pass_at_n = pass_at_n(groups, r.n_samples);
  r.avg_tokens = avg_tokens(groups);
  r.baseline_tokens = baseline_tokens > 0.0 ? baseline_tokens : r.avg_tokens;
  const EffCr ec = eff_and_cr(r.accuracy, r.avg_tokens, r.baseline_tokens);
  r.eff = ec.eff;
  r.compression_rate = ec.cr;
  r.norm_std_mean = r.n_samples >= 2 ? norm_std(groups).mean : 0.0;
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"accuracy", r.accuracy},
          {"pass_at_n", r.pass_at_n},
          {"avg_tokens", r.avg_tokens},
          {"compression_rate", r.compression_rate},
          {"eff", r.eff},
          {"norm_std_mean", r.norm_std_mean},
          {"n_samples", r.n_samples},
          {"n_questions", r.n_questions},
          {"baseline_tokens", r.baseline_tokens}};
}

void write_report_csv_header(std::ostream& out) {
  out << "step,accuracy,pass_at_n,avg_tokens,compression_rate,eff,norm_std_mean,n_samples,n_questions,"
         "baseline_tokens\n";
}

void write_report_csv_row(std::ostream& out, const EvalReport& r, std::int64_t step) {
  out << step << ',' << r.accuracy << ',' << r.pass_at_n << ',' << r.avg_tokens << ',' << r.compression_rate << ','
      << r.eff << ',' << r.norm_std_mean << ',' << r.n_samples << ',' << r.n_questions << ',' << r.baseline_tokens
      << '\n';
}

}  // namespace opsft
