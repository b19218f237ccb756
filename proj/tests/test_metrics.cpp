// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "opsft/errors.hpp"
#include "opsft/metrics.hpp"
#include "opsft/rng.hpp"

using namespace opsft;

namespace {

QuestionSamples qs(std::int64_t id, std::vector<Sample> s) { return {id, std::move(s)}; }

}  // namespace

TEST_CASE("accuracy") {
  const std::vector<QuestionSamples> all{qs(0, {{3, true}, {4, true}})};
  CHECK(accuracy(all) == 1.0);
  const std::vector<QuestionSamples> some{qs(0, {{3, true}, {4, false}, {5, true}}), qs(1, {{3, false}, {9, true}})};
  CHECK(accuracy(some) == doctest::Approx(0.6));
  CHECK_THROWS_AS(accuracy(std::vector<QuestionSamples>{}), RefusalError);
  CHECK_THROWS_AS(accuracy(std::vector<QuestionSamples>{qs(0, {})}), RefusalError);
}

TEST_CASE("pass@n") {
  const std::vector<QuestionSamples> one_each{qs(0, {{3, false}, {3, true}, {3, false}, {3, false}}),
                                              qs(1, {{3, false}, {3, false}, {3, false}, {3, true}})};
  CHECK(pass_at_n(one_each, 4) == 1.0);
  CHECK(pass_at_n(one_each, 1) == 0.0);
  CHECK(pass_at_n(one_each, 2) == 0.5);
  CHECK_THROWS_AS(pass_at_n(one_each, 5), RefusalError);
  CHECK_THROWS_AS(pass_at_n(one_each, 0), ConfigError);

  const std::vector<QuestionSamples> none{qs(0, {{3, false}, {4, false}})};
  CHECK(pass_at_n(none, 2) == 0.0);

  const std::vector<QuestionSamples> singles{qs(0, {{3, true}}), qs(1, {{3, false}}), qs(2, {{4, true}})};
  CHECK(pass_at_n(singles, 1) == accuracy(singles));
}

TEST_CASE("pass@n is monotone over nested prefixes") {
  // Brute force: every correctness pattern of 2 questions x 4 samples.
  for (int mask = 0; mask < 256; ++mask) {
    std::vector<QuestionSamples> g;
    for (int qi = 0; qi < 2; ++qi) {
      QuestionSamples q{qi, {}};
      for (int s = 0; s < 4; ++s) {
        q.samples.push_back({3, ((mask >> (qi * 4 + s)) & 1) != 0});
      }
      g.push_back(q);
    }
    double prev = 0.0;
    for (int n = 1; n <= 4; ++n) {
      const double v = pass_at_n(g, n);
      CHECK(v >= prev);
      prev = v;
    }
  }
}

TEST_CASE("Eff and CR") {
  const EffCr anchor = eff_and_cr(0.599, 2186, 10178);
  CHECK(std::abs(anchor.eff - 2.74) < 0.005);
  CHECK(std::abs(anchor.cr - 0.215) < 0.0005);
  CHECK(eff_and_cr(0.0, 100, 200).eff == 0.0);
  CHECK_THROWS_AS(eff_and_cr(0.5, 0, 100), RefusalError);
  CHECK_THROWS_AS(eff_and_cr(0.5, 100, -1), RefusalError);

  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const double acc = uniform01(rng);
    const double tok = 1.0 + 5000.0 * uniform01(rng);
    const EffCr e = eff_and_cr(acc, tok, 1000.0);
    CHECK(std::abs(e.eff * tok - acc * 1e4) < 1e-12 * std::max(1.0, acc * 1e4));
  }
}

TEST_CASE("NormStd") {
  const std::vector<QuestionSamples> flat{qs(0, {{5, true}, {5, false}, {5, true}})};
  CHECK(norm_std(flat).mean == 0.0);
  const std::vector<QuestionSamples> pair{qs(0, {{1, true}, {3, true}})};
  CHECK(norm_std(pair).per_question[0] == doctest::Approx(0.5));

  std::vector<QuestionSamples> scaled{qs(0, {{2, true}, {7, true}, {4, false}}), qs(1, {{10, true}, {3, true}, {3, true}})};
  const double base = norm_std(scaled).mean;
  for (auto& q : scaled) {
    for (auto& s : q.samples) {
      s.length *= 3;
    }
  }
  CHECK(norm_std(scaled).mean == doctest::Approx(base).epsilon(1e-14));

  CHECK_THROWS_AS(norm_std(std::vector<QuestionSamples>{qs(0, {{3, true}})}), RefusalError);
  CHECK_THROWS_AS(norm_std(std::vector<QuestionSamples>{qs(0, {{0, true}, {0, true}})}), RefusalError);
}

TEST_CASE("report and serialisation") {
  const std::vector<QuestionSamples> g{qs(0, {{4, true}, {6, false}}), qs(1, {{8, true}, {6, true}})};
  const EvalReport r = make_report(g, 12.0);
  CHECK(r.accuracy == 0.75);
  CHECK(r.pass_at_n == 1.0);
  CHECK(r.pass_at_n >= r.accuracy);
  CHECK(r.avg_tokens == 6.0);
  CHECK(r.compression_rate == 0.5);
  CHECK(r.eff == doctest::Approx(100.0 * 75.0 / 6.0));
  CHECK(r.n_samples == 2);
  CHECK(r.n_questions == 2);

  const EvalReport self = make_report(g, 0.0);
  CHECK(self.compression_rate == 1.0);
  CHECK(self.baseline_tokens == 6.0);

  const nlohmann::json j = to_json(r);
  CHECK(j.at("accuracy") == 0.75);
  CHECK(j.at("compression_rate") == 0.5);

  std::ostringstream csv;
  write_report_csv_header(csv);
  write_report_csv_row(csv, r, 7);
  const std::string text = csv.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(text.find("\n7,") != std::string::npos);
}
