// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "opsft/diagnostics.hpp"
#include "opsft/errors.hpp"

using namespace opsft;

namespace {

KlTrace trace_of(std::int64_t id, std::vector<std::pair<Token, double>> points) {
  KlTrace t;
  t.question_id = id;
  int i = 1;
  for (auto& [tok, d] : points) {
    t.positions.push_back({i++, tok, d, Token::eos()});
  }
  return t;
}

}  // namespace

TEST_CASE("exact KL") {
  const std::vector<double> p{0.5, 0.5};
  const std::vector<double> q{0.25, 0.75};
  CHECK(std::abs(kl_divergence(p, q) - 0.14384103622589045) < 1e-15);
  CHECK(kl_divergence(p, p) == 0.0);
  CHECK(std::isinf(kl_divergence(p, std::vector<double>{1.0, 0.0})));
  CHECK(kl_divergence(std::vector<double>{1.0, 0.0}, q) == doctest::Approx(std::log(4.0)));
  CHECK_THROWS_AS(kl_divergence(p, std::vector<double>{1.0}), ConfigError);
}

TEST_CASE("identical policies have zero divergence everywhere") {
  Rng rng(1);
  const PolicyParams p = random_params(10, 0.7, rng);
  const PolicyParams copy = p;
  for (const Question& q : gen_questions(2, 20, 10, 3)) {
    const Rollout r = sample_rollout(p, q, 1.0, 15, rng);
    const KlTrace tr = token_kl_trace(p, copy, q, r);
    CHECK(tr.question_id == q.id);
    CHECK(tr.positions.size() == r.tokens.size() - 1);
    for (const KlPosition& pos : tr.positions) {
      CHECK(pos.divergence == 0.0);
      CHECK(pos.next_token == r.tokens[pos.index]);
    }
  }
}

TEST_CASE("trace divergence matches the per-prefix distributions") {
  Rng rng(2);
  const PolicyParams a = random_params(10, 0.7, rng);
  const PolicyParams b = random_params(10, 0.7, rng);
  const Question q = make_question(3, {1, 8}, 10);
  const Rollout r = sample_rollout(a, q, 1.0, 15, rng);
  const KlTrace tr = token_kl_trace(a, b, q, r);
  for (const KlPosition& pos : tr.positions) {
    const auto prefix = std::span<const Token>(r.tokens).first(pos.index);
    const auto pa = token_dist(a, q, prefix).probs;
    const auto pb = token_dist(b, q, prefix).probs;
    double kl = 0.0;
    std::size_t best = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      kl += pa[i] * std::log(pa[i] / pb[i]);
      if (pb[i] > pb[best]) {
        best = i;
      }
    }
    CHECK(pos.divergence == doctest::Approx(kl).epsilon(1e-12));
    CHECK(pos.divergence >= 0.0);
    CHECK(pos.top_alternative == Vocabulary(10).token(static_cast<int>(best)));
  }

  PolicyParams other(12);
  CHECK_THROWS_AS(token_kl_trace(a, other, q, r), ConfigError);
}

TEST_CASE("ranking by mean divergence") {
  const Token eq = Token::equals();
  const Token fill = Token::filler();
  const Token d3 = Token::make_digit(3);
  const std::vector<KlTrace> traces{trace_of(0, {{fill, 0.4}, {d3, 0.1}, {eq, 0.9}}),
                                    trace_of(1, {{fill, 0.6}, {eq, 0.7}})};
  const auto all = top_divergent_tokens(traces, 10);
  REQUIRE(all.size() == 3);
  CHECK(all[0].token == eq);
  CHECK(all[0].mean_divergence == doctest::Approx(0.8));
  CHECK(all[0].count == 2);
  CHECK(all[1].token == fill);
  CHECK(all[1].mean_divergence == doctest::Approx(0.5));
  CHECK(all[2].token == d3);

  const auto one = top_divergent_tokens(traces, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].token == eq);

  CHECK(top_divergent_tokens(std::vector<KlTrace>{}, 3).empty());
  CHECK_THROWS_AS(top_divergent_tokens(traces, 0), ConfigError);
}

TEST_CASE("ranking ties break by count then token order") {
  const std::vector<KlTrace> traces{
      trace_of(0, {{Token::make_digit(5), 0.2}, {Token::plus(), 0.2}, {Token::plus(), 0.2}, {Token::make_digit(1), 0.2}})};
  const auto r = top_divergent_tokens(traces, 5);
  REQUIRE(r.size() == 3);
  CHECK(r[0].token == Token::plus());
  CHECK(r[1].token == Token::make_digit(1));
  CHECK(r[2].token == Token::make_digit(5));
}

TEST_CASE("writers") {
  const KlTrace tr = trace_of(7, {{Token::filler(), 0.25}, {Token::equals(), 0.5}});
  std::ostringstream js;
  write_trace_jsonl(js, tr);
  const auto j = nlohmann::json::parse(js.str());
  CHECK(j["question_id"] == 7);
  REQUIRE(j["positions"].size() == 2);
  CHECK(j["positions"][1]["next_token"] == "=");
  CHECK(j["positions"][1]["divergence"] == 0.5);

  std::ostringstream csv;
  const auto ranked = top_divergent_tokens(std::vector<KlTrace>{tr}, 2);
  write_ranking_csv(csv, ranked);
  CHECK(csv.str() == "rank,token,mean_divergence,count\n1,=,0.5,1\n2,~,0.25,1\n");
}
