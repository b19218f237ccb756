// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <set>
#include <sstream>

#include "opsft/env.hpp"
#include "opsft/errors.hpp"

using namespace opsft;

TEST_CASE("gen_questions is seeded and answers are consistent") {
  const auto one = gen_questions(7, 1, 10, 4);
  REQUIRE(one.size() == 1);
  int sum = 0;
  for (int d : one[0].operands) {
    sum += d;
  }
  CHECK(one[0].answer == sum % 10);

  const auto a = gen_questions(42, 200, 10, 5);
  const auto b = gen_questions(42, 200, 10, 5);
  CHECK(a == b);
  CHECK(a != gen_questions(43, 200, 10, 5));

  std::set<std::size_t> counts;
  for (const Question& q : a) {
    CHECK(q.operands.size() >= 2);
    CHECK(q.operands.size() <= 5);
    counts.insert(q.operands.size());
    for (int d : q.operands) {
      CHECK(d >= 0);
      CHECK(d < 10);
    }
  }
  CHECK(counts.size() == 4);
}

TEST_CASE("gen_questions rejects bad ranges") {
  CHECK_THROWS_AS(gen_questions(1, 1, 1, 3), ConfigError);
  CHECK_THROWS_AS(gen_questions(1, 0, 10, 3), ConfigError);
  CHECK_THROWS_AS(gen_questions(1, 1, 10, 1), ConfigError);
  CHECK_THROWS_AS(gen_questions(1, 1, 10, 6), ConfigError);
  CHECK_THROWS_AS(make_question(0, {3, 12}, 10), ConfigError);
  CHECK_THROWS_AS(make_question(0, {3}, 10), ConfigError);
}

TEST_CASE("verify follows the answer grammar") {
  const Question q = make_question(0, {3, 4}, 10);
  CHECK(verify(q, parse_tokens("3 + 4 = 7 <eos>")));
  CHECK(verify(q, parse_tokens("= 7 <eos>")));
  CHECK(verify(q, parse_tokens("~ ~ 9 + = 7 <eos>")));
  CHECK_FALSE(verify(q, parse_tokens("= 8 <eos>")));
  CHECK_FALSE(verify(q, parse_tokens("= 7")));
  CHECK_FALSE(verify(q, parse_tokens("= 7 <eos> ~")));
  CHECK_FALSE(verify(q, parse_tokens("= = 7 <eos>")));
  CHECK_FALSE(verify(q, parse_tokens("3 <eos> = 7 <eos>")));
  CHECK_FALSE(verify(q, parse_tokens("= 7 ~ <eos>")));
  CHECK_FALSE(verify(q, {}));

  const Question zero = make_question(1, {0, 0}, 10);
  const TokenSeq shortest = parse_tokens("= 0 <eos>");
  CHECK(verify(zero, shortest));
  CHECK(static_cast<int>(shortest.size()) == shortest_solution_length(zero));
}

TEST_CASE("teacher demos always verify and verbosity adds length") {
  Rng rng(3);
  const auto qs = gen_questions(5, 1000, 10, 4);
  double len0 = 0.0;
  double len2 = 0.0;
  for (const Question& q : qs) {
    const TokenSeq plain = teacher_demo(q, 0.0, rng);
    const TokenSeq wordy = teacher_demo(q, 2.0, rng);
    CHECK(verify(q, plain));
    CHECK(verify(q, wordy));
    CHECK(static_cast<int>(plain.size()) >= shortest_solution_length(q));
    for (const Token& t : plain) {
      CHECK(t.kind != TokenKind::Filler);
    }
    // Without fillers the demo is exactly the chain: 2k - 1 body tokens plus "= a eos".
    CHECK(plain.size() == 2 * q.operands.size() + 2);
    len0 += static_cast<double>(plain.size());
    len2 += static_cast<double>(wordy.size());
  }
  CHECK(len2 > len0);
}

TEST_CASE("filler count per body token has mean equal to verbosity") {
  Rng rng(11);
  const Question q = make_question(0, {1, 2}, 10);
  // Body has 3 tokens, each followed by Geometric fillers with mean v.
  const double v = 1.5;
  double fillers = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    for (const Token& t : teacher_demo(q, v, rng)) {
      fillers += t.kind == TokenKind::Filler ? 1.0 : 0.0;
    }
  }
  const double mean = fillers / n;
  // Var of one geometric count is v(1+v); three per demo.
  const double se = std::sqrt(3.0 * v * (1.0 + v) / n);
  CHECK(std::abs(mean - 3.0 * v) < 4.0 * se);
}

TEST_CASE("vocabulary indexing round-trips") {
  const Vocabulary vocab(10);
  CHECK(vocab.size() == 14);
  for (int i = 0; i < vocab.size(); ++i) {
    CHECK(vocab.index(vocab.token(i)) == i);
  }
  CHECK(vocab.index(Token::eos()) == vocab.eos_index());
  CHECK(vocab.index(Token::filler()) == vocab.filler_index());
  CHECK_THROWS_AS(vocab.index(Token::make_digit(10)), InternalError);
  CHECK_THROWS_AS(vocab.token(14), InternalError);
}

TEST_CASE("token text form round-trips") {
  const TokenSeq seq = parse_tokens("3 ~ + 4 = 7 <eos>");
  CHECK(format_tokens(seq) == "3 ~ + 4 = 7 <eos>");
  CHECK_THROWS_AS(parse_tokens("3 ? 4"), ConfigError);
}

TEST_CASE("question corpus round-trips through JSONL") {
  const auto qs = gen_questions(9, 25, 7, 5);
  std::stringstream ss;
  write_questions(ss, qs);
  CHECK(read_questions(ss) == qs);

  std::istringstream bad(R"({"id":0,"operands":[3,4],"modulus":10,"answer":8})");
  CHECK_THROWS_AS(read_questions(bad), ConfigError);
}
