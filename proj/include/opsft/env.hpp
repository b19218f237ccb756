// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

// ChainSum: a verifiable arithmetic task. A question is a short list of
// operands; a response is a token sequence that must end "= <answer> <eos>".
// Anything before '=' may be digits, '+' or filler tokens, which gives the
// policy room to be verbose without being wrong.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opsft/rng.hpp"

namespace opsft {

enum class TokenKind : std::uint8_t { Digit, Plus, Filler, Equals, Eos };

struct Token {
  TokenKind kind = TokenKind::Eos;
  int digit = 0;  // meaningful only for Digit

  static constexpr Token make_digit(int d) { return {TokenKind::Digit, d}; }
  static constexpr Token plus() { return {TokenKind::Plus, 0}; }
  static constexpr Token filler() { return {TokenKind::Filler, 0}; }
  static constexpr Token equals() { return {TokenKind::Equals, 0}; }
  static constexpr Token eos() { return {TokenKind::Eos, 0}; }

  friend constexpr bool operator==(const Token& a, const Token& b) {
    return a.kind == b.kind && (a.kind != TokenKind::Digit || a.digit == b.digit);
  }
};

using TokenSeq = std::vector<Token>;

/// Dense indexing of the token set for a given modulus:
/// digits 0..m-1, then '+', filler, '=', eos.
class Vocabulary {
 public:
  explicit Vocabulary(int modulus);

  int modulus() const { return modulus_; }
  int size() const { return modulus_ + 4; }

  /// Throws InternalError for a digit outside [0, modulus).
  int index(const Token& t) const;
  /// Throws InternalError for an index outside [0, size()).
  Token token(int index) const;

  int eos_index() const { return modulus_ + 3; }
  int filler_index() const { return modulus_ + 1; }

 private:
  int modulus_;
};

struct Question {
  std::int64_t id = 0;
  std::vector<int> operands;
  int modulus = 10;
  int answer = 0;

  friend bool operator==(const Question&, const Question&) = default;
};

struct Rollout {
  std::int64_t question_id = 0;
  TokenSeq tokens;
  bool correct = false;
  bool truncated = false;

  /// Number of generated tokens, eos included.
  int length() const { return static_cast<int>(tokens.size()); }
};

/// Builds a question, checking operand ranges; throws ConfigError.
Question make_question(std::int64_t id, std::vector<int> operands, int modulus);

/// `count` questions with 2..max_operands operands, each uniform in [0, modulus).
std::vector<Question> gen_questions(std::uint64_t seed, int count, int modulus, int max_operands);

bool verify(const Question& q, std::span<const Token> tokens);

/// "= answer eos".
int shortest_solution_length(const Question& q);

/// Writes the operands in order with '+' between them, each body token followed
/// by a geometric number of fillers with mean `verbosity`, then "= answer eos".
TokenSeq teacher_demo(const Question& q, double verbosity, Rng& rng);

/// Space-separated text form: digits, "+", "~" (filler), "=", "<eos>".
std::string format_tokens(std::span<const Token> tokens);
/// Inverse of format_tokens; throws ConfigError on unknown words.
TokenSeq parse_tokens(std::string_view text);

// Line-delimited JSON question corpus: one {"id","operands","modulus","answer"} per line.
void write_questions(std::ostream& out, std::span<const Question> questions);
std::vector<Question> read_questions(std::istream& in);

}  // namespace opsft
