// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#include "opsft/env.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "opsft/errors.hpp"

namespace opsft {

Vocabulary::Vocabulary(int modulus) : modulus_(modulus) {
  if (modulus < 2) {
    throw ConfigError("modulus must be >= 2, got " + std::to_string(modulus));
  }
}

int Vocabulary::index(const Token& t) const {
  switch (t.kind) {
    case TokenKind::Digit:
      if (t.digit < 0 || t.digit >= modulus_) {
        throw InternalError("digit " + std::to_string(t.digit) + " outside vocabulary");
      }
      return t.digit;
    case TokenKind::Plus:
      return modulus_;
    case TokenKind::Filler:
      return modulus_ + 1;
    case TokenKind::Equals:
      return modulus_ + 2;
    case TokenKind::Eos:
      return modulus_ + 3;
  }
  throw InternalError("unknown token kind");
}

Token Vocabulary::token(int index) const {
  if (index < 0 || index >= size()) {
    throw InternalError("token index " + std::to_string(index) + " outside vocabulary");
  }
  if (index < modulus_) {
    return Token::make_digit(index);
  }
  switch (index - modulus_) {
    case 0:
      return Token::plus();
    case 1:
      return Token::filler();
    case 2:
      return Token::equals();
    default:
      return Token::eos();
  }
}

Question make_question(std::int64_t id, std::vector<int> operands, int modulus) {
  if (modulus < 2) {
    throw ConfigError("modulus must be >= 2");
  }
  if (operands.size() < 2 || operands.size() > 5) {
    throw ConfigError("a question needs 2..5 operands");
  }
  for (int op : operands) {
    if (op < 0 || op >= modulus) {
      throw ConfigError("operand " + std::to_string(op) + " outside [0, modulus)");
    }
  }
  const int sum = std::accumulate(operands.begin(), operands.end(), 0);
  Question q;
  q.id = id;
  q.operands = std::move(operands);
  q.modulus = modulus;
  q.answer = sum % modulus;
  return q;
}

std::vector<Question> gen_questions(std::uint64_t seed, int count, int modulus, int max_operands) {
  if (count < 1) {
    throw ConfigError("question count must be >= 1");
  }
  if (modulus < 2) {
    throw ConfigError("modulus must be >= 2");
  }
  if (max_operands < 2 || max_operands > 5) {
    throw ConfigError("max_operands must be in [2, 5]");
  }
  Rng rng(seed);
  std::vector<Question> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int n = 2 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(max_operands - 1)));
    std::vector<int> ops(static_cast<std::size_t>(n));
    for (int& op : ops) {
      op = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(modulus)));
    }
    out.push_back(make_question(i, std::move(ops), modulus));
  }
  return out;
}

bool verify(const Question& q, std::span<const Token> tokens) {
  // body: (digit | '+' | filler)*, then '=' answer eos, nothing after.
  std::size_t i = 0;
  for (; i < tokens.size(); ++i) {
    const TokenKind k = tokens[i].kind;
    if (k == TokenKind::Equals) {
      break;
    }
    if (k == TokenKind::Eos) {
      return false;
    }
  }
  if (i + 3 != tokens.size()) {
    return false;
  }
  const Token& ans = tokens[i + 1];
  return ans.kind == TokenKind::Digit && ans.digit == q.answer && tokens[i + 2].kind == TokenKind::Eos;
}

int shortest_solution_length(const Question&) { return 3; }

TokenSeq teacher_demo(const Question& q, double verbosity, Rng& rng) {
  const double stop = 1.0 / (1.0 + std::max(0.0, verbosity));
  TokenSeq out;
  auto fillers = [&] {
    while (uniform01(rng) >= stop) {
      out.push_back(Token::filler());
    }
  };
  for (std::size_t j = 0; j < q.operands.size(); ++j) {
    if (j > 0) {
      out.push_back(Token::plus());
      fillers();
    }
    out.push_back(Token::make_digit(q.operands[j]));
    fillers();
  }
  out.push_back(Token::equals());
  out.push_back(Token::make_digit(q.answer));
  out.push_back(Token::eos());
  return out;
}

std::string format_tokens(std::span<const Token> tokens) {
  std::string s;
  for (const Token& t : tokens) {
    if (!s.empty()) {
      s += ' ';
    }
    switch (t.kind) {
      case TokenKind::Digit:
        s += std::to_string(t.digit);
        break;
      case TokenKind::Plus:
        s += '+';
        break;
      case TokenKind::Filler:
        s += '~';
        break;
      case TokenKind::Equals:
        s += '=';
        break;
      case TokenKind::Eos:
        s += "<eos>";
        break;
    }
  }
  return s;
}

TokenSeq parse_tokens(std::string_view text) {
  std::istringstream in{std::string(text)};
  TokenSeq out;
  std::string word;
  while (in >> word) {
    if (word == "+") {
      out.push_back(Token::plus());
    } else if (word == "~") {
      out.push_back(Token::filler());
    } else if (word == "=") {
      out.push_back(Token::equals());
    } else if (word == "<eos>" || word == "Eos") {
      out.push_back(Token::eos());
    } else if (!word.empty() && word.find_first_not_of("0123456789") == std::string::npos && word.size() < 6) {
      out.push_back(Token::make_digit(std::stoi(word)));
    } else {
      throw ConfigError("unknown token '" + word + "'");
    }
  }
  return out;
}

void write_questions(std::ostream& out, std::span<const Question> questions) {
  for (const Question& q : questions) {
    nlohmann::json j = {{"id", q.id}, {"operands", q.operands}, {"modulus", q.modulus}, {"answer", q.answer}};
    out << j.dump() << '\n';
  }
}

std::vector<Question> read_questions(std::istream& in) {
  std::vector<Question> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      Question q = make_question(j.at("id").get<std::int64_t>(), j.at("operands").get<std::vector<int>>(),
                                 j.at("modulus").get<int>());
      if (q.answer != j.at("answer").get<int>()) {
        throw ConfigError("answer field inconsistent with operands for question " + std::to_string(q.id));
      }
      out.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed question record: ") + e.what());
    }
  }
  return out;
}

}  // namespace opsft
