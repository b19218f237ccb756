// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#include "opsft/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include <nlohmann/json.hpp>

#include "opsft/errors.hpp"

namespace opsft {

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw ConfigError("distributions have different supports");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) {
      continue;
    }
    if (q[i] <= 0.0) {
      return std::numeric_limits<double>::infinity();
    }
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return std::max(0.0, kl);
}

KlTrace token_kl_trace(const PolicyParams& p_orig, const PolicyParams& p_eff, const Question& q,
                       const Rollout& rollout) {
  if (p_orig.vocab_size() != p_eff.vocab_size() || p_orig.modulus() != p_eff.modulus()) {
    throw ConfigError("policies do not share a vocabulary");
  }
  const Vocabulary vocab(q.modulus);
  KlTrace trace;
  trace.question_id = q.id;
  const std::span<const Token> toks = rollout.tokens;
  for (std::size_t t = 1; t < toks.size(); ++t) {
    const std::span<const Token> prefix = toks.first(t);
    const std::vector<double> po = token_dist(p_orig, q, prefix).probs;
    const std::vector<double> pe = token_dist(p_eff, q, prefix).probs;
    const auto top = static_cast<int>(std::max_element(pe.begin(), pe.end()) - pe.begin());
    trace.positions.push_back({static_cast<int>(t), toks[t], kl_divergence(po, pe), vocab.token(top)});
  }
  return trace;
}

std::vector<TokenRank> top_divergent_tokens(std::span<const KlTrace> traces, int k) {
  if (k < 1) {
    throw ConfigError("k must be >= 1");
  }
  if (traces.empty()) {
    return {};
  }
  // Keyed by a modulus-free token order: digits by value, then +, ~, =, <eos>.
  auto key = [](const Token& t) {
    return t.kind == TokenKind::Digit ? t.digit : 1'000'000 + static_cast<int>(t.kind);
  };
  std::map<int, TokenRank> agg;
  for (const KlTrace& tr : traces) {
    for (const KlPosition& pos : tr.positions) {
      TokenRank& r = agg[key(pos.next_token)];
      r.token = pos.next_token;
      r.mean_divergence += pos.divergence;
      ++r.count;
    }
  }
  std::vector<std::pair<int, TokenRank>> ranked(agg.begin(), agg.end());
  for (auto& [_, r] : ranked) {
    r.mean_divergence /= r.count;
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.mean_divergence != b.second.mean_divergence) {
      return a.second.mean_divergence > b.second.mean_divergence;
    }
    if (a.second.count != b.second.count) {
      return a.second.count > b.second.count;
    }
    return a.first < b.first;
  });
  std::vector<TokenRank> out;
  for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(k); ++i) {
    out.push_back(ranked[i].second);
  }
  return out;
}

void write_trace_jsonl(std::ostream& out, const KlTrace& trace) {
  nlohmann::json positions = nlohmann::json::array();
  for (const KlPosition& p : trace.positions) {
    const Token next[] = {p.next_token};
    const Token alt[] = {p.top_alternative};
    positions.push_back({{"t", p.index},
                         {"next_token", format_tokens(next)},
                         {"divergence", p.divergence},
                         {"top_alternative", format_tokens(alt)}});
  }
  out << nlohmann::json{{"question_id", trace.question_id}, {"positions", positions}}.dump() << '\n';
}

void write_ranking_csv(std::ostream& out, std::span<const TokenRank> ranking) {
  out << "rank,token,mean_divergence,count\n";
  int rank = 1;
  for (const TokenRank& r : ranking) {
    const Token tok[] = {r.token};
    out << rank++ << ',' << format_tokens(tok) << ',' << r.mean_divergence << ',' << r.count << '\n';
  }
}

}  // namespace opsft
