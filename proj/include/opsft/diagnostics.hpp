// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

// Token-level divergence between an original policy and a compressed one,
// measured along rollouts of the original under teacher forcing.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "opsft/env.hpp"
#include "opsft/policy.hpp"

namespace opsft {

/// Exact KL(p || q) over a shared support. +infinity if q has a zero where p does not.
double kl_divergence(std::span<const double> p, std::span<const double> q);

struct KlPosition {
  int index = 0;           // prefix length t
  Token next_token;        // token t+1 of the original rollout
  double divergence = 0;   // KL(p_orig(.|x_1:t) || p_eff(.|x_1:t))
  Token top_alternative;   // argmax of p_eff(.|x_1:t)
};

struct KlTrace {
  std::int64_t question_id = 0;
  std::vector<KlPosition> positions;
};

KlTrace token_kl_trace(const PolicyParams& p_orig, const PolicyParams& p_eff, const Question& q,
                       const Rollout& rollout);

struct TokenRank {
  Token token;
  double mean_divergence = 0.0;
  int count = 0;
};

/// Aggregates divergence by the realised next token and ranks by mean
/// divergence, then count, then vocabulary order.
std::vector<TokenRank> top_divergent_tokens(std::span<const KlTrace> traces, int k);

void write_trace_jsonl(std::ostream& out, const KlTrace& trace);
void write_ranking_csv(std::ostream& out, std::span<const TokenRank> ranking);

}  // namespace opsft
