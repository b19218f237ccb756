// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

// Log-linear autoregressive policy over the ChainSum vocabulary:
//
//   pi(y | q, prefix) = softmax_y( W^T phi(q, prefix) / T )
//
// phi is a sparse binary feature vector, so log pi and its gradient are exact
// and cheap, and the full trajectory distribution can be enumerated for short
// horizons.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "opsft/env.hpp"
#include "opsft/rng.hpp"

namespace opsft {

/// Block offsets of the feature vector. Blocks, in order:
///   last token one-hot        [vocab]      (all zero for an empty prefix)
///   position bucket           [3]          prefix length 0-2, 3-7, 8+
///   partial-sum register      [2*modulus]  sum of digits before '=' mod m;
///                                          after '=' it latches to m + answer
///   answer digit one-hot      [modulus]
///   bias                      [1]
struct FeatureLayout {
  int modulus = 10;

  int vocab_size() const { return modulus + 4; }
  int last_token_offset() const { return 0; }
  int position_offset() const { return vocab_size(); }
  int register_offset() const { return position_offset() + 3; }
  int committed_slot(int answer) const { return register_offset() + modulus + answer; }
  int answer_offset() const { return register_offset() + 2 * modulus; }
  int bias_index() const { return answer_offset() + modulus; }
  int dim() const { return bias_index() + 1; }
};

int position_bucket(std::size_t prefix_length);

/// Sparse binary feature vector: the listed indices are 1, the rest 0.
struct FeatureVector {
  std::vector<int> active;
  int dim = 0;

  std::vector<double> dense() const;
};

FeatureVector features(const Question& q, std::span<const Token> prefix);

/// Weights of shape (feature_dim x vocab_size), row-major.
class PolicyParams {
 public:
  PolicyParams() = default;
  /// Zero-initialised parameters for the given modulus.
  explicit PolicyParams(int modulus);

  int modulus() const { return modulus_; }
  int feature_dim() const { return feature_dim_; }
  int vocab_size() const { return vocab_size_; }
  std::size_t size() const { return weights_.size(); }

  double& at(int feature, int token) { return weights_[index(feature, token)]; }
  double at(int feature, int token) const { return weights_[index(feature, token)]; }

  std::span<double> weights() { return weights_; }
  std::span<const double> weights() const { return weights_; }

  /// weights += scale * direction. Sizes must match.
  void add_scaled(std::span<const double> direction, double scale);

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  std::size_t index(int feature, int token) const {
    return static_cast<std::size_t>(feature) * static_cast<std::size_t>(vocab_size_) + static_cast<std::size_t>(token);
  }

  int modulus_ = 0;
  int feature_dim_ = 0;
  int vocab_size_ = 0;
  std::vector<double> weights_;
};

/// Parameters with each weight drawn from N(0, scale^2); used for tests and checks.
PolicyParams random_params(int modulus, double scale, Rng& rng);

struct TokenDistribution {
  std::vector<double> logits;  // untempered model logits z
  std::vector<double> probs;   // softmax(z / T)
};

/// Numerically stable softmax of logits / temperature. Throws ConfigError for temperature <= 0.
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);

TokenDistribution token_dist(const PolicyParams& p, const Question& q, std::span<const Token> prefix,
                             double temperature = 1.0);

Rollout sample_rollout(const PolicyParams& p, const Question& q, double temperature, int max_len, Rng& rng);

/// Sum of per-token log-probabilities at T = 1. A token with zero probability
/// gives -infinity.
double logprob(const PolicyParams& p, const Question& q, std::span<const Token> tokens);
inline double logprob(const PolicyParams& p, const Question& q, const Rollout& r) {
  return logprob(p, q, r.tokens);
}

/// Per-token log-probabilities (T = 1) of a rollout.
std::vector<double> token_logprobs(const PolicyParams& p, const Question& q, std::span<const Token> tokens);

/// Gradient of logprob with respect to the weights, in PolicyParams layout.
std::vector<double> grad_logprob(const PolicyParams& p, const Question& q, std::span<const Token> tokens);
inline std::vector<double> grad_logprob(const PolicyParams& p, const Question& q, const Rollout& r) {
  return grad_logprob(p, q, r.tokens);
}

/// Accumulates  sum_t weight_t * d log pi(o_t | prefix_t) / dW  into `grad`.
/// `token_weights` has one entry per token.
void accumulate_weighted_grad(const PolicyParams& p, const Question& q, std::span<const Token> tokens,
                              std::span<const double> token_weights, std::span<double> grad);

// ---------------------------------------------------------------------------
// Exact trajectory enumeration.

/// Next-token distribution given a prefix of token indices.
using NextTokenFn = std::function<std::vector<double>(std::span<const int> prefix)>;

/// Probability of every trajectory of an autoregressive sampler that stops at
/// `eos` or after `max_len` tokens. Keys are token-index sequences. Refuses
/// (RefusalError) when vocab^max_len exceeds `max_trajectories`.
std::map<std::vector<int>, double> enumerate_sequences(int vocab_size, int eos, int max_len,
                                                       const NextTokenFn& next,
                                                       std::uint64_t max_trajectories = 1'000'000);

std::map<std::vector<int>, double> enumerate_trajectories(const PolicyParams& p, const Question& q,
                                                          double temperature, int max_len);

double total_variation(const std::map<std::vector<int>, double>& a, const std::map<std::vector<int>, double>& b);

// ---------------------------------------------------------------------------
// Checkpoints: text header "opsft-policy v1 <modulus> <feature_dim> <vocab_size>"
// followed by one shortest-round-trip weight per line.

void write_checkpoint(std::ostream& out, const PolicyParams& p);
PolicyParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const PolicyParams& p);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace opsft
