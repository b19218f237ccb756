// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#include "opsft/policy.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "opsft/errors.hpp"

namespace opsft {

int position_bucket(std::size_t prefix_length) {
  if (prefix_length <= 2) {
    return 0;
  }
  return prefix_length <= 7 ? 1 : 2;
}

std::vector<double> FeatureVector::dense() const {
  std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
  for (int i : active) {
    v[static_cast<std::size_t>(i)] = 1.0;
  }
  return v;
}

FeatureVector features(const Question& q, std::span<const Token> prefix) {
  const FeatureLayout layout{q.modulus};
  const Vocabulary vocab(q.modulus);
  FeatureVector fv;
  fv.dim = layout.dim();
  fv.active.reserve(5);

  if (!prefix.empty()) {
    fv.active.push_back(layout.last_token_offset() + vocab.index(prefix.back()));
  }
  fv.active.push_back(layout.position_offset() + position_bucket(prefix.size()));

  int sum = 0;
  bool committed = false;
  for (const Token& t : prefix) {
    vocab.index(t);  // rejects out-of-range digits
    if (t.kind == TokenKind::Equals) {
      committed = true;
      break;
    }
    if (t.kind == TokenKind::Digit) {
      sum = (sum + t.digit) % q.modulus;
    }
  }
  fv.active.push_back(committed ? layout.committed_slot(q.answer) : layout.register_offset() + sum);
  fv.active.push_back(layout.answer_offset() + q.answer);
  fv.active.push_back(layout.bias_index());
  return fv;
}

PolicyParams::PolicyParams(int modulus) {
  const FeatureLayout layout{modulus};
  if (modulus < 2) {
    throw ConfigError("modulus must be >= 2");
  }
  modulus_ = modulus;
  feature_dim_ = layout.dim();
  vocab_size_ = layout.vocab_size();
  weights_.assign(static_cast<std::size_t>(feature_dim_) * static_cast<std::size_t>(vocab_size_), 0.0);
}

void PolicyParams::add_scaled(std::span<const double> direction, double scale) {
  if (direction.size() != weights_.size()) {
    throw InternalError("parameter update has the wrong size");
  }
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    weights_[i] += scale * direction[i];
  }
}

PolicyParams random_params(int modulus, double scale, Rng& rng) {
  PolicyParams p(modulus);
  std::normal_distribution<double> normal(0.0, scale);
  for (double& w : p.weights()) {
    w = normal(rng);
  }
  return p;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) {
    throw ConfigError("temperature must be > 0");
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp((logits[i] - top) / temperature);
    total += probs[i];
  }
  for (double& p : probs) {
    p /= total;
  }
  return probs;
}

namespace {

std::vector<double> logits_for(const PolicyParams& p, const FeatureVector& fv) {
  std::vector<double> z(static_cast<std::size_t>(p.vocab_size()), 0.0);
  for (int f : fv.active) {
    for (int y = 0; y < p.vocab_size(); ++y) {
      z[static_cast<std::size_t>(y)] += p.at(f, y);
    }
  }
  return z;
}

void check_compatible(const PolicyParams& p, const Question& q) {
  if (p.modulus() != q.modulus) {
    throw ConfigError("policy modulus " + std::to_string(p.modulus()) + " does not match question modulus " +
                      std::to_string(q.modulus));
  }
}

}  // namespace

TokenDistribution token_dist(const PolicyParams& p, const Question& q, std::span<const Token> prefix,
                             double temperature) {
  check_compatible(p, q);
  TokenDistribution d;
  d.logits = logits_for(p, features(q, prefix));
  d.probs = softmax(d.logits, temperature);
  return d;
}

Rollout sample_rollout(const PolicyParams& p, const Question& q, double temperature, int max_len, Rng& rng) {
  if (max_len < 1) {
    throw ConfigError("max_len must be >= 1");
  }
  const Vocabulary vocab(q.modulus);
  Rollout r;
  r.question_id = q.id;
  r.tokens.reserve(static_cast<std::size_t>(max_len));
  bool ended = false;
  while (static_cast<int>(r.tokens.size()) < max_len) {
    const TokenDistribution d = token_dist(p, q, r.tokens, temperature);
    const double u = uniform01(rng);
    double cum = 0.0;
    int pick = vocab.size() - 1;
    for (int y = 0; y < vocab.size(); ++y) {
      cum += d.probs[static_cast<std::size_t>(y)];
      if (u < cum) {
        pick = y;
        break;
      }
    }
    r.tokens.push_back(vocab.token(pick));
    if (pick == vocab.eos_index()) {
      ended = true;
      break;
    }
  }
  r.truncated = !ended;
  r.correct = verify(q, r.tokens);
  return r;
}

std::vector<double> token_logprobs(const PolicyParams& p, const Question& q, std::span<const Token> tokens) {
  check_compatible(p, q);
  const Vocabulary vocab(q.modulus);
  std::vector<double> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::vector<double> z = logits_for(p, features(q, tokens.first(t)));
    const double top = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double zi : z) {
      total += std::exp(zi - top);
    }
    const double lp = z[static_cast<std::size_t>(vocab.index(tokens[t]))] - top - std::log(total);
    out.push_back(std::isfinite(lp) ? lp : -std::numeric_limits<double>::infinity());
  }
  return out;
}

double logprob(const PolicyParams& p, const Question& q, std::span<const Token> tokens) {
  double sum = 0.0;
  for (double lp : token_logprobs(p, q, tokens)) {
    sum += lp;
  }
  return sum;
}

void accumulate_weighted_grad(const PolicyParams& p, const Question& q, std::span<const Token> tokens,
                              std::span<const double> token_weights, std::span<double> grad) {
  check_compatible(p, q);
  if (token_weights.size() != tokens.size() || grad.size() != p.size()) {
    throw InternalError("weighted gradient size mismatch");
  }
  const Vocabulary vocab(q.modulus);
  const auto V = static_cast<std::size_t>(p.vocab_size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const double w = token_weights[t];
    if (w == 0.0) {
      continue;
    }
    const FeatureVector fv = features(q, tokens.first(t));
    const std::vector<double> probs = softmax(logits_for(p, fv));
    const auto y_obs = static_cast<std::size_t>(vocab.index(tokens[t]));
    for (int f : fv.active) {
      double* row = grad.data() + static_cast<std::size_t>(f) * V;
      for (std::size_t y = 0; y < V; ++y) {
        row[y] -= w * probs[y];
      }
      row[y_obs] += w;
    }
  }
}

std::vector<double> grad_logprob(const PolicyParams& p, const Question& q, std::span<const Token> tokens) {
  std::vector<double> grad(p.size(), 0.0);
  const std::vector<double> ones(tokens.size(), 1.0);
  accumulate_weighted_grad(p, q, tokens, ones, grad);
  return grad;
}

std::map<std::vector<int>, double> enumerate_sequences(int vocab_size, int eos, int max_len,
                                                       const NextTokenFn& next,
                                                       std::uint64_t max_trajectories) {
  if (max_len < 1 || vocab_size < 1) {
    throw ConfigError("enumeration needs max_len >= 1 and a nonempty vocabulary");
  }
  std::uint64_t bound = 1;
  for (int i = 0; i < max_len; ++i) {
    if (bound > max_trajectories / static_cast<std::uint64_t>(vocab_size)) {
      throw RefusalError("trajectory enumeration exceeds the state-space guard");
    }
    bound *= static_cast<std::uint64_t>(vocab_size);
  }

  std::map<std::vector<int>, double> out;
  std::vector<int> prefix;
  // Depth-first; `mass` is the probability of the current prefix.
  std::function<void(double)> expand = [&](double mass) {
    const std::vector<double> probs = next(prefix);
    for (int y = 0; y < vocab_size; ++y) {
      const double m = mass * probs[static_cast<std::size_t>(y)];
      prefix.push_back(y);
      if (y == eos || static_cast<int>(prefix.size()) == max_len) {
        out.emplace(prefix, m);
      } else {
        expand(m);
      }
      prefix.pop_back();
    }
  };
  expand(1.0);
  return out;
}

std::map<std::vector<int>, double> enumerate_trajectories(const PolicyParams& p, const Question& q,
                                                          double temperature, int max_len) {
  check_compatible(p, q);
  if (!(temperature > 0.0)) {
    throw ConfigError("temperature must be > 0");
  }
  const Vocabulary vocab(q.modulus);
  auto next = [&](std::span<const int> prefix) {
    TokenSeq toks;
    toks.reserve(prefix.size());
    for (int i : prefix) {
      toks.push_back(vocab.token(i));
    }
    return token_dist(p, q, toks, temperature).probs;
  };
  return enumerate_sequences(vocab.size(), vocab.eos_index(), max_len, next);
}

double total_variation(const std::map<std::vector<int>, double>& a, const std::map<std::vector<int>, double>& b) {
  double tv = 0.0;
  for (const auto& [seq, pa] : a) {
    auto it = b.find(seq);
    tv += std::abs(pa - (it == b.end() ? 0.0 : it->second));
  }
  for (const auto& [seq, pb] : b) {
    if (!a.contains(seq)) {
      tv += std::abs(pb);
    }
  }
  return 0.5 * tv;
}

namespace {
constexpr const char* kCheckpointMagic = "opsft-policy";
constexpr const char* kCheckpointVersion = "v1";
}  // namespace

void write_checkpoint(std::ostream& out, const PolicyParams& p) {
  out << kCheckpointMagic << ' ' << kCheckpointVersion << ' ' << p.modulus() << ' ' << p.feature_dim() << ' '
      << p.vocab_size() << '\n';
  std::array<char, 64> buf{};
  for (double w : p.weights()) {
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), w);
    out.write(buf.data(), end - buf.data());
    out << '\n';
  }
}

PolicyParams read_checkpoint(std::istream& in) {
  std::string magic;
  std::string version;
  int modulus = 0;
  int feature_dim = 0;
  int vocab_size = 0;
  if (!(in >> magic >> version >> modulus >> feature_dim >> vocab_size) || magic != kCheckpointMagic) {
    throw ConfigError("not a policy checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version " + version);
  }
  if (modulus < 2) {
    throw ConfigError("checkpoint modulus must be >= 2");
  }
  PolicyParams p(modulus);
  if (p.feature_dim() != feature_dim || p.vocab_size() != vocab_size) {
    throw ConfigError("checkpoint header does not match the feature layout for modulus " + std::to_string(modulus));
  }
  std::string word;
  for (double& w : p.weights()) {
    if (!(in >> word)) {
      throw ConfigError("checkpoint truncated");
    }
    auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), w);
    if (ec != std::errc{} || ptr != word.data() + word.size() || !std::isfinite(w)) {
      throw ConfigError("bad checkpoint weight '" + word + "'");
    }
  }
  if (in >> word) {
    throw ConfigError("trailing data in checkpoint");
  }
  return p;
}

void save_checkpoint(const std::string& path, const PolicyParams& p) {
  std::ofstream out(path);
  if (!out) {
    throw ConfigError("cannot write checkpoint " + path);
  }
  write_checkpoint(out, p);
  if (!out) {
    throw ConfigError("failed writing checkpoint " + path);
  }
}

PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot read checkpoint " + path);
  }
  return read_checkpoint(in);
}

}  // namespace opsft
