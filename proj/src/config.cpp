// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#include "opsft/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "opsft/errors.hpp"

namespace opsft {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) {
    throw ConfigError("bad value for " + key + ": '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") {
    return true;
  }
  if (value == "false" || value == "0") {
    return false;
  }
  throw ConfigError("bad value for " + key + ": '" + value + "' (expected true/false)");
}

std::string fmt(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string_view std_mode_name(StdMode m) { return m == StdMode::Sample ? "sample" : "population"; }

StdMode parse_std_mode(const std::string& value) {
  if (value == "sample") {
    return StdMode::Sample;
  }
  if (value == "population") {
    return StdMode::Population;
  }
  throw ConfigError("unknown adv_std_mode '" + value + "'");
}

struct Field {
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field int_field(T TrainConfig::*m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<T>(k, v); },
          [m](const TrainConfig& c) { return std::to_string(c.*m); }};
}

Field real_field(double TrainConfig::*m) {
  return {[m](TrainConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<double>(k, v); },
          [m](const TrainConfig& c) { return fmt(c.*m); }};
}

// Keys in emission order; a vector of pairs keeps write_config stable.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.emplace_back("modulus", int_field(&TrainConfig::modulus));
    t.emplace_back("max_operands", int_field(&TrainConfig::max_operands));
    t.emplace_back("train_questions", int_field(&TrainConfig::train_questions));
    t.emplace_back("probe_questions", int_field(&TrainConfig::probe_questions));
    t.emplace_back("seed", int_field(&TrainConfig::seed));
    t.emplace_back("probe_seed", int_field(&TrainConfig::probe_seed));
    t.emplace_back("group_size", int_field(&TrainConfig::group_size));
    t.emplace_back("length_limit", int_field(&TrainConfig::length_limit));
    t.emplace_back("batch_size", int_field(&TrainConfig::batch_size));
    t.emplace_back("learning_rate", real_field(&TrainConfig::learning_rate));
    t.emplace_back("total_steps", int_field(&TrainConfig::total_steps));
    t.emplace_back("rollout_temperature", real_field(&TrainConfig::rollout_temperature));
    t.emplace_back("max_gen_len", int_field(&TrainConfig::max_gen_len));
    t.emplace_back("engine", Field{[](TrainConfig& c, const std::string&, const std::string& v) { c.engine = parse_engine(v); },
                                   [](const TrainConfig& c) { return std::string(to_string(c.engine)); }});
    t.emplace_back("length_norm",
                   Field{[](TrainConfig& c, const std::string&, const std::string& v) { c.length_norm = parse_length_norm(v); },
                         [](const TrainConfig& c) { return std::string(to_string(c.length_norm)); }});
    t.emplace_back("reward_variant",
                   Field{[](TrainConfig& c, const std::string&, const std::string& v) {
                           c.reward.variant = parse_reward_variant(v);
                         },
                         [](const TrainConfig& c) { return std::string(to_string(c.reward.variant)); }});
    t.emplace_back("reward_tau", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                         c.reward.tau = parse_number<int>(k, v);
                                       },
                                       [](const TrainConfig& c) { return std::to_string(c.reward.tau); }});
    t.emplace_back("reward_alpha", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                           c.reward.alpha = parse_number<double>(k, v);
                                         },
                                         [](const TrainConfig& c) { return fmt(c.reward.alpha); }});
    t.emplace_back("reward_delta", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                           c.reward.delta = parse_number<double>(k, v);
                                         },
                                         [](const TrainConfig& c) { return fmt(c.reward.delta); }});
    t.emplace_back("reward_target_len", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                                c.reward.target_len = parse_number<int>(k, v);
                                              },
                                              [](const TrainConfig& c) { return std::to_string(c.reward.target_len); }});
    t.emplace_back("reward_laser_threshold",
                   Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                           c.reward.laser_threshold = parse_number<int>(k, v);
                         },
                         [](const TrainConfig& c) { return std::to_string(c.reward.laser_threshold); }});
    t.emplace_back("adv_subtract_mean", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                                c.advantage.subtract_mean = parse_bool(k, v);
                                              },
                                              [](const TrainConfig& c) {
                                                return std::string(c.advantage.subtract_mean ? "true" : "false");
                                              }});
    t.emplace_back("adv_divide_std", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                             c.advantage.divide_std = parse_bool(k, v);
                                           },
                                           [](const TrainConfig& c) {
                                             return std::string(c.advantage.divide_std ? "true" : "false");
                                           }});
    t.emplace_back("adv_std_epsilon", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                              c.advantage.std_epsilon = parse_number<double>(k, v);
                                            },
                                            [](const TrainConfig& c) { return fmt(c.advantage.std_epsilon); }});
    t.emplace_back("adv_std_mode", Field{[](TrainConfig& c, const std::string&, const std::string& v) {
                                           c.advantage.std_mode = parse_std_mode(v);
                                         },
                                         [](const TrainConfig& c) { return std::string(std_mode_name(c.advantage.std_mode)); }});
    t.emplace_back("grpo_beta", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                        c.grpo.beta = parse_number<double>(k, v);
                                      },
                                      [](const TrainConfig& c) { return fmt(c.grpo.beta); }});
    t.emplace_back("grpo_clip_eps", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                            c.grpo.clip_eps = parse_number<double>(k, v);
                                          },
                                          [](const TrainConfig& c) { return fmt(c.grpo.clip_eps); }});
    t.emplace_back("pg_reward_mode", Field{[](TrainConfig& c, const std::string&, const std::string& v) {
                                             c.pg_reward_mode = parse_reward_mode(v);
                                           },
                                           [](const TrainConfig& c) { return std::string(to_string(c.pg_reward_mode)); }});
    t.emplace_back("discount", real_field(&TrainConfig::discount));
    t.emplace_back("regime", Field{[](TrainConfig& c, const std::string&, const std::string& v) { c.regime = parse_regime(v); },
                                   [](const TrainConfig& c) { return std::string(to_string(c.regime)); }});
    t.emplace_back("offpolicy_refresh_steps", int_field(&TrainConfig::offpolicy_refresh_steps));
    t.emplace_back("eval_every", int_field(&TrainConfig::eval_every));
    t.emplace_back("eval_samples", int_field(&TrainConfig::eval_samples));
    t.emplace_back("eval_temperature", real_field(&TrainConfig::eval_temperature));
    t.emplace_back("init_checkpoint", Field{[](TrainConfig& c, const std::string&, const std::string& v) { c.init_checkpoint = v; },
                                            [](const TrainConfig& c) { return c.init_checkpoint; }});
    t.emplace_back("warmstart_demos", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                              c.warm_start.n_demos = parse_number<int>(k, v);
                                            },
                                            [](const TrainConfig& c) { return std::to_string(c.warm_start.n_demos); }});
    t.emplace_back("warmstart_verbosity", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                                  c.warm_start.verbosity = parse_number<double>(k, v);
                                                },
                                                [](const TrainConfig& c) { return fmt(c.warm_start.verbosity); }});
    t.emplace_back("warmstart_epochs", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                               c.warm_start.epochs = parse_number<int>(k, v);
                                             },
                                             [](const TrainConfig& c) { return std::to_string(c.warm_start.epochs); }});
    t.emplace_back("warmstart_lr", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                           c.warm_start.learning_rate = parse_number<double>(k, v);
                                         },
                                         [](const TrainConfig& c) { return fmt(c.warm_start.learning_rate); }});
    t.emplace_back("warmstart_seed", Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                                             c.warm_start.seed = parse_number<std::uint64_t>(k, v);
                                           },
                                           [](const TrainConfig& c) { return std::to_string(c.warm_start.seed); }});
    t.emplace_back("checkpoint_every", int_field(&TrainConfig::checkpoint_every));
    t.emplace_back("workers", int_field(&TrainConfig::workers));
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      return &field;
    }
  }
  return nullptr;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : fields()) {
      k.push_back(name);
    }
    return k;
  }();
  return keys;
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  f->set(cfg, key, value);
}

TrainConfig parse_config(const std::string& text, const TrainConfig& base) {
  TrainConfig cfg = base;
  std::istringstream in(text);
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line.resize(hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  // Warm-start task shape always follows the run's.
  cfg.warm_start.modulus = cfg.modulus;
  cfg.warm_start.max_operands = cfg.max_operands;
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::string& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base);
}

void write_config(std::ostream& out, const TrainConfig& cfg) {
  for (const auto& [name, field] : fields()) {
    out << name << " = " << field.get(cfg) << '\n';
  }
}

}  // namespace opsft
