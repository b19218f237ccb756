// Copyright (c) 2026, the opsft authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include <CLI11.hpp>

#include "opsft/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"On-policy SFT and GRPO on the ChainSum toy task"};
  app.require_subcommand(1);

  opsft::CommandOptions opts;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "key = value config file");
    sub->add_option("--seed", opts.seed, "seed override");
    sub->add_option("--out", opts.out_dir, "output directory");
  };

  CLI::App* train = app.add_subcommand("train", "train a policy from a config");
  add_common(train);
  train->add_option("--temperature", opts.temperature, "rollout temperature override");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the probe set");
  add_common(eval);
  eval->add_option("--checkpoint", opts.checkpoints, "checkpoint, then an optional CR baseline")->required();
  eval->add_option("--n", opts.n, "samples per question");
  eval->add_option("--temperature", opts.temperature, "sampling temperature");

  CLI::App* diagnose = app.add_subcommand("diagnose", "token-level KL between two checkpoints");
  add_common(diagnose);
  diagnose->add_option("--checkpoint", opts.checkpoints, "original, then efficient checkpoint")->required();
  diagnose->add_option("--n", opts.n, "probe questions");
  diagnose->add_option("--k", opts.k, "rows in the ranking");
  diagnose->add_option("--temperature", opts.temperature, "temperature of the original rollouts");

  CLI::App* verify = app.add_subcommand("verify-theory", "run the algebra checks");
  verify->add_option("--seed", opts.seed, "seed of the random instances");
  verify->add_option("--inject-beta", opts.inject_beta, "KL weight forced into the reduction check");

  CLI11_PARSE(app, argc, argv);

  if (*train) {
    return opsft::cmd_train(opts, std::cout, std::cerr);
  }
  if (*eval) {
    return opsft::cmd_eval(opts, std::cout, std::cerr);
  }
  if (*diagnose) {
    return opsft::cmd_diagnose(opts, std::cout, std::cerr);
  }
  return opsft::cmd_verify_theory(opts, std::cout, std::cerr);
}
