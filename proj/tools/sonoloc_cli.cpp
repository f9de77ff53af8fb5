/*
 * Copyright 2026 The sonoloc Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "sonoloc/config.hpp"
#include "sonoloc/dataset.hpp"
#include "sonoloc/oracle.hpp"
#include "sonoloc/parallel.hpp"
#include "sonoloc/pipeline.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <optional>
#include <string>

namespace
{

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitOracle = 4;

struct Options
{
  bool deterministic = false;
  int threads = 0;

  std::string config;
  std::string out;
  std::string data;
  std::string ckpt;
  std::string resume;
  std::string variant = "full";
  std::string split = "test";
  std::string suite = "all";
  int scenes = -1;
  double train_fraction = -1;
  int steps = -1;
  bool force = false;
  bool verbose = false;
  std::optional<std::uint64_t> seed;
  std::optional<double> snr_db;
  std::optional<double> pose_delta;
};

int worker_count(const Options & o)
{
  if (o.deterministic) return 1;
  if (o.threads > 0) return o.threads;
  return sonoloc::default_thread_count();
}

sonoloc::ExperimentConfig resolve_config(const Options & o)
{
  sonoloc::ExperimentConfig cfg = sonoloc::load_config(o.config.empty() ? "desk" : o.config);
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

int gen_data(const Options & o)
{
  const sonoloc::ExperimentConfig cfg = resolve_config(o);
  const int scenes = o.scenes > 0 ? o.scenes : cfg.num_scenes;
  const double split = o.train_fraction >= 0 ? o.train_fraction : cfg.train_fraction;
  const auto info = sonoloc::generate_dataset(cfg, o.out, scenes, split, o.force, worker_count(o));
  std::printf("wrote %d scenes (%zu train, %zu test) to %s, config %s\n", info.num_scenes, info.train.size(),
              info.test.size(), o.out.c_str(), info.config_hash.c_str());
  return 0;
}

int train(const Options & o)
{
  const auto data = sonoloc::load_dataset(o.data);
  sonoloc::ExperimentConfig cfg = o.config.empty() ? data.config : sonoloc::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  sonoloc::TrainOptions opts;
  opts.out = o.out;
  opts.steps = o.steps;
  opts.variant = sonoloc::parse_variant(o.variant);
  opts.quiet = !o.verbose;
  if (!o.resume.empty()) opts.resume = o.resume;
  const auto summary = sonoloc::train(data, cfg, opts);
  std::printf("trained steps %ld..%ld", summary.first_step, summary.last_step);
  if (!summary.losses.empty()) std::printf(", last loss %.6f", summary.losses.back());
  std::printf("; checkpoint %s\n", summary.checkpoint.string().c_str());
  return 0;
}

int evaluate(const Options & o)
{
  const auto data = sonoloc::load_dataset(o.data);
  const auto loaded = sonoloc::load_model(o.ckpt);
  sonoloc::NoiseOptions noise = loaded.config.noise;
  if (o.snr_db) noise.snr_db = o.snr_db;
  if (o.pose_delta) noise.pose_delta = *o.pose_delta;
  if (noise.pose_delta < 0) throw sonoloc::ConfigError("--pose-delta must be non-negative");
  const auto & scenes = o.split == "train" ? data.train : data.test;
  const auto result = sonoloc::evaluate_split(*loaded.model, data, loaded.config, scenes, noise, worker_count(o));
  sonoloc::write_evaluation(o.out, result, loaded, noise);
  std::printf("mAP %.4f  mAR %.4f  mALE %.4f over %ld views\n", result.report.mAP, result.report.mAR,
              result.report.mALE, result.report.num_views);
  return 0;
}

int run_oracle(const Options & o)
{
  std::vector<std::string> suites;
  if (o.suite == "all") {
    suites = sonoloc::oracle::suite_names();
  } else {
    suites = {o.suite};
  }
  bool ok = true;
  for (const auto & name : suites) {
    const auto result = sonoloc::oracle::run(name);
    std::cout << sonoloc::oracle::format(result);
    ok = ok && result.passed();
  }
  return ok ? 0 : kExitOracle;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"sonoloc: multiview sound source localization on synthetic scenes"};
  app.require_subcommand(1);
  Options o;
  app.add_flag("--deterministic", o.deterministic, "Single-threaded execution everywhere");
  app.add_option("--threads", o.threads, "Worker cap (default: SL3D_THREADS or hardware concurrency)")
    ->check(CLI::PositiveNumber);

  auto * gen = app.add_subcommand("gen-data", "Render a synthetic dataset");
  gen->add_option("--config", o.config, "Preset name (paper, desk) or JSON config file")->required();
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_option("--scenes", o.scenes, "Scene count (default from config)")->check(CLI::PositiveNumber);
  gen->add_option("--split", o.train_fraction, "Train fraction (default from config)")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--seed", o.seed, "Master seed override");
  gen->add_flag("--force", o.force, "Replace an existing dataset in --out");

  auto * tr = app.add_subcommand("train", "Train a localizer");
  tr->add_option("--config", o.config, "Preset or JSON config (default: the dataset's config)");
  tr->add_option("--data", o.data, "Dataset directory")->required();
  tr->add_option("--out", o.out, "Run directory for the log and checkpoints")->required();
  tr->add_option("--steps", o.steps, "Optimizer steps (default from config)")->check(CLI::NonNegativeNumber);
  tr->add_option("--variant", o.variant, "full, noRGB, noDepth, noCVC or noRGBD");
  tr->add_option("--resume", o.resume, "Checkpoint to continue from");
  tr->add_option("--seed", o.seed, "Master seed override");
  tr->add_flag("--verbose", o.verbose, "Print progress to stderr");

  auto * ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
  ev->add_option("--data", o.data, "Dataset directory")->required();
  ev->add_option("--out", o.out, "Output directory")->required();
  ev->add_option("--split", o.split, "train or test")->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--snr-db", o.snr_db, "Add white noise at this SNR (inf = clean)");
  ev->add_option("--pose-delta", o.pose_delta, "Std (rad) of pose perturbation seen by the model");

  auto * orc = app.add_subcommand("oracle", "Run oracle suites");
  orc->add_option("--suite", o.suite, "geometry, dsp, grad, hungarian, zero-loss, eval or all")
    ->check(CLI::IsMember({"geometry", "dsp", "grad", "hungarian", "zero-loss", "eval", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return gen_data(o);
    if (*tr) return train(o);
    if (*ev) return evaluate(o);
    if (*orc) return run_oracle(o);
  } catch (const sonoloc::ConfigError & e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const sonoloc::DataError & e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception & e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
