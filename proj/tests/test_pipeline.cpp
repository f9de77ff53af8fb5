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
#include "sonoloc/parallel.hpp"
#include "sonoloc/pipeline.hpp"

#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

using namespace sonoloc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace
{
fs::path scratch(const std::string & name)
{
  const fs::path p = fs::temp_directory_path() / ("sonoloc_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path & p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Desk preset shrunk for quick tests.
ExperimentConfig small_desk()
{
  ExperimentConfig cfg = ExperimentConfig::desk();
  cfg.training.checkpoint_every = 4;
  return cfg;
}

// One shared six-scene dataset.
const DatasetInfo & shared_dataset()
{
  static const DatasetInfo info = [] {
    return generate_dataset(small_desk(), scratch("shared"), 6, 0.5, false, 1);
  }();
  return info;
}
}  // namespace

TEST_CASE("configuration")
{
  SUBCASE("presets validate and round-trip through JSON")
  {
    for (const auto & cfg : {ExperimentConfig::paper(), ExperimentConfig::desk()}) {
      CHECK_NOTHROW(cfg.validate());
      const ExperimentConfig back = config_from_json(json::parse(to_json(cfg).dump()));
      CHECK(to_json(back) == to_json(cfg));
      CHECK(config_hash(back) == config_hash(cfg));
      CHECK(config_hash(cfg).size() == 16);
    }
    CHECK(config_hash(ExperimentConfig::paper()) != config_hash(ExperimentConfig::desk()));
  }

  SUBCASE("paper preset constants")
  {
    const ExperimentConfig cfg = ExperimentConfig::paper();
    CHECK(cfg.num_views == 4);
    CHECK(cfg.image_size == 256);
    CHECK(cfg.audio.fs == 21000.0);
    CHECK(cfg.training.optimizer.lr == 1e-4);
    CHECK(cfg.model.num_queries() == 16);
    CHECK(cfg.model.dim() == 256);
    CHECK(cfg.training.loss.sigma == 0.3);
  }

  SUBCASE("overrides keep the named preset for the rest")
  {
    const ExperimentConfig cfg = config_from_json(json{{"preset", "desk"}, {"seed", 9}, {"training", {{"lr", 3e-4}}}});
    CHECK(cfg.seed == 9);
    CHECK(cfg.training.optimizer.lr == 3e-4);
    CHECK(cfg.num_views == 2);
    CHECK(config_hash(cfg) != config_hash(ExperimentConfig::desk()));
  }

  SUBCASE("noise settings")
  {
    ExperimentConfig cfg = ExperimentConfig::desk();
    cfg.noise.snr_db = 20.0;
    cfg.noise.pose_delta = 0.01;
    const ExperimentConfig back = config_from_json(to_json(cfg));
    REQUIRE(back.noise.snr_db);
    CHECK(*back.noise.snr_db == 20.0);
    CHECK(back.noise.pose_delta == 0.01);
  }

  SUBCASE("errors")
  {
    CHECK_THROWS_AS(ExperimentConfig::preset_named("lab"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"preset", "desk"}, {"num_mics", 6}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"preset", "desk"}, {"model", {{"num_classes", 3}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"preset", "desk"}, {"seed", "x"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::array()), ConfigError);
  }

  SUBCASE("six microphones with matching channels")
  {
    const ExperimentConfig cfg =
      config_from_json(json{{"preset", "desk"}, {"num_mics", 6}, {"model", {{"input_channels", 21}}}});
    CHECK(cfg.model.input_channels == 21);
  }
}

TEST_CASE("parallel_for")
{
  std::vector<int> out(50, 0);
  parallel_for(50, 4, [&](int i) { out[static_cast<std::size_t>(i)] = i * i; });
  for (int i = 0; i < 50; ++i) CHECK(out[static_cast<std::size_t>(i)] == i * i);
  CHECK_THROWS_AS(parallel_for(10, 3, [](int i) {
    if (i == 7) throw std::runtime_error("boom");
  }),
                  std::runtime_error);
  CHECK(default_thread_count() >= 1);
}

TEST_CASE("dataset generation")
{
  const DatasetInfo & info = shared_dataset();

  SUBCASE("folders, metadata and splits")
  {
    CHECK(fs::exists(info.root / "dataset.json"));
    for (int i = 0; i < 6; ++i) CHECK(fs::exists(info.scene_dir(i) / "scene.json"));
    CHECK(info.train == std::vector<int>{0, 1, 2});
    CHECK(info.test == std::vector<int>{3, 4, 5});
    const DatasetInfo loaded = load_dataset(info.root);
    CHECK(loaded.config_hash == info.config_hash);
    CHECK(loaded.spec.frequencies == info.spec.frequencies);
    const json scene = json::parse(slurp(info.scene_dir(0) / "scene.json"));
    CHECK(scene.at("config_hash") == info.config_hash);
    CHECK(scene.at("master_seed") == info.config.seed);
  }

  SUBCASE("scenes read back as rendered")
  {
    const SceneRecord disk = read_scene(info.scene_dir(2));
    const SceneRecord fresh = simulate_scene(info.config, info.spec, 2);
    REQUIRE(disk.views.size() == fresh.views.size());
    CHECK(disk.scene.sources.size() == fresh.scene.sources.size());
    for (std::size_t v = 0; v < disk.views.size(); ++v) {
      CHECK(disk.audio[v] == fresh.audio[v]);
      CHECK(disk.depth[v].values.cwiseEqual(fresh.depth[v].values).all());
      CHECK(disk.appearance[v].values == fresh.appearance[v].values);
      CHECK(disk.views[v].pose.rotation == fresh.views[v].pose.rotation);
    }
  }

  SUBCASE("a second run is byte-identical, also with more threads")
  {
    const fs::path again = scratch("again");
    generate_dataset(small_desk(), again, 6, 0.5, false, 3);
    for (int i = 0; i < 6; ++i) {
      CHECK(slurp(again / scene_folder_name(i) / "scene.json") == slurp(info.scene_dir(i) / "scene.json"));
      CHECK(slurp(again / scene_folder_name(i) / "audio_v1.f64") == slurp(info.scene_dir(i) / "audio_v1.f64"));
    }
    CHECK(slurp(again / "dataset.json") == slurp(info.root / "dataset.json"));
    CHECK_THROWS_AS(generate_dataset(small_desk(), again, 6, 0.5, false, 1), DataError);
    CHECK_NOTHROW(generate_dataset(small_desk(), again, 2, 0.5, true, 1));
    CHECK_FALSE(fs::exists(again / scene_folder_name(3)));
    fs::remove_all(again);
  }

  SUBCASE("paper preset metadata")
  {
    const fs::path paper = scratch("paper");
    generate_dataset(ExperimentConfig::paper(), paper, 1, 1.0, false, 1);
    const json scene = json::parse(slurp(paper / scene_folder_name(0) / "scene.json"));
    CHECK(scene.at("views").size() == 4);
    CHECK(scene.at("shapes").at("depth") == json::array({256, 256}));
    CHECK(scene.at("fs") == 21000.0);
    fs::remove_all(paper);
  }

  SUBCASE("damaged data")
  {
    CHECK_THROWS_AS(load_dataset(scratch("missing")), DataError);
    const fs::path broken = scratch("broken");
    fs::create_directories(broken);
    std::ofstream(broken / "dataset.json") << "{ not json";
    CHECK_THROWS_AS(load_dataset(broken), DataError);
    CHECK_THROWS_AS(read_f64(info.scene_dir(0) / "depth_v0.f64", 7), DataError);
    fs::remove_all(broken);
  }
}

TEST_CASE("variants")
{
  CHECK(parse_variant("noRGBD") == Variant::noRGBD);
  CHECK_THROWS_AS(parse_variant("noAudio"), ConfigError);
  for (const Variant v : {Variant::full, Variant::noRGB, Variant::noDepth, Variant::noCVC, Variant::noRGBD}) {
    CHECK(parse_variant(variant_name(v)) == v);
    ExperimentConfig cfg = ExperimentConfig::desk();
    apply_variant(cfg, v);
    CHECK(cfg.model.use_rgb == (v != Variant::noRGB && v != Variant::noRGBD));
    CHECK(cfg.training.loss.use_depth_loss == (v != Variant::noDepth && v != Variant::noRGBD));
    CHECK(cfg.training.loss.use_crossview_loss == (v != Variant::noCVC));
  }
}

TEST_CASE("scene preparation and noise")
{
  const DatasetInfo & info = shared_dataset();
  const SceneRecord rec = read_scene(info.scene_dir(1));
  const PreparedScene clean = prepare_scene(rec, 1, info.config);

  NoiseOptions zero;
  zero.pose_delta = 0;
  zero.snr_db = std::numeric_limits<double>::infinity();
  const PreparedScene same = prepare_scene(rec, 1, info.config, zero);
  for (std::size_t v = 0; v < clean.inputs.size(); ++v) {
    CHECK(same.inputs[v].features.data == clean.inputs[v].features.data);
    CHECK(same.inputs[v].pose.rotation == clean.inputs[v].pose.rotation);
  }

  NoiseOptions noisy;
  noisy.snr_db = 10;
  noisy.pose_delta = 0.02;
  const PreparedScene a = prepare_scene(rec, 1, info.config, noisy);
  const PreparedScene b = prepare_scene(rec, 1, info.config, noisy);
  CHECK(a.inputs[0].features.data == b.inputs[0].features.data);
  CHECK(a.inputs[0].features.data != clean.inputs[0].features.data);
  CHECK(a.inputs[0].pose.rotation != clean.inputs[0].pose.rotation);
  CHECK(a.true_poses[0].rotation == clean.true_poses[0].rotation);
  CHECK(a.targets[0][0].position == clean.targets[0][0].position);

  ExperimentConfig wrong = info.config;
  wrong.num_views = 3;
  CHECK_THROWS_AS(prepare_scene(rec, 1, wrong), DataError);
}

TEST_CASE("training, checkpoints and evaluation")
{
  const DatasetInfo & info = shared_dataset();
  const fs::path run = scratch("run");

  TrainOptions opts;
  opts.out = run;
  opts.steps = 8;
  const TrainSummary s = train(info, info.config, opts);
  REQUIRE(s.losses.size() == 8);
  for (double l : s.losses) CHECK(std::isfinite(l));
  CHECK(fs::exists(run / "ckpt_step000004.bin"));
  CHECK(fs::exists(run / "ckpt_step000008.bin"));

  SUBCASE("log lines")
  {
    std::ifstream log(run / "train_log.jsonl");
    std::string line;
    std::getline(log, line);
    const json header = json::parse(line);
    CHECK(header.at("kind") == "header");
    CHECK(header.at("config_hash").get<std::string>().size() == 16);
    int steps = 0;
    while (std::getline(log, line)) {
      const json j = json::parse(line);
      CHECK(j.at("step") == steps);
      CHECK(j.at("breakdown").contains("l_crossview"));
      ++steps;
    }
    CHECK(steps == 8);
  }

  SUBCASE("resuming reproduces later steps exactly")
  {
    const fs::path resumed = scratch("resumed");
    fs::create_directories(resumed);
    fs::copy_file(run / "ckpt_step000004.bin", resumed / "start.bin");
    TrainOptions more = opts;
    more.out = resumed;
    more.resume = resumed / "start.bin";
    const TrainSummary r = train(info, info.config, more);
    REQUIRE(r.losses.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) CHECK(r.losses[k] == s.losses[k + 4]);
    CHECK(slurp(resumed / "checkpoint.bin") == slurp(run / "checkpoint.bin"));

    TrainOptions other = more;
    other.variant = Variant::noCVC;
    CHECK_THROWS_AS(train(info, info.config, other), DataError);
    fs::remove_all(resumed);
  }

  SUBCASE("noRGBD is recorded in the log header")
  {
    const fs::path ablated = scratch("ablated");
    TrainOptions o = opts;
    o.out = ablated;
    o.steps = 1;
    o.variant = Variant::noRGBD;
    train(info, info.config, o);
    std::ifstream log(ablated / "train_log.jsonl");
    std::string line;
    std::getline(log, line);
    const json header = json::parse(line);
    CHECK(header.at("variant") == "noRGBD");
    CHECK(header.at("flags").at("use_rgb") == false);
    CHECK(header.at("flags").at("use_depth_loss") == false);
    CHECK(header.at("flags").at("use_crossview_loss") == true);
    std::getline(log, line);
    CHECK(json::parse(line).at("breakdown").at("l_depth") == 0.0);
    const LoadedModel m = load_model(ablated / "checkpoint.bin");
    CHECK(m.variant == Variant::noRGBD);
    CHECK_FALSE(m.config.model.use_rgb);
    fs::remove_all(ablated);
  }

  SUBCASE("evaluation outputs")
  {
    const LoadedModel loaded = load_model(run / "checkpoint.bin");
    CHECK(loaded.step == 8);
    const auto result = evaluate_split(*loaded.model, info, loaded.config, info.test, loaded.config.noise, 2);
    const auto serial = evaluate_split(*loaded.model, info, loaded.config, info.test, loaded.config.noise, 1);
    CHECK(to_json(result.report) == to_json(serial.report));
    CHECK(result.predictions == serial.predictions);
    CHECK(result.report.num_views == 6);

    const fs::path out = scratch("eval");
    write_evaluation(out, result, loaded, loaded.config.noise);
    const json metrics = json::parse(slurp(out / "metrics.json"));
    CHECK(metrics.at("config_hash") == config_hash(loaded.config));
    CHECK(metrics.at("seed") == loaded.config.seed);
    CHECK(json::parse(slurp(out / "predictions.json")).at("config_hash") == config_hash(loaded.config));
    CHECK(slurp(out / "metrics.csv").rfind("# config_hash=", 0) == 0);
    for (const auto & scene : json::parse(slurp(out / "predictions.json")).at("scenes")) {
      for (const auto & view : scene.at("views")) {
        for (const auto & d : view) CHECK(d.at("class").get<int>() < loaded.config.model.num_classes);
      }
    }
    fs::remove_all(out);
  }

  SUBCASE("mismatched data and broken checkpoints")
  {
    ExperimentConfig other = ExperimentConfig::paper();
    CHECK_THROWS_AS(check_compatible(info, other), DataError);
    const fs::path junk = run / "junk.bin";
    std::ofstream(junk) << "not a checkpoint";
    CHECK_THROWS_AS(load_model(junk), DataError);
  }
  fs::remove_all(run);
}

TEST_CASE("training lowers the loss on a fixed scene")
{
  const DatasetInfo & info = shared_dataset();
  ExperimentConfig cfg = info.config;
  cfg.training.optimizer.lr = 1e-3;
  Localizer model(cfg.model, model_seed(cfg));
  SceneCache cache(info, cfg);
  const PreparedScene & scene = cache.get(0);
  double first = 0;
  double last = 0;
  for (int step = 0; step < 60; ++step) {
    model.parameters().zero_grad();
    ad::Tape tape;
    const LossBreakdown loss = scene_loss(tape, model, scene, cfg.training.loss);
    CHECK(loss.l_bm >= 0);
    CHECK(loss.l_depth >= 0);
    CHECK(loss.l_crossview >= 0);
    tape.backward(loss.objective);
    ad::adamw_step(model.parameters(), cfg.training.optimizer);
    if (step == 0) first = loss.total;
    last = loss.total;
  }
  CHECK(last < first);
}
