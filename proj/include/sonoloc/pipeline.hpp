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

#ifndef SONOLOC__PIPELINE_HPP_
#define SONOLOC__PIPELINE_HPP_

#include "sonoloc/config.hpp"
#include "sonoloc/dataset.hpp"
#include "sonoloc/eval.hpp"
#include "sonoloc/losses.hpp"
#include "sonoloc/model.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sonoloc
{

enum class Variant
{
  full,
  noRGB,
  noDepth,
  noCVC,
  noRGBD,
};

/// Throws ConfigError for unknown names.
Variant parse_variant(const std::string & name);
std::string variant_name(Variant v);
/// Sets the model and loss flags of `cfg` for the variant.
void apply_variant(ExperimentConfig & cfg, Variant v);

/// Model inputs and supervision of one scene.
struct PreparedScene
{
  int index = 0;
  AcousticScene scene;
  std::vector<ViewInput> inputs;
  std::vector<Pose> true_poses;
  std::vector<DepthView> depth_views;
  std::vector<std::vector<ViewTarget>> targets;
};

PreparedScene prepare_scene(
  const SceneRecord & rec, int index, const ExperimentConfig & cfg, const NoiseOptions & noise = {});

/// Throws DataError when the dataset cannot feed a model built from `cfg`.
void check_compatible(const DatasetInfo & data, const ExperimentConfig & cfg);

/// Reads and prepares scenes on demand, keeping clean preparations in memory.
class SceneCache
{
public:
  SceneCache(const DatasetInfo & data, const ExperimentConfig & cfg) : data_(data), cfg_(cfg) {}
  const PreparedScene & get(int index);

private:
  const DatasetInfo & data_;
  ExperimentConfig cfg_;
  std::map<int, std::unique_ptr<PreparedScene>> scenes_;
};

/// Seed of the model's initial parameters.
std::uint64_t model_seed(const ExperimentConfig & cfg);

LossBreakdown scene_loss(ad::Tape & tape, const Localizer & model, const PreparedScene & scene, const LossConfig & cfg);

/// Mean total loss over the given scenes; parameters are left untouched.
double mean_scene_loss(const Localizer & model, SceneCache & cache, const std::vector<int> & indices,
                       const LossConfig & cfg);

/// Training visits the train split once per epoch in an order drawn from the
/// master seed and the epoch number, so a resumed run replays the same scenes.
int training_scene(const DatasetInfo & data, std::uint64_t seed, long step);

struct TrainOptions
{
  std::filesystem::path out;
  int steps = -1;  // < 0: use the config
  Variant variant = Variant::full;
  std::optional<std::filesystem::path> resume;
  bool quiet = true;
};

struct TrainSummary
{
  long first_step = 0;
  long last_step = 0;  // number of optimizer steps taken in total
  std::vector<double> losses;  // total loss of each step run here
  std::filesystem::path checkpoint;
};

/// Writes train_log.jsonl (a header line, then one line per step) and
/// checkpoints into `out`; the final state always lands in checkpoint.bin.
TrainSummary train(const DatasetInfo & data, ExperimentConfig cfg, const TrainOptions & opts);

nlohmann::json checkpoint_header(const ExperimentConfig & cfg, Variant v, long step);
void save_model(const std::filesystem::path & path, const Localizer & model, const ExperimentConfig & cfg, Variant v,
                long step);

struct LoadedModel
{
  ExperimentConfig config;
  Variant variant = Variant::full;
  long step = 0;
  std::unique_ptr<Localizer> model;
};

/// Throws DataError for unreadable or inconsistent checkpoints.
LoadedModel load_model(const std::filesystem::path & path);

/// Decoded updated-stage predictions of every view, world frame, no-source entries dropped.
std::vector<std::vector<Detection>> predict_scene(const Localizer & model, const PreparedScene & scene);

struct EvaluationResult
{
  MetricsReport report;
  nlohmann::json predictions;
};

EvaluationResult evaluate_split(
  const Localizer & model, const DatasetInfo & data, const ExperimentConfig & cfg, const std::vector<int> & scenes,
  const NoiseOptions & noise = {}, int threads = 1);

/// predictions.json, metrics.json and metrics.csv, each tagged with the config hash and seed.
void write_evaluation(const std::filesystem::path & out, const EvaluationResult & result, const LoadedModel & loaded,
                      const NoiseOptions & noise);

}  // namespace sonoloc

#endif  // SONOLOC__PIPELINE_HPP_
