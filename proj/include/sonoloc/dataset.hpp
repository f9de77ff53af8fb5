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

#ifndef SONOLOC__DATASET_HPP_
#define SONOLOC__DATASET_HPP_

#include "sonoloc/config.hpp"
#include "sonoloc/scene.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sonoloc
{

/// Everything rendered for one acoustic scene.
struct SceneRecord
{
  AcousticScene scene;
  Camera camera;
  std::vector<CameraView> views;
  std::vector<Eigen::MatrixXd> audio;  // clean, channels x samples
  std::vector<DepthMap> depth;
  std::vector<FeatureMapd> appearance;
};

/// Scene seed = derive_seed(master seed, index); all rendering follows from it.
SceneRecord simulate_scene(const ExperimentConfig & cfg, const AppearanceFieldSpec & spec, int index);

AppearanceFieldSpec appearance_spec(const ExperimentConfig & cfg);

struct DatasetInfo
{
  std::filesystem::path root;
  ExperimentConfig config;
  std::string config_hash;
  int num_scenes = 0;
  std::vector<int> train;
  std::vector<int> test;
  AppearanceFieldSpec spec;

  std::filesystem::path scene_dir(int index) const;
};

std::string scene_folder_name(int index);

/// Writes scene_XXXXX/ folders and dataset.json. An existing non-empty
/// directory is refused unless `force` is set. Scenes are rendered on up to
/// `threads` workers; output does not depend on the count.
DatasetInfo generate_dataset(
  const ExperimentConfig & cfg, const std::filesystem::path & out, int num_scenes, double train_fraction,
  bool force, int threads = 1);

void write_scene(const std::filesystem::path & dir, const SceneRecord & rec, const ExperimentConfig & cfg);
SceneRecord read_scene(const std::filesystem::path & dir);

/// Throws DataError for missing or malformed datasets.
DatasetInfo load_dataset(const std::filesystem::path & root);

void write_f64(const std::filesystem::path & path, const double * data, std::size_t count);
std::vector<double> read_f64(const std::filesystem::path & path, std::size_t expected);

}  // namespace sonoloc

#endif  // SONOLOC__DATASET_HPP_
