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

#ifndef SONOLOC__CONFIG_HPP_
#define SONOLOC__CONFIG_HPP_

#include "sonoloc/autodiff/params.hpp"
#include "sonoloc/dsp.hpp"
#include "sonoloc/losses.hpp"
#include "sonoloc/model.hpp"
#include "sonoloc/scene.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace sonoloc
{

class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Load-time corruption for robustness runs. Pose noise only reaches the
/// model's inputs; targets and world conversion keep the recorded poses.
struct NoiseOptions
{
  std::optional<double> snr_db;  // absent or infinite: clean audio
  double pose_delta = 0;         // radians
};

struct TrainingConfig
{
  ad::AdamWConfig optimizer;
  int steps = 2000;
  int checkpoint_every = 500;
  /// Scenes whose gradients are summed before each optimizer step.
  int accumulate = 1;
  LossConfig loss;
};

struct ExperimentConfig
{
  std::string preset = "paper";
  std::uint64_t seed = 0;

  SceneConfig scene;
  int num_views = 4;
  int num_mics = 4;
  CameraPlacementConfig placement;
  int image_size = 256;
  /// Focal length as a fraction of the image width.
  double focal_scale = 0.5;
  int appearance_grid = 64;
  int appearance_dim = 256;
  double appearance_frequency_std = kDefaultAppearanceFrequencyStd;

  AudioConfig audio;
  dsp::FeatureConfig features;
  ModelConfig model;
  TrainingConfig training;
  /// Evaluation noise; the eval command's flags override it.
  NoiseOptions noise;

  int num_scenes = 5000;
  double train_fraction = 0.8;

  static ExperimentConfig paper();
  static ExperimentConfig desk();
  /// Throws ConfigError for unknown names.
  static ExperimentConfig preset_named(const std::string & name);

  Camera camera() const;
  /// Throws ConfigError when fields disagree (channel counts, map sizes, ...).
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig & cfg);
/// Fields absent from `j` keep the values of the preset named in j["preset"] (paper by default).
ExperimentConfig config_from_json(const nlohmann::json & j);
ExperimentConfig load_config(const std::string & path_or_preset);

std::uint64_t fnv1a64(const std::string & bytes);
/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig & cfg);

}  // namespace sonoloc

#endif  // SONOLOC__CONFIG_HPP_
