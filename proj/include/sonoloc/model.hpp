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

#ifndef SONOLOC__MODEL_HPP_
#define SONOLOC__MODEL_HPP_

#include "sonoloc/autodiff/layers.hpp"
#include "sonoloc/autodiff/ops.hpp"
#include "sonoloc/autodiff/params.hpp"
#include "sonoloc/dsp.hpp"
#include "sonoloc/geometry.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sonoloc
{

struct ModelConfig
{
  int num_classes = 5;  // k; logits carry one extra no-source column
  int input_channels = 10;
  int input_size = 256;
  std::vector<int> conv_channels = {32, 64, 128, 256, 512, 256};
  int mixer_layers = 1;
  int heads = 4;
  int ffn_dim = 1024;
  int decoder_hidden = 128;

  bool use_rgb = true;
  bool use_depth_loss = true;
  bool use_crossview_loss = true;

  static ModelConfig paper();
  /// 64 x 64 inputs, 2 classes, 16 queries of dimension 32.
  static ModelConfig desk();

  int dim() const { return conv_channels.back(); }
  int token_grid() const;
  int num_queries() const { return token_grid() * token_grid(); }
  void validate() const;
};

/// One view's model inputs. Poses are camera -> world.
struct ViewInput
{
  dsp::InputFeatureTensor features;
  Pose pose;
  Camera camera;
  FeatureMapd appearance;
};

struct DecodedPredictions
{
  ad::Var positions;  // q x 3, camera frame of the owning view
  ad::Var logits;     // q x (k + 1), last column = no source
};

struct ViewOutput
{
  DecodedPredictions initial;
  DecodedPredictions updated;
};

/// Mean over all views j of the appearance feature sampled where each
/// position (camera frame of view i) projects in view j; invalid projections
/// contribute zeros. Returns q x d.
ad::RowMatrix appearance_cues(
  const Eigen::Ref<const ad::RowMatrix> & positions, std::size_t view, const std::vector<Pose> & poses,
  const std::vector<Camera> & cameras, const std::vector<const FeatureMapd *> & maps);

class Localizer
{
public:
  Localizer(const ModelConfig & cfg, std::uint64_t seed);

  const ModelConfig & config() const { return cfg_; }
  ModelConfig & config() { return cfg_; }
  ad::ParameterStore & parameters() { return store_; }
  const ad::ParameterStore & parameters() const { return store_; }

  /// Conv ladder to a C x g x g map, one query per spatial cell: q x C.
  ad::Var query_generator(ad::Tape & tape, const dsp::InputFeatureTensor & features) const;
  DecodedPredictions decode_queries(ad::Tape & tape, const ad::Var & queries) const;
  /// queries + appearance_cues(...); the cues enter as constants.
  ad::Var aggregate_rgb_cues(
    ad::Tape & tape, const ad::Var & queries, const ad::RowMatrix & positions, std::size_t view,
    const std::vector<ViewInput> & views) const;
  ad::Var feature_mixer(ad::Tape & tape, const ad::Var & queries) const;

  std::vector<ViewOutput> forward_scene(ad::Tape & tape, const std::vector<ViewInput> & views) const;

private:
  ModelConfig cfg_;
  ad::ParameterStore store_;
  std::vector<ad::Conv2dLayer> convs_;
  std::vector<ad::TransformerEncoderLayer> mixer_;
  ad::LinearLayer pos_hidden_;
  ad::NormLayer pos_norm_;
  ad::LinearLayer pos_out_;
  ad::LinearLayer class_head_;
};

}  // namespace sonoloc

#endif  // SONOLOC__MODEL_HPP_
