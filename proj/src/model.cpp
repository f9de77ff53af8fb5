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

#include "sonoloc/model.hpp"

#include <random>
#include <stdexcept>
#include <string>

namespace sonoloc
{

using ad::RowMatrix;
using ad::Tape;
using ad::Var;

ModelConfig ModelConfig::paper() { return {}; }

ModelConfig ModelConfig::desk()
{
  ModelConfig cfg;
  cfg.num_classes = 2;
  cfg.input_size = 64;
  cfg.conv_channels = {16, 32, 32, 32};
  cfg.heads = 4;
  cfg.ffn_dim = 128;
  cfg.decoder_hidden = 32;
  return cfg;
}

int ModelConfig::token_grid() const
{
  const int stages = static_cast<int>(conv_channels.size());
  int size = input_size;
  for (int s = 0; s < stages; ++s) size = (size + 1) / 2;
  return size;
}

void ModelConfig::validate() const
{
  if (num_classes < 1) throw std::invalid_argument("model: num_classes must be positive");
  if (input_channels < 1 || input_size < 1) throw std::invalid_argument("model: empty input");
  if (conv_channels.empty()) throw std::invalid_argument("model: empty conv ladder");
  for (int c : conv_channels) {
    if (c < 1) throw std::invalid_argument("model: conv channels must be positive");
  }
  if (heads < 1 || dim() % heads != 0) throw std::invalid_argument("model: dim must be divisible by heads");
  if (mixer_layers < 0 || ffn_dim < 1 || decoder_hidden < 1) throw std::invalid_argument("model: bad layer sizes");
  if (num_queries() < 2) throw std::invalid_argument("model: batchnorm needs at least two queries");
}

RowMatrix appearance_cues(
  const Eigen::Ref<const RowMatrix> & positions, std::size_t view, const std::vector<Pose> & poses,
  const std::vector<Camera> & cameras, const std::vector<const FeatureMapd *> & maps)
{
  if (poses.empty() || poses.size() != cameras.size() || poses.size() != maps.size() || view >= poses.size()) {
    throw std::invalid_argument("appearance_cues: inconsistent view lists");
  }
  const Eigen::Index dim = maps.front()->channels;
  RowMatrix cues = RowMatrix::Zero(positions.rows(), dim);
  for (std::size_t j = 0; j < poses.size(); ++j) {
    if (maps[j]->channels != dim) throw std::invalid_argument("appearance_cues: channel mismatch");
    const Pose T = relative_transform(poses[j], poses[view]);
    for (Eigen::Index r = 0; r < positions.rows(); ++r) {
      const Vec3 p = positions.row(r).transpose();
      cues.row(r) += bilinear_sample(*maps[j], project(cameras[j], transform_point(T, p))).transpose();
    }
  }
  cues /= static_cast<double>(poses.size());
  return cues;
}

Localizer::Localizer(const ModelConfig & cfg, std::uint64_t seed) : cfg_(cfg)
{
  cfg_.validate();
  std::mt19937_64 rng(seed);
  int in = cfg_.input_channels;
  for (std::size_t s = 0; s < cfg_.conv_channels.size(); ++s) {
    convs_.push_back(
      ad::Conv2dLayer::create(store_, "generator.conv" + std::to_string(s), in, cfg_.conv_channels[s], 3, rng));
    in = cfg_.conv_channels[s];
  }
  const int d = cfg_.dim();
  for (int l = 0; l < cfg_.mixer_layers; ++l) {
    mixer_.push_back(
      ad::TransformerEncoderLayer::create(store_, "mixer.layer" + std::to_string(l), d, cfg_.heads, cfg_.ffn_dim, rng));
  }
  pos_hidden_ = ad::LinearLayer::create(store_, "decoder.position.hidden", d, cfg_.decoder_hidden, rng);
  pos_norm_ = ad::NormLayer::create(store_, "decoder.position.norm", cfg_.decoder_hidden);
  pos_out_ = ad::LinearLayer::create(store_, "decoder.position.out", cfg_.decoder_hidden, 3, rng);
  class_head_ = ad::LinearLayer::create(store_, "decoder.class", d, cfg_.num_classes + 1, rng);
}

Var Localizer::query_generator(Tape & tape, const dsp::InputFeatureTensor & features) const
{
  if (features.channels != cfg_.input_channels || features.height != cfg_.input_size ||
      features.width != cfg_.input_size) {
    throw std::invalid_argument(
      "query_generator: expected input " + std::to_string(cfg_.input_channels) + "x" +
      std::to_string(cfg_.input_size) + "x" + std::to_string(cfg_.input_size) + ", got " +
      std::to_string(features.channels) + "x" + std::to_string(features.height) + "x" +
      std::to_string(features.width));
  }
  Var x = tape.constant(ad::Tensor({features.channels, features.height, features.width}, features.data));
  for (const auto & conv : convs_) x = ad::relu(conv(tape, x));
  const int g = cfg_.token_grid();
  return ad::transpose(ad::reshape(x, {cfg_.dim(), g * g}));
}

DecodedPredictions Localizer::decode_queries(Tape & tape, const Var & queries) const
{
  const Var hidden = ad::relu(pos_norm_.batch(tape, pos_hidden_(tape, queries)));
  return {pos_out_(tape, hidden), class_head_(tape, queries)};
}

Var Localizer::aggregate_rgb_cues(
  Tape & tape, const Var & queries, const RowMatrix & positions, std::size_t view,
  const std::vector<ViewInput> & views) const
{
  std::vector<Pose> poses;
  std::vector<Camera> cameras;
  std::vector<const FeatureMapd *> maps;
  for (const auto & v : views) {
    if (v.appearance.channels != cfg_.dim()) {
      throw std::invalid_argument("aggregate_rgb_cues: appearance dimension must equal the query dimension");
    }
    poses.push_back(v.pose);
    cameras.push_back(v.camera);
    maps.push_back(&v.appearance);
  }
  const RowMatrix cues = appearance_cues(positions, view, poses, cameras, maps);
  return ad::add(queries, tape.constant(ad::Tensor::from_matrix(cues)));
}

Var Localizer::feature_mixer(Tape & tape, const Var & queries) const
{
  Var x = queries;
  for (const auto & layer : mixer_) x = layer(tape, x);
  return x;
}

std::vector<ViewOutput> Localizer::forward_scene(Tape & tape, const std::vector<ViewInput> & views) const
{
  if (views.empty()) throw std::invalid_argument("forward_scene: no views");
  std::vector<Var> queries;
  std::vector<ViewOutput> out(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    queries.push_back(query_generator(tape, views[i].features));
    out[i].initial = decode_queries(tape, queries[i]);
  }
  // Aggregation needs every view's initial positions, so it runs after all decodes.
  for (std::size_t i = 0; i < views.size(); ++i) {
    Var q = queries[i];
    if (cfg_.use_rgb) q = aggregate_rgb_cues(tape, q, out[i].initial.positions.value().matrix(), i, views);
    out[i].updated = decode_queries(tape, feature_mixer(tape, q));
  }
  return out;
}

}  // namespace sonoloc
