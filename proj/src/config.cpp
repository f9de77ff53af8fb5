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

#include <cstdio>
#include <cctype>
#include <cmath>
#include <fstream>

namespace sonoloc
{

using nlohmann::json;

namespace
{
json vec_json(const Vec3 & v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json & j)
{
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-vector, got " + j.dump());
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

template <typename T>
void read(const json & j, const char * key, T & field)
{
  if (j.contains(key)) field = j.at(key).get<T>();
}

void read_vec(const json & j, const char * key, Vec3 & field)
{
  if (j.contains(key)) field = vec_from(j.at(key));
}

std::string lower(std::string s)
{
  for (auto & ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}
}  // namespace

ExperimentConfig ExperimentConfig::paper()
{
  ExperimentConfig cfg;
  cfg.preset = "paper";
  cfg.scene.surfaces = {default_wall()};
  return cfg;
}

ExperimentConfig ExperimentConfig::desk()
{
  ExperimentConfig cfg = paper();
  cfg.preset = "desk";
  cfg.scene.num_classes = 2;
  cfg.scene.min_sources = 1;
  cfg.scene.max_sources = 2;
  cfg.num_views = 2;
  cfg.image_size = 64;
  cfg.appearance_grid = 32;
  cfg.appearance_dim = 32;
  cfg.audio.duration = 0.25;
  cfg.features.n_mels = 64;
  cfg.features.n_lags = 64;
  cfg.features.frames = 64;
  cfg.model = ModelConfig::desk();
  cfg.num_scenes = 250;
  cfg.train_fraction = 0.8;
  return cfg;
}

ExperimentConfig ExperimentConfig::preset_named(const std::string & name)
{
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw ConfigError("unknown preset '" + name + "' (expected paper or desk)");
}

Camera ExperimentConfig::camera() const
{
  const double f = focal_scale * image_size;
  return {f, f, image_size / 2.0, image_size / 2.0, image_size, image_size};
}

void ExperimentConfig::validate() const
{
  const auto fail = [](const std::string & what) { throw ConfigError("config: " + what); };
  if (scene.num_classes != model.num_classes) fail("scene.num_classes must equal model.num_classes");
  if (scene.min_sources < 1 || scene.max_sources > 10 || scene.min_sources > scene.max_sources) {
    fail("source count range must lie within [1, 10]");
  }
  if (scene.surfaces.empty()) fail("no surfaces");
  if (num_views < 1) fail("num_views must be >= 1");
  if (num_mics < 4) fail("num_mics must be >= 4");
  if (image_size < 1 || appearance_grid < 1 || image_size % appearance_grid != 0) {
    fail("appearance_grid must divide image_size");
  }
  if (appearance_dim != model.dim()) fail("appearance_dim must equal the query dimension");
  if (model.input_channels != dsp::feature_channel_count(num_mics)) {
    fail("model.input_channels must equal mics + C(mics, 2) = " + std::to_string(dsp::feature_channel_count(num_mics)));
  }
  if (features.n_mels != features.n_lags || features.n_mels != features.frames) {
    fail("features.n_mels, n_lags and frames must be equal (square maps)");
  }
  if (model.input_size != features.frames) fail("model.input_size must equal features.frames");
  if (audio.num_samples() < features.n_fft) fail("audio shorter than one STFT frame");
  if (std::abs(audio.fs - features.fs) > 0) fail("audio.fs must equal features.fs");
  if (!(train_fraction >= 0 && train_fraction <= 1)) fail("train_fraction must lie in [0, 1]");
  if (!(noise.pose_delta >= 0)) fail("noise.pose_delta must be non-negative");
  if (noise.snr_db && std::isnan(*noise.snr_db)) fail("noise.snr_db must be a number");
  if (training.steps < 0 || training.accumulate < 1 || training.checkpoint_every < 1) fail("bad training schedule");
  try {
    model.validate();
  } catch (const std::invalid_argument & e) {
    fail(e.what());
  }
}

json to_json(const ExperimentConfig & cfg)
{
  json surfaces = json::array();
  for (const auto & s : cfg.scene.surfaces) {
    surfaces.push_back({{"origin", vec_json(s.origin)}, {"edge_u", vec_json(s.edge_u)}, {"edge_v", vec_json(s.edge_v)}});
  }
  const auto & m = cfg.model;
  const auto & t = cfg.training;
  return {
    {"preset", cfg.preset},
    {"seed", cfg.seed},
    {"scene",
     {{"num_classes", cfg.scene.num_classes},
      {"min_sources", cfg.scene.min_sources},
      {"max_sources", cfg.scene.max_sources},
      {"min_spacing", cfg.scene.min_spacing},
      {"edge_margin", cfg.scene.edge_margin},
      {"max_attempts", cfg.scene.max_attempts},
      {"surfaces", surfaces},
      {"viewing_side", vec_json(cfg.scene.viewing_side)}}},
    {"num_views", cfg.num_views},
    {"num_mics", cfg.num_mics},
    {"placement",
     {{"distance", cfg.placement.distance},
      {"distance_jitter", cfg.placement.distance_jitter},
      {"cone_half_angle", cfg.placement.cone_half_angle},
      {"max_attempts", cfg.placement.max_attempts}}},
    {"image_size", cfg.image_size},
    {"focal_scale", cfg.focal_scale},
    {"appearance_grid", cfg.appearance_grid},
    {"appearance_dim", cfg.appearance_dim},
    {"appearance_frequency_std", cfg.appearance_frequency_std},
    {"audio",
     {{"fs", cfg.audio.fs},
      {"duration", cfg.audio.duration},
      {"speed_of_sound", cfg.audio.speed_of_sound},
      {"min_range", cfg.audio.min_range},
      {"lead_time", cfg.audio.lead_time}}},
    {"features",
     {{"n_fft", cfg.features.n_fft},
      {"hop", cfg.features.hop},
      {"fs", cfg.features.fs},
      {"n_mels", cfg.features.n_mels},
      {"n_lags", cfg.features.n_lags},
      {"frames", cfg.features.frames}}},
    {"model",
     {{"num_classes", m.num_classes},
      {"input_channels", m.input_channels},
      {"input_size", m.input_size},
      {"conv_channels", m.conv_channels},
      {"mixer_layers", m.mixer_layers},
      {"heads", m.heads},
      {"ffn_dim", m.ffn_dim},
      {"decoder_hidden", m.decoder_hidden},
      {"use_rgb", m.use_rgb},
      {"use_depth_loss", m.use_depth_loss},
      {"use_crossview_loss", m.use_crossview_loss}}},
    {"training",
     {{"lr", t.optimizer.lr},
      {"beta1", t.optimizer.beta1},
      {"beta2", t.optimizer.beta2},
      {"eps", t.optimizer.eps},
      {"weight_decay", t.optimizer.weight_decay},
      {"steps", t.steps},
      {"checkpoint_every", t.checkpoint_every},
      {"accumulate", t.accumulate},
      {"lambda_bm", t.loss.lambda_bm},
      {"lambda_depth", t.loss.lambda_depth},
      {"lambda_crossview", t.loss.lambda_crossview},
      {"sigma", t.loss.sigma},
      {"match_position_weight", t.loss.match.position},
      {"match_class_weight", t.loss.match.class_probability}}},
    {"noise",
     {{"snr_db", cfg.noise.snr_db && std::isfinite(*cfg.noise.snr_db) ? json(*cfg.noise.snr_db) : json(nullptr)},
      {"pose_delta", cfg.noise.pose_delta}}},
    {"num_scenes", cfg.num_scenes},
    {"train_fraction", cfg.train_fraction},
  };
}

ExperimentConfig config_from_json(const json & j)
{
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig cfg = ExperimentConfig::preset_named(j.value("preset", std::string("paper")));
    read(j, "seed", cfg.seed);
    if (j.contains("scene")) {
      const json & s = j.at("scene");
      read(s, "num_classes", cfg.scene.num_classes);
      read(s, "min_sources", cfg.scene.min_sources);
      read(s, "max_sources", cfg.scene.max_sources);
      read(s, "min_spacing", cfg.scene.min_spacing);
      read(s, "edge_margin", cfg.scene.edge_margin);
      read(s, "max_attempts", cfg.scene.max_attempts);
      read_vec(s, "viewing_side", cfg.scene.viewing_side);
      if (s.contains("surfaces")) {
        cfg.scene.surfaces.clear();
        for (const auto & p : s.at("surfaces")) {
          cfg.scene.surfaces.push_back({vec_from(p.at("origin")), vec_from(p.at("edge_u")), vec_from(p.at("edge_v"))});
        }
      }
    }
    read(j, "num_views", cfg.num_views);
    read(j, "num_mics", cfg.num_mics);
    if (j.contains("placement")) {
      const json & p = j.at("placement");
      read(p, "distance", cfg.placement.distance);
      read(p, "distance_jitter", cfg.placement.distance_jitter);
      read(p, "cone_half_angle", cfg.placement.cone_half_angle);
      read(p, "max_attempts", cfg.placement.max_attempts);
    }
    read(j, "image_size", cfg.image_size);
    read(j, "focal_scale", cfg.focal_scale);
    read(j, "appearance_grid", cfg.appearance_grid);
    read(j, "appearance_dim", cfg.appearance_dim);
    read(j, "appearance_frequency_std", cfg.appearance_frequency_std);
    if (j.contains("audio")) {
      const json & a = j.at("audio");
      read(a, "fs", cfg.audio.fs);
      read(a, "duration", cfg.audio.duration);
      read(a, "speed_of_sound", cfg.audio.speed_of_sound);
      read(a, "min_range", cfg.audio.min_range);
      read(a, "lead_time", cfg.audio.lead_time);
    }
    if (j.contains("features")) {
      const json & f = j.at("features");
      read(f, "n_fft", cfg.features.n_fft);
      read(f, "hop", cfg.features.hop);
      read(f, "fs", cfg.features.fs);
      read(f, "n_mels", cfg.features.n_mels);
      read(f, "n_lags", cfg.features.n_lags);
      read(f, "frames", cfg.features.frames);
    }
    if (j.contains("model")) {
      const json & m = j.at("model");
      read(m, "num_classes", cfg.model.num_classes);
      read(m, "input_channels", cfg.model.input_channels);
      read(m, "input_size", cfg.model.input_size);
      read(m, "conv_channels", cfg.model.conv_channels);
      read(m, "mixer_layers", cfg.model.mixer_layers);
      read(m, "heads", cfg.model.heads);
      read(m, "ffn_dim", cfg.model.ffn_dim);
      read(m, "decoder_hidden", cfg.model.decoder_hidden);
      read(m, "use_rgb", cfg.model.use_rgb);
      read(m, "use_depth_loss", cfg.model.use_depth_loss);
      read(m, "use_crossview_loss", cfg.model.use_crossview_loss);
    }
    if (j.contains("training")) {
      const json & t = j.at("training");
      auto & tc = cfg.training;
      read(t, "lr", tc.optimizer.lr);
      read(t, "beta1", tc.optimizer.beta1);
      read(t, "beta2", tc.optimizer.beta2);
      read(t, "eps", tc.optimizer.eps);
      read(t, "weight_decay", tc.optimizer.weight_decay);
      read(t, "steps", tc.steps);
      read(t, "checkpoint_every", tc.checkpoint_every);
      read(t, "accumulate", tc.accumulate);
      read(t, "lambda_bm", tc.loss.lambda_bm);
      read(t, "lambda_depth", tc.loss.lambda_depth);
      read(t, "lambda_crossview", tc.loss.lambda_crossview);
      read(t, "sigma", tc.loss.sigma);
      read(t, "match_position_weight", tc.loss.match.position);
      read(t, "match_class_weight", tc.loss.match.class_probability);
    }
    if (j.contains("noise")) {
      const json & n = j.at("noise");
      if (n.contains("snr_db") && !n.at("snr_db").is_null()) cfg.noise.snr_db = n.at("snr_db").get<double>();
      read(n, "pose_delta", cfg.noise.pose_delta);
    }
    read(j, "num_scenes", cfg.num_scenes);
    read(j, "train_fraction", cfg.train_fraction);
    cfg.training.loss.use_depth_loss = cfg.model.use_depth_loss;
    cfg.training.loss.use_crossview_loss = cfg.model.use_crossview_loss;
    cfg.validate();
    return cfg;
  } catch (const json::exception & e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::string & path_or_preset)
{
  const std::string name = lower(path_or_preset);
  if (name == "paper" || name == "desk") {
    ExperimentConfig cfg = ExperimentConfig::preset_named(name);
    cfg.validate();
    return cfg;
  }
  std::ifstream in(path_or_preset);
  if (!in) throw ConfigError("cannot open config file " + path_or_preset);
  json j;
  try {
    in >> j;
  } catch (const json::exception & e) {
    throw ConfigError("config " + path_or_preset + ": " + e.what());
  }
  return config_from_json(j);
}

std::uint64_t fnv1a64(const std::string & bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig & cfg)
{
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(cfg).dump())));
  return buf;
}

}  // namespace sonoloc
