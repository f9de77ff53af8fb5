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

#include "sonoloc/dataset.hpp"

#include "sonoloc/parallel.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace sonoloc
{

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

namespace
{
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::uint64_t kAppearanceSalt = 0x6170706561720000ULL;
constexpr std::uint64_t kCameraSalt = 1;

json vec_json(const Vec3 & v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json & j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

json pose_json(const Pose & p)
{
  json r = json::array();
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) r.push_back(p.rotation(i, k));
  }
  return {{"rotation", r}, {"translation", vec_json(p.translation)}};
}

Pose pose_from(const json & j)
{
  Pose p;
  const json & r = j.at("rotation");
  if (r.size() != 9) throw DataError("scene.json: rotation needs 9 entries");
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) p.rotation(i, k) = r.at(static_cast<std::size_t>(i * 3 + k)).get<double>();
  }
  p.translation = vec_from(j.at("translation"));
  return p;
}

void write_json(const fs::path & path, const json & j)
{
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

json read_json(const fs::path & path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception & e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string view_file(const char * kind, std::size_t v) { return std::string(kind) + "_v" + std::to_string(v) + ".f64"; }
}  // namespace

std::string scene_folder_name(int index)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05d", index);
  return buf;
}

fs::path DatasetInfo::scene_dir(int index) const { return root / scene_folder_name(index); }

void write_f64(const fs::path & path, const double * data, std::size_t count)
{
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os.write(reinterpret_cast<const char *>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if (!os) throw DataError("write failed for " + path.string());
}

std::vector<double> read_f64(const fs::path & path, std::size_t expected)
{
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw DataError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes != expected * sizeof(double)) {
    throw DataError(
      path.string() + ": expected " + std::to_string(expected) + " values, found " + std::to_string(bytes / 8));
  }
  std::vector<double> out(expected);
  is.seekg(0);
  is.read(reinterpret_cast<char *>(out.data()), static_cast<std::streamsize>(bytes));
  return out;
}

AppearanceFieldSpec appearance_spec(const ExperimentConfig & cfg)
{
  return AppearanceFieldSpec::make(cfg.appearance_dim, cfg.appearance_frequency_std, derive_seed(cfg.seed ^ kAppearanceSalt, 0));
}

SceneRecord simulate_scene(const ExperimentConfig & cfg, const AppearanceFieldSpec & spec, int index)
{
  SceneRecord rec;
  const std::uint64_t seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(index));
  rec.scene = generate_scene(cfg.scene, seed, index);
  rec.camera = cfg.camera();
  const MicRig rig = MicRig::preset(cfg.num_mics);
  rec.views = place_cameras(
    rec.scene, cfg.scene, cfg.num_views, rec.camera, rig, cfg.placement, derive_seed(seed, kCameraSalt));
  for (const auto & view : rec.views) {
    rec.audio.push_back(render_audio(rec.scene.sources, view.mic_world, cfg.audio).clean);
    rec.depth.push_back(render_depth(rec.scene, view.pose, rec.camera));
    rec.appearance.push_back(
      render_appearance(rec.scene, view.pose, rec.camera, spec, cfg.appearance_grid, cfg.appearance_grid));
  }
  return rec;
}

void write_scene(const fs::path & dir, const SceneRecord & rec, const ExperimentConfig & cfg)
{
  fs::create_directories(dir);
  json surfaces = json::array();
  for (const auto & s : rec.scene.surfaces) {
    surfaces.push_back({{"origin", vec_json(s.origin)}, {"edge_u", vec_json(s.edge_u)}, {"edge_v", vec_json(s.edge_v)}});
  }
  json sources = json::array();
  for (const auto & s : rec.scene.sources) {
    sources.push_back({{"position", vec_json(s.position)}, {"class_id", s.class_id}, {"waveform_seed", s.waveform_seed}});
  }
  json views = json::array();
  for (std::size_t v = 0; v < rec.views.size(); ++v) {
    json mics = json::array();
    for (const auto & m : rec.views[v].mic_world) mics.push_back(vec_json(m));
    views.push_back(
      {{"pose", pose_json(rec.views[v].pose)},
       {"mic_world", mics},
       {"audio", view_file("audio", v)},
       {"depth", view_file("depth", v)},
       {"appearance", view_file("appearance", v)}});

    const RowMajor audio = rec.audio[v];
    write_f64(dir / view_file("audio", v), audio.data(), static_cast<std::size_t>(audio.size()));
    const auto & depth = rec.depth[v].values;
    write_f64(dir / view_file("depth", v), depth.data(), static_cast<std::size_t>(depth.size()));
    // channels x cells, written channel-major.
    const RowMajor appearance = rec.appearance[v].values;
    write_f64(dir / view_file("appearance", v), appearance.data(), static_cast<std::size_t>(appearance.size()));
  }
  const Camera & K = rec.camera;
  const FeatureMapd & a0 = rec.appearance.front();
  const json scene = {
    {"config_hash", config_hash(cfg)},
    {"master_seed", cfg.seed},
    {"scene_id", rec.scene.scene_id},
    {"seed", rec.scene.seed},
    {"units", "meters, radians, seconds; poses map camera to world"},
    {"surfaces", surfaces},
    {"sources", sources},
    {"intrinsics",
     {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}, {"width", K.width}, {"height", K.height}}},
    {"fs", cfg.audio.fs},
    {"shapes",
     {{"audio", {rec.audio.front().rows(), rec.audio.front().cols()}},
      {"depth", {rec.depth.front().height(), rec.depth.front().width()}},
      {"appearance", {a0.channels, a0.grid_h, a0.grid_w}}}},
    {"appearance_pixel_scale", a0.pixel_to_grid_scale},
    {"views", views},
  };
  write_json(dir / "scene.json", scene);
}

SceneRecord read_scene(const fs::path & dir)
{
  const json j = read_json(dir / "scene.json");
  SceneRecord rec;
  try {
    rec.scene.scene_id = j.at("scene_id").get<int>();
    rec.scene.seed = j.at("seed").get<std::uint64_t>();
    for (const auto & s : j.at("surfaces")) {
      rec.scene.surfaces.push_back({vec_from(s.at("origin")), vec_from(s.at("edge_u")), vec_from(s.at("edge_v"))});
    }
    for (const auto & s : j.at("sources")) {
      rec.scene.sources.push_back(
        {vec_from(s.at("position")), s.at("class_id").get<int>(), s.at("waveform_seed").get<std::uint64_t>()});
    }
    const json & k = j.at("intrinsics");
    rec.camera = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                  k.at("cy").get<double>(), k.at("width").get<int>(), k.at("height").get<int>()};
    const json & shapes = j.at("shapes");
    const auto audio_shape = shapes.at("audio").get<std::vector<Eigen::Index>>();
    const auto depth_shape = shapes.at("depth").get<std::vector<Eigen::Index>>();
    const auto app_shape = shapes.at("appearance").get<std::vector<int>>();
    if (audio_shape.size() != 2 || depth_shape.size() != 2 || app_shape.size() != 3) {
      throw DataError(dir.string() + ": malformed blob shapes");
    }
    const double scale = j.at("appearance_pixel_scale").get<double>();
    for (const auto & v : j.at("views")) {
      CameraView view;
      view.pose = pose_from(v.at("pose"));
      for (const auto & m : v.at("mic_world")) view.mic_world.push_back(vec_from(m));
      rec.views.push_back(view);

      const auto audio = read_f64(dir / v.at("audio").get<std::string>(), static_cast<std::size_t>(audio_shape[0] * audio_shape[1]));
      rec.audio.emplace_back(Eigen::Map<const RowMajor>(audio.data(), audio_shape[0], audio_shape[1]));

      const auto depth = read_f64(dir / v.at("depth").get<std::string>(), static_cast<std::size_t>(depth_shape[0] * depth_shape[1]));
      DepthMap d;
      d.values = Eigen::Map<const RowMajor>(depth.data(), depth_shape[0], depth_shape[1]);
      rec.depth.push_back(std::move(d));

      const auto cells = static_cast<Eigen::Index>(app_shape[1]) * app_shape[2];
      const auto app = read_f64(dir / v.at("appearance").get<std::string>(), static_cast<std::size_t>(app_shape[0] * cells));
      FeatureMapd map(app_shape[0], app_shape[1], app_shape[2], scale);
      map.values = Eigen::Map<const RowMajor>(app.data(), app_shape[0], cells);
      rec.appearance.push_back(std::move(map));
    }
  } catch (const json::exception & e) {
    throw DataError(dir.string() + "/scene.json: " + e.what());
  }
  if (rec.views.empty()) throw DataError(dir.string() + ": scene has no views");
  return rec;
}

DatasetInfo generate_dataset(
  const ExperimentConfig & cfg, const fs::path & out, int num_scenes, double train_fraction, bool force,
  int threads)
{
  cfg.validate();
  if (num_scenes < 1) throw ConfigError("gen-data: need at least one scene");
  if (!(train_fraction >= 0 && train_fraction <= 1)) throw ConfigError("gen-data: split must lie in [0, 1]");
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw DataError("output directory " + out.string() + " is not empty (use --force)");
    for (const auto & entry : fs::directory_iterator(out)) {
      const std::string name = entry.path().filename().string();
      if (name == "dataset.json" || name.rfind("scene_", 0) == 0) fs::remove_all(entry.path());
    }
  }
  fs::create_directories(out);

  DatasetInfo info;
  info.root = out;
  info.config = cfg;
  info.config.num_scenes = num_scenes;
  info.config.train_fraction = train_fraction;
  info.config_hash = config_hash(info.config);
  info.num_scenes = num_scenes;
  info.spec = appearance_spec(cfg);
  const int n_train = static_cast<int>(std::lround(train_fraction * num_scenes));
  for (int i = 0; i < num_scenes; ++i) (i < n_train ? info.train : info.test).push_back(i);

  parallel_for(num_scenes, threads, [&](int i) {
    write_scene(info.scene_dir(i), simulate_scene(info.config, info.spec, i), info.config);
  });

  json freqs = json::array();
  for (Eigen::Index r = 0; r < info.spec.frequencies.rows(); ++r) {
    freqs.push_back({info.spec.frequencies(r, 0), info.spec.frequencies(r, 1), info.spec.frequencies(r, 2)});
  }
  const json meta = {
    {"format", "sonoloc-dataset"},
    {"version", 1},
    {"config", to_json(info.config)},
    {"config_hash", info.config_hash},
    {"master_seed", info.config.seed},
    {"num_classes", info.config.scene.num_classes},
    {"num_views", info.config.num_views},
    {"num_scenes", num_scenes},
    {"splits", {{"train", info.train}, {"test", info.test}}},
    {"appearance", {{"feature_dim", info.spec.feature_dim}, {"seed", info.spec.seed}, {"frequencies", freqs}}},
  };
  write_json(out / "dataset.json", meta);
  return info;
}

DatasetInfo load_dataset(const fs::path & root)
{
  if (!fs::exists(root / "dataset.json")) throw DataError("no dataset.json under " + root.string());
  const json j = read_json(root / "dataset.json");
  DatasetInfo info;
  info.root = root;
  try {
    if (j.at("format").get<std::string>() != "sonoloc-dataset") throw DataError("unrecognised dataset format");
    try {
      info.config = config_from_json(j.at("config"));
    } catch (const ConfigError & e) {
      throw DataError(std::string("dataset config: ") + e.what());
    }
    info.config_hash = j.at("config_hash").get<std::string>();
    if (info.config_hash != config_hash(info.config)) throw DataError("dataset.json: config hash mismatch");
    info.num_scenes = j.at("num_scenes").get<int>();
    info.train = j.at("splits").at("train").get<std::vector<int>>();
    info.test = j.at("splits").at("test").get<std::vector<int>>();
    const json & a = j.at("appearance");
    info.spec.feature_dim = a.at("feature_dim").get<int>();
    info.spec.seed = a.at("seed").get<std::uint64_t>();
    const json & f = a.at("frequencies");
    info.spec.frequencies.resize(static_cast<Eigen::Index>(f.size()), 3);
    for (std::size_t r = 0; r < f.size(); ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        info.spec.frequencies(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f.at(r).at(c).get<double>();
      }
    }
  } catch (const json::exception & e) {
    throw DataError("dataset.json: " + std::string(e.what()));
  }
  for (int i : info.train) {
    if (i < 0 || i >= info.num_scenes) throw DataError("dataset.json: split index out of range");
  }
  for (int i : info.test) {
    if (i < 0 || i >= info.num_scenes) throw DataError("dataset.json: split index out of range");
  }
  return info;
}

}  // namespace sonoloc
