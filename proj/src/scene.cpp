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

#include "sonoloc/scene.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace sonoloc
{

namespace
{
constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Broadband share of each class waveform; keeps GCC-PHAT peaks well defined.
constexpr double kBroadbandLevel = 0.25;

Eigen::Vector2d patch_coordinates(const SurfacePatch & s, const Vec3 & q)
{
  Eigen::Matrix2d gram;
  gram << s.edge_u.dot(s.edge_u), s.edge_u.dot(s.edge_v), s.edge_u.dot(s.edge_v), s.edge_v.dot(s.edge_v);
  const Eigen::Vector2d rhs(q.dot(s.edge_u), q.dot(s.edge_v));
  return gram.ldlt().solve(rhs);
}
}  // namespace

std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index)
{
  return splitmix64(splitmix64(master) ^ (index * 0xd1b54a32d192ed03ULL + 1));
}

std::optional<double> SurfacePatch::intersect(const Vec3 & ray_origin, const Vec3 & ray_dir) const
{
  const Vec3 n = edge_u.cross(edge_v);
  const double denom = n.dot(ray_dir);
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const double t = n.dot(origin - ray_origin) / denom;
  if (!(t > 1e-12)) return std::nullopt;
  const Eigen::Vector2d ab = patch_coordinates(*this, ray_origin + t * ray_dir - origin);
  constexpr double tol = 1e-12;
  if (ab.x() < -tol || ab.x() > 1 + tol || ab.y() < -tol || ab.y() > 1 + tol) return std::nullopt;
  return t;
}

double SurfacePatch::distance(const Vec3 & p) const
{
  const Eigen::Vector2d ab = patch_coordinates(*this, p - origin).cwiseMax(0.0).cwiseMin(1.0);
  return (p - point_at(ab.x(), ab.y())).norm();
}

Vec3 AcousticScene::source_centroid() const
{
  Vec3 c = Vec3::Zero();
  for (const auto & s : sources) c += s.position;
  return sources.empty() ? c : Vec3(c / static_cast<double>(sources.size()));
}

std::optional<double> AcousticScene::cast(const Vec3 & ray_origin, const Vec3 & ray_dir) const
{
  std::optional<double> best;
  for (const auto & s : surfaces) {
    const auto t = s.intersect(ray_origin, ray_dir);
    if (t && (!best || *t < *best)) best = t;
  }
  return best;
}

double AcousticScene::distance_to_surfaces(const Vec3 & p) const
{
  double best = std::numeric_limits<double>::infinity();
  for (const auto & s : surfaces) best = std::min(best, s.distance(p));
  return best;
}

SurfacePatch default_wall(double width, double height)
{
  // edge_u x edge_v points to -z, towards the cameras.
  return {Vec3(-width / 2, -height / 2, 0), Vec3(0, height, 0), Vec3(width, 0, 0)};
}

AcousticScene generate_scene(const SceneConfig & cfg, std::uint64_t seed, int scene_id)
{
  if (cfg.min_sources < 1 || cfg.max_sources > 10 || cfg.min_sources > cfg.max_sources) {
    throw std::invalid_argument("generate_scene: source count must lie in [1, 10]");
  }
  if (cfg.num_classes < 1) throw std::invalid_argument("generate_scene: need at least one class");
  if (cfg.surfaces.empty()) throw std::invalid_argument("generate_scene: no surfaces");
  std::vector<double> areas;
  for (const auto & s : cfg.surfaces) {
    if (s.degenerate()) throw std::invalid_argument("generate_scene: degenerate surface");
    if (2 * cfg.edge_margin >= std::min(s.edge_u.norm(), s.edge_v.norm())) {
      throw std::invalid_argument("generate_scene: surface smaller than twice the edge margin");
    }
    areas.push_back(s.area());
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count_dist(cfg.min_sources, cfg.max_sources);
  std::uniform_int_distribution<int> class_dist(0, cfg.num_classes - 1);
  std::discrete_distribution<std::size_t> surface_dist(areas.begin(), areas.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  AcousticScene scene;
  scene.surfaces = cfg.surfaces;
  scene.scene_id = scene_id;
  scene.seed = seed;

  const int count = count_dist(rng);
  int attempts = 0;
  while (static_cast<int>(scene.sources.size()) < count) {
    if (attempts++ >= cfg.max_attempts) {
      throw SpacingError(
        "unsatisfiable spacing: placed " + std::to_string(scene.sources.size()) + " of " +
        std::to_string(count) + " sources");
    }
    const auto & patch = cfg.surfaces[surface_dist(rng)];
    const double mu = cfg.edge_margin / patch.edge_u.norm();
    const double mv = cfg.edge_margin / patch.edge_v.norm();
    const double a = mu + (1 - 2 * mu) * unit(rng);
    const double b = mv + (1 - 2 * mv) * unit(rng);
    const Vec3 p = patch.point_at(a, b);
    bool ok = true;
    for (const auto & other : scene.sources) {
      if ((other.position - p).norm() < cfg.min_spacing) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    SoundSource src;
    src.position = p;
    src.class_id = class_dist(rng);
    src.waveform_seed = derive_seed(seed, scene.sources.size());
    scene.sources.push_back(src);
  }
  return scene;
}

MicRig MicRig::square(double side)
{
  const double h = side / 2;
  return {{Vec3(-h, -h, 0), Vec3(h, -h, 0), Vec3(-h, h, 0), Vec3(h, h, 0)}};
}

MicRig MicRig::circular(int count, double radius)
{
  if (count < 4) throw std::invalid_argument("MicRig: at least 4 microphones");
  MicRig rig;
  for (int i = 0; i < count; ++i) {
    const double a = kTwoPi * i / count;
    rig.offsets.emplace_back(radius * std::cos(a), radius * std::sin(a), 0.0);
  }
  return rig;
}

MicRig MicRig::preset(int count) { return count == 4 ? square() : circular(count); }

std::vector<Vec3> mic_world_positions(const Pose & pose, const MicRig & rig)
{
  std::vector<Vec3> out;
  out.reserve(rig.offsets.size());
  for (const auto & m : rig.offsets) out.push_back(transform_point(pose, m));
  return out;
}

bool source_visible(const AcousticScene & scene, const Pose & pose, const Camera & K, const Vec3 & p_world)
{
  const Vec3 p_cam = transform_point(inverse(pose), p_world);
  if (!project(K, p_cam).valid) return false;
  const Vec3 dir = pose.rotation * p_cam;  // unnormalised, reaches the source at t = 1
  const auto hit = scene.cast(pose.translation, dir);
  return hit && *hit > 1.0 - 1e-6;
}

std::vector<CameraView> place_cameras(
  const AcousticScene & scene, const SceneConfig & scene_cfg, int n_views, const Camera & K,
  const MicRig & rig, const CameraPlacementConfig & cfg, std::uint64_t seed)
{
  if (n_views < 1) throw std::invalid_argument("place_cameras: n_views must be >= 1");
  const Vec3 axis = scene_cfg.viewing_side.normalized();
  const Vec3 e1 = axis.unitOrthogonal();
  const Vec3 e2 = axis.cross(e1);
  const Vec3 down = std::abs(axis.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitZ();
  const Vec3 target = scene.source_centroid();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> cos_dist(std::cos(cfg.cone_half_angle), 1.0);
  std::uniform_real_distribution<double> phi_dist(0.0, kTwoPi);
  std::uniform_real_distribution<double> dist_dist(
    cfg.distance - cfg.distance_jitter, cfg.distance + cfg.distance_jitter);

  std::vector<CameraView> views;
  for (int v = 0; v < n_views; ++v) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      const double ct = cos_dist(rng);
      const double st = std::sqrt(std::max(0.0, 1 - ct * ct));
      const double phi = phi_dist(rng);
      const double d = dist_dist(rng);
      const Vec3 dir = ct * axis + st * (std::cos(phi) * e1 + std::sin(phi) * e2);
      const Pose pose = look_at<double>(target + d * dir, target, down);
      placed = true;
      for (const auto & s : scene.sources) {
        if (!source_visible(scene, pose, K, s.position)) {
          placed = false;
          break;
        }
      }
      if (placed) views.push_back({pose, mic_world_positions(pose, rig)});
    }
    if (!placed) throw VisibilityError("place_cameras: could not see every source from view " + std::to_string(v));
  }
  return views;
}

double DepthMap::nearest(const Vec2 & uv) const
{
  const double x = std::floor(uv.x());
  const double y = std::floor(uv.y());
  if (!(x >= 0 && y >= 0 && x < width() && y < height())) return kNoHit;
  return values(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x));
}

DepthMap render_depth(const AcousticScene & scene, const Pose & pose, const Camera & K)
{
  DepthMap depth;
  depth.values.resize(K.height, K.width);
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      // Camera-frame direction with unit z: the hit parameter is the z-depth.
      const Vec3 d_cam((x + 0.5 - K.cx) / K.fx, (y + 0.5 - K.cy) / K.fy, 1.0);
      const auto t = scene.cast(pose.translation, pose.rotation * d_cam);
      depth.values(y, x) = t ? *t : DepthMap::kNoHit;
    }
  }
  return depth;
}

AppearanceFieldSpec AppearanceFieldSpec::make(int feature_dim, double frequency_std, std::uint64_t seed)
{
  if (feature_dim < 2 || feature_dim % 2 != 0) {
    throw std::invalid_argument("AppearanceFieldSpec: feature_dim must be a positive even number");
  }
  AppearanceFieldSpec spec;
  spec.feature_dim = feature_dim;
  spec.seed = seed;
  spec.frequencies.resize(feature_dim / 2, 3);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, frequency_std);
  for (Eigen::Index r = 0; r < spec.frequencies.rows(); ++r) {
    for (Eigen::Index c = 0; c < 3; ++c) spec.frequencies(r, c) = normal(rng);
  }
  return spec;
}

Eigen::VectorXd AppearanceFieldSpec::encode(const Vec3 & world_point) const
{
  const Eigen::VectorXd phase = frequencies * world_point;
  Eigen::VectorXd out(feature_dim);
  out << phase.array().sin().matrix(), phase.array().cos().matrix();
  return out;
}

FeatureMapd render_appearance(
  const AcousticScene & scene, const Pose & pose, const Camera & K, const AppearanceFieldSpec & spec,
  int grid_h, int grid_w)
{
  if (K.width % grid_w != 0 || K.height % grid_h != 0 || K.width / grid_w != K.height / grid_h) {
    throw std::invalid_argument("render_appearance: grid must tile the image with square cells");
  }
  FeatureMapd map(spec.feature_dim, grid_h, grid_w, static_cast<double>(K.width) / grid_w);
  for (int y = 0; y < grid_h; ++y) {
    for (int x = 0; x < grid_w; ++x) {
      const Vec2 uv = map.cell_center_pixel(y, x);
      const Vec3 d_cam((uv.x() - K.cx) / K.fx, (uv.y() - K.cy) / K.fy, 1.0);
      const Vec3 dir = pose.rotation * d_cam;
      const auto t = scene.cast(pose.translation, dir);
      if (t) map.feature(y, x) = spec.encode(pose.translation + *t * dir);
    }
  }
  return map;
}

Eigen::VectorXd class_waveform(int class_id, int num_samples, double fs, std::uint64_t seed)
{
  if (class_id < 0) throw std::invalid_argument("class_waveform: negative class id");
  if (num_samples < 1) throw std::invalid_argument("class_waveform: empty signal");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double carrier = 400.0 * (class_id + 1);
  const double modulation = 3.0 + 2.0 * class_id;
  const double carrier_phase = phase(rng);
  const double modulation_phase = phase(rng);

  Eigen::VectorXd x(num_samples);
  for (int n = 0; n < num_samples; ++n) {
    const double t = n / fs;
    const double envelope = 0.7 + 0.3 * std::sin(kTwoPi * modulation * t + modulation_phase);
    const double tone = std::sin(kTwoPi * carrier * t + carrier_phase) +
                        0.5 * std::sin(kTwoPi * 2 * carrier * t + 2 * carrier_phase);
    x[n] = envelope * tone + kBroadbandLevel * normal(rng);
  }
  const double peak = x.cwiseAbs().maxCoeff();
  return peak > 0 ? Eigen::VectorXd(x / peak) : x;
}

Eigen::MatrixXd noise_for_snr(const Eigen::MatrixXd & signal, double snr_db, std::uint64_t seed)
{
  Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(signal.rows(), signal.cols());
  if (std::isinf(snr_db) && snr_db > 0) return noise;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index r = 0; r < noise.rows(); ++r) {
    for (Eigen::Index c = 0; c < noise.cols(); ++c) noise(r, c) = normal(rng);
  }
  const double signal_power = signal.squaredNorm() / static_cast<double>(signal.size());
  const double raw_power = noise.squaredNorm() / static_cast<double>(noise.size());
  const double target = signal_power / std::pow(10.0, snr_db / 10.0);
  noise *= std::sqrt(target / raw_power);
  return noise;
}

AudioRender render_audio(
  const std::vector<SoundSource> & sources, const std::vector<Vec3> & mic_world, const AudioConfig & cfg,
  std::optional<double> snr_db, std::uint64_t noise_seed)
{
  if (mic_world.size() < 4) throw std::invalid_argument("render_audio: at least 4 microphones");
  const int n = cfg.num_samples();
  const int lead = static_cast<int>(std::lround(cfg.lead_time * cfg.fs));
  AudioRender out;
  out.clean = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mic_world.size()), n);
  for (const auto & src : sources) {
    const Eigen::VectorXd w = class_waveform(src.class_id, lead + n + 1, cfg.fs, src.waveform_seed);
    for (std::size_t m = 0; m < mic_world.size(); ++m) {
      const double r = (src.position - mic_world[m]).norm();
      const double delay = r / cfg.speed_of_sound * cfg.fs;
      if (delay >= lead) throw std::invalid_argument("render_audio: propagation delay exceeds lead time");
      const double gain = 1.0 / std::max(r, cfg.min_range);
      const double shift = lead - delay;
      const int whole = static_cast<int>(std::floor(shift));
      const double frac = shift - whole;
      auto row = out.clean.row(static_cast<Eigen::Index>(m));
      for (int i = 0; i < n; ++i) {
        row[i] += gain * ((1 - frac) * w[whole + i] + frac * w[whole + i + 1]);
      }
    }
  }
  out.noise = snr_db ? noise_for_snr(out.clean, *snr_db, noise_seed)
                     : Eigen::MatrixXd::Zero(out.clean.rows(), out.clean.cols());
  return out;
}

std::vector<Pose> perturb_poses(const std::vector<Pose> & poses, double delta, std::uint64_t seed)
{
  if (delta < 0) throw std::invalid_argument("perturb_poses: delta must be non-negative");
  if (delta == 0) return poses;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, delta);
  std::vector<Pose> out;
  out.reserve(poses.size());
  for (const auto & pose : poses) {
    const Vec3 ypr = euler_zyx_from_rotation(pose.rotation);
    const double yaw = ypr[0] + normal(rng);
    const double pitch = ypr[1] + normal(rng);
    const double roll = ypr[2] + normal(rng);
    out.push_back({orthonormalize(rotation_from_euler_zyx(yaw, pitch, roll)), pose.translation});
  }
  return out;
}

}  // namespace sonoloc
