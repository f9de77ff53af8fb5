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

#ifndef SONOLOC__SCENE_HPP_
#define SONOLOC__SCENE_HPP_

#include "sonoloc/geometry.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace sonoloc
{

/// splitmix64 finalizer; used to derive per-scene and per-source seeds.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Bounded parallelogram: origin + a * edge_u + b * edge_v for a, b in [0, 1].
struct SurfacePatch
{
  Vec3 origin = Vec3::Zero();
  Vec3 edge_u = Vec3::UnitX();
  Vec3 edge_v = Vec3::UnitY();

  Vec3 normal() const { return edge_u.cross(edge_v).normalized(); }
  double area() const { return edge_u.cross(edge_v).norm(); }
  Vec3 point_at(double a, double b) const { return origin + a * edge_u + b * edge_v; }
  bool degenerate() const { return edge_u.cross(edge_v).norm() < 1e-12; }

  /// Ray parameter of the first intersection with t > 0, if any.
  std::optional<double> intersect(const Vec3 & ray_origin, const Vec3 & ray_dir) const;
  double distance(const Vec3 & p) const;
};

struct SoundSource
{
  Vec3 position = Vec3::Zero();
  int class_id = 0;
  std::uint64_t waveform_seed = 0;
};

struct AcousticScene
{
  std::vector<SurfacePatch> surfaces;
  std::vector<SoundSource> sources;
  int scene_id = 0;
  std::uint64_t seed = 0;

  Vec3 source_centroid() const;
  /// Nearest positive ray hit over all patches.
  std::optional<double> cast(const Vec3 & ray_origin, const Vec3 & ray_dir) const;
  double distance_to_surfaces(const Vec3 & p) const;
};

struct SceneConfig
{
  int num_classes = 5;
  int min_sources = 1;
  int max_sources = 10;
  double min_spacing = 0.3;
  /// Sources keep this distance from patch edges so depth and appearance
  /// lookups at their pixel stay on the surface.
  double edge_margin = 0.1;
  int max_attempts = 1000;
  std::vector<SurfacePatch> surfaces;
  /// Unit direction from the scene towards the side cameras are placed on.
  Vec3 viewing_side = -Vec3::UnitZ();
};

/// A 4 m x 3 m wall in the z = 0 plane, facing -z.
SurfacePatch default_wall(double width = 4.0, double height = 3.0);

class SpacingError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class VisibilityError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

AcousticScene generate_scene(const SceneConfig & cfg, std::uint64_t seed, int scene_id = 0);

struct MicRig
{
  std::vector<Vec3> offsets;

  int count() const { return static_cast<int>(offsets.size()); }

  /// Four mics on the corners of a 10 cm square in the image plane.
  static MicRig square(double side = 0.10);
  /// `count` mics on a circle in the image plane.
  static MicRig circular(int count, double radius = 0.09);
  /// square() for 4, circular() otherwise.
  static MicRig preset(int count);
};

struct CameraPlacementConfig
{
  double distance = 3.0;
  double distance_jitter = 0.3;
  double cone_half_angle = 0.6;  // radians around SceneConfig::viewing_side
  int max_attempts = 1000;
};

struct CameraView
{
  Pose pose;  // camera -> world
  std::vector<Vec3> mic_world;
};

std::vector<Vec3> mic_world_positions(const Pose & pose, const MicRig & rig);

/// True when the source projects inside the image and is the first surface hit on its ray.
bool source_visible(const AcousticScene & scene, const Pose & pose, const Camera & K, const Vec3 & p_world);

std::vector<CameraView> place_cameras(
  const AcousticScene & scene, const SceneConfig & scene_cfg, int n_views, const Camera & K,
  const MicRig & rig, const CameraPlacementConfig & cfg, std::uint64_t seed);

/// z-depth raster; cells whose ray misses every patch hold +inf.
struct DepthMap
{
  static constexpr double kNoHit = std::numeric_limits<double>::infinity();

  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values;

  int width() const { return static_cast<int>(values.cols()); }
  int height() const { return static_cast<int>(values.rows()); }
  /// Value of the cell containing `uv`, or kNoHit outside the raster.
  double nearest(const Vec2 & uv) const;
};

/// Depth rendered at the camera's image size; rays pass through pixel centres.
DepthMap render_depth(const AcousticScene & scene, const Pose & pose, const Camera & K);

/// Frequency scale (rad / m) of the appearance field.
inline constexpr double kDefaultAppearanceFrequencyStd = 1.0;

/// Fixed random Fourier encoding of world points: [sin(F w); cos(F w)].
struct AppearanceFieldSpec
{
  int feature_dim = 0;
  Eigen::MatrixXd frequencies;  // feature_dim / 2 x 3, rad / m
  std::uint64_t seed = 0;

  static AppearanceFieldSpec make(int feature_dim, double frequency_std, std::uint64_t seed);
  Eigen::VectorXd encode(const Vec3 & world_point) const;
};

FeatureMapd render_appearance(
  const AcousticScene & scene, const Pose & pose, const Camera & K, const AppearanceFieldSpec & spec,
  int grid_h, int grid_w);

struct AudioConfig
{
  double fs = 21000.0;
  double duration = 1.0;
  double speed_of_sound = 343.0;
  double min_range = 0.1;
  /// Waveforms start this long before the recording window so every delay is defined.
  double lead_time = 0.1;

  int num_samples() const { return static_cast<int>(std::lround(fs * duration)); }
};

/// Deterministic class signature: AM carrier at 400 (c + 1) Hz with its second
/// harmonic plus a seeded broadband component, peak-normalised to 1.
Eigen::VectorXd class_waveform(int class_id, int num_samples, double fs, std::uint64_t seed);

struct AudioRender
{
  Eigen::MatrixXd clean;  // channels x samples
  Eigen::MatrixXd noise;  // zero when no SNR was requested

  Eigen::MatrixXd mixed() const { return clean + noise; }
};

/// White Gaussian noise scaled so that 10 log10(P_signal / P_noise) == snr_db exactly.
Eigen::MatrixXd noise_for_snr(const Eigen::MatrixXd & signal, double snr_db, std::uint64_t seed);

AudioRender render_audio(
  const std::vector<SoundSource> & sources, const std::vector<Vec3> & mic_world, const AudioConfig & cfg,
  std::optional<double> snr_db = std::nullopt, std::uint64_t noise_seed = 0);

/// Adds N(0, delta) radians to each pose's yaw, pitch and roll (Z-Y-X order).
std::vector<Pose> perturb_poses(const std::vector<Pose> & poses, double delta, std::uint64_t seed);

}  // namespace sonoloc

#endif  // SONOLOC__SCENE_HPP_
