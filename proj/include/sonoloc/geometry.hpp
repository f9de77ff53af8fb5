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

#ifndef SONOLOC__GEOMETRY_HPP_
#define SONOLOC__GEOMETRY_HPP_

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sonoloc
{

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Matrix4 = Eigen::Matrix<Scalar, 4, 4>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Rigid motion x -> R x + t. Camera poses are stored camera -> world.
template <typename Scalar>
struct RigidTransform
{
  Matrix3<Scalar> rotation = Matrix3<Scalar>::Identity();
  Vector3<Scalar> translation = Vector3<Scalar>::Zero();

  static RigidTransform identity() { return {}; }

  /// Homogeneous 4x4 view of the transform.
  Matrix4<Scalar> homogeneous() const
  {
    Matrix4<Scalar> m = Matrix4<Scalar>::Identity();
    m.template topLeftCorner<3, 3>() = rotation;
    m.template topRightCorner<3, 1>() = translation;
    return m;
  }
};

template <typename Scalar>
Vector3<Scalar> transform_point(const RigidTransform<Scalar> & T, const Vector3<Scalar> & p)
{
  return T.rotation * p + T.translation;
}

/// compose(a, b) applies b first, then a.
template <typename Scalar>
RigidTransform<Scalar> compose(const RigidTransform<Scalar> & a, const RigidTransform<Scalar> & b)
{
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

template <typename Scalar>
RigidTransform<Scalar> inverse(const RigidTransform<Scalar> & T)
{
  const Matrix3<Scalar> rt = T.rotation.transpose();
  return {rt, -(rt * T.translation)};
}

/// Maps points expressed in camera `from` into camera `to`, given camera -> world poses.
template <typename Scalar>
RigidTransform<Scalar> relative_transform(
  const RigidTransform<Scalar> & pose_to, const RigidTransform<Scalar> & pose_from)
{
  return compose(inverse(pose_to), pose_from);
}

/// Pinhole intrinsics; +z forward, +x right, +y down. Pixel coordinates are
/// continuous on [0, width) x [0, height).
template <typename Scalar>
struct Intrinsics
{
  Scalar fx = 1;
  Scalar fy = 1;
  Scalar cx = 0;
  Scalar cy = 0;
  int width = 1;
  int height = 1;

  void validate() const
  {
    if (!(fx > 0 && fy > 0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
    if (!(cx > 0 && cx < width && cy > 0 && cy < height)) {
      throw std::invalid_argument("intrinsics: principal point outside image");
    }
  }

  bool contains(const Vector2<Scalar> & uv) const
  {
    return uv.x() >= 0 && uv.x() < width && uv.y() >= 0 && uv.y() < height;
  }

  /// Same field of view at a different image size.
  Intrinsics rescaled(int new_width, int new_height) const
  {
    const Scalar sx = Scalar(new_width) / width;
    const Scalar sy = Scalar(new_height) / height;
    return {fx * sx, fy * sy, cx * sx, cy * sy, new_width, new_height};
  }
};

template <typename Scalar>
struct PixelPoint
{
  Vector2<Scalar> uv = Vector2<Scalar>::Zero();
  bool valid = false;
};

template <typename Scalar>
PixelPoint<Scalar> project(const Intrinsics<Scalar> & K, const Vector3<Scalar> & p_cam)
{
  PixelPoint<Scalar> out;
  if (!(p_cam.z() > 0)) return out;
  out.uv = {K.fx * p_cam.x() / p_cam.z() + K.cx, K.fy * p_cam.y() / p_cam.z() + K.cy};
  out.valid = K.contains(out.uv);
  return out;
}

/// Camera-frame point on the ray through `pix` whose z coordinate equals `depth`.
template <typename Scalar>
Vector3<Scalar> backproject(const Intrinsics<Scalar> & K, const PixelPoint<Scalar> & pix, Scalar depth)
{
  if (!(depth > 0)) throw std::invalid_argument("backproject: depth must be positive");
  if (!pix.valid) throw std::invalid_argument("backproject: invalid pixel");
  return {(pix.uv.x() - K.cx) / K.fx * depth, (pix.uv.y() - K.cy) / K.fy * depth, depth};
}

/// Unit-norm ray direction (camera frame) through a pixel.
template <typename Scalar>
Vector3<Scalar> pixel_ray(const Intrinsics<Scalar> & K, const Vector2<Scalar> & uv)
{
  return Vector3<Scalar>((uv.x() - K.cx) / K.fx, (uv.y() - K.cy) / K.fy, Scalar(1)).normalized();
}

/// Dense channels x grid_h x grid_w map. Cell (y, x) is centred on pixel
/// ((x + 1/2) * scale, (y + 1/2) * scale); values are stored as one column per
/// cell in row-major cell order.
template <typename Scalar>
struct FeatureMap
{
  int channels = 0;
  int grid_h = 0;
  int grid_w = 0;
  Scalar pixel_to_grid_scale = 1;
  MatrixX<Scalar> values;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, Scalar scale)
  : channels(c), grid_h(h), grid_w(w), pixel_to_grid_scale(scale),
    values(MatrixX<Scalar>::Zero(c, static_cast<Eigen::Index>(h) * w))
  {
  }

  Eigen::Index cell(int y, int x) const { return static_cast<Eigen::Index>(y) * grid_w + x; }
  auto feature(int y, int x) { return values.col(cell(y, x)); }
  auto feature(int y, int x) const { return values.col(cell(y, x)); }

  Vector2<Scalar> cell_center_pixel(int y, int x) const
  {
    return {(x + Scalar(0.5)) * pixel_to_grid_scale, (y + Scalar(0.5)) * pixel_to_grid_scale};
  }
};

/// Bilinear lookup at a continuous pixel; invalid pixels yield the zero vector.
/// Grid coordinates are clamped to [0, grid - 1], so the outer half cell
/// replicates the edge features.
template <typename Scalar>
VectorX<Scalar> bilinear_sample(const FeatureMap<Scalar> & map, const PixelPoint<Scalar> & pix)
{
  VectorX<Scalar> out = VectorX<Scalar>::Zero(map.channels);
  if (!pix.valid || map.grid_w < 1 || map.grid_h < 1) return out;
  const Scalar gx = std::clamp(pix.uv.x() / map.pixel_to_grid_scale - Scalar(0.5), Scalar(0), Scalar(map.grid_w - 1));
  const Scalar gy = std::clamp(pix.uv.y() / map.pixel_to_grid_scale - Scalar(0.5), Scalar(0), Scalar(map.grid_h - 1));

  const int x0 = std::min(static_cast<int>(std::floor(gx)), std::max(map.grid_w - 2, 0));
  const int y0 = std::min(static_cast<int>(std::floor(gy)), std::max(map.grid_h - 2, 0));
  const int x1 = std::min(x0 + 1, map.grid_w - 1);
  const int y1 = std::min(y0 + 1, map.grid_h - 1);
  const Scalar ax = gx - x0;
  const Scalar ay = gy - y0;
  out = (1 - ay) * ((1 - ax) * map.feature(y0, x0) + ax * map.feature(y0, x1)) +
        ay * ((1 - ax) * map.feature(y1, x0) + ax * map.feature(y1, x1));
  return out;
}

/// Camera -> world pose whose +z axis points from `eye` to `target`.
template <typename Scalar>
RigidTransform<Scalar> look_at(
  const Vector3<Scalar> & eye, const Vector3<Scalar> & target, const Vector3<Scalar> & world_down)
{
  const Vector3<Scalar> z = (target - eye).normalized();
  Vector3<Scalar> x = world_down.cross(z);
  if (x.norm() < Scalar(1e-9)) x = z.unitOrthogonal();
  x.normalize();
  const Vector3<Scalar> y = z.cross(x);
  RigidTransform<Scalar> T;
  T.rotation.col(0) = x;
  T.rotation.col(1) = y;
  T.rotation.col(2) = z;
  T.translation = eye;
  return T;
}

/// R = Rz(yaw) * Ry(pitch) * Rx(roll).
template <typename Scalar>
Matrix3<Scalar> rotation_from_euler_zyx(Scalar yaw, Scalar pitch, Scalar roll)
{
  using Axis = Eigen::AngleAxis<Scalar>;
  return (Axis(yaw, Vector3<Scalar>::UnitZ()) * Axis(pitch, Vector3<Scalar>::UnitY()) *
          Axis(roll, Vector3<Scalar>::UnitX()))
    .toRotationMatrix();
}

/// Inverse of rotation_from_euler_zyx; returns (yaw, pitch, roll) with pitch in [-pi/2, pi/2].
template <typename Scalar>
Vector3<Scalar> euler_zyx_from_rotation(const Matrix3<Scalar> & R)
{
  const Scalar pitch = std::asin(std::clamp(-R(2, 0), Scalar(-1), Scalar(1)));
  const Scalar yaw = std::atan2(R(1, 0), R(0, 0));
  const Scalar roll = std::atan2(R(2, 1), R(2, 2));
  return {yaw, pitch, roll};
}

/// Nearest rotation in the Frobenius sense.
template <typename Scalar>
Matrix3<Scalar> orthonormalize(const Matrix3<Scalar> & M)
{
  Eigen::JacobiSVD<Matrix3<Scalar>> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3<Scalar> R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0) {
    Matrix3<Scalar> U = svd.matrixU();
    U.col(2) *= -1;
    R = U * svd.matrixV().transpose();
  }
  return R;
}

using Vec3 = Vector3<double>;
using Vec2 = Vector2<double>;
using Mat3 = Matrix3<double>;
using Pose = RigidTransform<double>;
using Camera = Intrinsics<double>;
using Pixel = PixelPoint<double>;
using FeatureMapd = FeatureMap<double>;

}  // namespace sonoloc

#endif  // SONOLOC__GEOMETRY_HPP_
