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

#include "sonoloc/geometry.hpp"

#include "doctest.h"

#include <random>

using namespace sonoloc;

namespace
{
Pose random_pose(std::mt19937_64 & rng)
{
  std::uniform_real_distribution<double> angle(-3.0, 3.0);
  std::uniform_real_distribution<double> offset(-5.0, 5.0);
  Pose T;
  T.rotation = rotation_from_euler_zyx(angle(rng), angle(rng) / 2, angle(rng));
  T.translation = Vec3(offset(rng), offset(rng), offset(rng));
  return T;
}

Camera test_camera() { return {64, 64, 64, 64, 128, 128}; }
}  // namespace

TEST_CASE("transform round trips")
{
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coord(-10.0, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const Pose T = random_pose(rng);
    const Vec3 p(coord(rng), coord(rng), coord(rng));
    CHECK((transform_point(inverse(T), transform_point(T, p)) - p).norm() < 1e-9);
    const Pose I = compose(T, inverse(T));
    CHECK((I.rotation - Mat3::Identity()).norm() < 1e-9);
    CHECK(I.translation.norm() < 1e-9);
  }
}

TEST_CASE("relative transform maps between camera frames")
{
  std::mt19937_64 rng(3);
  const Pose a = random_pose(rng);
  const Pose b = random_pose(rng);
  const Vec3 p_world(0.3, -1.2, 2.0);
  const Vec3 in_a = transform_point(inverse(a), p_world);
  const Vec3 in_b = transform_point(inverse(b), p_world);
  CHECK((transform_point(relative_transform(b, a), in_a) - in_b).norm() < 1e-12);
}

TEST_CASE("projection examples")
{
  const Camera K = test_camera();
  const auto centre = project(K, Vec3(0, 0, 2));
  CHECK(centre.valid);
  CHECK(centre.uv.isApprox(Vec2(64, 64)));
  CHECK_FALSE(project(K, Vec3(0, 0, -1)).valid);
  CHECK_FALSE(project(K, Vec3(0, 0, 0)).valid);
  CHECK_FALSE(project(K, Vec3(10, 0, 1)).valid);
  CHECK_THROWS_AS(backproject(K, centre, 0.0), std::invalid_argument);
}

TEST_CASE("project then backproject recovers camera-frame points")
{
  const Camera K = test_camera();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> xy(-1.0, 1.0);
  std::uniform_real_distribution<double> z(0.5, 6.0);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p(xy(rng), xy(rng), z(rng));
    const auto pix = project(K, p);
    if (!pix.valid) continue;
    CHECK((backproject(K, pix, p.z()) - p).norm() < 1e-9);
    ++checked;
  }
  CHECK(checked > 500);
}

TEST_CASE("bilinear sampling")
{
  FeatureMapd map(1, 2, 2, 4.0);
  map.feature(0, 0)[0] = 0;
  map.feature(0, 1)[0] = 1;
  map.feature(1, 0)[0] = 2;
  map.feature(1, 1)[0] = 3;
  const auto at = [&](double u, double v) { return bilinear_sample(map, Pixel{Vec2(u, v), true})[0]; };
  CHECK(at(2, 2) == doctest::Approx(0));
  CHECK(at(6, 2) == doctest::Approx(1));
  CHECK(at(4, 4) == doctest::Approx(1.5));
  // Outer half cell replicates the edge.
  CHECK(at(0.5, 2) == doctest::Approx(0));
  CHECK(bilinear_sample(map, Pixel{Vec2(4, 4), false})[0] == 0);
}

TEST_CASE("euler angles and orthonormalisation")
{
  const Mat3 R = rotation_from_euler_zyx(0.4, -0.2, 1.1);
  CHECK(euler_zyx_from_rotation(R).isApprox(Vec3(0.4, -0.2, 1.1), 1e-12));
  Mat3 noisy = R;
  noisy(0, 1) += 1e-3;
  const Mat3 Q = orthonormalize(noisy);
  CHECK((Q.transpose() * Q - Mat3::Identity()).norm() < 1e-12);
  CHECK(Q.determinant() == doctest::Approx(1.0));
}

TEST_CASE("look_at points +z at the target with +y down")
{
  const Pose T = look_at<double>(Vec3(0, 0, -3), Vec3::Zero(), Vec3::UnitY());
  CHECK(T.rotation.col(2).isApprox(Vec3::UnitZ()));
  CHECK(T.rotation.col(1).isApprox(Vec3::UnitY()));
  CHECK(T.rotation.determinant() == doctest::Approx(1.0));
}
