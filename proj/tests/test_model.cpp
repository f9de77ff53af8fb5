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

#include "sonoloc/losses.hpp"

#include "doctest.h"

#include <cmath>
#include <random>

using namespace sonoloc;
using ad::RowMatrix;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace
{
ModelConfig tiny_config()
{
  ModelConfig cfg;
  cfg.num_classes = 2;
  cfg.input_channels = 3;
  cfg.input_size = 16;
  cfg.conv_channels = {4, 8};
  cfg.heads = 2;
  cfg.ffn_dim = 16;
  cfg.decoder_hidden = 8;
  return cfg;
}

dsp::InputFeatureTensor random_features(const ModelConfig & cfg, std::mt19937_64 & rng)
{
  std::normal_distribution<double> g(0.0, 1.0);
  dsp::InputFeatureTensor f;
  f.channels = cfg.input_channels;
  f.height = f.width = cfg.input_size;
  f.data.resize(static_cast<Eigen::Index>(f.channels) * f.height * f.width);
  for (Eigen::Index i = 0; i < f.data.size(); ++i) f.data[i] = g(rng);
  return f;
}

FeatureMapd constant_map(int channels, int grid, double scale, double value)
{
  FeatureMapd m(channels, grid, grid, scale);
  m.values.setConstant(value);
  return m;
}

FeatureMapd random_map(int channels, int grid, double scale, std::mt19937_64 & rng)
{
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureMapd m(channels, grid, grid, scale);
  for (Eigen::Index i = 0; i < m.values.size(); ++i) m.values.data()[i] = g(rng);
  return m;
}

const Camera kCamera{32, 32, 32, 32, 64, 64};

// Views of a wall at z = 0 from about 3 m.
std::vector<ViewInput> random_views(const ModelConfig & cfg, int n, std::mt19937_64 & rng)
{
  std::uniform_real_distribution<double> eye(-0.8, 0.8);
  std::vector<ViewInput> views;
  for (int i = 0; i < n; ++i) {
    ViewInput v;
    v.features = random_features(cfg, rng);
    v.pose = look_at<double>(Vec3(eye(rng), eye(rng), -3), Vec3::Zero(), Vec3::UnitY());
    v.camera = kCamera;
    v.appearance = random_map(cfg.dim(), 16, 4.0, rng);
    views.push_back(std::move(v));
  }
  return views;
}

bool same(const Var & a, const Var & b) { return a.value().data == b.value().data; }
}  // namespace

TEST_CASE("query generator shapes")
{
  SUBCASE("paper ladder maps 10x256x256 to 16 queries of 256")
  {
    const ModelConfig cfg = ModelConfig::paper();
    CHECK(cfg.num_queries() == 16);
    CHECK(cfg.dim() == 256);
    const Localizer model(cfg, 1);
    std::mt19937_64 rng(2);
    Tape tape;
    const Var q = model.query_generator(tape, random_features(cfg, rng));
    CHECK(q.shape() == ad::Shape{16, 256});
  }

  SUBCASE("six microphones change only the first convolution")
  {
    ModelConfig six = ModelConfig::desk();
    six.input_channels = dsp::feature_channel_count(6);
    CHECK(six.input_channels == 21);
    const Localizer a(ModelConfig::desk(), 1);
    const Localizer b(six, 1);
    REQUIRE(a.parameters().size() == b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
      const auto & pa = a.parameters().all()[i];
      const auto & pb = b.parameters().all()[i];
      CHECK(pa.name == pb.name);
      if (pa.name == "generator.conv0.weight") {
        CHECK(pa.value.shape == ad::Shape{16, 10, 3, 3});
        CHECK(pb.value.shape == ad::Shape{16, 21, 3, 3});
      } else {
        CHECK(pa.value.shape == pb.value.shape);
      }
    }
  }

  SUBCASE("different inputs give different queries")
  {
    const ModelConfig cfg = tiny_config();
    const Localizer model(cfg, 3);
    std::mt19937_64 rng(4);
    Tape tape;
    CHECK_FALSE(same(model.query_generator(tape, random_features(cfg, rng)),
                     model.query_generator(tape, random_features(cfg, rng))));
  }

  SUBCASE("wrong input shape is rejected")
  {
    const ModelConfig cfg = tiny_config();
    const Localizer model(cfg, 3);
    ModelConfig other = cfg;
    other.input_size = 8;
    std::mt19937_64 rng(4);
    Tape tape;
    CHECK_THROWS_AS(model.query_generator(tape, random_features(other, rng)), std::invalid_argument);
  }
}

TEST_CASE("query decoder")
{
  const ModelConfig cfg = tiny_config();
  const Localizer model(cfg, 5);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor q({cfg.num_queries(), cfg.dim()});
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data[i] = g(rng);

  Tape tape;
  const auto a = model.decode_queries(tape, tape.constant(q));
  const auto b = model.decode_queries(tape, tape.constant(q));
  CHECK(a.positions.shape() == ad::Shape{16, 3});
  CHECK(a.logits.shape() == ad::Shape{16, 3});
  CHECK(same(a.positions, b.positions));
  CHECK(same(a.logits, b.logits));

  // Both heads must reach the queries.
  const auto report = ad::grad_check(
    [&](Tape & t, const std::vector<Var> & in) {
      const auto d = model.decode_queries(t, in[0]);
      std::mt19937_64 r(7);
      Tensor wp(d.positions.shape());
      Tensor wl(d.logits.shape());
      for (Eigen::Index i = 0; i < wp.size(); ++i) wp.data[i] = g(r);
      for (Eigen::Index i = 0; i < wl.size(); ++i) wl.data[i] = g(r);
      return ad::add(ad::sum(ad::mul(d.positions, t.constant(wp))), ad::sum(ad::mul(d.logits, t.constant(wl))));
    },
    {q});
  CHECK(report.max_relative_error <= 1e-5);
}

TEST_CASE("appearance cue aggregation")
{
  const ModelConfig cfg = tiny_config();
  const Localizer model(cfg, 8);
  const int d = cfg.dim();
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor q({cfg.num_queries(), d});
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data[i] = g(rng);

  const Pose front = look_at<double>(Vec3(0, 0, -3), Vec3::Zero(), Vec3::UnitY());
  const Pose side = look_at<double>(Vec3(0.5, 0, -3), Vec3::Zero(), Vec3::UnitY());
  RowMatrix on_wall(cfg.num_queries(), 3);
  for (int r = 0; r < cfg.num_queries(); ++r) on_wall.row(r) = Eigen::RowVector3d(0.05 * (r % 4), 0.05 * (r / 4), 3.0);

  SUBCASE("nothing projects: queries unchanged")
  {
    RowMatrix behind = on_wall;
    behind.col(2).setConstant(-1.0);
    std::vector<ViewInput> views(2);
    views[0] = {{}, front, kCamera, constant_map(d, 16, 4.0, 1.0)};
    views[1] = {{}, side, kCamera, constant_map(d, 16, 4.0, 2.0)};
    Tape tape;
    const Var out = model.aggregate_rgb_cues(tape, tape.constant(q), behind, 0, views);
    CHECK(out.value().data == q.data);
  }

  SUBCASE("single view adds its own feature")
  {
    std::vector<ViewInput> views(1);
    views[0] = {{}, front, kCamera, random_map(d, 16, 4.0, rng)};
    Tape tape;
    const Var out = model.aggregate_rgb_cues(tape, tape.constant(q), on_wall, 0, views);
    for (int r = 0; r < cfg.num_queries(); ++r) {
      const Vec3 p = on_wall.row(r).transpose();
      const Eigen::VectorXd expected =
        q.matrix().row(r).transpose() + bilinear_sample(views[0].appearance, project(kCamera, p));
      CHECK((out.value().matrix().row(r).transpose() - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  SUBCASE("two constant maps add their mean")
  {
    std::vector<ViewInput> views(2);
    views[0] = {{}, front, kCamera, constant_map(d, 16, 4.0, 1.5)};
    views[1] = {{}, side, kCamera, constant_map(d, 16, 4.0, -0.5)};
    Tape tape;
    const Var out = model.aggregate_rgb_cues(tape, tape.constant(q), on_wall, 0, views);
    CHECK((out.value().data - q.data).cwiseAbs().maxCoeff() == doctest::Approx(0.5));
    CHECK((out.value().data - q.data).cwiseAbs().minCoeff() == doctest::Approx(0.5));
  }

  SUBCASE("gradients reach the queries only through the residual")
  {
    std::vector<ViewInput> views(1);
    views[0] = {{}, front, kCamera, random_map(d, 16, 4.0, rng)};
    Tape tape;
    const Var leaf = tape.leaf(q);
    tape.backward(ad::sum(model.aggregate_rgb_cues(tape, leaf, on_wall, 0, views)));
    CHECK(tape.grad(leaf) == Eigen::VectorXd::Ones(q.size()));
  }
}

TEST_CASE("feature mixer")
{
  const ModelConfig cfg = ModelConfig::desk();
  const Localizer model(cfg, 10);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor q({cfg.num_queries(), cfg.dim()});
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data[i] = g(rng);

  Tape tape;
  const Var xs = tape.constant(q);
  const Var out = model.feature_mixer(tape, xs);
  CHECK(out.shape() == ad::Shape{16, 32});
  std::vector<int> perm(16);
  for (int i = 0; i < 16; ++i) perm[static_cast<std::size_t>(i)] = (i * 5 + 3) % 16;
  const Var a = ad::gather_rows(out, perm);
  const Var b = model.feature_mixer(tape, ad::gather_rows(xs, perm));
  CHECK((a.value().data - b.value().data).cwiseAbs().maxCoeff() < 1e-12);

  // Sampled coordinates; a stencil that straddles a ReLU kink in the feed-forward
  // block is recognised by disagreement between two step sizes and skipped.
  Localizer checked(cfg, 10);
  const auto f = [&](Tape & t) { return ad::sum(ad::mul(checked.feature_mixer(t, t.constant(q)), t.constant(q))); };
  checked.parameters().zero_grad();
  {
    Tape t;
    t.backward(f(t));
  }
  const auto numeric = [&](double & x, double h) {
    const double x0 = x;
    const auto at = [&](double v) {
      x = v;
      Tape t;
      return f(t).value().item();
    };
    const double d = (8 * (at(x0 + h) - at(x0 - h)) - (at(x0 + 2 * h) - at(x0 - 2 * h))) / (12 * h);
    x = x0;
    return d;
  };
  std::uniform_real_distribution<double> pick(0.0, 1.0);
  int tested = 0;
  int kinks = 0;
  double worst = 0;
  for (auto & p : checked.parameters().all()) {
    for (Eigen::Index j = 0; j < p.value.size(); ++j) {
      if (pick(rng) > 0.1) continue;
      const double coarse = numeric(p.value.data[j], 1e-4);
      const double fine = numeric(p.value.data[j], 5e-5);
      if (ad::relative_error(coarse, fine) > 1e-6) {
        ++kinks;
        continue;
      }
      ++tested;
      worst = std::max(worst, ad::relative_error(p.grad[j], coarse));
    }
  }
  CHECK(tested > 500);
  CHECK(kinks * 50 < tested);
  CHECK(worst <= 1e-5);
}

TEST_CASE("scene forward pass")
{
  ModelConfig cfg = tiny_config();
  std::mt19937_64 rng(12);

  SUBCASE("zero views is an error")
  {
    const Localizer model(cfg, 1);
    Tape tape;
    CHECK_THROWS_AS(model.forward_scene(tape, {}), std::invalid_argument);
  }

  SUBCASE("without appearance, maps do not matter and views are independent")
  {
    cfg.use_rgb = false;
    const Localizer model(cfg, 13);
    auto views = random_views(cfg, 3, rng);
    Tape tape;
    const auto base = model.forward_scene(tape, views);
    for (auto & v : views) v.appearance = random_map(cfg.dim(), 16, 4.0, rng);
    views[2].features = random_features(cfg, rng);
    views[2].pose = look_at<double>(Vec3(1, 1, -2), Vec3::Zero(), Vec3::UnitY());
    const auto moved = model.forward_scene(tape, views);
    for (int i = 0; i < 2; ++i) {
      CHECK(same(base[static_cast<std::size_t>(i)].updated.positions, moved[static_cast<std::size_t>(i)].updated.positions));
      CHECK(same(base[static_cast<std::size_t>(i)].updated.logits, moved[static_cast<std::size_t>(i)].updated.logits));
    }
  }

  SUBCASE("with appearance, a view depends on the others")
  {
    Localizer model(cfg, 13);
    // Decoded positions start about 3 m ahead so they project into both views.
    model.parameters().at("decoder.position.out.bias").value.data = Eigen::Vector3d(0, 0, 3);
    auto views = random_views(cfg, 2, rng);
    Tape tape;
    const auto base = model.forward_scene(tape, views);
    views[1].appearance = random_map(cfg.dim(), 16, 4.0, rng);
    const auto moved = model.forward_scene(tape, views);
    CHECK(same(base[0].initial.positions, moved[0].initial.positions));
    CHECK_FALSE(same(base[0].updated.positions, moved[0].updated.positions));
  }

  SUBCASE("updated queries use the initial decoded positions")
  {
    const Localizer model(cfg, 14);
    const auto views = random_views(cfg, 2, rng);
    Tape tape;
    const auto out = model.forward_scene(tape, views);
    for (std::size_t i = 0; i < views.size(); ++i) {
      const Var q = model.query_generator(tape, views[i].features);
      const auto init = model.decode_queries(tape, q);
      const Var agg = model.aggregate_rgb_cues(tape, q, init.positions.value().matrix(), i, views);
      const auto upd = model.decode_queries(tape, model.feature_mixer(tape, agg));
      CHECK(same(upd.positions, out[i].updated.positions));
      CHECK(same(upd.logits, out[i].updated.logits));
    }
  }

  SUBCASE("outputs stay finite over random seeds")
  {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const Localizer model(cfg, seed);
      std::mt19937_64 r(seed + 1000);
      const auto views = random_views(cfg, 2, r);
      Tape tape;
      for (const auto & o : model.forward_scene(tape, views)) {
        CHECK(o.initial.positions.value().data.allFinite());
        CHECK(o.updated.logits.value().data.allFinite());
        CHECK(o.updated.positions.value().data.allFinite());
      }
    }
  }
}

TEST_CASE("paper preset runs four views end to end")
{
  const ModelConfig cfg = ModelConfig::paper();
  const Localizer model(cfg, 15);
  std::mt19937_64 rng(16);
  std::vector<ViewInput> views;
  for (int i = 0; i < 4; ++i) {
    ViewInput v;
    v.features = random_features(cfg, rng);
    v.pose = look_at<double>(Vec3(0.3 * i - 0.5, 0.1, -3), Vec3::Zero(), Vec3::UnitY());
    v.camera = {128, 128, 128, 128, 256, 256};
    v.appearance = random_map(256, 64, 4.0, rng);
    views.push_back(std::move(v));
  }
  Tape tape;
  const auto out = model.forward_scene(tape, views);
  REQUIRE(out.size() == 4);
  for (const auto & o : out) {
    CHECK(o.initial.positions.shape() == ad::Shape{16, 3});
    CHECK(o.initial.logits.shape() == ad::Shape{16, 6});
    CHECK(o.updated.positions.shape() == ad::Shape{16, 3});
    CHECK(o.updated.logits.shape() == ad::Shape{16, 6});
  }
}

TEST_CASE("desk-sized forward and backward give a finite loss")
{
  ModelConfig cfg = ModelConfig::desk();
  Localizer model(cfg, 17);
  std::mt19937_64 rng(18);
  std::vector<ViewInput> views;
  std::vector<DepthView> depth;
  AcousticScene scene;
  scene.surfaces = {default_wall()};
  scene.sources = {{Vec3(0.4, -0.2, 0), 1, 1}};
  std::vector<Pose> poses;
  for (int i = 0; i < 2; ++i) {
    ViewInput v;
    v.features = random_features(cfg, rng);
    v.pose = look_at<double>(Vec3(0.4 * i - 0.2, 0, -3), Vec3::Zero(), Vec3::UnitY());
    v.camera = kCamera;
    v.appearance = random_map(cfg.dim(), 32, 2.0, rng);
    depth.push_back({v.pose, v.camera, render_depth(scene, v.pose, v.camera)});
    poses.push_back(v.pose);
    views.push_back(std::move(v));
  }
  Tape tape;
  const auto out = model.forward_scene(tape, views);
  const LossBreakdown loss = total_loss(tape, out, view_targets(scene, poses), depth, LossConfig{});
  CHECK(std::isfinite(loss.total));
  tape.backward(loss.objective);
  for (const auto & p : model.parameters().all()) CHECK(p.grad.allFinite());
  CHECK(model.parameters().at("generator.conv0.weight").grad.norm() > 0);
}
