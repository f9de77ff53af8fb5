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

#include "sonoloc/oracle.hpp"

#include "sonoloc/autodiff/layers.hpp"
#include "sonoloc/autodiff/ops.hpp"
#include "sonoloc/dsp.hpp"
#include "sonoloc/eval.hpp"
#include "sonoloc/geometry.hpp"
#include "sonoloc/losses.hpp"
#include "sonoloc/scene.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace sonoloc::oracle
{

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace
{
using Clock = std::chrono::steady_clock;

Check upper(const std::string & name, double measured, double bound, std::string note = {})
{
  return {name, measured, bound, measured < bound, std::move(note)};
}

Check at_most(const std::string & name, double measured, double bound, std::string note = {})
{
  return {name, measured, bound, measured <= bound, std::move(note)};
}

Check exact(const std::string & name, double measured, double expected, std::string note = {})
{
  return {name, measured, expected, measured == expected, std::move(note)};
}

template <typename F>
SuiteResult timed(const std::string & name, F && body)
{
  SuiteResult r;
  r.suite = name;
  const auto t0 = Clock::now();
  body(r.checks);
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

Pose random_pose(std::mt19937_64 & rng)
{
  std::uniform_real_distribution<double> angle(-3.0, 3.0);
  std::uniform_real_distribution<double> offset(-5.0, 5.0);
  Pose T;
  T.rotation = rotation_from_euler_zyx(angle(rng), angle(rng) / 2, angle(rng));
  T.translation = Vec3(offset(rng), offset(rng), offset(rng));
  return T;
}

Tensor random_tensor(Shape shape, std::mt19937_64 & rng, double scale = 1.0)
{
  std::normal_distribution<double> g(0.0, scale);
  Tensor t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = g(rng);
  return t;
}

// Contracts an output with fixed random weights so every element reaches the scalar.
Var project_to_scalar(Tape & tape, const Var & y, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  return ad::sum(ad::mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

// Keeps draws at least `gap` away from a kink so central differences stay on one side.
void avoid_kink(Tensor & t, double kink, double gap)
{
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    if (std::abs(t.data[i] - kink) < gap) t.data[i] = kink + (t.data[i] >= kink ? gap : -gap);
  }
}
}  // namespace

bool SuiteResult::passed() const
{
  return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const Check & c) { return c.passed; });
}

SuiteResult geometry(std::uint64_t seed, int trials)
{
  return timed("geometry", [&](std::vector<Check> & checks) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coord(-10.0, 10.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> size(32, 512);
    double transform_err = 0;
    double identity_err = 0;
    double pixel_err = 0;
    double point_err = 0;
    for (int i = 0; i < trials; ++i) {
      const Pose T = random_pose(rng);
      const Vec3 p(coord(rng), coord(rng), coord(rng));
      transform_err = std::max(transform_err, (transform_point(inverse(T), transform_point(T, p)) - p).norm());
      const Pose I = compose(T, inverse(T));
      identity_err = std::max({identity_err, (I.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(),
                               I.translation.cwiseAbs().maxCoeff()});

      const int w = size(rng);
      const int h = size(rng);
      const Camera K{0.3 * w + unit(rng) * w, 0.3 * h + unit(rng) * h, w * (0.3 + 0.4 * unit(rng)),
                     h * (0.3 + 0.4 * unit(rng)), w, h};
      PixelPoint<double> pix;
      pix.uv = {unit(rng) * w, unit(rng) * h};
      pix.valid = true;
      const double depth = 0.2 + 20 * unit(rng);
      const Vec3 cam = backproject(K, pix, depth);
      const Vec3 world = transform_point(T, cam);
      const PixelPoint<double> again = project(K, transform_point(inverse(T), world));
      pixel_err = std::max(pixel_err, again.valid ? (again.uv - pix.uv).norm() : 1.0);
      if (again.valid) {
        point_err = std::max(point_err, (transform_point(T, backproject(K, again, depth)) - world).norm());
      } else {
        point_err = 1.0;
      }
    }
    checks.push_back(upper("transform round trip error (m)", transform_err, 1e-9));
    checks.push_back(upper("T * T^-1 deviation from identity", identity_err, 1e-9));
    checks.push_back(upper("pixel round trip error (px)", pixel_err, 1e-9));
    checks.push_back(upper("world point round trip error (m)", point_err, 1e-9));
  });
}

SuiteResult dsp(std::uint64_t seed, int scenes)
{
  return timed("dsp", [&](std::vector<Check> & checks) {
    const AudioConfig audio;
    const dsp::FeatureConfig features;
    const MicRig rig = MicRig::square();
    SceneConfig scfg;
    scfg.surfaces = {default_wall()};
    scfg.min_sources = 1;
    scfg.max_sources = 1;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> eye(-1.5, 1.5);
    std::uniform_real_distribution<double> dist(2.7, 3.3);
    long checked = 0;
    long within = 0;
    double worst = 0;
    for (int s = 0; s < scenes; ++s) {
      const AcousticScene scene = generate_scene(scfg, derive_seed(seed, static_cast<std::uint64_t>(s)), s);
      const Pose view = look_at<double>(Vec3(eye(rng), eye(rng), -dist(rng)), Vec3::Zero(), Vec3::UnitY());
      const auto mics = mic_world_positions(view, rig);
      const Eigen::MatrixXd clean = render_audio(scene.sources, mics, audio).clean;
      std::vector<dsp::ComplexSpectrogram> specs;
      for (int c = 0; c < rig.count(); ++c) {
        specs.push_back(dsp::stft(clean.row(c).transpose(), features.n_fft, features.hop, features.fs));
      }
      const Vec3 src = scene.sources.front().position;
      for (int k = 0; k < rig.count(); ++k) {
        for (int l = k + 1; l < rig.count(); ++l) {
          const double lag = ((src - mics[l]).norm() - (src - mics[k]).norm()) * audio.fs / audio.speed_of_sound;
          if (std::abs(lag) < 2) continue;
          const int measured = dsp::median_peak_lag(dsp::gcc_phat(specs[k], specs[l], features.n_lags));
          const double err = std::abs(measured - lag);
          worst = std::max(worst, err);
          ++checked;
          if (err <= 1.0) ++within;
        }
      }
    }
    std::ostringstream note;
    note << within << "/" << checked << " pairs within one sample";
    checks.push_back(at_most("worst |median peak lag - analytic TDOA| (samples)", worst, 1.0, note.str()));
    checks.push_back({"mic pairs with |TDOA| >= 2 samples", static_cast<double>(checked), 1, checked >= 1, ""});
  });
}

SuiteResult grad(std::uint64_t seed, int seeds)
{
  return timed("grad", [&](std::vector<Check> & checks) {
    using Fn = std::function<double(std::mt19937_64 &, std::uint64_t)>;
    const auto inputs_check = [](const ad::ScalarFunction & f, const std::vector<Tensor> & in) {
      return ad::grad_check(f, in).max_relative_error;
    };
    const std::vector<std::pair<std::string, Fn>> layers = {
      {"conv2d",
       [&](std::mt19937_64 & rng, std::uint64_t s) {
         return inputs_check(
           [s](Tape & t, const std::vector<Var> & v) { return project_to_scalar(t, ad::conv2d(v[0], v[1], v[2]), s); },
           {random_tensor({3, 7, 7}, rng), random_tensor({4, 3, 3, 3}, rng, 0.5), random_tensor({4}, rng)});
       }},
      {"linear",
       [&](std::mt19937_64 & rng, std::uint64_t s) {
         return inputs_check(
           [s](Tape & t, const std::vector<Var> & v) { return project_to_scalar(t, ad::linear(v[0], v[1], v[2]), s); },
           {random_tensor({5, 4}, rng), random_tensor({3, 4}, rng), random_tensor({3}, rng)});
       }},
      {"batchnorm",
       [&](std::mt19937_64 & rng, std::uint64_t s) {
         return inputs_check(
           [s](Tape & t, const std::vector<Var> & v) {
             return project_to_scalar(t, ad::batchnorm1d(v[0], v[1], v[2]), s);
           },
           {random_tensor({6, 4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)});
       }},
      {"layernorm",
       [&](std::mt19937_64 & rng, std::uint64_t s) {
         return inputs_check(
           [s](Tape & t, const std::vector<Var> & v) {
             return project_to_scalar(t, ad::layernorm(v[0], v[1], v[2]), s);
           },
           {random_tensor({5, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)});
       }},
      {"attention layer",
       [&](std::mt19937_64 & rng, std::uint64_t s) {
         ad::ParameterStore store;
         const auto layer = ad::TransformerEncoderLayer::create(store, "layer", 8, 2, 16, rng);
         for (auto & p : store.all()) p.value.data += random_tensor(p.value.shape, rng, 0.1).data;
         const Tensor x = random_tensor({4, 8}, rng);
         const double in = inputs_check(
           [&](Tape & t, const std::vector<Var> & v) { return project_to_scalar(t, layer(t, v[0]), s); }, {x});
         const double params =
           ad::grad_check_params([&](Tape & t) { return project_to_scalar(t, layer(t, t.constant(x)), s); }, store)
             .max_relative_error;
         return std::max(in, params);
       }},
      {"cross-entropy",
       [&](std::mt19937_64 & rng, std::uint64_t) {
         std::uniform_int_distribution<int> cls(0, 3);
         std::vector<int> targets(5);
         for (auto & t : targets) t = cls(rng);
         return inputs_check(
           [targets](Tape &, const std::vector<Var> & v) { return ad::softmax_cross_entropy(v[0], targets); },
           {random_tensor({5, 4}, rng, 2.0)});
       }},
      {"l1",
       [&](std::mt19937_64 & rng, std::uint64_t) {
         const Tensor a = random_tensor({5, 3}, rng);
         Tensor diff = random_tensor({5, 3}, rng);
         avoid_kink(diff, 0.0, 1e-3);
         Tensor b = a;
         b.data += diff.data;
         return inputs_check([](Tape &, const std::vector<Var> & v) { return ad::l1_loss(v[0], v[1]); }, {a, b});
       }},
      {"hinge",
       [&](std::mt19937_64 & rng, std::uint64_t s) {
         Tensor x = random_tensor({8}, rng);
         avoid_kink(x, 0.3, 1e-3);
         return inputs_check(
           [s](Tape & t, const std::vector<Var> & v) { return project_to_scalar(t, ad::hinge(v[0], 0.3), s); }, {x});
       }},
    };
    for (const auto & [name, fn] : layers) {
      double worst = 0;
      for (int k = 0; k < seeds; ++k) {
        const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(k));
        std::mt19937_64 rng(s);
        worst = std::max(worst, fn(rng, s + 1));
      }
      checks.push_back(at_most(name + " max relative error", worst, 1e-5, std::to_string(seeds) + " seeds"));
    }
  });
}

SuiteResult hungarian(std::uint64_t seed, int trials, int n)
{
  return timed("hungarian", [&](std::vector<Check> & checks) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> real(0.0, 10.0);
    std::uniform_int_distribution<int> small(0, 4);
    int agree = 0;
    double worst_gap = 0;
    for (int trial = 0; trial < trials; ++trial) {
      Eigen::MatrixXd cost(n, n);
      // Every other matrix has small integer entries, where optimal ties are common.
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) cost(i, j) = trial % 2 == 0 ? real(rng) : small(rng);
      }
      std::vector<int> perm(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      std::vector<int> best = perm;
      double best_cost = assignment_cost(cost, perm);
      while (std::next_permutation(perm.begin(), perm.end())) {
        const double c = assignment_cost(cost, perm);
        if (c < best_cost - 1e-12) {
          best_cost = c;
          best = perm;
        }
      }
      const std::vector<int> got = sonoloc::hungarian(cost);
      worst_gap = std::max(worst_gap, std::abs(assignment_cost(cost, got) - best_cost));
      if (got == best) ++agree;
    }
    checks.push_back(exact("assignments equal to brute force", agree, trials,
                           std::to_string(agree) + "/" + std::to_string(trials)));
    checks.push_back(upper("optimal cost gap", worst_gap, 1e-9));
  });
}

SuiteResult zero_loss()
{
  return timed("zero-loss", [&](std::vector<Check> & checks) {
    AcousticScene scene;
    scene.surfaces = {default_wall()};
    scene.sources = {
      {Vec3(-1.0, 0.5, 0), 0, 1},
      {Vec3(0.8, -0.6, 0), 1, 2},
      {Vec3(0.2, 0.9, 0), 2, 3},
    };
    const int num_classes = 3;
    const Camera K{128, 128, 128, 128, 256, 256};
    const std::vector<Pose> poses = {
      look_at<double>(Vec3(0, 0, -3), Vec3::Zero(), Vec3::UnitY()),
      look_at<double>(Vec3(-0.6, 0.3, -2.9), Vec3(0.1, 0, 0), Vec3::UnitY()),
      look_at<double>(Vec3(0.7, -0.4, -3.1), Vec3(-0.1, 0.1, 0), Vec3::UnitY()),
    };
    std::vector<DepthView> views;
    for (const auto & p : poses) views.push_back({p, K, render_depth(scene, p, K)});
    const auto targets = view_targets(scene, poses);

    // Six queries per view: the sources in reverse order, then three decoys far
    // behind the wall labelled no-source.
    const int q = 6;
    const double confident = 30.0;
    Tape tape;
    std::vector<ViewOutput> outputs;
    for (std::size_t v = 0; v < poses.size(); ++v) {
      Tensor pos({q, 3});
      Tensor logits({q, num_classes + 1});
      for (int r = 0; r < q; ++r) {
        if (r < 3) {
          const ViewTarget & t = targets[v][static_cast<std::size_t>(2 - r)];
          pos.matrix().row(r) = t.position.transpose();
          logits.matrix()(r, t.class_id) = confident;
        } else {
          pos.matrix().row(r) = Eigen::RowVector3d(r, -r, 50.0 + r);
          logits.matrix()(r, num_classes) = confident;
        }
      }
      DecodedPredictions d{tape.leaf(pos), tape.leaf(logits)};
      outputs.push_back({d, d});
    }
    LossConfig cfg;
    const LossBreakdown loss = total_loss(tape, outputs, targets, views, cfg);

    double centroid = 0;
    for (std::size_t v = 0; v < poses.size(); ++v) {
      for (const auto & t : targets[v]) {
        const auto c = depth_centroid(t.position, v, views);
        centroid = std::max(centroid, c ? (*c - t.position).norm() : 1e9);
      }
    }
    checks.push_back(upper("position term", loss.l_bm_position, 1e-9));
    checks.push_back(upper("crossview term", loss.l_crossview, 1e-9));
    checks.push_back(exact("depth term", loss.l_depth, 0.0));
    checks.push_back(upper("depth centroid distance to source (m)", centroid, 0.05, "sigma = 0.3 m"));
    checks.push_back(upper("classification term", loss.l_bm_class, 1e-9, "logit margin 30"));
  });
}

SuiteResult eval()
{
  return timed("eval", [&](std::vector<Check> & checks) {
    const std::vector<LabelledSource> gt = {{Vec3(-1, 0, 3), 0}, {Vec3(1, 0, 3), 0}};
    const std::vector<Detection> offset = {{Vec3(-1, 0.6, 3), 0, 0.9}, {Vec3(1, 0.6, 3), 0, 0.8}};
    const ViewEvaluation view = evaluate_view(offset, gt, 1);
    const auto & c = view.counts[0];
    checks.push_back(exact("TP at 0.5 m", static_cast<double>(c[0].tp), 0));
    checks.push_back(exact("FP at 0.5 m", static_cast<double>(c[0].fp), 2));
    checks.push_back(exact("TP at 0.8 m", static_cast<double>(c[1].tp), 2));
    checks.push_back(exact("TP at 1.2 m", static_cast<double>(c[2].tp), 2));
    const MetricsReport offset_report = aggregate({view});
    checks.push_back(upper("ALE deviation from 0.6 m", std::abs(offset_report.mALE - 0.6), 1e-12));

    std::vector<Detection> perfect;
    for (const auto & s : gt) perfect.push_back({s.position, s.class_id, 1.0});
    const MetricsReport r = aggregate({evaluate_view(perfect, gt, 1)});
    checks.push_back(exact("perfect mAP", r.mAP, 1.0));
    checks.push_back(exact("perfect mAR", r.mAR, 1.0));
    checks.push_back(exact("perfect mALE", r.mALE, 0.0));
  });
}

const std::vector<std::string> & suite_names()
{
  static const std::vector<std::string> names = {"geometry", "dsp", "grad", "hungarian", "zero-loss", "eval"};
  return names;
}

SuiteResult run(const std::string & name)
{
  if (name == "geometry") return geometry();
  if (name == "dsp") return dsp();
  if (name == "grad") return grad();
  if (name == "hungarian") return hungarian();
  if (name == "zero-loss") return zero_loss();
  if (name == "eval") return eval();
  throw std::invalid_argument("unknown oracle suite '" + name + "'");
}

std::string format(const SuiteResult & result)
{
  std::ostringstream os;
  char head[160];
  std::snprintf(head, sizeof head, "%s: %s (%.2f s)\n", result.suite.c_str(), result.passed() ? "PASS" : "FAIL",
                result.seconds);
  os << head;
  for (const auto & c : result.checks) {
    char line[320];
    std::snprintf(line, sizeof line, "  [%s] %s = %.6g (bound %.6g)%s%s\n", c.passed ? "ok" : "FAIL", c.name.c_str(),
                  c.measured, c.bound, c.note.empty() ? "" : "; ", c.note.c_str());
    os << line;
  }
  return os.str();
}

}  // namespace sonoloc::oracle
