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

#include "sonoloc/autodiff/layers.hpp"
#include "sonoloc/autodiff/ops.hpp"
#include "sonoloc/autodiff/params.hpp"
#include "sonoloc/autodiff/tape.hpp"

#include "doctest.h"

#include <Eigen/Geometry>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

using namespace sonoloc::ad;

namespace
{
Tensor random_tensor(Shape shape, std::mt19937_64 & rng, double scale = 1.0)
{
  std::normal_distribution<double> g(0.0, scale);
  Tensor t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = g(rng);
  return t;
}

// Contracts an op output against fixed random weights so every element reaches the loss.
Var project_to_scalar(Tape & tape, const Var & y, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
}
}  // namespace

TEST_CASE("sum of squares has gradient 2x")
{
  Tape tape;
  const Tensor x({3}, Eigen::Vector3d(1.0, -2.0, 0.5));
  const Var v = tape.leaf(x);
  tape.backward(sum(mul(v, v)));
  CHECK(tape.grad(v) == 2 * x.data);
}

TEST_CASE("elementary values")
{
  Tape tape;
  const Var x = tape.constant(Tensor({2}, Eigen::Vector2d(-2.0, 3.0)));
  CHECK(relu(x).value().data == Eigen::Vector2d(0.0, 3.0));
  CHECK(hinge(tape.constant(Tensor::scalar(0.5)), 0.3).value().item() == doctest::Approx(0.2));
  CHECK(hinge(tape.constant(Tensor::scalar(0.3)), 0.3).value().item() == 0.0);

  const Var logits = tape.constant(Tensor({2, 6}));
  CHECK(softmax_cross_entropy(logits, {0, 5}).value().item() == doctest::Approx(std::log(6.0)));
  const Var a = tape.constant(Tensor({2, 3}, Eigen::VectorXd::LinSpaced(6, 0, 1)));
  CHECK(l1_loss(a, a).value().item() == 0.0);
}

TEST_CASE("second backward without reset is an error")
{
  Tape tape;
  const Var x = tape.leaf(Tensor::scalar(2.0));
  const Var y = mul(x, x);
  tape.backward(y);
  CHECK_THROWS_AS(tape.backward(y), std::logic_error);
  tape.clear_grads();
  tape.backward(y);
  CHECK(tape.grad(x)[0] == doctest::Approx(4.0));
}

TEST_CASE("parameter gradients accumulate and disconnected ones stay zero")
{
  ParameterStore store;
  Parameter & used = store.add("used", Tensor({2}, Eigen::Vector2d(1.0, 2.0)));
  Parameter & unused = store.add("unused", Tensor({2}, Eigen::Vector2d(5.0, 6.0)));
  store.zero_grad();
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    const Var p = tape.param(used);
    tape.param(unused);
    tape.backward(sum(mul(p, p)));
  }
  CHECK(used.grad == Eigen::Vector2d(4.0, 8.0));
  CHECK(unused.grad.isZero());
}

TEST_CASE("non-finite forward values are rejected")
{
  Tape tape;
  const Var x = tape.constant(Tensor::scalar(1e308));
  CHECK_THROWS(scale(x, 1e10));
}

TEST_CASE("conv2d")
{
  std::mt19937_64 rng(1);
  Tape tape;
  const Tensor x = random_tensor({2, 5, 5}, rng);
  Tensor w({2, 2, 3, 3});
  for (int c = 0; c < 2; ++c) w.data[((c * 2 + c) * 3 + 1) * 3 + 1] = 1.0;
  const Var y = conv2d(tape.constant(x), tape.constant(w), tape.constant(Tensor({2})), 1, 1);
  CHECK(y.value().data == x.data);

  const Var big = conv2d(
    tape.constant(Tensor({10, 32, 32})), tape.constant(Tensor({32, 10, 3, 3})), tape.constant(Tensor({32})));
  CHECK(big.shape() == Shape{32, 16, 16});
  const Var odd = conv2d(
    tape.constant(Tensor({1, 5, 7})), tape.constant(Tensor({1, 1, 3, 3})), tape.constant(Tensor({1})));
  CHECK(odd.shape() == Shape{1, 3, 4});
  CHECK_THROWS_AS(
    conv2d(tape.constant(Tensor({3, 8, 8})), tape.constant(Tensor({4, 2, 3, 3})), tape.constant(Tensor({4}))),
    std::invalid_argument);
}

TEST_CASE("paper-sized first convolution")
{
  Tape tape;
  const Var y = conv2d(
    tape.constant(Tensor({10, 256, 256})), tape.constant(Tensor({32, 10, 3, 3})), tape.constant(Tensor({32})));
  CHECK(y.shape() == Shape{32, 128, 128});
}

TEST_CASE("batchnorm statistics and the single-row error")
{
  std::mt19937_64 rng(2);
  Tape tape;
  const Var x = tape.constant(random_tensor({16, 5}, rng, 10.0));
  Tensor ones({5});
  ones.data.setOnes();
  const Var y = batchnorm1d(x, tape.constant(ones), tape.constant(Tensor({5})));
  const RowMatrix m = y.value().matrix();
  for (Eigen::Index c = 0; c < 5; ++c) {
    const double mu = m.col(c).mean();
    CHECK(std::abs(mu) < 1e-9);
    CHECK(std::abs((m.col(c).array() - mu).square().mean() - 1.0) < 1e-6);
  }
  CHECK_THROWS_AS(
    batchnorm1d(tape.constant(Tensor({1, 5})), tape.constant(ones), tape.constant(Tensor({5}))),
    std::invalid_argument);
}

TEST_CASE("transformer layer")
{
  std::mt19937_64 rng(4);
  ParameterStore store;
  const auto layer = TransformerEncoderLayer::create(store, "mixer", 8, 2, 16, rng);
  const Tensor x = random_tensor({3, 8}, rng);

  SUBCASE("permutation equivariance")
  {
    const std::vector<int> perm = {2, 0, 1};
    Tape tape;
    const Var xs = tape.constant(x);
    const Var a = gather_rows(layer(tape, xs), perm);
    const Var b = layer(tape, gather_rows(xs, perm));
    CHECK((a.value().data - b.value().data).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("single token attention is the value-output chain")
  {
    Tape tape;
    const Var token = tape.constant(Tensor({1, 8}, x.data.head(8)));
    const Var attended = multi_head_self_attention(tape, token, layer.query, layer.key, layer.value, layer.output, 2);
    const Var chain = layer.output(tape, layer.value(tape, token));
    CHECK((attended.value().data - chain.value().data).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("gradients match finite differences")
  {
    const auto report = grad_check(
      [&](Tape & tape, const std::vector<Var> & in) { return project_to_scalar(tape, layer(tape, in[0]), 9); }, {x});
    CHECK(report.max_relative_error <= 1e-5);
    const auto params = grad_check_params(
      [&](Tape & tape) { return project_to_scalar(tape, layer(tape, tape.constant(x)), 9); }, store);
    CHECK(params.max_relative_error <= 1e-5);
  }

  CHECK_THROWS_AS(TransformerEncoderLayer::create(store, "bad", 8, 3, 16, rng), std::invalid_argument);
}

TEST_CASE("finite-difference checks for the plumbing ops")
{
  std::mt19937_64 rng(5);
  const Tensor a = random_tensor({4, 3}, rng);
  const Tensor b = random_tensor({3, 5}, rng);
  const Tensor c = random_tensor({6, 3}, rng);
  const Eigen::Matrix3d R = Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  const Eigen::Vector3d t(0.1, -0.2, 0.3);

  const std::vector<std::pair<const char *, ScalarFunction>> cases = {
    {"matmul", [](Tape & tp, const std::vector<Var> & v) { return project_to_scalar(tp, matmul(v[0], v[1]), 1); }},
    {"matmul_nt",
     [](Tape & tp, const std::vector<Var> & v) { return project_to_scalar(tp, matmul_nt(v[0], v[2]), 2); }},
    {"softmax_rows",
     [](Tape & tp, const std::vector<Var> & v) { return project_to_scalar(tp, softmax_rows(v[1]), 3); }},
    {"transpose+reshape",
     [](Tape & tp, const std::vector<Var> & v) {
       return project_to_scalar(tp, reshape(transpose(v[0]), {2, 6}), 4);
     }},
    {"slice+concat",
     [](Tape & tp, const std::vector<Var> & v) {
       return project_to_scalar(tp, concat_cols({slice_cols(v[1], 1, 2), slice_cols(v[1], 0, 1)}), 5);
     }},
    {"gather+sub",
     [](Tape & tp, const std::vector<Var> & v) {
       return project_to_scalar(tp, sub(gather_rows(v[2], {0, 2, 2, 5}), v[0]), 6);
     }},
    {"row_norms", [](Tape & tp, const std::vector<Var> & v) { return project_to_scalar(tp, row_norms(v[2]), 7); }},
    {"rigid_rows",
     [&](Tape & tp, const std::vector<Var> & v) { return project_to_scalar(tp, rigid_rows(v[2], R, t), 8); }},
    {"mean+scale", [](Tape &, const std::vector<Var> & v) { return scale(mean(mul(v[0], v[0])), 3.0); }},
  };
  for (const auto & [name, fn] : cases) {
    CAPTURE(name);
    CHECK(grad_check(fn, {a, b, c}).max_relative_error <= 1e-5);
  }
}

TEST_CASE("adamw")
{
  SUBCASE("zero gradient without decay leaves parameters alone")
  {
    ParameterStore store;
    Parameter & p = store.add("p", Tensor({3}, Eigen::Vector3d(1, 2, 3)));
    store.zero_grad();
    adamw_step(store, {1e-3, 0.9, 0.999, 1e-8, 0.0});
    CHECK(p.value.data == Eigen::Vector3d(1, 2, 3));
    CHECK(p.step == 1);
  }

  SUBCASE("first step moves each coordinate by about lr")
  {
    ParameterStore store;
    Parameter & p = store.add("p", Tensor({3}, Eigen::Vector3d(1, 2, 3)));
    p.grad = Eigen::Vector3d(0.5, -4.0, 1e-3);
    adamw_step(store, {1e-4, 0.9, 0.999, 1e-8, 0.0});
    const Eigen::Vector3d delta = p.value.data - Eigen::Vector3d(1, 2, 3);
    CHECK(delta[0] == doctest::Approx(-1e-4).epsilon(1e-4));
    CHECK(delta[1] == doctest::Approx(1e-4).epsilon(1e-4));
    CHECK(delta[2] == doctest::Approx(-1e-4).epsilon(1e-4));
  }

  SUBCASE("scalar quadratic converges")
  {
    ParameterStore store;
    Parameter & p = store.add("theta", Tensor::scalar(0.0));
    for (int i = 0; i < 2000; ++i) {
      store.zero_grad();
      Tape tape;
      const Var d = sub(tape.param(p), tape.constant(Tensor::scalar(3.0)));
      tape.backward(mul(d, d));
      adamw_step(store, {0.05, 0.9, 0.999, 1e-8, 0.0});
    }
    CHECK(std::abs(p.value.item() - 3.0) < 0.01);
  }
}

TEST_CASE("xavier initialisation bounds")
{
  std::mt19937_64 rng(6);
  ParameterStore store;
  const Parameter & w = store.add_xavier("w", {30, 20}, 20, 30, rng);
  const double a = std::sqrt(6.0 / 50.0);
  CHECK(w.value.data.cwiseAbs().maxCoeff() <= a);
  CHECK(w.value.data.cwiseAbs().maxCoeff() > 0.8 * a);
  CHECK_THROWS_AS(store.add("w", Tensor({1})), std::invalid_argument);
}

TEST_CASE("checkpoint round trip")
{
  std::mt19937_64 rng(7);
  ParameterStore a;
  a.add_xavier("w", {4, 3}, 3, 4, rng);
  a.add_constant("b", {4}, 0.5);
  for (auto & p : a.all()) {
    p.grad = Eigen::VectorXd::Ones(p.value.size());
  }
  adamw_step(a, {});

  const auto path = (std::filesystem::temp_directory_path() / "sonoloc_ckpt_test.bin").string();
  save_checkpoint(path, a, "{\"k\":2}");

  ParameterStore b;
  b.add("w", Tensor({4, 3}));
  b.add("b", Tensor({4}));
  CHECK(load_checkpoint(path, b) == "{\"k\":2}");
  CHECK(read_checkpoint_header(path) == "{\"k\":2}");
  for (const char * name : {"w", "b"}) {
    CHECK(a.at(name).value.data == b.at(name).value.data);
    CHECK(a.at(name).m == b.at(name).m);
    CHECK(a.at(name).v == b.at(name).v);
    CHECK(a.at(name).step == b.at(name).step);
  }

  ParameterStore wrong;
  wrong.add("w", Tensor({3, 4}));
  wrong.add("b", Tensor({4}));
  CHECK_THROWS(load_checkpoint(path, wrong));
  std::filesystem::remove(path);
}
