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

#include <cmath>
#include <stdexcept>

namespace sonoloc::ad
{

LinearLayer LinearLayer::create(
  ParameterStore & store, const std::string & name, int in, int out, std::mt19937_64 & rng, bool with_bias)
{
  LinearLayer l;
  l.weight = &store.add_xavier(name + ".weight", {out, in}, in, out, rng);
  if (with_bias) l.bias = &store.add_constant(name + ".bias", {out}, 0.0);
  return l;
}

Var LinearLayer::operator()(Tape & tape, const Var & x) const
{
  if (bias == nullptr) return matmul_nt(x, tape.param(*weight));
  return linear(x, tape.param(*weight), tape.param(*bias));
}

Conv2dLayer Conv2dLayer::create(
  ParameterStore & store, const std::string & name, int in, int out, int kernel, std::mt19937_64 & rng)
{
  Conv2dLayer c;
  const int area = kernel * kernel;
  c.weight = &store.add_xavier(name + ".weight", {out, in, kernel, kernel}, in * area, out * area, rng);
  c.bias = &store.add_constant(name + ".bias", {out}, 0.0);
  return c;
}

Var Conv2dLayer::operator()(Tape & tape, const Var & x) const
{
  return conv2d(x, tape.param(*weight), tape.param(*bias), stride, pad);
}

NormLayer NormLayer::create(ParameterStore & store, const std::string & name, int features)
{
  NormLayer n;
  n.gamma = &store.add_constant(name + ".gamma", {features}, 1.0);
  n.beta = &store.add_constant(name + ".beta", {features}, 0.0);
  return n;
}

Var NormLayer::batch(Tape & tape, const Var & x) const
{
  return batchnorm1d(x, tape.param(*gamma), tape.param(*beta));
}

Var NormLayer::layer(Tape & tape, const Var & x) const
{
  return layernorm(x, tape.param(*gamma), tape.param(*beta));
}

Var multi_head_self_attention(
  Tape & tape, const Var & x, const LinearLayer & query, const LinearLayer & key, const LinearLayer & value,
  const LinearLayer & output, int heads)
{
  const int dim = x.shape().at(1);
  if (heads < 1 || dim % heads != 0) throw std::invalid_argument("attention: dim must be divisible by heads");
  const int head_dim = dim / heads;
  const Var q = query(tape, x);
  const Var k = key(tape, x);
  const Var v = value(tape, x);
  std::vector<Var> per_head;
  per_head.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Var qh = slice_cols(q, h * head_dim, head_dim);
    const Var kh = slice_cols(k, h * head_dim, head_dim);
    const Var vh = slice_cols(v, h * head_dim, head_dim);
    const Var weights = softmax_rows(scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(head_dim))));
    per_head.push_back(matmul(weights, vh));
  }
  return output(tape, heads == 1 ? per_head.front() : concat_cols(per_head));
}

TransformerEncoderLayer TransformerEncoderLayer::create(
  ParameterStore & store, const std::string & name, int dim, int heads, int ffn_dim, std::mt19937_64 & rng)
{
  if (heads < 1 || dim % heads != 0) throw std::invalid_argument("transformer: dim must be divisible by heads");
  TransformerEncoderLayer t;
  t.heads = heads;
  t.query = LinearLayer::create(store, name + ".attn.query", dim, dim, rng);
  t.key = LinearLayer::create(store, name + ".attn.key", dim, dim, rng, false);
  t.value = LinearLayer::create(store, name + ".attn.value", dim, dim, rng);
  t.output = LinearLayer::create(store, name + ".attn.output", dim, dim, rng);
  t.ffn_in = LinearLayer::create(store, name + ".ffn.in", dim, ffn_dim, rng);
  t.ffn_out = LinearLayer::create(store, name + ".ffn.out", ffn_dim, dim, rng);
  t.norm1 = NormLayer::create(store, name + ".norm1", dim);
  t.norm2 = NormLayer::create(store, name + ".norm2", dim);
  return t;
}

Var TransformerEncoderLayer::operator()(Tape & tape, const Var & x) const
{
  const Var attended = multi_head_self_attention(tape, x, query, key, value, output, heads);
  const Var y = norm1.layer(tape, add(x, attended));
  const Var ffn = ffn_out(tape, relu(ffn_in(tape, y)));
  return norm2.layer(tape, add(y, ffn));
}

namespace
{
// Five-point central stencil; its O(h^4) truncation lets h stay large enough
// that round-off does not swamp small gradients.
double central_difference(const std::function<double(double)> & f, double x0, double h)
{
  // Differences first, so a flat function gives exactly zero.
  const double near = f(x0 + h) - f(x0 - h);
  const double far = f(x0 + 2 * h) - f(x0 - 2 * h);
  return (8 * near - far) / (12 * h);
}
}  // namespace

GradCheckReport grad_check(const ScalarFunction & f, const std::vector<Tensor> & inputs, double h)
{
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto & in : inputs) leaves.push_back(tape.leaf(in));
  tape.backward(f(tape, leaves));

  const auto evaluate = [&](const std::vector<Tensor> & xs) {
    Tape t;
    std::vector<Var> vs;
    vs.reserve(xs.size());
    for (const auto & x : xs) vs.push_back(t.constant(x));
    return f(t, vs).value().item();
  };

  GradCheckReport report;
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Eigen::VectorXd analytic = tape.grad(leaves[i]);
    for (Eigen::Index j = 0; j < inputs[i].size(); ++j) {
      const double x0 = inputs[i].data[j];
      const double numeric = central_difference([&](double x) {
        probe[i].data[j] = x;
        return evaluate(probe);
      }, x0, h);
      probe[i].data[j] = x0;
      report.max_relative_error = std::max(report.max_relative_error, relative_error(analytic[j], numeric));
      ++report.checked;
    }
  }
  return report;
}

GradCheckReport grad_check_params(const std::function<Var(Tape &)> & f, ParameterStore & store, double h)
{
  store.zero_grad();
  {
    Tape tape;
    tape.backward(f(tape));
  }
  GradCheckReport report;
  for (auto & p : store.all()) {
    const Eigen::VectorXd analytic = p.grad;
    for (Eigen::Index j = 0; j < p.value.size(); ++j) {
      const double x0 = p.value.data[j];
      const double numeric = central_difference([&](double x) {
        p.value.data[j] = x;
        Tape tape;
        return f(tape).value().item();
      }, x0, h);
      p.value.data[j] = x0;
      report.max_relative_error = std::max(report.max_relative_error, relative_error(analytic[j], numeric));
      ++report.checked;
    }
  }
  store.zero_grad();
  return report;
}

}  // namespace sonoloc::ad
