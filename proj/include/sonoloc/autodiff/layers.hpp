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

#ifndef SONOLOC__AUTODIFF__LAYERS_HPP_
#define SONOLOC__AUTODIFF__LAYERS_HPP_

#include "sonoloc/autodiff/ops.hpp"
#include "sonoloc/autodiff/params.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace sonoloc::ad
{

struct LinearLayer
{
  Parameter * weight = nullptr;
  Parameter * bias = nullptr;  // optional

  static LinearLayer create(
    ParameterStore & store, const std::string & name, int in, int out, std::mt19937_64 & rng, bool with_bias = true);
  Var operator()(Tape & tape, const Var & x) const;
};

struct Conv2dLayer
{
  Parameter * weight = nullptr;
  Parameter * bias = nullptr;
  int stride = 2;
  int pad = 1;

  static Conv2dLayer create(
    ParameterStore & store, const std::string & name, int in, int out, int kernel, std::mt19937_64 & rng);
  Var operator()(Tape & tape, const Var & x) const;
};

/// Affine normalisation parameters shared by batch and layer norm.
struct NormLayer
{
  Parameter * gamma = nullptr;
  Parameter * beta = nullptr;

  static NormLayer create(ParameterStore & store, const std::string & name, int features);
  Var batch(Tape & tape, const Var & x) const;
  Var layer(Tape & tape, const Var & x) const;
};

/// Post-norm encoder layer without dropout or positional encoding:
/// y = LN(x + MHSA(x)), out = LN(y + FFN(y)). The key projection has no bias;
/// softmax is invariant to it.
struct TransformerEncoderLayer
{
  int heads = 1;
  LinearLayer query, key, value, output;
  LinearLayer ffn_in, ffn_out;
  NormLayer norm1, norm2;

  static TransformerEncoderLayer create(
    ParameterStore & store, const std::string & name, int dim, int heads, int ffn_dim, std::mt19937_64 & rng);
  Var operator()(Tape & tape, const Var & x) const;
};

Var multi_head_self_attention(
  Tape & tape, const Var & x, const LinearLayer & query, const LinearLayer & key, const LinearLayer & value,
  const LinearLayer & output, int heads);

using ScalarFunction = std::function<Var(Tape &, const std::vector<Var> &)>;

/// Relative error |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|) with central differences.
inline double relative_error(double analytic, double numeric)
{
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

struct GradCheckReport
{
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of `f` at `inputs` with five-point central differences
/// of step h over every input element.
GradCheckReport grad_check(const ScalarFunction & f, const std::vector<Tensor> & inputs, double h = 1e-4);

/// Same, perturbing every parameter of `store` instead; `f` builds its graph from tape.param().
GradCheckReport grad_check_params(
  const std::function<Var(Tape &)> & f, ParameterStore & store, double h = 1e-4);

}  // namespace sonoloc::ad

#endif  // SONOLOC__AUTODIFF__LAYERS_HPP_
