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

#ifndef SONOLOC__AUTODIFF__OPS_HPP_
#define SONOLOC__AUTODIFF__OPS_HPP_

#include "sonoloc/autodiff/tape.hpp"

#include <Eigen/Core>

#include <vector>

namespace sonoloc::ad
{

// Elementwise, equal shapes.
Var add(const Var & a, const Var & b);
Var sub(const Var & a, const Var & b);
Var mul(const Var & a, const Var & b);
Var scale(const Var & a, double s);
Var relu(const Var & a);
/// max(x - sigma, 0).
Var hinge(const Var & x, double sigma);

Var reshape(const Var & a, Shape shape);
Var transpose(const Var & a);
/// (n x k) * (k x m).
Var matmul(const Var & a, const Var & b);
/// (n x k) * (m x k)^T.
Var matmul_nt(const Var & a, const Var & b);

/// x: n x d_in, w: d_out x d_in, b: d_out -> n x d_out.
Var linear(const Var & x, const Var & w, const Var & b);

/// x: C_in x H x W, w: C_out x C_in x k x k, b: C_out. Zero padding.
Var conv2d(const Var & x, const Var & w, const Var & b, int stride = 2, int pad = 1);

/// Normalises each column over the n rows with biased batch variance; needs n >= 2.
Var batchnorm1d(const Var & x, const Var & gamma, const Var & beta, double eps = 1e-5);
/// Normalises each row over its d features.
Var layernorm(const Var & x, const Var & gamma, const Var & beta, double eps = 1e-5);
Var softmax_rows(const Var & x);

Var slice_cols(const Var & x, int start, int count);
Var concat_cols(const std::vector<Var> & parts);
Var gather_rows(const Var & x, const std::vector<int> & rows);

Var sum(const Var & x);
Var mean(const Var & x);
/// Euclidean norm of each row, n x 1; the gradient at a zero row is zero.
Var row_norms(const Var & x);
/// Rows mapped by p -> R p + t; x: n x 3.
Var rigid_rows(const Var & x, const Eigen::Matrix3d & R, const Eigen::Vector3d & t);

/// Mean over rows of the softmax cross-entropy against integer targets.
Var softmax_cross_entropy(const Var & logits, const std::vector<int> & targets);
/// Sum of absolute differences divided by the row count.
Var l1_loss(const Var & a, const Var & b);

/// Row-wise softmax of a plain matrix.
RowMatrix softmax(const Eigen::Ref<const RowMatrix> & logits);

}  // namespace sonoloc::ad

#endif  // SONOLOC__AUTODIFF__OPS_HPP_
