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

#include "sonoloc/autodiff/ops.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace sonoloc::ad
{

namespace
{

void require(bool ok, const std::string & what)
{
  if (!ok) throw std::invalid_argument("autodiff: " + what);
}

void require_same_shape(const Var & a, const Var & b, const char * op)
{
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void require_rank2(const Var & a, const char * op)
{
  require(a.shape().size() == 2, std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

Tape & tape_of(const Var & a) { return a.tape(); }

ConstMatrixMap as_matrix(const Eigen::VectorXd & g, Eigen::Index rows, Eigen::Index cols)
{
  return {g.data(), rows, cols};
}

Eigen::Map<const Eigen::VectorXd> flat(const RowMatrix & m) { return {m.data(), m.size()}; }

}  // namespace

RowMatrix softmax(const Eigen::Ref<const RowMatrix> & logits)
{
  RowMatrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Var add(const Var & a, const Var & b)
{
  require_same_shape(a, b, "add");
  Tensor out(a.shape(), a.value().data + b.value().data);
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape & t, const Eigen::VectorXd & g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var & a, const Var & b)
{
  require_same_shape(a, b, "sub");
  Tensor out(a.shape(), a.value().data - b.value().data);
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape & t, const Eigen::VectorXd & g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(const Var & a, const Var & b)
{
  require_same_shape(a, b, "mul");
  Tensor out(a.shape(), a.value().data.cwiseProduct(b.value().data));
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape & t, const Eigen::VectorXd & g) {
    t.accumulate(a, g.cwiseProduct(b.value().data));
    t.accumulate(b, g.cwiseProduct(a.value().data));
  });
}

Var scale(const Var & a, double s)
{
  Tensor out(a.shape(), a.value().data * s);
  return tape_of(a).record(std::move(out), {a}, [a, s](Tape & t, const Eigen::VectorXd & g) {
    t.accumulate(a, g * s);
  });
}

Var relu(const Var & a)
{
  Tensor out(a.shape(), a.value().data.cwiseMax(0.0));
  return tape_of(a).record(std::move(out), {a}, [a](Tape & t, const Eigen::VectorXd & g) {
    const auto & x = a.value().data;
    t.accumulate(a, (x.array() > 0).select(g, 0.0));
  });
}

Var hinge(const Var & x, double sigma)
{
  Tensor out(x.shape(), (x.value().data.array() - sigma).max(0.0).matrix());
  return tape_of(x).record(std::move(out), {x}, [x, sigma](Tape & t, const Eigen::VectorXd & g) {
    t.accumulate(x, (x.value().data.array() - sigma > 0).select(g, 0.0));
  });
}

Var reshape(const Var & a, Shape shape)
{
  require(shape_size(shape) == a.value().size(),
          "reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  Tensor out(std::move(shape), a.value().data);
  return tape_of(a).record(std::move(out), {a}, [a](Tape & t, const Eigen::VectorXd & g) { t.accumulate(a, g); });
}

Var transpose(const Var & a)
{
  require_rank2(a, "transpose");
  const int r = a.shape()[0];
  const int c = a.shape()[1];
  Tensor out({c, r});
  out.matrix() = a.value().matrix().transpose();
  return tape_of(a).record(std::move(out), {a}, [a, r, c](Tape & t, const Eigen::VectorXd & g) {
    const RowMatrix gt = as_matrix(g, c, r).transpose();
    t.accumulate(a, flat(gt));
  });
}

Var matmul(const Var & a, const Var & b)
{
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  require(a.shape()[1] == b.shape()[0], "matmul: inner dimensions " + shape_string(a.shape()) + " x " +
                                          shape_string(b.shape()));
  const int n = a.shape()[0];
  const int m = b.shape()[1];
  Tensor out({n, m});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  return tape_of(a).record(std::move(out), {a, b}, [a, b, n, m](Tape & t, const Eigen::VectorXd & g) {
    const auto G = as_matrix(g, n, m);
    if (a.requires_grad()) {
      const RowMatrix ga = G * b.value().matrix().transpose();
      t.accumulate(a, flat(ga));
    }
    if (b.requires_grad()) {
      const RowMatrix gb = a.value().matrix().transpose() * G;
      t.accumulate(b, flat(gb));
    }
  });
}

Var matmul_nt(const Var & a, const Var & b)
{
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  require(a.shape()[1] == b.shape()[1], "matmul_nt: inner dimensions " + shape_string(a.shape()) + " x " +
                                          shape_string(b.shape()) + "^T");
  const int n = a.shape()[0];
  const int m = b.shape()[0];
  Tensor out({n, m});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix().transpose();
  return tape_of(a).record(std::move(out), {a, b}, [a, b, n, m](Tape & t, const Eigen::VectorXd & g) {
    const auto G = as_matrix(g, n, m);
    if (a.requires_grad()) {
      const RowMatrix ga = G * b.value().matrix();
      t.accumulate(a, flat(ga));
    }
    if (b.requires_grad()) {
      const RowMatrix gb = G.transpose() * a.value().matrix();
      t.accumulate(b, flat(gb));
    }
  });
}

Var linear(const Var & x, const Var & w, const Var & b)
{
  require_rank2(x, "linear");
  require_rank2(w, "linear");
  require(w.shape()[1] == x.shape()[1], "linear: input width " + shape_string(x.shape()) + " vs weight " +
                                          shape_string(w.shape()));
  require(b.value().size() == w.shape()[0], "linear: bias length");
  const int n = x.shape()[0];
  const int d_out = w.shape()[0];
  Tensor out({n, d_out});
  out.matrix().noalias() = x.value().matrix() * w.value().matrix().transpose();
  out.matrix().rowwise() += b.value().data.transpose();
  return tape_of(x).record(std::move(out), {x, w, b}, [x, w, b, n, d_out](Tape & t, const Eigen::VectorXd & g) {
    const auto G = as_matrix(g, n, d_out);
    if (x.requires_grad()) {
      const RowMatrix gx = G * w.value().matrix();
      t.accumulate(x, flat(gx));
    }
    if (w.requires_grad()) {
      const RowMatrix gw = G.transpose() * x.value().matrix();
      t.accumulate(w, flat(gw));
    }
    if (b.requires_grad()) t.accumulate(b, G.colwise().sum().transpose());
  });
}

Var conv2d(const Var & x, const Var & w, const Var & b, int stride, int pad)
{
  require(x.shape().size() == 3, "conv2d: input must be C x H x W, got " + shape_string(x.shape()));
  require(w.shape().size() == 4, "conv2d: weight must be C_out x C_in x k x k, got " + shape_string(w.shape()));
  const int c_in = x.shape()[0];
  const int h = x.shape()[1];
  const int wd = x.shape()[2];
  const int c_out = w.shape()[0];
  const int k = w.shape()[2];
  require(w.shape()[1] == c_in, "conv2d: channel mismatch " + shape_string(x.shape()) + " vs " +
                                  shape_string(w.shape()));
  require(w.shape()[3] == k, "conv2d: kernel must be square");
  require(b.value().size() == c_out, "conv2d: bias length");
  require(stride >= 1 && pad >= 0, "conv2d: stride/pad");
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  require(ho >= 1 && wo >= 1, "conv2d: input smaller than kernel");

  // im2col: (c_in k k) x (ho wo)
  const Eigen::Index patch = static_cast<Eigen::Index>(c_in) * k * k;
  const Eigen::Index cells = static_cast<Eigen::Index>(ho) * wo;
  auto cols = std::make_shared<RowMatrix>(RowMatrix::Zero(patch, cells));
  const double * xv = x.value().data.data();
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        double * dst = cols->row(row).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= wd) continue;
            dst[oy * wo + ox] = xv[(static_cast<Eigen::Index>(c) * h + iy) * wd + ix];
          }
        }
      }
    }
  }

  const ConstMatrixMap wmat(w.value().data.data(), c_out, patch);
  Tensor out({c_out, ho, wo});
  MatrixMap omat(out.data.data(), c_out, cells);
  omat.noalias() = wmat * *cols;
  omat.colwise() += b.value().data;

  return tape_of(x).record(
    std::move(out), {x, w, b},
    [x, w, b, cols, c_in, h, wd, c_out, k, ho, wo, stride, pad, patch, cells](Tape & t, const Eigen::VectorXd & g) {
      const ConstMatrixMap G(g.data(), c_out, cells);
      const ConstMatrixMap wm(w.value().data.data(), c_out, patch);
      if (w.requires_grad()) {
        const RowMatrix gw = G * cols->transpose();
        t.accumulate(w, flat(gw));
      }
      if (b.requires_grad()) t.accumulate(b, G.rowwise().sum());
      if (x.requires_grad()) {
        const RowMatrix gcols = wm.transpose() * G;
        Eigen::VectorXd gx = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c_in) * h * wd);
        for (int c = 0; c < c_in; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
              const double * src = gcols.row(row).data();
              for (int oy = 0; oy < ho; ++oy) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= h) continue;
                for (int ox = 0; ox < wo; ++ox) {
                  const int ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= wd) continue;
                  gx[(static_cast<Eigen::Index>(c) * h + iy) * wd + ix] += src[oy * wo + ox];
                }
              }
            }
          }
        }
        t.accumulate(x, gx);
      }
    });
}

Var batchnorm1d(const Var & x, const Var & gamma, const Var & beta, double eps)
{
  require_rank2(x, "batchnorm1d");
  const int n = x.shape()[0];
  const int d = x.shape()[1];
  require(n >= 2, "batchnorm1d: batch of one has zero variance");
  require(gamma.value().size() == d && beta.value().size() == d, "batchnorm1d: affine length");

  const auto X = x.value().matrix();
  const Eigen::RowVectorXd mu = X.colwise().mean();
  const RowMatrix centered = X.rowwise() - mu;
  const Eigen::RowVectorXd var = centered.cwiseAbs2().colwise().mean();
  const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt().matrix();
  auto xhat = std::make_shared<RowMatrix>(centered * inv_std.asDiagonal());

  Tensor out({n, d});
  out.matrix() = (*xhat) * gamma.value().data.asDiagonal();
  out.matrix().rowwise() += beta.value().data.transpose();

  return tape_of(x).record(
    std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, n, d](Tape & t, const Eigen::VectorXd & g) {
      const ConstMatrixMap G(g.data(), n, d);
      if (gamma.requires_grad()) t.accumulate(gamma, G.cwiseProduct(*xhat).colwise().sum().transpose());
      if (beta.requires_grad()) t.accumulate(beta, G.colwise().sum().transpose());
      if (x.requires_grad()) {
        const RowMatrix dxhat = G * gamma.value().data.asDiagonal();
        const Eigen::RowVectorXd s1 = dxhat.colwise().sum();
        const Eigen::RowVectorXd s2 = dxhat.cwiseProduct(*xhat).colwise().sum();
        RowMatrix gx = (n * dxhat).rowwise() - s1;
        gx -= (*xhat) * s2.asDiagonal();
        gx = gx * (inv_std / n).asDiagonal();
        t.accumulate(x, flat(gx));
      }
    });
}

Var layernorm(const Var & x, const Var & gamma, const Var & beta, double eps)
{
  require_rank2(x, "layernorm");
  const int n = x.shape()[0];
  const int d = x.shape()[1];
  require(gamma.value().size() == d && beta.value().size() == d, "layernorm: affine length");

  const auto X = x.value().matrix();
  const Eigen::VectorXd mu = X.rowwise().mean();
  const RowMatrix centered = X.colwise() - mu;
  const Eigen::VectorXd var = centered.cwiseAbs2().rowwise().mean();
  const Eigen::VectorXd inv_std = (var.array() + eps).rsqrt().matrix();
  auto xhat = std::make_shared<RowMatrix>(inv_std.asDiagonal() * centered);

  Tensor out({n, d});
  out.matrix() = (*xhat) * gamma.value().data.asDiagonal();
  out.matrix().rowwise() += beta.value().data.transpose();

  return tape_of(x).record(
    std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, n, d](Tape & t, const Eigen::VectorXd & g) {
      const ConstMatrixMap G(g.data(), n, d);
      if (gamma.requires_grad()) t.accumulate(gamma, G.cwiseProduct(*xhat).colwise().sum().transpose());
      if (beta.requires_grad()) t.accumulate(beta, G.colwise().sum().transpose());
      if (x.requires_grad()) {
        const RowMatrix dxhat = G * gamma.value().data.asDiagonal();
        const Eigen::VectorXd s1 = dxhat.rowwise().sum();
        const Eigen::VectorXd s2 = dxhat.cwiseProduct(*xhat).rowwise().sum();
        RowMatrix gx = (d * dxhat).colwise() - s1;
        gx -= s2.asDiagonal() * (*xhat);
        gx = (inv_std / d).asDiagonal() * gx;
        t.accumulate(x, flat(gx));
      }
    });
}

Var softmax_rows(const Var & x)
{
  require_rank2(x, "softmax_rows");
  const int n = x.shape()[0];
  const int d = x.shape()[1];
  Tensor out({n, d});
  out.matrix() = softmax(x.value().matrix());
  auto y = std::make_shared<RowMatrix>(out.matrix());
  return tape_of(x).record(std::move(out), {x}, [x, y, n, d](Tape & t, const Eigen::VectorXd & g) {
    const ConstMatrixMap G(g.data(), n, d);
    const Eigen::VectorXd dots = G.cwiseProduct(*y).rowwise().sum();
    const RowMatrix gx = y->cwiseProduct(G.colwise() - dots);
    t.accumulate(x, flat(gx));
  });
}

Var slice_cols(const Var & x, int start, int count)
{
  require_rank2(x, "slice_cols");
  const int n = x.shape()[0];
  const int d = x.shape()[1];
  require(start >= 0 && count >= 1 && start + count <= d, "slice_cols: range outside " + shape_string(x.shape()));
  Tensor out({n, count});
  out.matrix() = x.value().matrix().middleCols(start, count);
  return tape_of(x).record(std::move(out), {x}, [x, start, count, n, d](Tape & t, const Eigen::VectorXd & g) {
    RowMatrix gx = RowMatrix::Zero(n, d);
    gx.middleCols(start, count) = as_matrix(g, n, count);
    t.accumulate(x, flat(gx));
  });
}

Var concat_cols(const std::vector<Var> & parts)
{
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  const int n = parts.front().shape().at(0);
  int total = 0;
  for (const auto & p : parts) {
    require_rank2(p, "concat_cols");
    require(p.shape()[0] == n, "concat_cols: row counts differ");
    total += p.shape()[1];
  }
  Tensor out({n, total});
  int offset = 0;
  for (const auto & p : parts) {
    out.matrix().middleCols(offset, p.shape()[1]) = p.value().matrix();
    offset += p.shape()[1];
  }
  return tape_of(parts.front()).record(std::move(out), parts, [parts, n, total](Tape & t, const Eigen::VectorXd & g) {
    const auto G = as_matrix(g, n, total);
    int off = 0;
    for (const auto & p : parts) {
      const int w = p.shape()[1];
      const RowMatrix gp = G.middleCols(off, w);
      t.accumulate(p, flat(gp));
      off += w;
    }
  });
}

Var gather_rows(const Var & x, const std::vector<int> & rows)
{
  require_rank2(x, "gather_rows");
  const int n = x.shape()[0];
  const int d = x.shape()[1];
  for (int r : rows) require(r >= 0 && r < n, "gather_rows: index out of range");
  const int m = static_cast<int>(rows.size());
  Tensor out({m, d});
  for (int i = 0; i < m; ++i) out.matrix().row(i) = x.value().matrix().row(rows[i]);
  return tape_of(x).record(std::move(out), {x}, [x, rows, n, d, m](Tape & t, const Eigen::VectorXd & g) {
    const auto G = as_matrix(g, m, d);
    RowMatrix gx = RowMatrix::Zero(n, d);
    for (int i = 0; i < m; ++i) gx.row(rows[i]) += G.row(i);
    t.accumulate(x, flat(gx));
  });
}

Var sum(const Var & x)
{
  Tensor out = Tensor::scalar(x.value().data.sum());
  const Eigen::Index size = x.value().size();
  return tape_of(x).record(std::move(out), {x}, [x, size](Tape & t, const Eigen::VectorXd & g) {
    t.accumulate(x, Eigen::VectorXd::Constant(size, g[0]));
  });
}

Var mean(const Var & x)
{
  require(x.value().size() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var row_norms(const Var & x)
{
  require_rank2(x, "row_norms");
  const int n = x.shape()[0];
  const int d = x.shape()[1];
  Tensor out({n, 1});
  out.data = x.value().matrix().rowwise().norm();
  const Eigen::VectorXd norms = out.data;
  return tape_of(x).record(std::move(out), {x}, [x, norms, n, d](Tape & t, const Eigen::VectorXd & g) {
    RowMatrix gx = RowMatrix::Zero(n, d);
    for (int r = 0; r < n; ++r) {
      if (norms[r] > 0) gx.row(r) = x.value().matrix().row(r) * (g[r] / norms[r]);
    }
    t.accumulate(x, flat(gx));
  });
}

Var rigid_rows(const Var & x, const Eigen::Matrix3d & R, const Eigen::Vector3d & tr)
{
  require(x.shape().size() == 2 && x.shape()[1] == 3, "rigid_rows: expected n x 3, got " + shape_string(x.shape()));
  const int n = x.shape()[0];
  Tensor out({n, 3});
  out.matrix().noalias() = x.value().matrix() * R.transpose();
  out.matrix().rowwise() += tr.transpose();
  return tape_of(x).record(std::move(out), {x}, [x, R, n](Tape & t, const Eigen::VectorXd & g) {
    const RowMatrix gx = as_matrix(g, n, 3) * R;
    t.accumulate(x, flat(gx));
  });
}

Var softmax_cross_entropy(const Var & logits, const std::vector<int> & targets)
{
  require_rank2(logits, "softmax_cross_entropy");
  const int n = logits.shape()[0];
  const int c = logits.shape()[1];
  require(static_cast<int>(targets.size()) == n, "softmax_cross_entropy: one target per row");
  for (int tg : targets) require(tg >= 0 && tg < c, "softmax_cross_entropy: target out of range");

  const auto Z = logits.value().matrix();
  auto probs = std::make_shared<RowMatrix>(softmax(Z));
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const double mx = Z.row(r).maxCoeff();
    const double lse = mx + std::log((Z.row(r).array() - mx).exp().sum());
    loss += lse - Z(r, targets[r]);
  }
  loss /= n;
  return tape_of(logits).record(
    Tensor::scalar(loss), {logits}, [logits, probs, targets, n, c](Tape & t, const Eigen::VectorXd & g) {
      RowMatrix gz = *probs;
      for (int r = 0; r < n; ++r) gz(r, targets[r]) -= 1.0;
      gz *= g[0] / n;
      t.accumulate(logits, flat(gz));
    });
}

Var l1_loss(const Var & a, const Var & b)
{
  require_same_shape(a, b, "l1_loss");
  require(!a.shape().empty() && a.shape()[0] > 0, "l1_loss: empty input");
  const double rows = a.shape()[0];
  const Eigen::VectorXd diff = a.value().data - b.value().data;
  Tensor out = Tensor::scalar(diff.cwiseAbs().sum() / rows);
  return tape_of(a).record(std::move(out), {a, b}, [a, b, diff, rows](Tape & t, const Eigen::VectorXd & g) {
    const Eigen::VectorXd s = diff.unaryExpr([](double v) { return double((v > 0) - (v < 0)); }) * (g[0] / rows);
    t.accumulate(a, s);
    t.accumulate(b, -s);
  });
}

}  // namespace sonoloc::ad
