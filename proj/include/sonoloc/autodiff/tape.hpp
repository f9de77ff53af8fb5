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

#ifndef SONOLOC__AUTODIFF__TAPE_HPP_
#define SONOLOC__AUTODIFF__TAPE_HPP_

#include <Eigen/Core>

#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sonoloc::ad
{

using Shape = std::vector<int>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline Eigen::Index shape_size(const Shape & s)
{
  return std::accumulate(s.begin(), s.end(), Eigen::Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape & s);

/// Dense row-major tensor of doubles.
struct Tensor
{
  Shape shape;
  Eigen::VectorXd data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(Eigen::VectorXd::Zero(shape_size(shape))) {}
  Tensor(Shape s, Eigen::VectorXd values) : shape(std::move(s)), data(std::move(values))
  {
    if (data.size() != shape_size(shape)) throw std::invalid_argument("Tensor: value count does not match shape");
  }

  static Tensor from_matrix(const Eigen::Ref<const RowMatrix> & m);
  static Tensor scalar(double v) { return Tensor({1}, Eigen::VectorXd::Constant(1, v)); }

  Eigen::Index size() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }

  /// Views a rank-2 tensor (or any tensor reshaped to rows x cols) as a matrix.
  MatrixMap matrix() { return {data.data(), shape.at(0), static_cast<Eigen::Index>(size() / shape.at(0))}; }
  ConstMatrixMap matrix() const
  {
    return {data.data(), shape.at(0), static_cast<Eigen::Index>(size() / shape.at(0))};
  }
  double item() const
  {
    if (size() != 1) throw std::logic_error("Tensor::item on non-scalar");
    return data[0];
  }
};

struct Parameter;
class Tape;

/// Handle to a node recorded on a tape.
class Var
{
public:
  Var() = default;
  Var(Tape * tape, int id) : tape_(tape), id_(id) {}

  Tape & tape() const { return *tape_; }
  int id() const { return id_; }
  const Tensor & value() const;
  const Shape & shape() const { return value().shape; }
  bool requires_grad() const;

private:
  Tape * tape_ = nullptr;
  int id_ = -1;
};

/// Records operations in creation order, which is a topological order; backward
/// walks it in reverse and visits each node once.
class Tape
{
public:
  using Backward = std::function<void(Tape &, const Eigen::VectorXd & grad_out)>;

  Var constant(Tensor value);
  /// Leaf that receives a gradient; read it back with grad().
  Var leaf(Tensor value);
  /// Leaf bound to a parameter; backward() accumulates into Parameter::grad.
  Var param(Parameter & p);

  /// Records an op result. `backward` receives the node's output gradient and
  /// must push input gradients with accumulate().
  Var record(Tensor value, const std::vector<Var> & inputs, Backward backward);

  void backward(const Var & scalar_output);
  /// Allows another backward() on this tape; leaf gradients restart from zero.
  void clear_grads();

  void accumulate(const Var & v, const Eigen::Ref<const Eigen::VectorXd> & g);
  /// Gradient of the last backward() output with respect to `v` (zeros if unreached).
  Eigen::VectorXd grad(const Var & v) const;

  const Tensor & value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

private:
  struct Node
  {
    Tensor value;
    Eigen::VectorXd grad;
    bool requires_grad = false;
    Parameter * param = nullptr;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<const Parameter *, int>> param_leaves_;
  bool backward_done_ = false;
};

inline const Tensor & Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace sonoloc::ad

#endif  // SONOLOC__AUTODIFF__TAPE_HPP_
