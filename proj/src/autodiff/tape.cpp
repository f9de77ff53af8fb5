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

#include "sonoloc/autodiff/tape.hpp"

#include "sonoloc/autodiff/params.hpp"

#include <sstream>

namespace sonoloc::ad
{

std::string shape_string(const Shape & s)
{
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ']';
  return os.str();
}

Tensor Tensor::from_matrix(const Eigen::Ref<const RowMatrix> & m)
{
  Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  t.matrix() = m;
  return t;
}

Var Tape::constant(Tensor value)
{
  nodes_.push_back({std::move(value), {}, false, nullptr, {}});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value)
{
  nodes_.push_back({std::move(value), {}, true, nullptr, {}});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter & p)
{
  for (const auto & [ptr, id] : param_leaves_) {
    if (ptr == &p) return {this, id};
  }
  nodes_.push_back({p.value, {}, true, &p, {}});
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_leaves_.emplace_back(&p, id);
  return {this, id};
}

Var Tape::record(Tensor value, const std::vector<Var> & inputs, Backward backward)
{
  if (!value.data.allFinite()) throw std::runtime_error("autodiff: non-finite forward value");
  bool needs = false;
  for (const auto & in : inputs) {
    if (&in.tape() != this) throw std::logic_error("autodiff: input recorded on another tape");
    needs = needs || in.requires_grad();
  }
  nodes_.push_back({std::move(value), {}, needs, nullptr, needs ? std::move(backward) : Backward{}});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(const Var & v, const Eigen::Ref<const Eigen::VectorXd> & g)
{
  Node & n = nodes_.at(static_cast<std::size_t>(v.id()));
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var & scalar_output)
{
  if (backward_done_) throw std::logic_error("autodiff: backward already ran on this tape; call clear_grads() first");
  if (scalar_output.value().size() != 1) throw std::invalid_argument("autodiff: backward needs a scalar output");
  backward_done_ = true;
  const auto out = static_cast<std::size_t>(scalar_output.id());
  if (!nodes_[out].requires_grad) return;
  nodes_[out].grad = Eigen::VectorXd::Ones(1);
  for (std::size_t i = out + 1; i-- > 0;) {
    Node & n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
    } else if (n.param) {
      n.param->grad += n.grad;
    }
  }
}

void Tape::clear_grads()
{
  for (auto & n : nodes_) n.grad.resize(0);
  backward_done_ = false;
}

Eigen::VectorXd Tape::grad(const Var & v) const
{
  const Node & n = nodes_.at(static_cast<std::size_t>(v.id()));
  return n.grad.size() ? n.grad : Eigen::VectorXd::Zero(n.value.size());
}

}  // namespace sonoloc::ad
