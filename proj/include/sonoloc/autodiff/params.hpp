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

#ifndef SONOLOC__AUTODIFF__PARAMS_HPP_
#define SONOLOC__AUTODIFF__PARAMS_HPP_

#include "sonoloc/autodiff/tape.hpp"

#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <string>

namespace sonoloc::ad
{

struct Parameter
{
  std::string name;
  Tensor value;
  Eigen::VectorXd grad;
  // AdamW moments.
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;
};

/// Named parameters in insertion order. References stay valid while the store lives.
class ParameterStore
{
public:
  Parameter & add(const std::string & name, Tensor init);
  /// Xavier-uniform weights: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
  Parameter & add_xavier(const std::string & name, Shape shape, int fan_in, int fan_out, std::mt19937_64 & rng);
  Parameter & add_constant(const std::string & name, Shape shape, double value);

  Parameter & at(const std::string & name);
  const Parameter & at(const std::string & name) const;
  bool contains(const std::string & name) const { return index_.count(name) != 0; }

  std::deque<Parameter> & all() { return params_; }
  const std::deque<Parameter> & all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  Eigen::Index scalar_count() const;

  void zero_grad();

private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamWConfig
{
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// Decoupled weight decay Adam step on every parameter using its accumulated grad.
void adamw_step(ParameterStore & store, const AdamWConfig & cfg);

/// "SL3DCKPT", u32 version, u32 header length + header bytes (JSON), u32 record
/// count, then per parameter: u32 name length, name, u32 rank, u32 dims, f64
/// values, f64 m, f64 v, i64 step. Little-endian throughout.
void save_checkpoint(const std::string & path, const ParameterStore & store, const std::string & header_json);
/// Loads values and optimizer state into an existing store with matching names
/// and shapes; returns the header JSON.
std::string load_checkpoint(const std::string & path, ParameterStore & store);
/// Reads only the header JSON.
std::string read_checkpoint_header(const std::string & path);

}  // namespace sonoloc::ad

#endif  // SONOLOC__AUTODIFF__PARAMS_HPP_
