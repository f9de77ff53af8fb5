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

#include "sonoloc/autodiff/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sonoloc::ad
{

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

Parameter & ParameterStore::add(const std::string & name, Tensor init)
{
  if (contains(name)) throw std::invalid_argument("ParameterStore: duplicate parameter '" + name + "'");
  Parameter p;
  p.name = name;
  p.grad = Eigen::VectorXd::Zero(init.size());
  p.m = Eigen::VectorXd::Zero(init.size());
  p.v = Eigen::VectorXd::Zero(init.size());
  p.value = std::move(init);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter & ParameterStore::add_xavier(
  const std::string & name, Shape shape, int fan_in, int fan_out, std::mt19937_64 & rng)
{
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = dist(rng);
  return add(name, std::move(t));
}

Parameter & ParameterStore::add_constant(const std::string & name, Shape shape, double value)
{
  Tensor t(std::move(shape));
  t.data.setConstant(value);
  return add(name, std::move(t));
}

Parameter & ParameterStore::at(const std::string & name)
{
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParameterStore: unknown parameter '" + name + "'");
  return params_[it->second];
}

const Parameter & ParameterStore::at(const std::string & name) const
{
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParameterStore: unknown parameter '" + name + "'");
  return params_[it->second];
}

Eigen::Index ParameterStore::scalar_count() const
{
  Eigen::Index n = 0;
  for (const auto & p : params_) n += p.value.size();
  return n;
}

void ParameterStore::zero_grad()
{
  for (auto & p : params_) p.grad.setZero();
}

void adamw_step(ParameterStore & store, const AdamWConfig & cfg)
{
  for (auto & p : store.all()) {
    ++p.step;
    auto & theta = p.value.data;
    theta *= 1.0 - cfg.lr * cfg.weight_decay;
    p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * p.grad;
    p.v = cfg.beta2 * p.v + (1.0 - cfg.beta2) * p.grad.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    theta.array() -= cfg.lr * (p.m.array() / bc1) / ((p.v.array() / bc2).sqrt() + cfg.eps);
  }
}

namespace
{
constexpr char kMagic[8] = {'S', 'L', '3', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream & os, const T & v)
{
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
T get(std::istream & is)
{
  T v{};
  is.read(reinterpret_cast<char *>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void put_doubles(std::ostream & os, const Eigen::VectorXd & v)
{
  os.write(reinterpret_cast<const char *>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void get_doubles(std::istream & is, Eigen::VectorXd & v)
{
  is.read(reinterpret_cast<char *>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
}

std::string get_string(std::istream & is)
{
  const auto len = get<std::uint32_t>(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

std::string read_header(std::istream & is)
{
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("checkpoint: bad magic");
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  return get_string(is);
}
}  // namespace

void save_checkpoint(const std::string & path, const ParameterStore & store, const std::string & header_json)
{
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kMagic, 8);
  put(os, kVersion);
  put(os, static_cast<std::uint32_t>(header_json.size()));
  os.write(header_json.data(), static_cast<std::streamsize>(header_json.size()));
  put(os, static_cast<std::uint32_t>(store.size()));
  for (const auto & p : store.all()) {
    put(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put(os, static_cast<std::uint32_t>(p.value.shape.size()));
    for (int d : p.value.shape) put(os, static_cast<std::uint32_t>(d));
    put_doubles(os, p.value.data);
    put_doubles(os, p.m);
    put_doubles(os, p.v);
    put(os, static_cast<std::int64_t>(p.step));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::string load_checkpoint(const std::string & path, ParameterStore & store)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string header = read_header(is);
  const auto count = get<std::uint32_t>(is);
  if (count != store.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(is);
    Parameter & p = store.at(name);
    const auto rank = get<std::uint32_t>(is);
    Shape shape(rank);
    for (auto & d : shape) d = static_cast<int>(get<std::uint32_t>(is));
    if (shape != p.value.shape) {
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": " + shape_string(shape) + " vs " +
                               shape_string(p.value.shape));
    }
    get_doubles(is, p.value.data);
    get_doubles(is, p.m);
    get_doubles(is, p.v);
    p.step = get<std::int64_t>(is);
    p.grad.setZero();
  }
  return header;
}

std::string read_checkpoint_header(const std::string & path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  return read_header(is);
}

}  // namespace sonoloc::ad
