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

#ifndef SONOLOC__ORACLE_HPP_
#define SONOLOC__ORACLE_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace sonoloc::oracle
{

/// One named measurement of a suite.
struct Check
{
  std::string name;
  double measured = 0;
  double bound = 0;
  bool passed = false;
  std::string note;
};

struct SuiteResult
{
  std::string suite;
  std::vector<Check> checks;
  double seconds = 0;

  bool passed() const;
};

/// 1000 random rigid transforms and pinhole round trips.
SuiteResult geometry(std::uint64_t seed = 1, int trials = 1000);
/// Frame-median GCC-PHAT peak against the analytic TDOA on random single-source scenes.
SuiteResult dsp(std::uint64_t seed = 2, int scenes = 100);
/// Central differences for every trainable layer and loss, `seeds` draws each.
SuiteResult grad(std::uint64_t seed = 3, int seeds = 20);
/// Assignment against factorial enumeration on random n x n costs.
SuiteResult hungarian(std::uint64_t seed = 4, int trials = 1000, int n = 7);
/// Losses of ground-truth predictions on a constructed wall scene.
SuiteResult zero_loss();
/// Hand-worked metric cases.
SuiteResult eval();

const std::vector<std::string> & suite_names();
/// Runs a suite by name; "all" is not accepted here. Throws std::invalid_argument for unknown names.
SuiteResult run(const std::string & name);

std::string format(const SuiteResult & result);

}  // namespace sonoloc::oracle

#endif  // SONOLOC__ORACLE_HPP_
