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

#ifndef SONOLOC__PARALLEL_HPP_
#define SONOLOC__PARALLEL_HPP_

#include <functional>

namespace sonoloc
{

/// Worker count: SL3D_THREADS if set (>= 1), else the hardware concurrency.
int default_thread_count();

/// Runs fn(i) for i in [0, count) on up to `threads` workers. The first
/// exception thrown by any task is rethrown after all workers finish.
void parallel_for(int count, int threads, const std::function<void(int)> & fn);

}  // namespace sonoloc

#endif  // SONOLOC__PARALLEL_HPP_
