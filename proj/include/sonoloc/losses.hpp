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

#ifndef SONOLOC__LOSSES_HPP_
#define SONOLOC__LOSSES_HPP_

#include "sonoloc/autodiff/ops.hpp"
#include "sonoloc/geometry.hpp"
#include "sonoloc/model.hpp"
#include "sonoloc/scene.hpp"

#include <optional>
#include <vector>

namespace sonoloc
{

/// Minimum-cost perfect matching of a square cost matrix; result[row] = column.
/// Among optimal assignments the lexicographically smallest one is returned.
std::vector<int> hungarian(const Eigen::Ref<const Eigen::MatrixXd> & cost);

double assignment_cost(const Eigen::Ref<const Eigen::MatrixXd> & cost, const std::vector<int> & assignment);

/// A ground-truth source expressed in one view's camera frame.
struct ViewTarget
{
  Vec3 position = Vec3::Zero();
  int class_id = 0;
  int source_id = 0;  // identity shared across views of one scene
};

struct MatchWeights
{
  double position = 1.0;
  double class_probability = 1.0;
};

/// assignment[query] = slot; slots below targets.size() are real sources, the
/// rest are no-source padding.
std::vector<int> match_queries(
  const Eigen::Ref<const ad::RowMatrix> & positions, const Eigen::Ref<const ad::RowMatrix> & logits,
  const std::vector<ViewTarget> & targets, const MatchWeights & weights = {});

struct BipartiteTerms
{
  ad::Var position;  // mean over queries of the l1 error of real matches
  ad::Var classification;
  ad::Var total;
};

BipartiteTerms loss_bm(
  ad::Tape & tape, const DecodedPredictions & pred, const std::vector<ViewTarget> & targets,
  const std::vector<int> & assignment);

/// Geometry of one recorded view.
struct DepthView
{
  Pose pose;
  Camera camera;
  DepthMap depth;
};

/// Centroid, in view `view`'s camera frame, of the depth-map back-projections
/// of `p` (given in that frame) over every view where it lands on a finite depth.
std::optional<Vec3> depth_centroid(const Vec3 & p, std::size_t view, const std::vector<DepthView> & views);

/// Per (view, matched real source) hinge of the distance to the depth centroid,
/// averaged over all such terms; terms without a centroid contribute zero.
ad::Var loss_depth(
  ad::Tape & tape, const std::vector<ad::Var> & positions, const std::vector<std::vector<int>> & assignments,
  const std::vector<std::vector<ViewTarget>> & targets, const std::vector<DepthView> & views, double sigma = 0.3);

/// For every source seen in the scene: sum over view pairs i < j of the l2
/// distance between view i's match and view j's match mapped into frame i,
/// divided by C(N, 2); averaged over sources. Zero for a single view.
ad::Var loss_crossview(
  ad::Tape & tape, const std::vector<ad::Var> & positions, const std::vector<std::vector<int>> & assignments,
  const std::vector<std::vector<ViewTarget>> & targets, const std::vector<Pose> & poses);

struct LossConfig
{
  double lambda_bm = 1.0;
  double lambda_depth = 1.0;
  double lambda_crossview = 1.0;
  double sigma = 0.3;
  MatchWeights match;
  bool use_depth_loss = true;
  bool use_crossview_loss = true;
};

/// Scalars are sums over the initial and updated prediction stages.
struct LossBreakdown
{
  double l_bm = 0;
  double l_bm_position = 0;
  double l_bm_class = 0;
  double l_depth = 0;
  double l_crossview = 0;
  double total = 0;
  double total_initial = 0;
  double total_updated = 0;
  double lambda_bm = 1.0;
  double lambda_depth = 1.0;
  double lambda_crossview = 1.0;
  double sigma = 0.3;
  ad::Var objective;
};

LossBreakdown total_loss(
  ad::Tape & tape, const std::vector<ViewOutput> & outputs, const std::vector<std::vector<ViewTarget>> & targets,
  const std::vector<DepthView> & views, const LossConfig & cfg);

/// Targets of every view: scene sources moved into each camera frame.
std::vector<std::vector<ViewTarget>> view_targets(const AcousticScene & scene, const std::vector<Pose> & poses);

}  // namespace sonoloc

#endif  // SONOLOC__LOSSES_HPP_
