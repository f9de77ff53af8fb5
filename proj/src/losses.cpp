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

#include "sonoloc/losses.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace sonoloc
{

using ad::RowMatrix;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace
{
// Shortest augmenting path Hungarian method with row/column potentials, O(n^3).
// Returns the optimal total; assignment[row] = column.
double solve_assignment(const Eigen::Ref<const Eigen::MatrixXd> & cost, std::vector<int> & assignment)
{
  const int n = static_cast<int>(cost.rows());
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  assignment.assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) assignment[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return assignment_cost(cost, assignment);
}

double optimal_cost(const Eigen::MatrixXd & cost)
{
  if (cost.rows() == 0) return 0.0;
  std::vector<int> scratch;
  return solve_assignment(cost, scratch);
}

Var zero(Tape & tape) { return tape.constant(Tensor::scalar(0.0)); }

Tensor rows_tensor(const std::vector<Vec3> & rows)
{
  Tensor t({static_cast<int>(rows.size()), 3});
  for (std::size_t r = 0; r < rows.size(); ++r) t.matrix().row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
  return t;
}
}  // namespace

double assignment_cost(const Eigen::Ref<const Eigen::MatrixXd> & cost, const std::vector<int> & assignment)
{
  double total = 0.0;
  for (std::size_t r = 0; r < assignment.size(); ++r) total += cost(static_cast<Eigen::Index>(r), assignment[r]);
  return total;
}

std::vector<int> hungarian(const Eigen::Ref<const Eigen::MatrixXd> & cost)
{
  if (cost.rows() != cost.cols()) throw std::invalid_argument("hungarian: cost matrix must be square");
  if (!cost.allFinite()) throw std::invalid_argument("hungarian: cost matrix must be finite");
  const int n = static_cast<int>(cost.rows());
  if (n == 0) return {};
  const double best = optimal_cost(cost);
  const double tol = 1e-9 * (1.0 + std::abs(best));

  // Fix rows in order, each to the smallest column that still admits an optimum.
  std::vector<int> result(static_cast<std::size_t>(n), -1);
  std::vector<int> free_cols(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) free_cols[static_cast<std::size_t>(c)] = c;
  double fixed = 0.0;
  for (int r = 0; r < n; ++r) {
    const int rest = n - r - 1;
    bool chosen = false;
    for (std::size_t k = 0; k < free_cols.size() && !chosen; ++k) {
      const int c = free_cols[k];
      Eigen::MatrixXd sub(rest, rest);
      for (int rr = 0; rr < rest; ++rr) {
        int cc = 0;
        for (std::size_t kk = 0; kk < free_cols.size(); ++kk) {
          if (kk == k) continue;
          sub(rr, cc++) = cost(r + 1 + rr, free_cols[kk]);
        }
      }
      if (fixed + cost(r, c) + optimal_cost(sub) <= best + tol) {
        result[static_cast<std::size_t>(r)] = c;
        fixed += cost(r, c);
        free_cols.erase(free_cols.begin() + static_cast<std::ptrdiff_t>(k));
        chosen = true;
      }
    }
    if (!chosen) throw std::logic_error("hungarian: tie-break lost the optimum");
  }
  return result;
}

std::vector<int> match_queries(
  const Eigen::Ref<const RowMatrix> & positions, const Eigen::Ref<const RowMatrix> & logits,
  const std::vector<ViewTarget> & targets, const MatchWeights & weights)
{
  const Eigen::Index q = positions.rows();
  if (logits.rows() != q || positions.cols() != 3) throw std::invalid_argument("match_queries: shape mismatch");
  if (static_cast<Eigen::Index>(targets.size()) > q) {
    throw std::invalid_argument(
      "match_queries: " + std::to_string(targets.size()) + " ground truths exceed " + std::to_string(q) +
      " queries; increase q");
  }
  const int none = static_cast<int>(logits.cols()) - 1;
  const RowMatrix prob = ad::softmax(logits);
  Eigen::MatrixXd cost(q, q);
  for (Eigen::Index a = 0; a < q; ++a) {
    for (Eigen::Index s = 0; s < q; ++s) {
      if (s < static_cast<Eigen::Index>(targets.size())) {
        const auto & t = targets[static_cast<std::size_t>(s)];
        if (t.class_id < 0 || t.class_id >= none) throw std::invalid_argument("match_queries: class out of range");
        cost(a, s) = weights.position * (positions.row(a).transpose() - t.position).cwiseAbs().sum() +
                     weights.class_probability * (1.0 - prob(a, t.class_id));
      } else {
        cost(a, s) = weights.class_probability * (1.0 - prob(a, none));
      }
    }
  }
  return hungarian(cost);
}

BipartiteTerms loss_bm(
  Tape & tape, const DecodedPredictions & pred, const std::vector<ViewTarget> & targets,
  const std::vector<int> & assignment)
{
  const int q = pred.positions.shape().at(0);
  const int none = pred.logits.shape().at(1) - 1;
  if (static_cast<int>(assignment.size()) != q) throw std::invalid_argument("loss_bm: assignment size mismatch");
  std::vector<int> classes(static_cast<std::size_t>(q), none);
  std::vector<int> matched;
  std::vector<Vec3> goals;
  for (int a = 0; a < q; ++a) {
    const int slot = assignment[static_cast<std::size_t>(a)];
    if (slot < static_cast<int>(targets.size())) {
      classes[static_cast<std::size_t>(a)] = targets[static_cast<std::size_t>(slot)].class_id;
      matched.push_back(a);
      goals.push_back(targets[static_cast<std::size_t>(slot)].position);
    }
  }
  BipartiteTerms out;
  out.classification = ad::softmax_cross_entropy(pred.logits, classes);
  if (matched.empty()) {
    out.position = zero(tape);
  } else {
    // l1_loss divides by the matched count; rescale to a mean over all q queries.
    const Var l1 = ad::l1_loss(ad::gather_rows(pred.positions, matched), tape.constant(rows_tensor(goals)));
    out.position = ad::scale(l1, static_cast<double>(matched.size()) / q);
  }
  out.total = ad::add(out.position, out.classification);
  return out;
}

std::optional<Vec3> depth_centroid(const Vec3 & p, std::size_t view, const std::vector<DepthView> & views)
{
  if (view >= views.size()) throw std::invalid_argument("depth_centroid: view index out of range");
  Vec3 total = Vec3::Zero();
  int count = 0;
  for (const auto & other : views) {
    const Pose T = relative_transform(other.pose, views[view].pose);
    const Pixel pix = project(other.camera, transform_point(T, p));
    if (!pix.valid) continue;
    const double z = other.depth.nearest(pix.uv);
    if (!std::isfinite(z)) continue;
    total += transform_point(inverse(T), backproject(other.camera, pix, z));
    ++count;
  }
  if (count == 0) return std::nullopt;
  return Vec3(total / count);
}

Var loss_depth(
  Tape & tape, const std::vector<Var> & positions, const std::vector<std::vector<int>> & assignments,
  const std::vector<std::vector<ViewTarget>> & targets, const std::vector<DepthView> & views, double sigma)
{
  if (positions.size() != views.size() || assignments.size() != views.size() || targets.size() != views.size()) {
    throw std::invalid_argument("loss_depth: per-view inputs disagree in length");
  }
  std::vector<Var> terms;
  int count = 0;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto & P = positions[i].value();
    std::vector<int> rows;
    std::vector<Vec3> centroids;
    for (std::size_t a = 0; a < assignments[i].size(); ++a) {
      if (assignments[i][a] >= static_cast<int>(targets[i].size())) continue;
      ++count;
      const Vec3 p = P.matrix().row(static_cast<Eigen::Index>(a)).transpose();
      if (const auto c = depth_centroid(p, i, views)) {
        rows.push_back(static_cast<int>(a));
        centroids.push_back(*c);
      }
    }
    if (rows.empty()) continue;
    const Var d = ad::row_norms(ad::sub(ad::gather_rows(positions[i], rows), tape.constant(rows_tensor(centroids))));
    terms.push_back(ad::sum(ad::hinge(d, sigma)));
  }
  if (terms.empty()) return zero(tape);
  Var total = terms.front();
  for (std::size_t t = 1; t < terms.size(); ++t) total = ad::add(total, terms[t]);
  return ad::scale(total, 1.0 / count);
}

Var loss_crossview(
  Tape & tape, const std::vector<Var> & positions, const std::vector<std::vector<int>> & assignments,
  const std::vector<std::vector<ViewTarget>> & targets, const std::vector<Pose> & poses)
{
  const std::size_t n = poses.size();
  if (positions.size() != n || assignments.size() != n || targets.size() != n) {
    throw std::invalid_argument("loss_crossview: per-view inputs disagree in length");
  }
  if (n < 2) return zero(tape);

  // matched[i][source_id] = query row in view i.
  std::vector<std::map<int, int>> matched(n);
  std::set<int> sources;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < assignments[i].size(); ++a) {
      const int slot = assignments[i][a];
      if (slot >= static_cast<int>(targets[i].size())) continue;
      const int id = targets[i][static_cast<std::size_t>(slot)].source_id;
      matched[i][id] = static_cast<int>(a);
      sources.insert(id);
    }
  }
  if (sources.empty()) return zero(tape);

  const double pairs = static_cast<double>(n * (n - 1) / 2);
  std::vector<Var> terms;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      std::vector<int> rows_i;
      std::vector<int> rows_j;
      for (const auto & [id, row] : matched[i]) {
        const auto it = matched[j].find(id);
        if (it == matched[j].end()) continue;
        rows_i.push_back(row);
        rows_j.push_back(it->second);
      }
      if (rows_i.empty()) continue;
      const Pose T = relative_transform(poses[i], poses[j]);
      const Var in_i = ad::rigid_rows(ad::gather_rows(positions[j], rows_j), T.rotation, T.translation);
      terms.push_back(ad::sum(ad::row_norms(ad::sub(ad::gather_rows(positions[i], rows_i), in_i))));
    }
  }
  if (terms.empty()) return zero(tape);
  Var total = terms.front();
  for (std::size_t t = 1; t < terms.size(); ++t) total = ad::add(total, terms[t]);
  return ad::scale(total, 1.0 / (pairs * static_cast<double>(sources.size())));
}

LossBreakdown total_loss(
  Tape & tape, const std::vector<ViewOutput> & outputs, const std::vector<std::vector<ViewTarget>> & targets,
  const std::vector<DepthView> & views, const LossConfig & cfg)
{
  const std::size_t n = outputs.size();
  if (n == 0 || targets.size() != n || views.size() != n) {
    throw std::invalid_argument("total_loss: per-view inputs disagree in length");
  }
  std::vector<Pose> poses;
  for (const auto & v : views) poses.push_back(v.pose);

  LossBreakdown out;
  out.lambda_bm = cfg.lambda_bm;
  out.lambda_depth = cfg.lambda_depth;
  out.lambda_crossview = cfg.lambda_crossview;
  out.sigma = cfg.sigma;

  std::vector<Var> stage_totals;
  for (const bool updated : {false, true}) {
    std::vector<Var> positions;
    std::vector<std::vector<int>> assignments;
    std::vector<Var> bm_terms;
    double position_sum = 0;
    double class_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const DecodedPredictions & pred = updated ? outputs[i].updated : outputs[i].initial;
      positions.push_back(pred.positions);
      assignments.push_back(
        match_queries(pred.positions.value().matrix(), pred.logits.value().matrix(), targets[i], cfg.match));
      const BipartiteTerms bm = loss_bm(tape, pred, targets[i], assignments.back());
      bm_terms.push_back(bm.total);
      position_sum += bm.position.value().item();
      class_sum += bm.classification.value().item();
    }
    Var bm = bm_terms.front();
    for (std::size_t i = 1; i < n; ++i) bm = ad::add(bm, bm_terms[i]);
    bm = ad::scale(bm, 1.0 / static_cast<double>(n));
    Var stage = ad::scale(bm, cfg.lambda_bm);
    out.l_bm += bm.value().item();
    out.l_bm_position += position_sum / static_cast<double>(n);
    out.l_bm_class += class_sum / static_cast<double>(n);

    if (cfg.use_depth_loss) {
      const Var depth = loss_depth(tape, positions, assignments, targets, views, cfg.sigma);
      out.l_depth += depth.value().item();
      stage = ad::add(stage, ad::scale(depth, cfg.lambda_depth));
    }
    if (cfg.use_crossview_loss) {
      const Var cross = loss_crossview(tape, positions, assignments, targets, poses);
      out.l_crossview += cross.value().item();
      stage = ad::add(stage, ad::scale(cross, cfg.lambda_crossview));
    }
    (updated ? out.total_updated : out.total_initial) = stage.value().item();
    stage_totals.push_back(stage);
  }
  out.objective = ad::add(stage_totals[0], stage_totals[1]);
  out.total = out.objective.value().item();
  return out;
}

std::vector<std::vector<ViewTarget>> view_targets(const AcousticScene & scene, const std::vector<Pose> & poses)
{
  std::vector<std::vector<ViewTarget>> out(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Pose to_camera = inverse(poses[i]);
    for (std::size_t s = 0; s < scene.sources.size(); ++s) {
      out[i].push_back(
        {transform_point(to_camera, scene.sources[s].position), scene.sources[s].class_id, static_cast<int>(s)});
    }
  }
  return out;
}

}  // namespace sonoloc
