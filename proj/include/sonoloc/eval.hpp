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

#ifndef SONOLOC__EVAL_HPP_
#define SONOLOC__EVAL_HPP_

#include "sonoloc/geometry.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace sonoloc
{

struct Detection
{
  Vec3 position = Vec3::Zero();  // world frame
  int class_id = 0;
  double probability = 0;
};

struct LabelledSource
{
  Vec3 position = Vec3::Zero();  // world frame
  int class_id = 0;
};

inline const std::vector<double> kDefaultThresholds = {0.5, 0.8, 1.2};

struct Counts
{
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double tp_distance = 0;  // summed distance of true positives
};

/// Counts indexed [class][threshold].
struct ViewEvaluation
{
  std::vector<double> thresholds;
  std::vector<std::vector<Counts>> counts;
};

/// Per class: minimum total l2 matching between that class's detections and
/// ground truths; a matched pair within a threshold is a TP, otherwise the
/// detection is a FP and the source a FN. Unmatched detections are FPs and
/// unmatched sources FNs.
ViewEvaluation evaluate_view(
  const std::vector<Detection> & detections, const std::vector<LabelledSource> & sources, int num_classes,
  const std::vector<double> & thresholds = kDefaultThresholds);

struct MetricsReport
{
  int num_classes = 0;
  long num_views = 0;
  std::vector<double> thresholds;
  std::vector<std::vector<Counts>> counts;
  std::vector<std::vector<double>> precision;
  std::vector<std::vector<double>> recall;
  double mAP = 0;
  double mAR = 0;
  double mALE = 0;
};

/// Sums counts over views. Precision is 0 when a class has no detections.
/// mAP averages classes with detections or sources, mAR classes with sources;
/// mALE is the mean TP distance over all classes and thresholds and equals the
/// largest threshold when nothing was detected.
MetricsReport aggregate(const std::vector<ViewEvaluation> & views);

nlohmann::json to_json(const MetricsReport & report);
MetricsReport metrics_from_json(const nlohmann::json & j);
/// class, threshold, tp, fp, fn, precision, recall, ale rows.
std::string metrics_csv(const MetricsReport & report);

/// Rectangular minimum-cost assignment; returns, per row, the matched column or -1.
std::vector<int> rectangular_assignment(const Eigen::MatrixXd & cost);

}  // namespace sonoloc

#endif  // SONOLOC__EVAL_HPP_
