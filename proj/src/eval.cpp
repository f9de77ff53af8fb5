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

#include "sonoloc/eval.hpp"

#include "sonoloc/losses.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace sonoloc
{

std::vector<int> rectangular_assignment(const Eigen::MatrixXd & cost)
{
  const Eigen::Index rows = cost.rows();
  const Eigen::Index cols = cost.cols();
  const Eigen::Index n = std::max(rows, cols);
  if (n == 0) return std::vector<int>(static_cast<std::size_t>(rows), -1);
  // Dummy rows/columns cost a constant above every real entry so real pairs are maximised.
  const double pad = rows && cols ? cost.maxCoeff() + 1.0 : 0.0;
  Eigen::MatrixXd square = Eigen::MatrixXd::Constant(n, n, pad);
  square.topLeftCorner(rows, cols) = cost;
  const std::vector<int> full = hungarian(square);
  std::vector<int> out(static_cast<std::size_t>(rows), -1);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const int c = full[static_cast<std::size_t>(r)];
    if (c < cols) out[static_cast<std::size_t>(r)] = c;
  }
  return out;
}

ViewEvaluation evaluate_view(
  const std::vector<Detection> & detections, const std::vector<LabelledSource> & sources, int num_classes,
  const std::vector<double> & thresholds)
{
  for (const auto & d : detections) {
    if (d.class_id < 0 || d.class_id >= num_classes) throw std::invalid_argument("evaluate_view: class out of range");
  }
  ViewEvaluation out;
  out.thresholds = thresholds;
  out.counts.assign(static_cast<std::size_t>(num_classes), std::vector<Counts>(thresholds.size()));
  for (int c = 0; c < num_classes; ++c) {
    std::vector<Vec3> dets;
    std::vector<Vec3> gts;
    for (const auto & d : detections) {
      if (d.class_id == c) dets.push_back(d.position);
    }
    for (const auto & s : sources) {
      if (s.class_id == c) gts.push_back(s.position);
    }
    Eigen::MatrixXd dist(static_cast<Eigen::Index>(dets.size()), static_cast<Eigen::Index>(gts.size()));
    for (std::size_t a = 0; a < dets.size(); ++a) {
      for (std::size_t b = 0; b < gts.size(); ++b) {
        dist(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = (dets[a] - gts[b]).norm();
      }
    }
    const std::vector<int> match = rectangular_assignment(dist);
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      Counts & k = out.counts[static_cast<std::size_t>(c)][t];
      for (std::size_t a = 0; a < dets.size(); ++a) {
        const int b = match[a];
        if (b >= 0 && dist(static_cast<Eigen::Index>(a), b) <= thresholds[t]) {
          ++k.tp;
          k.tp_distance += dist(static_cast<Eigen::Index>(a), b);
        } else {
          ++k.fp;
        }
      }
      k.fn = static_cast<long>(gts.size()) - k.tp;
    }
  }
  return out;
}

MetricsReport aggregate(const std::vector<ViewEvaluation> & views)
{
  MetricsReport r;
  r.num_views = static_cast<long>(views.size());
  if (views.empty()) return r;
  r.thresholds = views.front().thresholds;
  r.num_classes = static_cast<int>(views.front().counts.size());
  const std::size_t nc = static_cast<std::size_t>(r.num_classes);
  const std::size_t nt = r.thresholds.size();
  r.counts.assign(nc, std::vector<Counts>(nt));
  for (const auto & v : views) {
    if (v.counts.size() != nc || v.thresholds != r.thresholds) {
      throw std::invalid_argument("aggregate: views disagree on classes or thresholds");
    }
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t t = 0; t < nt; ++t) {
        Counts & k = r.counts[c][t];
        k.tp += v.counts[c][t].tp;
        k.fp += v.counts[c][t].fp;
        k.fn += v.counts[c][t].fn;
        k.tp_distance += v.counts[c][t].tp_distance;
      }
    }
  }

  r.precision.assign(nc, std::vector<double>(nt, 0.0));
  r.recall.assign(nc, std::vector<double>(nt, 0.0));
  double p_sum = 0;
  double r_sum = 0;
  long p_terms = 0;
  long r_terms = 0;
  long tp_total = 0;
  double distance_total = 0;
  for (std::size_t c = 0; c < nc; ++c) {
    for (std::size_t t = 0; t < nt; ++t) {
      const Counts & k = r.counts[c][t];
      const long detected = k.tp + k.fp;
      const long present = k.tp + k.fn;
      r.precision[c][t] = detected > 0 ? static_cast<double>(k.tp) / detected : 0.0;
      r.recall[c][t] = present > 0 ? static_cast<double>(k.tp) / present : 0.0;
      if (detected > 0 || present > 0) {
        p_sum += r.precision[c][t];
        ++p_terms;
      }
      if (present > 0) {
        r_sum += r.recall[c][t];
        ++r_terms;
      }
      tp_total += k.tp;
      distance_total += k.tp_distance;
    }
  }
  r.mAP = p_terms > 0 ? p_sum / p_terms : 0.0;
  r.mAR = r_terms > 0 ? r_sum / r_terms : 0.0;
  r.mALE = tp_total > 0 ? distance_total / tp_total : (nt > 0 ? r.thresholds.back() : 0.0);
  return r;
}

nlohmann::json to_json(const MetricsReport & report)
{
  nlohmann::json j;
  j["mAP"] = report.mAP;
  j["mAR"] = report.mAR;
  j["mALE"] = report.mALE;
  j["num_classes"] = report.num_classes;
  j["num_views"] = report.num_views;
  j["thresholds"] = report.thresholds;
  nlohmann::json table = nlohmann::json::array();
  for (std::size_t c = 0; c < report.counts.size(); ++c) {
    for (std::size_t t = 0; t < report.thresholds.size(); ++t) {
      const Counts & k = report.counts[c][t];
      table.push_back(
        {{"class", c},
         {"threshold", report.thresholds[t]},
         {"tp", k.tp},
         {"fp", k.fp},
         {"fn", k.fn},
         {"tp_distance", k.tp_distance},
         {"precision", report.precision[c][t]},
         {"recall", report.recall[c][t]}});
    }
  }
  j["table"] = table;
  return j;
}

MetricsReport metrics_from_json(const nlohmann::json & j)
{
  MetricsReport r;
  r.mAP = j.at("mAP").get<double>();
  r.mAR = j.at("mAR").get<double>();
  r.mALE = j.at("mALE").get<double>();
  r.num_classes = j.at("num_classes").get<int>();
  r.num_views = j.at("num_views").get<long>();
  r.thresholds = j.at("thresholds").get<std::vector<double>>();
  const std::size_t nc = static_cast<std::size_t>(r.num_classes);
  const std::size_t nt = r.thresholds.size();
  r.counts.assign(nc, std::vector<Counts>(nt));
  r.precision.assign(nc, std::vector<double>(nt, 0.0));
  r.recall.assign(nc, std::vector<double>(nt, 0.0));
  for (const auto & row : j.at("table")) {
    const auto c = row.at("class").get<std::size_t>();
    const double thr = row.at("threshold").get<double>();
    std::size_t t = 0;
    while (t < nt && r.thresholds[t] != thr) ++t;
    if (c >= nc || t >= nt) throw std::invalid_argument("metrics: table row outside the class/threshold grid");
    r.counts[c][t] = {row.at("tp").get<long>(), row.at("fp").get<long>(), row.at("fn").get<long>(),
                      row.at("tp_distance").get<double>()};
    r.precision[c][t] = row.at("precision").get<double>();
    r.recall[c][t] = row.at("recall").get<double>();
  }
  return r;
}

std::string metrics_csv(const MetricsReport & report)
{
  std::ostringstream os;
  os << std::setprecision(17);
  os << "class,threshold,tp,fp,fn,precision,recall,ale\n";
  for (std::size_t c = 0; c < report.counts.size(); ++c) {
    for (std::size_t t = 0; t < report.thresholds.size(); ++t) {
      const Counts & k = report.counts[c][t];
      const double ale = k.tp > 0 ? k.tp_distance / k.tp : 0.0;
      os << c << ',' << report.thresholds[t] << ',' << k.tp << ',' << k.fp << ',' << k.fn << ','
         << report.precision[c][t] << ',' << report.recall[c][t] << ',' << ale << '\n';
    }
  }
  return os.str();
}

}  // namespace sonoloc
