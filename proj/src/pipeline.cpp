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

#include "sonoloc/pipeline.hpp"

#include "sonoloc/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace sonoloc
{

namespace fs = std::filesystem;
using nlohmann::json;

namespace
{
constexpr std::uint64_t kModelSalt = 0x6d6f64656c000000ULL;
constexpr std::uint64_t kShuffleSalt = 0x73687566666c6500ULL;
constexpr std::uint64_t kAudioNoiseOffset = 1000;
constexpr std::uint64_t kPoseNoiseOffset = 2000;

json vec_json(const Vec3 & v) { return json::array({v.x(), v.y(), v.z()}); }

json noise_json(const NoiseOptions & noise)
{
  json j = {{"pose_delta", noise.pose_delta}};
  if (noise.snr_db && std::isfinite(*noise.snr_db)) {
    j["snr_db"] = *noise.snr_db;
  } else {
    j["snr_db"] = nullptr;
  }
  return j;
}

json breakdown_json(const LossBreakdown & b)
{
  return {
    {"l_bm", b.l_bm},
    {"l_bm_position", b.l_bm_position},
    {"l_bm_class", b.l_bm_class},
    {"l_depth", b.l_depth},
    {"l_crossview", b.l_crossview},
    {"total", b.total},
    {"total_initial", b.total_initial},
    {"total_updated", b.total_updated},
    {"lambda_bm", b.lambda_bm},
    {"lambda_depth", b.lambda_depth},
    {"lambda_crossview", b.lambda_crossview},
    {"sigma", b.sigma},
  };
}

void write_text(const fs::path & path, const std::string & text)
{
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}
}  // namespace

Variant parse_variant(const std::string & name)
{
  if (name == "full") return Variant::full;
  if (name == "noRGB") return Variant::noRGB;
  if (name == "noDepth") return Variant::noDepth;
  if (name == "noCVC") return Variant::noCVC;
  if (name == "noRGBD") return Variant::noRGBD;
  throw ConfigError("unknown variant '" + name + "' (expected full, noRGB, noDepth, noCVC or noRGBD)");
}

std::string variant_name(Variant v)
{
  switch (v) {
    case Variant::full:
      return "full";
    case Variant::noRGB:
      return "noRGB";
    case Variant::noDepth:
      return "noDepth";
    case Variant::noCVC:
      return "noCVC";
    case Variant::noRGBD:
      return "noRGBD";
  }
  return "full";
}

void apply_variant(ExperimentConfig & cfg, Variant v)
{
  cfg.model.use_rgb = v != Variant::noRGB && v != Variant::noRGBD;
  cfg.model.use_depth_loss = v != Variant::noDepth && v != Variant::noRGBD;
  cfg.model.use_crossview_loss = v != Variant::noCVC;
  cfg.training.loss.use_depth_loss = cfg.model.use_depth_loss;
  cfg.training.loss.use_crossview_loss = cfg.model.use_crossview_loss;
}

PreparedScene prepare_scene(const SceneRecord & rec, int index, const ExperimentConfig & cfg, const NoiseOptions & noise)
{
  if (static_cast<int>(rec.views.size()) != cfg.num_views) {
    throw DataError("scene " + std::to_string(index) + " has " + std::to_string(rec.views.size()) + " views, config expects " +
                    std::to_string(cfg.num_views));
  }
  PreparedScene out;
  out.index = index;
  out.scene = rec.scene;
  for (const auto & v : rec.views) out.true_poses.push_back(v.pose);

  std::vector<Pose> model_poses = out.true_poses;
  if (noise.pose_delta != 0) {
    model_poses = perturb_poses(out.true_poses, noise.pose_delta, derive_seed(rec.scene.seed, kPoseNoiseOffset));
  }
  const bool add_noise = noise.snr_db && std::isfinite(*noise.snr_db);
  for (std::size_t v = 0; v < rec.views.size(); ++v) {
    if (rec.audio[v].rows() != cfg.num_mics) throw DataError("scene " + std::to_string(index) + ": microphone count mismatch");
    ViewInput in;
    if (add_noise) {
      const Eigen::MatrixXd noisy =
        rec.audio[v] + noise_for_snr(rec.audio[v], *noise.snr_db, derive_seed(rec.scene.seed, kAudioNoiseOffset + v));
      in.features = dsp::build_input_feature(noisy, cfg.features);
    } else {
      in.features = dsp::build_input_feature(rec.audio[v], cfg.features);
    }
    in.pose = model_poses[v];
    in.camera = rec.camera;
    in.appearance = rec.appearance[v];
    out.inputs.push_back(std::move(in));
    out.depth_views.push_back({out.true_poses[v], rec.camera, rec.depth[v]});
  }
  out.targets = view_targets(rec.scene, out.true_poses);
  return out;
}

void check_compatible(const DatasetInfo & data, const ExperimentConfig & cfg)
{
  const ExperimentConfig & d = data.config;
  const auto fail = [](const std::string & what, double have, double want) {
    std::ostringstream os;
    os << "dataset/config mismatch: " << what << " is " << have << " in the dataset but " << want << " in the config";
    throw DataError(os.str());
  };
  if (d.scene.num_classes != cfg.model.num_classes) fail("class count", d.scene.num_classes, cfg.model.num_classes);
  if (d.num_views != cfg.num_views) fail("view count", d.num_views, cfg.num_views);
  if (d.num_mics != cfg.num_mics) fail("microphone count", d.num_mics, cfg.num_mics);
  if (d.image_size != cfg.image_size) fail("image size", d.image_size, cfg.image_size);
  if (d.appearance_grid != cfg.appearance_grid) fail("appearance grid", d.appearance_grid, cfg.appearance_grid);
  if (d.appearance_dim != cfg.model.dim()) fail("appearance feature size", d.appearance_dim, cfg.model.dim());
  if (d.audio.fs != cfg.features.fs) fail("sample rate", d.audio.fs, cfg.features.fs);
  if (dsp::feature_channel_count(d.num_mics) != cfg.model.input_channels) {
    fail("feature channel count", dsp::feature_channel_count(d.num_mics), cfg.model.input_channels);
  }
  if (data.train.empty()) throw DataError("dataset has an empty train split");
}

const PreparedScene & SceneCache::get(int index)
{
  auto it = scenes_.find(index);
  if (it == scenes_.end()) {
    auto scene = std::make_unique<PreparedScene>(prepare_scene(read_scene(data_.scene_dir(index)), index, cfg_));
    it = scenes_.emplace(index, std::move(scene)).first;
  }
  return *it->second;
}

std::uint64_t model_seed(const ExperimentConfig & cfg) { return derive_seed(cfg.seed ^ kModelSalt, 0); }

LossBreakdown scene_loss(ad::Tape & tape, const Localizer & model, const PreparedScene & scene, const LossConfig & cfg)
{
  const auto outputs = model.forward_scene(tape, scene.inputs);
  return total_loss(tape, outputs, scene.targets, scene.depth_views, cfg);
}

double mean_scene_loss(const Localizer & model, SceneCache & cache, const std::vector<int> & indices, const LossConfig & cfg)
{
  if (indices.empty()) return 0;
  double sum = 0;
  for (int i : indices) {
    ad::Tape tape;
    sum += scene_loss(tape, model, cache.get(i), cfg).total;
  }
  return sum / static_cast<double>(indices.size());
}

int training_scene(const DatasetInfo & data, std::uint64_t seed, long step)
{
  const auto n = static_cast<long>(data.train.size());
  const long epoch = step / n;
  std::vector<int> order = data.train;
  std::mt19937_64 rng(derive_seed(seed ^ kShuffleSalt, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order[static_cast<std::size_t>(step % n)];
}

json checkpoint_header(const ExperimentConfig & cfg, Variant v, long step)
{
  return {
    {"config", to_json(cfg)},
    {"config_hash", config_hash(cfg)},
    {"variant", variant_name(v)},
    {"step", step},
    {"seed", cfg.seed},
  };
}

void save_model(const fs::path & path, const Localizer & model, const ExperimentConfig & cfg, Variant v, long step)
{
  ad::save_checkpoint(path.string(), model.parameters(), checkpoint_header(cfg, v, step).dump());
}

LoadedModel load_model(const fs::path & path)
{
  LoadedModel out;
  json header;
  try {
    header = json::parse(ad::read_checkpoint_header(path.string()));
    out.config = config_from_json(header.at("config"));
    out.variant = parse_variant(header.at("variant").get<std::string>());
    out.step = header.at("step").get<long>();
  } catch (const json::exception & e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  } catch (const ConfigError & e) {
    throw DataError(path.string() + ": bad checkpoint config: " + e.what());
  } catch (const std::runtime_error & e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (header.at("config_hash").get<std::string>() != config_hash(out.config)) {
    throw DataError(path.string() + ": checkpoint config hash mismatch");
  }
  out.model = std::make_unique<Localizer>(out.config.model, model_seed(out.config));
  try {
    ad::load_checkpoint(path.string(), out.model->parameters());
  } catch (const std::runtime_error & e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return out;
}

TrainSummary train(const DatasetInfo & data, ExperimentConfig cfg, const TrainOptions & opts)
{
  apply_variant(cfg, opts.variant);
  cfg.validate();
  check_compatible(data, cfg);
  const long total_steps = opts.steps >= 0 ? opts.steps : cfg.training.steps;
  const int accumulate = std::max(1, cfg.training.accumulate);

  Localizer model(cfg.model, model_seed(cfg));
  TrainSummary summary;
  if (opts.resume) {
    const json header = json::parse(ad::read_checkpoint_header(opts.resume->string()));
    if (header.at("config_hash").get<std::string>() != config_hash(cfg)) {
      throw DataError("resume: checkpoint was trained with a different config or variant");
    }
    ad::load_checkpoint(opts.resume->string(), model.parameters());
    summary.first_step = header.at("step").get<long>();
  }
  summary.last_step = summary.first_step;

  fs::create_directories(opts.out);
  const fs::path log_path = opts.out / "train_log.jsonl";
  std::ofstream log(log_path, opts.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + log_path.string());
  log << json{
           {"kind", "header"},
           {"config", to_json(cfg)},
           {"config_hash", config_hash(cfg)},
           {"dataset_hash", data.config_hash},
           {"seed", cfg.seed},
           {"variant", variant_name(opts.variant)},
           {"flags",
            {{"use_rgb", cfg.model.use_rgb},
             {"use_depth_loss", cfg.training.loss.use_depth_loss},
             {"use_crossview_loss", cfg.training.loss.use_crossview_loss}}},
           {"train_scenes", data.train.size()},
           {"start_step", summary.first_step},
           {"steps", total_steps},
         }
           .dump()
      << '\n';

  SceneCache cache(data, cfg);
  for (long step = summary.first_step; step < total_steps; ++step) {
    model.parameters().zero_grad();
    double total = 0;
    json terms;
    std::vector<int> scenes;
    for (int a = 0; a < accumulate; ++a) {
      const int index = training_scene(data, cfg.seed, step * accumulate + a);
      scenes.push_back(index);
      ad::Tape tape;
      const LossBreakdown loss = scene_loss(tape, model, cache.get(index), cfg.training.loss);
      if (!std::isfinite(loss.total)) throw std::runtime_error("non-finite loss at step " + std::to_string(step));
      tape.backward(ad::scale(loss.objective, 1.0 / accumulate));
      total += loss.total / accumulate;
      if (a == 0) terms = breakdown_json(loss);
    }
    ad::adamw_step(model.parameters(), cfg.training.optimizer);
    summary.losses.push_back(total);
    summary.last_step = step + 1;

    json line = {{"kind", "step"}, {"step", step}, {"scenes", scenes}, {"loss", total}};
    if (accumulate == 1) line["breakdown"] = terms;
    log << line.dump() << '\n';
    if (!opts.quiet && (step % 50 == 0 || step + 1 == total_steps)) {
      std::fprintf(stderr, "step %ld loss %.6f\n", step, total);
    }
    if (cfg.training.checkpoint_every > 0 && (step + 1) % cfg.training.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "ckpt_step%06ld.bin", step + 1);
      save_model(opts.out / name, model, cfg, opts.variant, step + 1);
    }
  }
  summary.checkpoint = opts.out / "checkpoint.bin";
  save_model(summary.checkpoint, model, cfg, opts.variant, summary.last_step);
  return summary;
}

std::vector<std::vector<Detection>> predict_scene(const Localizer & model, const PreparedScene & scene)
{
  ad::Tape tape;
  const auto outputs = model.forward_scene(tape, scene.inputs);
  const int none = model.config().num_classes;
  std::vector<std::vector<Detection>> out(outputs.size());
  for (std::size_t v = 0; v < outputs.size(); ++v) {
    const auto positions = outputs[v].updated.positions.value().matrix();
    const ad::RowMatrix probs = ad::softmax(outputs[v].updated.logits.value().matrix());
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      Eigen::Index cls = 0;
      const double p = probs.row(r).maxCoeff(&cls);
      if (cls == none) continue;
      const Vec3 cam = positions.row(r).transpose();
      out[v].push_back({transform_point(scene.true_poses[v], cam), static_cast<int>(cls), p});
    }
  }
  return out;
}

EvaluationResult evaluate_split(
  const Localizer & model, const DatasetInfo & data, const ExperimentConfig & cfg, const std::vector<int> & scenes,
  const NoiseOptions & noise, int threads)
{
  check_compatible(data, cfg);
  std::vector<std::vector<std::vector<Detection>>> detections(scenes.size());
  std::vector<std::vector<ViewEvaluation>> evaluations(scenes.size());
  std::vector<std::vector<LabelledSource>> truths(scenes.size());
  parallel_for(static_cast<int>(scenes.size()), threads, [&](int s) {
    const int index = scenes[static_cast<std::size_t>(s)];
    const PreparedScene scene = prepare_scene(read_scene(data.scene_dir(index)), index, cfg, noise);
    auto & gt = truths[static_cast<std::size_t>(s)];
    for (const auto & src : scene.scene.sources) gt.push_back({src.position, src.class_id});
    detections[static_cast<std::size_t>(s)] = predict_scene(model, scene);
    for (const auto & view : detections[static_cast<std::size_t>(s)]) {
      evaluations[static_cast<std::size_t>(s)].push_back(evaluate_view(view, gt, cfg.model.num_classes));
    }
  });

  EvaluationResult result;
  std::vector<ViewEvaluation> all;
  json scene_list = json::array();
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    all.insert(all.end(), evaluations[s].begin(), evaluations[s].end());
    json views = json::array();
    for (const auto & view : detections[s]) {
      json list = json::array();
      for (const auto & d : view) {
        list.push_back({{"position", vec_json(d.position)}, {"class", d.class_id}, {"prob", d.probability}});
      }
      views.push_back(list);
    }
    json gt = json::array();
    for (const auto & src : truths[s]) gt.push_back({{"position", vec_json(src.position)}, {"class", src.class_id}});
    scene_list.push_back({{"scene", scenes[s]}, {"views", views}, {"ground_truth", gt}});
  }
  result.report = aggregate(all);
  result.predictions = {{"frame", "world"}, {"scenes", scene_list}};
  return result;
}

void write_evaluation(const fs::path & out, const EvaluationResult & result, const LoadedModel & loaded,
                      const NoiseOptions & noise)
{
  fs::create_directories(out);
  const std::string hash = config_hash(loaded.config);
  const json tags = {
    {"config_hash", hash},
    {"seed", loaded.config.seed},
    {"variant", variant_name(loaded.variant)},
    {"checkpoint_step", loaded.step},
    {"noise", noise_json(noise)},
  };
  json predictions = result.predictions;
  predictions.update(tags);
  write_text(out / "predictions.json", predictions.dump(2) + "\n");
  json metrics = to_json(result.report);
  metrics.update(tags);
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  std::ostringstream csv;
  csv << "# config_hash=" << hash << " seed=" << loaded.config.seed << " variant=" << variant_name(loaded.variant)
      << "\n"
      << metrics_csv(result.report);
  write_text(out / "metrics.csv", csv.str());
}

}  // namespace sonoloc
