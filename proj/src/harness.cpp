#include "vlm6d/harness.h"

#include <algorithm>
#include <malloc.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "vlm6d/error.h"
#include "vlm6d/nn/checkpoint.h"
#include "vlm6d/nn/optimizer.h"

namespace vlm6d {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string HexHash(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string UtcTimestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

fs::path ManifestPath(const RunConfig &config) {
  const fs::path &m = config.dataset.manifest;
  return m.is_absolute() ? m : config.dataset.root / m;
}

std::vector<int> ClassIds(const DatasetManifest &manifest) {
  std::vector<int> ids;
  for (const auto &o : manifest.objects) ids.push_back(o.object_id);
  return ids;
}

// Mean eval-mode pose loss over all samples, in fixed order.
double EvalPoseLoss(Vlm6dModel &model, const std::vector<Sample> &samples, const nn::Mat *rgb,
                    const std::map<int, ObjectModel> &models, const LossWeights &weights,
                    int batch_size) {
  double sum = 0.0;
  for (size_t start = 0; start < samples.size(); start += batch_size) {
    const size_t end = std::min(samples.size(), start + batch_size);
    std::vector<const ModelInput *> batch;
    for (size_t i = start; i < end; ++i) batch.push_back(&samples[i].input);
    nn::Mat rows;
    if (rgb) rows = rgb->middleRows(start, end - start);
    const auto preds =
        model.Forward(batch, rgb ? &rows : nullptr, Mode::kEval, false, 0, nullptr);
    for (size_t i = start; i < end; ++i) {
      const Sample &s = samples[i];
      sum += PoseLoss(preds[i - start], *s.input.gt_pose, models.at(s.ref.object_id),
                      s.input.cloud_centroid, model.ClassIndex(s.ref.object_id), weights)
                 .components.at("pose");
    }
  }
  return sum / static_cast<double>(samples.size());
}

class MetricsLog {
 public:
  MetricsLog(const fs::path &path, bool append)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  }
  void Write(const json &record) {
    out_ << record.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace

LoadedSamples LoadSamples(const fs::path &split_root, const DatasetManifest &manifest,
                          const PreprocessConfig &preprocess, std::uint64_t seed,
                          int max_samples) {
  LoadedSamples out;
  std::uint64_t index = 0;
  for (const FrameId &id : ListBopFrames(split_root)) {
    const RGBDFrame frame = LoadBopSample(split_root, id.scene, id.frame);
    for (size_t a = 0; a < frame.annotations.size(); ++a) {
      const int object_id = frame.annotations[a].object_id;
      if (manifest.ClassIndex(object_id) < 0) continue;
      if (max_samples > 0 && static_cast<int>(out.samples.size()) >= max_samples) return out;
      const SampleRef ref{id.scene, id.frame, static_cast<int>(a), object_id};
      const std::uint64_t sample_seed = nn::MixSeed(seed, index++);
      try {
        out.samples.push_back(
            {ref, Preprocess(frame, static_cast<int>(a), sample_seed, preprocess, true)});
      } catch (const Error &e) {
        if (e.code() != ErrorCode::kDegenerateSample && e.code() != ErrorCode::kContract) throw;
        out.skipped.push_back("scene " + std::to_string(id.scene) + " frame " +
                              std::to_string(id.frame) + " annotation " + std::to_string(a) +
                              ": " + e.what());
      }
    }
  }
  return out;
}

TrainResult Train(const RunConfig &config, const std::optional<fs::path> &resume) {
  config.Validate();
  // Every step allocates activations of the same sizes; keeping freed blocks
  // in the heap avoids re-faulting fresh pages each time.
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  const auto &opt_spec = config.optimizer;
  fs::create_directories(config.output_dir / "checkpoints");
  {
    std::ofstream f(config.output_dir / "config.json");
    f << config.ToJson().dump(2) << '\n';
  }

  const fs::path manifest_path = ManifestPath(config);
  const DatasetManifest manifest = LoadManifest(manifest_path);
  const auto models =
      LoadObjectModels(manifest, manifest_path.parent_path(), config.dataset.max_model_points);
  const LoadedSamples loaded = LoadSamples(config.dataset.root / config.dataset.split, manifest,
                                           config.preprocess, config.seed,
                                           config.dataset.max_samples);
  const std::vector<Sample> &samples = loaded.samples;
  if (samples.empty()) throw Error(ErrorCode::kIngestion, "no usable training samples");

  Vlm6dModel model(config.model, ClassIds(manifest), config.seed);
  nn::AdamW optimizer(model.TrainableParameters(), {0.9, 0.999, 1e-8, opt_spec.weight_decay});
  optimizer.ZeroGrad();

  TrainResult result;
  result.metrics_log = config.output_dir / "metrics.jsonl";
  int start_epoch = 0;
  if (resume) {
    const nn::Checkpoint ckpt = nn::LoadCheckpoint(*resume);
    model.LoadWeights(ckpt);
    optimizer.LoadState(ckpt);
    start_epoch = ckpt.metadata.at("epoch").get<int>();
    result.initial_pose_loss = ckpt.metadata.value("initial_pose_loss", 0.0);
  }
  MetricsLog log(result.metrics_log, resume.has_value());
  if (!resume)
    for (const auto &line : loaded.skipped) log.Write({{"kind", "skipped"}, {"reason", line}});

  const auto n = static_cast<Eigen::Index>(samples.size());
  nn::Mat rgb_features;
  if (model.rgb_frozen()) {
    rgb_features.resize(n, config.model.rgb.embed_dim);
    for (Eigen::Index i = 0; i < n; ++i)
      rgb_features.row(i) = model.EncodeRgb(samples[i].input.image).transpose();
  }
  const nn::Mat *rgb = model.rgb_frozen() ? &rgb_features : nullptr;

  const int batch = opt_spec.batch_size;
  const int accum = opt_spec.grad_accumulation;
  const std::int64_t batches_per_epoch = (n + batch - 1) / batch;
  const std::int64_t updates_per_epoch = (batches_per_epoch + accum - 1) / accum;
  const std::int64_t total_updates = updates_per_epoch * opt_spec.epochs;
  auto learning_rate = [&](std::int64_t update) {
    return opt_spec.schedule == "cosine"
               ? nn::CosineLearningRate(opt_spec.learning_rate, update, total_updates)
               : opt_spec.learning_rate;
  };

  if (start_epoch == 0) {
    result.initial_pose_loss =
        EvalPoseLoss(model, samples, rgb, models, config.loss, batch);
    log.Write({{"kind", "eval"}, {"epoch", 0}, {"pose", result.initial_pose_loss}});
  }

  fs::path last_checkpoint = resume ? *resume : fs::path();
  auto save = [&](const fs::path &path, int epochs_done) {
    json meta = {{"epoch", epochs_done},
                 {"step", epochs_done * batches_per_epoch},
                 {"config", config.ToJson()},
                 {"initial_pose_loss", result.initial_pose_loss}};
    nn::SaveCheckpoint(path, model.ToCheckpoint(meta, &optimizer));
    last_checkpoint = path;
  };

  for (int epoch = start_epoch; epoch < opt_spec.epochs; ++epoch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    nn::Rng shuffle_rng(nn::MixSeed(nn::MixSeed(config.seed, 101), epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const bool frozen_norm =
        opt_spec.freeze_norm_after_epoch >= 0 && epoch >= opt_spec.freeze_norm_after_epoch;
    const Mode norm_mode = frozen_norm ? Mode::kEval : Mode::kTrain;
    if (frozen_norm && epoch == opt_spec.freeze_norm_after_epoch) {
      std::vector<std::vector<Points>> batches;
      for (Eigen::Index i = 0; i < n; i += batch) {
        batches.emplace_back();
        for (auto j = i; j < std::min<Eigen::Index>(n, i + batch); ++j)
          batches.back().push_back(samples[j].input.cloud);
      }
      model.depth_encoder().CalibrateNormalization(batches);
      log.Write({{"kind", "calibrate_norm"},
                 {"epoch", epoch},
                 {"pose", EvalPoseLoss(model, samples, rgb, models, config.loss, batch)}});
    }

    double epoch_pose = 0.0;
    for (std::int64_t b = 0; b < batches_per_epoch; ++b) {
      const std::int64_t step = epoch * batches_per_epoch + b;
      const auto start = b * batch;
      const auto end = std::min<Eigen::Index>(n, start + batch);
      std::vector<const ModelInput *> inputs;
      nn::Mat rows(end - start, rgb ? rgb->cols() : 0);
      for (auto i = start; i < end; ++i) {
        inputs.push_back(&samples[order[i]].input);
        if (rgb) rows.row(i - start) = rgb->row(order[i]);
      }
      auto numeric_abort = [&](const std::string &what) {
        return Error(ErrorCode::kNumericAbort,
                     what + " at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step) + "; last good checkpoint: " +
                         (last_checkpoint.empty() ? std::string("none") : last_checkpoint.string()));
      };
      Vlm6dModel::StepCache cache;
      const auto preds =
          model.Forward(inputs, rgb ? &rows : nullptr, norm_mode, true,
                        nn::MixSeed(nn::MixSeed(config.seed, 103), step), &cache);

      const double scale = 1.0 / static_cast<double>((end - start) * accum);
      std::vector<PredictionGrad> grads;
      double total = 0.0, pose = 0.0, cls = 0.0, conf = 0.0;
      for (auto i = start; i < end; ++i) {
        const Sample &s = samples[order[i]];
        LossResult l;
        try {
          l = PoseLoss(preds[i - start], *s.input.gt_pose, models.at(s.ref.object_id),
                       s.input.cloud_centroid, model.ClassIndex(s.ref.object_id), config.loss);
        } catch (const Error &e) {
          // Diverged weights show up as a collapsed 6D output before the loss.
          if (e.code() != ErrorCode::kDegenerateRotation) throw;
          throw numeric_abort(e.what());
        }
        total += l.total;
        pose += l.components.at("pose");
        cls += l.components.at("cls");
        conf += l.components.at("conf");
        PredictionGrad g = l.grad;
        g.rotation_6d *= scale;
        g.translation_offset *= scale;
        g.confidence_logit *= scale;
        g.class_logits *= scale;
        grads.push_back(std::move(g));
      }
      const double count = static_cast<double>(end - start);
      const double lr = learning_rate(optimizer.step_count());
      log.Write({{"kind", "step"},
                 {"epoch", epoch},
                 {"step", step},
                 {"lr", lr},
                 {"loss", total / count},
                 {"pose", pose / count},
                 {"cls", cls / count},
                 {"conf", conf / count}});
      if (!std::isfinite(total)) throw numeric_abort("non-finite loss");
      epoch_pose += pose;
      model.Backward(cache, grads);
      if ((b + 1) % accum == 0 || b + 1 == batches_per_epoch) {
        optimizer.Step(lr);
        optimizer.ZeroGrad();
      }
    }
    log.Write({{"kind", "epoch"}, {"epoch", epoch + 1}, {"pose", epoch_pose / n}});
    if (opt_spec.checkpoint_every > 0 && (epoch + 1) % opt_spec.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch + 1);
      save(config.output_dir / "checkpoints" / name, epoch + 1);
    }
  }

  result.final_pose_loss = EvalPoseLoss(model, samples, rgb, models, config.loss, batch);
  log.Write({{"kind", "eval"}, {"epoch", opt_spec.epochs}, {"pose", result.final_pose_loss}});
  result.final_checkpoint = config.output_dir / "final.ckpt";
  save(result.final_checkpoint, opt_spec.epochs);
  result.steps = opt_spec.epochs * batches_per_epoch;
  return result;
}

std::optional<double> EvalReport::MeanOf(const std::vector<ObjectRow> &rows) {
  double sum = 0.0;
  int count = 0;
  for (const auto &r : rows) {
    if (!r.recall) continue;
    sum += *r.recall;
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

std::string EvalReport::FormatTable() const {
  std::ostringstream out;
  out << std::left << std::setw(14) << "Object" << std::right << std::setw(10) << "ADD(-S)"
      << std::setw(14) << "Mean err [m]" << std::setw(9) << "Samples" << '\n';
  out << std::fixed;
  int with_values = 0;
  for (const auto &r : rows) {
    out << std::left << std::setw(14) << (r.name + (r.symmetric ? "*" : "")) << std::right;
    if (r.recall) {
      ++with_values;
      out << std::setw(10) << std::setprecision(1) << *r.recall << std::setw(14)
          << std::setprecision(4) << *r.mean_error;
    } else {
      out << std::setw(10) << "n/a" << std::setw(14) << "n/a";
    }
    out << std::setw(9) << r.samples << '\n';
  }
  out << std::left << std::setw(14) << ("Avg (" + std::to_string(with_values) + ")")
      << std::right << std::setw(10);
  if (mean_recall)
    out << std::setprecision(1) << *mean_recall;
  else
    out << "n/a";
  out << '\n';
  return out.str();
}

json EvalReport::ToJson() const {
  json objects = json::array();
  for (const auto &r : rows) {
    objects.push_back({{"id", r.object_id},
                       {"name", r.name},
                       {"symmetric", r.symmetric},
                       {"samples", r.samples},
                       {"recall", r.recall ? json(*r.recall) : json("n/a")},
                       {"mean_error", r.mean_error ? json(*r.mean_error) : json(nullptr)}});
  }
  return {{"objects", objects},
          {"mean_recall", mean_recall ? json(*mean_recall) : json("n/a")},
          {"metadata", metadata}};
}

EvalReport EvaluatePoses(const DatasetManifest &manifest, const std::map<int, ObjectModel> &models,
                         const std::vector<PoseRecord> &records, double fraction) {
  std::map<int, std::vector<double>> errors;
  for (const auto &r : records) {
    if (manifest.ClassIndex(r.object_id) < 0)
      throw Error(ErrorCode::kContract,
                  "prediction for object " + std::to_string(r.object_id) + " not in manifest");
    const ObjectModel &m = models.at(r.object_id);
    errors[r.object_id].push_back(m.symmetric ? AddsMetric(r.predicted, r.gt, m)
                                              : AddMetric(r.predicted, r.gt, m));
  }
  EvalReport report;
  for (const auto &o : manifest.objects) {
    ObjectRow row;
    row.object_id = o.object_id;
    row.name = o.name;
    row.symmetric = models.at(o.object_id).symmetric;
    const auto it = errors.find(o.object_id);
    if (it != errors.end()) {
      row.samples = static_cast<int>(it->second.size());
      row.recall = RecallAtThreshold(it->second, models.at(o.object_id), fraction);
      row.mean_error = std::accumulate(it->second.begin(), it->second.end(), 0.0) /
                       static_cast<double>(it->second.size());
    }
    report.rows.push_back(std::move(row));
  }
  report.mean_recall = EvalReport::MeanOf(report.rows);
  report.metadata["threshold_fraction"] = fraction;
  return report;
}

EvalReport Evaluate(const RunConfig &config, const fs::path &checkpoint) {
  config.Validate();
  const fs::path manifest_path = ManifestPath(config);
  const DatasetManifest manifest = LoadManifest(manifest_path);
  const auto models =
      LoadObjectModels(manifest, manifest_path.parent_path(), config.dataset.max_model_points);
  if (!fs::exists(checkpoint))
    throw Error(ErrorCode::kIo, "checkpoint not found: " + checkpoint.string());
  Vlm6dModel model(config.model, ClassIds(manifest), config.seed);
  model.LoadWeights(nn::LoadCheckpoint(checkpoint));

  const fs::path split_root = config.dataset.root / config.dataset.EvalSplit();
  const LoadedSamples loaded = LoadSamples(split_root, manifest, config.preprocess, config.seed,
                                           config.dataset.max_samples);
  std::vector<PoseRecord> records;
  for (const Sample &s : loaded.samples) {
    const PosePrediction p = model.Predict(s.input);
    records.push_back({s.ref.object_id, *s.input.gt_pose, p.Decode(s.input.cloud_centroid)});
  }
  EvalReport report = EvaluatePoses(manifest, models, records);
  report.metadata["checkpoint"] = checkpoint.string();
  report.metadata["checkpoint_hash"] = HexHash(nn::HashFile(checkpoint));
  report.metadata["dataset"] = config.dataset.root.string();
  report.metadata["split"] = config.dataset.EvalSplit();
  report.metadata["skipped"] = loaded.skipped.size();
  report.metadata["timestamp"] = UtcTimestamp();
  return report;
}

InferResult Infer(const Vlm6dModel &model, const RGBDFrame &frame, const BoundingBox &bbox,
                  const PreprocessConfig &preprocess, std::uint64_t seed) {
  const ModelInput input = PreprocessRegion(frame, bbox, -1, seed, preprocess);
  InferResult r;
  r.prediction = model.Predict(input);
  r.pose = r.prediction.Decode(input.cloud_centroid);
  r.class_index = r.prediction.PredictedClass();
  r.object_id = model.class_ids().at(r.class_index);
  r.confidence = r.prediction.confidence;
  return r;
}

InferResult Infer(const fs::path &checkpoint, const RGBDFrame &frame, const BoundingBox &bbox) {
  if (!fs::exists(checkpoint))
    throw Error(ErrorCode::kIo, "checkpoint not found: " + checkpoint.string());
  const nn::Checkpoint ckpt = nn::LoadCheckpoint(checkpoint);
  const auto model = Vlm6dModel::FromCheckpoint(ckpt);
  PreprocessConfig preprocess;
  if (ckpt.metadata.contains("config"))
    preprocess = RunConfig::FromJson(ckpt.metadata.at("config")).preprocess;
  return Infer(*model, frame, bbox, preprocess);
}

}  // namespace vlm6d
