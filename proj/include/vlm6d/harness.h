#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlm6d/dataset.h"
#include "vlm6d/model.h"
#include "vlm6d/preprocess.h"
#include "vlm6d/run_config.h"

namespace vlm6d {

struct SampleRef {
  int scene = 0;
  int frame = 0;
  int annotation = 0;
  int object_id = 0;
};

struct Sample {
  SampleRef ref;
  ModelInput input;  // carries gt_pose
};

struct LoadedSamples {
  std::vector<Sample> samples;
  std::vector<std::string> skipped;  // one line per degenerate sample
};

// Every annotation of a manifest object in the split, in (scene, frame,
// annotation) order. Sample i is preprocessed with seed MixSeed(seed, i).
LoadedSamples LoadSamples(const std::filesystem::path &split_root, const DatasetManifest &manifest,
                          const PreprocessConfig &preprocess, std::uint64_t seed,
                          int max_samples = 0);

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_log;
  double initial_pose_loss = 0.0;  // eval-mode mean over the training set
  double final_pose_loss = 0.0;
  std::int64_t steps = 0;
};

// Runs the configured epochs, writing <output_dir>/config.json,
// metrics.jsonl (one JSON object per line, no timestamps) and checkpoints.
// A non-finite loss throws kNumericAbort; checkpoints already on disk are
// left untouched.
TrainResult Train(const RunConfig &config,
                  const std::optional<std::filesystem::path> &resume = std::nullopt);

struct ObjectRow {
  int object_id = 0;
  std::string name;
  bool symmetric = false;
  int samples = 0;
  std::optional<double> recall;      // percent, absent without samples
  std::optional<double> mean_error;  // meters
};

struct EvalReport {
  std::vector<ObjectRow> rows;  // manifest order
  std::optional<double> mean_recall;
  nlohmann::json metadata = nlohmann::json::object();

  // Arithmetic mean of the rows that have a recall.
  static std::optional<double> MeanOf(const std::vector<ObjectRow> &rows);
  std::string FormatTable() const;
  nlohmann::json ToJson() const;
};

struct PoseRecord {
  int object_id = 0;
  Pose gt;
  Pose predicted;
};

// ADD for asymmetric and ADD-S for symmetric objects; recall at
// fraction * diameter with strict inequality.
EvalReport EvaluatePoses(const DatasetManifest &manifest, const std::map<int, ObjectModel> &models,
                         const std::vector<PoseRecord> &records, double fraction = 0.1);

EvalReport Evaluate(const RunConfig &config, const std::filesystem::path &checkpoint);

struct InferResult {
  PosePrediction prediction;
  Pose pose;
  int class_index = -1;
  int object_id = -1;
  double confidence = 0.0;
};

InferResult Infer(const Vlm6dModel &model, const RGBDFrame &frame, const BoundingBox &bbox,
                  const PreprocessConfig &preprocess = {}, std::uint64_t seed = 0);
InferResult Infer(const std::filesystem::path &checkpoint, const RGBDFrame &frame,
                  const BoundingBox &bbox);

}  // namespace vlm6d
