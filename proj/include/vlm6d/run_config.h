#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "json.hpp"
#include "vlm6d/depth_encoder.h"
#include "vlm6d/fusion_heads.h"
#include "vlm6d/preprocess.h"
#include "vlm6d/rgb_encoder.h"

namespace vlm6d {

struct DatasetSpec {
  std::filesystem::path root;
  std::string split = "train";
  std::string eval_split;  // empty: same as split
  std::filesystem::path manifest = "manifest.json";  // relative to root
  int max_model_points = 1000;
  int max_samples = 0;  // 0 keeps every annotation

  const std::string &EvalSplit() const { return eval_split.empty() ? split : eval_split; }
};

struct ModelSpec {
  RgbEncoderConfig rgb;
  DepthEncoderConfig depth = DepthEncoderConfig::Default();
  FusionConfig fusion;
};

nlohmann::json ModelSpecToJson(const ModelSpec &spec);
ModelSpec ModelSpecFromJson(const nlohmann::json &j);

struct OptimizerSpec {
  std::string name = "adamw";
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::string schedule = "cosine";  // or "constant"
  int epochs = 1;
  int batch_size = 8;
  int grad_accumulation = 1;
  // From this epoch on, normalization layers use running statistics, first
  // recalibrated over the training set at that epoch.
  // Negative disables.
  int freeze_norm_after_epoch = -1;
  int checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint
};

struct RunConfig {
  DatasetSpec dataset;
  ModelSpec model;
  OptimizerSpec optimizer;
  LossWeights loss;
  PreprocessConfig preprocess;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";

  void Validate() const;
  nlohmann::json ToJson() const;
  static RunConfig FromJson(const nlohmann::json &j);
};

using EnvLookup = std::function<std::optional<std::string>(const std::string &)>;
std::optional<std::string> ProcessEnv(const std::string &name);

// Every leaf of `j` may be replaced by VLM6D_<PATH> where PATH joins the keys
// with '_' in upper case, e.g. VLM6D_OPTIMIZER_LEARNING_RATE. Array leaves
// take a JSON literal.
void ApplyEnvOverrides(nlohmann::json &j, const EnvLookup &lookup = ProcessEnv);

// Parses the file over the defaults, applies environment overrides, resolves
// relative paths against the file's directory and validates.
RunConfig LoadRunConfig(const std::filesystem::path &path, const EnvLookup &lookup = ProcessEnv);

}  // namespace vlm6d
