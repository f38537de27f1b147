#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "json.hpp"
#include "vlm6d/depth_encoder.h"
#include "vlm6d/fusion_heads.h"
#include "vlm6d/nn/checkpoint.h"
#include "vlm6d/nn/optimizer.h"
#include "vlm6d/preprocess.h"
#include "vlm6d/rgb_encoder.h"
#include "vlm6d/run_config.h"

namespace vlm6d {

// RGB and depth encoders, late fusion and the four prediction heads.
// Class index i corresponds to class_ids()[i].
class Vlm6dModel {
 public:
  struct StepCache {
    std::vector<VisionTransformer::Cache> rgb;  // empty while the backbone is frozen
    DepthEncoder::Cache depth;
    FusionNetwork::Cache fusion;
    nn::Mat fused;
  };

  Vlm6dModel(const ModelSpec &spec, std::vector<int> class_ids, std::uint64_t seed);

  // Forward over a batch. `rgb_features` (B x rgb_dim) replaces the backbone
  // pass when given; it must then be frozen. Normalization layers follow
  // `norm_mode`; dropout is active only when `dropout` is set.
  std::vector<PosePrediction> Forward(const std::vector<const ModelInput *> &batch,
                                      const nn::Mat *rgb_features, Mode norm_mode, bool dropout,
                                      std::uint64_t dropout_seed, StepCache *cache);
  // Accumulates gradients of every trainable parameter.
  void Backward(const StepCache &cache, const std::vector<PredictionGrad> &grads);

  // Deterministic eval-mode pass.
  PosePrediction Predict(const ModelInput &input) const;
  nn::Vec EncodeRgb(const FloatImage &image) const;

  nn::ParameterList TrainableParameters();
  // Everything written to a checkpoint. A frozen backbone is recorded by its
  // weight source instead of being stored.
  nn::ParameterList StoredParameters();

  int ClassIndex(int object_id) const;  // -1 when unknown
  const std::vector<int> &class_ids() const { return class_ids_; }
  const ModelSpec &spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  bool rgb_frozen() const { return rgb_->frozen(); }

  VisionTransformer &rgb_encoder() { return *rgb_; }
  DepthEncoder &depth_encoder() { return depth_; }
  FusionNetwork &fusion() { return fusion_; }
  PredictionHeads &heads() { return heads_; }

  // Weights plus `metadata` plus optimizer moments when given.
  nn::Checkpoint ToCheckpoint(const nlohmann::json &metadata, const nn::AdamW *optimizer);
  // Verifies the checkpoint describes this architecture and class set, then
  // copies its weights. Throws kIncompatibleWeights on any mismatch.
  void LoadWeights(const nn::Checkpoint &ckpt);

  // Rebuilds the model described by a checkpoint's metadata.
  static std::unique_ptr<Vlm6dModel> FromCheckpoint(const nn::Checkpoint &ckpt);

 private:
  nlohmann::json RgbProvenance() const;

  ModelSpec spec_;
  std::vector<int> class_ids_;
  std::uint64_t seed_;
  std::unique_ptr<VisionTransformer> rgb_;
  std::string rgb_source_hash_;
  DepthEncoder depth_;
  nn::Rng head_rng_;
  FusionNetwork fusion_;
  PredictionHeads heads_;
};

}  // namespace vlm6d
