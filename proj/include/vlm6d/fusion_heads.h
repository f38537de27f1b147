#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "vlm6d/geometry.h"
#include "vlm6d/nn/layers.h"

namespace vlm6d {

struct FeatureBundle {
  nn::Vec f_rgb;
  nn::Vec f_depth;
  nn::Vec f_concat;
  nn::Vec h1;
  nn::Vec f_fused;
};

struct FusionConfig {
  int rgb_dim = 768;
  int depth_dim = 1024;
  int hidden_dim = 1024;
  int fused_dim = 512;
  double dropout = 0.3;
};

// concat -> Linear -> ReLU -> Dropout -> Linear -> ReLU -> Dropout.
// Batched over rows; dropout uses inverted scaling so eval needs no rescale.
class FusionNetwork {
 public:
  struct Cache {
    nn::Mat concat;
    nn::Mat relu1;
    nn::Mat mask1;
    nn::Mat h1;
    nn::Mat relu2;
    nn::Mat mask2;
  };

  FusionNetwork(FusionConfig config, nn::Rng &rng);

  // B x fused_dim. Masks are drawn from dropout_seed when training.
  nn::Mat Forward(const nn::Mat &f_rgb, const nn::Mat &f_depth, bool training,
                  std::uint64_t dropout_seed, Cache *cache) const;
  // Returns (dL/df_rgb, dL/df_depth).
  std::pair<nn::Mat, nn::Mat> Backward(const Cache &cache, const nn::Mat &grad_fused);

  // Single-sample form exposing every intermediate.
  FeatureBundle Fuse(const nn::Vec &f_rgb, const nn::Vec &f_depth, bool training,
                     std::uint64_t dropout_seed) const;

  void Collect(nn::ParameterList &out);
  const FusionConfig &config() const { return config_; }

  nn::Linear fc1;
  nn::Linear fc2;

 private:
  FusionConfig config_;
};

struct PosePrediction {
  Vec6 rotation_6d = Vec6::Zero();
  Vec3 translation_offset = Vec3::Zero();
  double confidence_logit = 0.0;
  double confidence = 0.5;
  nn::Vec class_logits;

  Mat3 Rotation() const { return RotationFrom6d(rotation_6d); }
  // Translation is the offset added to the input cloud centroid.
  Pose Decode(const Vec3 &cloud_centroid) const;
  int PredictedClass() const;
};

struct PredictionGrad {
  Vec6 rotation_6d = Vec6::Zero();
  Vec3 translation_offset = Vec3::Zero();
  double confidence_logit = 0.0;
  nn::Vec class_logits;
};

// Four independent affine heads on the fused feature.
class PredictionHeads {
 public:
  PredictionHeads(int fused_dim, int num_classes, nn::Rng &rng);

  PosePrediction Predict(const nn::Vec &f_fused) const;
  std::vector<PosePrediction> PredictBatch(const nn::Mat &f_fused) const;
  // Returns dL/df_fused (B x fused_dim).
  nn::Mat Backward(const nn::Mat &f_fused, const std::vector<PredictionGrad> &grads);

  void Collect(nn::ParameterList &out);
  int num_classes() const { return classify.out_features(); }

  nn::Linear rotation;
  nn::Linear translation;
  nn::Linear confidence;
  nn::Linear classify;
};

struct LossWeights {
  double classification = 0.1;
  double confidence = 0.1;
  double tau = 0.05;  // meters
};

struct LossResult {
  double total = 0.0;
  std::map<std::string, double> components;  // "pose", "cls", "conf"
  double confidence_target = 1.0;
  PredictionGrad grad;
};

// total = pose + w_cls * cls + w_conf * conf. The pose term is the mean
// matched-point distance (nearest-point distance for symmetric models) under
// the decoded rotation and translation = centroid + offset. The confidence
// target exp(-pose / tau) is differentiated through as well.
LossResult PoseLoss(const PosePrediction &pred, const Pose &gt, const ObjectModel &model,
                    const Vec3 &cloud_centroid, int gt_class, const LossWeights &weights);

}  // namespace vlm6d
