#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "vlm6d/geometry.h"
#include "vlm6d/nn/layers.h"
#include "vlm6d/pointcloud_ops.h"

namespace vlm6d {

enum class Mode { kTrain, kEval };

struct SetAbstractionConfig {
  int n_centers = 0;  // 0 pools every incoming point into one global feature
  double radius = 0.0;
  int nsample = 0;
  std::vector<int> mlp_widths;  // includes the input width

  bool is_global() const { return n_centers == 0; }
  void Validate(int incoming_features) const;
};

struct DepthEncoderConfig {
  int num_points = 2048;
  std::vector<SetAbstractionConfig> layers;

  // 2048 -> 512 (r 0.2) -> 128 (r 0.4) -> global 1024, nsample 32.
  static DepthEncoderConfig Default();
  int output_dim() const { return layers.back().mlp_widths.back(); }

  nlohmann::json ToJson() const;
  static DepthEncoderConfig FromJson(const nlohmann::json &j);
};

struct EncoderState {
  Points coords;       // K x 3, normalized units
  nn::Mat features;    // K x C (C may be 0)
};

// Sampling, grouping and a shared per-point MLP (Linear -> BatchNorm -> ReLU
// per layer) followed by a max over each group. Rows of all clouds in a batch
// share the normalization statistics.
class SetAbstraction {
 public:
  struct Cache {
    std::vector<std::vector<int>> centers;     // per cloud
    std::vector<IndexMatrix> neighbors;        // per cloud, K x S
    std::vector<Eigen::Index> input_points;    // per cloud
    std::vector<int> input_features;           // per cloud
    std::vector<nn::Mat> layer_inputs;
    std::vector<nn::BatchNorm::Cache> norm_caches;
    std::vector<nn::Mat> layer_outputs;
    Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax;
    int group_size = 0;
    int groups_per_cloud = 0;
  };

  SetAbstraction() = default;
  SetAbstraction(const std::string &name, SetAbstractionConfig config, nn::Rng &rng);

  std::vector<EncoderState> Forward(const std::vector<EncoderState> &batch, Mode mode,
                                    Cache *cache);
  std::vector<EncoderState> Forward(const std::vector<EncoderState> &batch,
                                    Cache *cache) const;

  // grad_out carries feature gradients (and optionally coordinate gradients
  // of the emitted centers). Returns gradients for the input states.
  std::vector<EncoderState> Backward(const Cache &cache,
                                     const std::vector<EncoderState> &grad_out);

  void Collect(nn::ParameterList &out);
  const SetAbstractionConfig &config() const { return config_; }
  void SetCalibrating(bool on);

 private:
  template <typename Self>
  static std::vector<EncoderState> Run(Self &self, const std::vector<EncoderState> &batch,
                                       bool train, Cache *cache);

  SetAbstractionConfig config_;
  std::vector<nn::Linear> linears_;
  std::vector<nn::BatchNorm> norms_;
};

class DepthEncoder {
 public:
  struct Cache {
    std::vector<NormalizedCloud> normalized;
    std::vector<Points> raw;
    std::vector<SetAbstraction::Cache> layers;
    std::vector<std::vector<EncoderState>> states;  // output of every layer
  };

  explicit DepthEncoder(DepthEncoderConfig config = DepthEncoderConfig::Default(),
                        std::uint64_t seed = 0);

  // Eval-mode f_depth for a cloud of exactly num_points points.
  nn::Vec Encode(const PointCloud &cloud) const;

  // B x output_dim. Clouds must have num_points rows.
  nn::Mat EncodeBatch(const std::vector<Points> &clouds, Mode mode, Cache *cache);
  nn::Mat EncodeBatch(const std::vector<Points> &clouds, Cache *cache) const;

  // Accumulates parameter gradients; returns dL/d(raw coords) per cloud.
  std::vector<Points> Backward(const Cache &cache, const nn::Mat &grad_out);

  // Replaces every running statistic with its average over train-mode
  // passes of `batches`, so eval mode normalizes with data statistics.
  void CalibrateNormalization(const std::vector<std::vector<Points>> &batches);

  nn::ParameterList Parameters();
  const DepthEncoderConfig &config() const { return config_; }

 private:
  template <typename Self>
  static nn::Mat Run(Self &self, const std::vector<Points> &clouds, bool train,
                     Cache *cache);

  DepthEncoderConfig config_;
  std::vector<SetAbstraction> layers_;
};

}  // namespace vlm6d
