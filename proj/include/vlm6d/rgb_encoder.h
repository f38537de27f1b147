#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlm6d/image.h"
#include "vlm6d/nn/checkpoint.h"
#include "vlm6d/nn/layers.h"

namespace vlm6d {

struct RgbEncoderConfig {
  int patch_size = 16;
  int image_size = 224;
  int embed_dim = 768;
  int depth = 12;
  int num_heads = 12;
  int mlp_hidden = 3072;
  double norm_eps = 1e-6;
  // "random", a checkpoint path, or "registry:<id>".
  std::string source = "random";
  std::string registry_url;
  std::filesystem::path registry_cache = ".vlm6d_cache";
  bool allow_network = false;
  bool freeze = true;
  std::uint64_t seed = 0;

  int grid() const { return image_size / patch_size; }
  int n_patches() const { return grid() * grid(); }
  int sequence_length() const { return n_patches() + 1; }
  int patch_dim() const { return 3 * patch_size * patch_size; }
  void Validate() const;

  // 14-pixel patches (256 + 1 tokens at 224) for running DINOv2 ViT-B/14
  // weights converted to the checkpoint format.
  static RgbEncoderConfig Dinov2VitB14();

  nlohmann::json ToJson() const;
  static RgbEncoderConfig FromJson(const nlohmann::json &j);
};

// Pre-norm vision transformer with LayerScale, emitting the normalized class
// token. Parameter names follow the DINOv2 state-dict layout under the
// "rgb_encoder." prefix.
class VisionTransformer {
 public:
  struct BlockCache {
    nn::Mat input;
    nn::LayerNorm::Cache norm1;
    nn::Mat h1;
    nn::Mat qkv;
    std::vector<nn::Mat> attention;  // per head, T x T
    nn::Mat mixed;                   // concatenated head outputs
    nn::Mat attn_out;
    nn::Mat x1;
    nn::LayerNorm::Cache norm2;
    nn::Mat h2;
    nn::Mat fc1_out;
    nn::Mat gelu_out;
    nn::Mat fc2_out;
  };
  struct Cache {
    nn::Mat patches;
    std::vector<BlockCache> blocks;
    nn::Mat final_input;
    nn::LayerNorm::Cache final_norm;
  };

  explicit VisionTransformer(const RgbEncoderConfig &config);

  // Row-major patches flattened in (channel, y, x) order. N x 3P^2.
  nn::Mat ExtractPatches(const FloatImage &image) const;
  // Class token followed by projected patches, positional encodings added.
  nn::Mat Patchify(const FloatImage &image) const;

  nn::Vec Encode(const FloatImage &image) const;
  nn::Vec Forward(const FloatImage &image, Cache *cache) const;
  // Accumulates gradients of trainable parameters.
  void Backward(const Cache &cache, const nn::Vec &grad_feature);

  nn::ParameterList Parameters();
  const RgbEncoderConfig &config() const { return config_; }
  void SetFrozen(bool frozen);
  bool frozen() const { return frozen_; }

 private:
  struct Block {
    nn::LayerNorm norm1;
    nn::Linear qkv;
    nn::Linear proj;
    nn::Parameter ls1;
    nn::LayerNorm norm2;
    nn::Linear fc1;
    nn::Linear fc2;
    nn::Parameter ls2;
  };

  nn::Mat BlockForward(const Block &block, const nn::Mat &x, BlockCache *cache) const;
  nn::Mat BlockBackward(Block &block, const BlockCache &cache, const nn::Mat &grad);

  RgbEncoderConfig config_;
  nn::Parameter cls_token_;
  nn::Parameter pos_embed_;
  nn::Linear patch_proj_;
  std::vector<Block> blocks_;
  nn::LayerNorm norm_;
  bool frozen_ = false;
};

// Where encoder weights come from. Resolve() yields a local checkpoint path,
// or nullopt for fresh random initialization.
class WeightSource {
 public:
  virtual ~WeightSource() = default;
  virtual std::optional<std::filesystem::path> Resolve() const = 0;
  virtual std::string Describe() const = 0;
};

class RandomWeightSource : public WeightSource {
 public:
  std::optional<std::filesystem::path> Resolve() const override { return std::nullopt; }
  std::string Describe() const override { return "random"; }
};

class FileWeightSource : public WeightSource {
 public:
  explicit FileWeightSource(std::filesystem::path path) : path_(std::move(path)) {}
  std::optional<std::filesystem::path> Resolve() const override;
  std::string Describe() const override { return path_.string(); }

 private:
  std::filesystem::path path_;
};

// Downloads <registry_url>/<id>.ckpt into the cache directory on first use.
// Never touches the network unless allow_network is set.
class RegistryWeightSource : public WeightSource {
 public:
  RegistryWeightSource(std::string id, std::string registry_url,
                       std::filesystem::path cache_dir, bool allow_network);
  std::optional<std::filesystem::path> Resolve() const override;
  std::string Describe() const override { return "registry:" + id_; }

 private:
  std::string id_;
  std::string registry_url_;
  std::filesystem::path cache_dir_;
  bool allow_network_;
};

std::unique_ptr<WeightSource> MakeWeightSource(const RgbEncoderConfig &config);

struct PretrainedEncoder {
  std::unique_ptr<VisionTransformer> encoder;
  nn::LoadReport report;
};

// Every backbone tensor is required; a missing or mis-shaped tensor throws
// kIncompatibleWeights naming it. Unknown tensors are reported, not fatal.
PretrainedEncoder LoadPretrained(const RgbEncoderConfig &config,
                                 const WeightSource &source);

void SaveRgbEncoder(VisionTransformer &encoder, const std::filesystem::path &path);

}  // namespace vlm6d
