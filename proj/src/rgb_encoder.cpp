#include "vlm6d/rgb_encoder.h"
#include "vlm6d/nn/optimizer.h"

#include <curl/curl.h>

#include <cmath>
#include <cstdio>

#include "vlm6d/error.h"

namespace vlm6d {

namespace {

constexpr const char *kPrefix = "rgb_encoder.";

void InitLinear(nn::Linear &linear, nn::Rng &rng) {
  nn::TruncatedNormalInit(linear.weight.value, 0.02, rng);
  linear.bias.value.setZero();
}

size_t WriteToFile(void *data, size_t size, size_t count, void *user) {
  return std::fwrite(data, size, count, static_cast<std::FILE *>(user));
}

}  // namespace

void RgbEncoderConfig::Validate() const {
  if (patch_size <= 0 || image_size <= 0 || embed_dim <= 0 || depth < 0 ||
      num_heads <= 0 || mlp_hidden <= 0)
    throw Error(ErrorCode::kConfig, "rgb encoder sizes must be positive");
  if (image_size % patch_size != 0)
    throw Error(ErrorCode::kConfig, "image_size " + std::to_string(image_size) +
                                        " not divisible by patch_size " +
                                        std::to_string(patch_size));
  if (embed_dim % num_heads != 0)
    throw Error(ErrorCode::kConfig, "embed_dim not divisible by num_heads");
}

RgbEncoderConfig RgbEncoderConfig::Dinov2VitB14() {
  RgbEncoderConfig c;
  c.patch_size = 14;
  return c;
}

nlohmann::json RgbEncoderConfig::ToJson() const {
  return {{"patch_size", patch_size},   {"image_size", image_size},
          {"embed_dim", embed_dim},     {"depth", depth},
          {"num_heads", num_heads},     {"mlp_hidden", mlp_hidden},
          {"norm_eps", norm_eps},       {"source", source},
          {"registry_url", registry_url},
          {"registry_cache", registry_cache.string()},
          {"allow_network", allow_network},
          {"freeze", freeze},           {"seed", seed}};
}

RgbEncoderConfig RgbEncoderConfig::FromJson(const nlohmann::json &j) {
  RgbEncoderConfig c;
  c.patch_size = j.value("patch_size", c.patch_size);
  c.image_size = j.value("image_size", c.image_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.depth = j.value("depth", c.depth);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.norm_eps = j.value("norm_eps", c.norm_eps);
  c.source = j.value("source", c.source);
  c.registry_url = j.value("registry_url", c.registry_url);
  c.registry_cache = j.value("registry_cache", c.registry_cache.string());
  c.allow_network = j.value("allow_network", c.allow_network);
  c.freeze = j.value("freeze", c.freeze);
  c.seed = j.value("seed", c.seed);
  return c;
}

VisionTransformer::VisionTransformer(const RgbEncoderConfig &config) : config_(config) {
  config_.Validate();
  const int d = config_.embed_dim;
  const int t = config_.sequence_length();
  const std::string p = kPrefix;
  nn::Rng rng(nn::MixSeed(config_.seed, 3));

  cls_token_ = nn::Parameter(p + "cls_token", {1, 1, d}, 1, d);
  pos_embed_ = nn::Parameter(p + "pos_embed", {1, t, d}, t, d);
  nn::TruncatedNormalInit(cls_token_.value, 0.02, rng);
  nn::TruncatedNormalInit(pos_embed_.value, 0.02, rng);
  patch_proj_ = nn::Linear(p + "patch_embed.proj", config_.patch_dim(), d, rng);
  patch_proj_.weight.shape = {d, 3, config_.patch_size, config_.patch_size};
  InitLinear(patch_proj_, rng);

  for (int i = 0; i < config_.depth; ++i) {
    const std::string b = p + "blocks." + std::to_string(i) + ".";
    Block block{nn::LayerNorm(b + "norm1", d, config_.norm_eps),
                nn::Linear(b + "attn.qkv", d, 3 * d, rng),
                nn::Linear(b + "attn.proj", d, d, rng),
                nn::Parameter(b + "ls1.gamma", {d}, 1, d),
                nn::LayerNorm(b + "norm2", d, config_.norm_eps),
                nn::Linear(b + "mlp.fc1", d, config_.mlp_hidden, rng),
                nn::Linear(b + "mlp.fc2", config_.mlp_hidden, d, rng),
                nn::Parameter(b + "ls2.gamma", {d}, 1, d)};
    InitLinear(block.qkv, rng);
    InitLinear(block.proj, rng);
    InitLinear(block.fc1, rng);
    InitLinear(block.fc2, rng);
    block.ls1.value.setOnes();
    block.ls2.value.setOnes();
    blocks_.push_back(std::move(block));
  }
  norm_ = nn::LayerNorm(p + "norm", d, config_.norm_eps);
}

nn::Mat VisionTransformer::ExtractPatches(const FloatImage &image) const {
  const int s = config_.image_size;
  if (image.height != s || image.width != s || image.channels != 3)
    throw Error(ErrorCode::kContract,
                "rgb encoder expects " + std::to_string(s) + "x" + std::to_string(s) +
                    "x3, got " + std::to_string(image.height) + "x" +
                    std::to_string(image.width) + "x" + std::to_string(image.channels));
  const int ps = config_.patch_size;
  const int g = config_.grid();
  nn::Mat patches(config_.n_patches(), config_.patch_dim());
  for (int py = 0; py < g; ++py) {
    for (int px = 0; px < g; ++px) {
      const int row = py * g + px;
      int col = 0;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < ps; ++y)
          for (int x = 0; x < ps; ++x)
            patches(row, col++) = image.at(py * ps + y, px * ps + x, c);
    }
  }
  return patches;
}

nn::Mat VisionTransformer::Patchify(const FloatImage &image) const {
  nn::Mat patches = ExtractPatches(image);
  nn::Mat tokens(config_.sequence_length(), config_.embed_dim);
  tokens.row(0) = cls_token_.value.row(0);
  tokens.bottomRows(config_.n_patches()) = patch_proj_.Forward(patches);
  tokens += pos_embed_.value;
  return tokens;
}

nn::Mat VisionTransformer::BlockForward(const Block &block, const nn::Mat &x,
                                        BlockCache *cache) const {
  const int d = config_.embed_dim;
  const int heads = config_.num_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index t = x.rows();

  nn::LayerNorm::Cache n1;
  nn::Mat h1 = block.norm1.Forward(x, cache ? &n1 : nullptr);
  nn::Mat qkv = block.qkv.Forward(h1);
  nn::Mat mixed(t, d);
  std::vector<nn::Mat> attention;
  for (int h = 0; h < heads; ++h) {
    auto q = qkv.middleCols(h * dh, dh);
    auto k = qkv.middleCols(d + h * dh, dh);
    auto v = qkv.middleCols(2 * d + h * dh, dh);
    nn::Mat scores(t, t);
    scores.noalias() = (q * k.transpose()) * scale;
    nn::Mat probs = nn::Softmax(scores);
    mixed.middleCols(h * dh, dh).noalias() = probs * v;
    if (cache) attention.push_back(std::move(probs));
  }
  nn::Mat attn_out = block.proj.Forward(mixed);
  nn::Mat x1 = x + (attn_out.array().rowwise() * block.ls1.value.row(0).array()).matrix();

  nn::LayerNorm::Cache n2;
  nn::Mat h2 = block.norm2.Forward(x1, cache ? &n2 : nullptr);
  nn::Mat f1 = block.fc1.Forward(h2);
  nn::Mat g = nn::Gelu(f1);
  nn::Mat f2 = block.fc2.Forward(g);
  nn::Mat out = x1 + (f2.array().rowwise() * block.ls2.value.row(0).array()).matrix();

  if (cache) {
    cache->input = x;
    cache->norm1 = std::move(n1);
    cache->h1 = std::move(h1);
    cache->qkv = std::move(qkv);
    cache->attention = std::move(attention);
    cache->mixed = std::move(mixed);
    cache->attn_out = std::move(attn_out);
    cache->x1 = std::move(x1);
    cache->norm2 = std::move(n2);
    cache->h2 = std::move(h2);
    cache->fc1_out = std::move(f1);
    cache->gelu_out = std::move(g);
    cache->fc2_out = std::move(f2);
  }
  return out;
}

nn::Mat VisionTransformer::BlockBackward(Block &block, const BlockCache &c,
                                         const nn::Mat &grad) {
  const int d = config_.embed_dim;
  const int heads = config_.num_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool train = !frozen_;

  // MLP branch.
  nn::Mat dx1 = grad;
  if (train) block.ls2.grad.row(0) += (grad.array() * c.fc2_out.array()).colwise().sum().matrix();
  nn::Mat df2 = grad.array().rowwise() * block.ls2.value.row(0).array();
  nn::Mat dg = block.fc2.Backward(c.gelu_out, df2);
  nn::Mat df1 = nn::GeluBackward(c.fc1_out, dg);
  nn::Mat dh2 = block.fc1.Backward(c.h2, df1);
  dx1 += block.norm2.Backward(c.norm2, dh2);

  // Attention branch.
  if (train) block.ls1.grad.row(0) += (dx1.array() * c.attn_out.array()).colwise().sum().matrix();
  nn::Mat dattn = dx1.array().rowwise() * block.ls1.value.row(0).array();
  nn::Mat dmixed = block.proj.Backward(c.mixed, dattn);
  nn::Mat dqkv(c.qkv.rows(), c.qkv.cols());
  for (int h = 0; h < heads; ++h) {
    auto q = c.qkv.middleCols(h * dh, dh);
    auto k = c.qkv.middleCols(d + h * dh, dh);
    auto v = c.qkv.middleCols(2 * d + h * dh, dh);
    const nn::Mat &p = c.attention[h];
    auto dout = dmixed.middleCols(h * dh, dh);
    nn::Mat dp(p.rows(), p.cols());
    dp.noalias() = dout * v.transpose();
    dqkv.middleCols(2 * d + h * dh, dh).noalias() = p.transpose() * dout;
    nn::Vec row_dot = (dp.array() * p.array()).rowwise().sum();
    nn::Mat ds = (p.array() * (dp.colwise() - row_dot).array()) * scale;
    dqkv.middleCols(h * dh, dh).noalias() = ds * k;
    dqkv.middleCols(d + h * dh, dh).noalias() = ds.transpose() * q;
  }
  nn::Mat dh1 = block.qkv.Backward(c.h1, dqkv);
  return dx1 + block.norm1.Backward(c.norm1, dh1);
}

nn::Vec VisionTransformer::Forward(const FloatImage &image, Cache *cache) const {
  nn::Mat patches = ExtractPatches(image);
  nn::Mat x(config_.sequence_length(), config_.embed_dim);
  x.row(0) = cls_token_.value.row(0);
  x.bottomRows(config_.n_patches()) = patch_proj_.Forward(patches);
  x += pos_embed_.value;
  if (cache) {
    cache->patches = std::move(patches);
    cache->blocks.assign(blocks_.size(), {});
  }
  for (size_t i = 0; i < blocks_.size(); ++i)
    x = BlockForward(blocks_[i], x, cache ? &cache->blocks[i] : nullptr);
  nn::LayerNorm::Cache final_norm;
  nn::Mat y = norm_.Forward(x.topRows(1), cache ? &final_norm : nullptr);
  if (cache) {
    cache->final_input = std::move(x);
    cache->final_norm = std::move(final_norm);
  }
  return y.row(0).transpose();
}

nn::Vec VisionTransformer::Encode(const FloatImage &image) const {
  return Forward(image, nullptr);
}

void VisionTransformer::Backward(const Cache &cache, const nn::Vec &grad_feature) {
  if (frozen_) return;
  nn::Mat g = grad_feature.transpose();
  nn::Mat dcls = norm_.Backward(cache.final_norm, g);
  nn::Mat dx = nn::Mat::Zero(cache.final_input.rows(), cache.final_input.cols());
  dx.row(0) = dcls.row(0);
  for (size_t i = blocks_.size(); i-- > 0;) dx = BlockBackward(blocks_[i], cache.blocks[i], dx);
  pos_embed_.grad += dx;
  cls_token_.grad.row(0) += dx.row(0);
  patch_proj_.Backward(cache.patches, dx.bottomRows(config_.n_patches()));
}

nn::ParameterList VisionTransformer::Parameters() {
  nn::ParameterList out{&cls_token_, &pos_embed_};
  patch_proj_.Collect(out);
  for (auto &b : blocks_) {
    b.norm1.Collect(out);
    b.qkv.Collect(out);
    b.proj.Collect(out);
    out.push_back(&b.ls1);
    b.norm2.Collect(out);
    b.fc1.Collect(out);
    b.fc2.Collect(out);
    out.push_back(&b.ls2);
  }
  norm_.Collect(out);
  return out;
}

void VisionTransformer::SetFrozen(bool frozen) {
  frozen_ = frozen;
  nn::SetTrainable(Parameters(), !frozen);
}

std::optional<std::filesystem::path> FileWeightSource::Resolve() const {
  if (!std::filesystem::exists(path_))
    throw Error(ErrorCode::kIo, "weight file not found: " + path_.string());
  return path_;
}

RegistryWeightSource::RegistryWeightSource(std::string id, std::string registry_url,
                                           std::filesystem::path cache_dir,
                                           bool allow_network)
    : id_(std::move(id)),
      registry_url_(std::move(registry_url)),
      cache_dir_(std::move(cache_dir)),
      allow_network_(allow_network) {}

std::optional<std::filesystem::path> RegistryWeightSource::Resolve() const {
  const auto cached = cache_dir_ / (id_ + ".ckpt");
  if (std::filesystem::exists(cached)) return cached;
  if (!allow_network_)
    throw Error(ErrorCode::kConfig, "registry id '" + id_ +
                                        "' not cached and network access is disabled");
  if (registry_url_.empty())
    throw Error(ErrorCode::kConfig, "registry id '" + id_ + "' but no registry_url configured");

  std::filesystem::create_directories(cache_dir_);
  const auto partial = cached.string() + ".part";
  const std::string url = registry_url_ + "/" + id_ + ".ckpt";
  std::FILE *file = std::fopen(partial.c_str(), "wb");
  if (!file) throw Error(ErrorCode::kIo, "cannot write " + partial);
  CURL *curl = curl_easy_init();
  if (!curl) {
    std::fclose(file);
    throw Error(ErrorCode::kIo, "curl initialization failed");
  }
  curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, WriteToFile);
  curl_easy_setopt(curl, CURLOPT_WRITEDATA, file);
  curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
  CURLcode rc = curl_easy_perform(curl);
  curl_easy_cleanup(curl);
  std::fclose(file);
  if (rc != CURLE_OK) {
    std::filesystem::remove(partial);
    throw Error(ErrorCode::kIo, "download of " + url + " failed: " + curl_easy_strerror(rc));
  }
  std::filesystem::rename(partial, cached);
  return cached;
}

std::unique_ptr<WeightSource> MakeWeightSource(const RgbEncoderConfig &config) {
  const std::string &s = config.source;
  if (s.empty() || s == "random") return std::make_unique<RandomWeightSource>();
  constexpr std::string_view kRegistry = "registry:";
  if (s.rfind(kRegistry, 0) == 0)
    return std::make_unique<RegistryWeightSource>(s.substr(kRegistry.size()),
                                                  config.registry_url, config.registry_cache,
                                                  config.allow_network);
  return std::make_unique<FileWeightSource>(s);
}

PretrainedEncoder LoadPretrained(const RgbEncoderConfig &config, const WeightSource &source) {
  PretrainedEncoder out;
  out.encoder = std::make_unique<VisionTransformer>(config);
  auto path = source.Resolve();
  if (path) {
    nn::Checkpoint ckpt = nn::LoadCheckpoint(*path);
    // Accept both bare DINOv2-style names and names under the encoder prefix.
    bool prefixed = false;
    for (const auto &[name, t] : ckpt.tensors)
      if (name.rfind(kPrefix, 0) == 0) prefixed = true;
    if (!prefixed) {
      nn::Checkpoint renamed;
      renamed.metadata = ckpt.metadata;
      for (auto &[name, t] : ckpt.tensors) renamed.tensors[kPrefix + name] = std::move(t);
      ckpt = std::move(renamed);
    }
    out.report = nn::LoadParameters(ckpt, out.encoder->Parameters(),
                                    [](const std::string &) { return true; }, kPrefix);
  }
  out.encoder->SetFrozen(config.freeze);
  return out;
}

void SaveRgbEncoder(VisionTransformer &encoder, const std::filesystem::path &path) {
  nn::Checkpoint ckpt;
  ckpt.metadata["rgb_encoder"] = encoder.config().ToJson();
  nn::StoreParameters(encoder.Parameters(), ckpt);
  nn::SaveCheckpoint(path, ckpt);
}

}  // namespace vlm6d
