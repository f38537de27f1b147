#include "vlm6d/model.h"

#include <cstdio>

#include "vlm6d/error.h"

namespace vlm6d {
using nlohmann::json;

namespace {

std::string HexHash(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool StartsWith(const std::string &s, const std::string &prefix) {
  return s.rfind(prefix, 0) == 0;
}

}  // namespace

Vlm6dModel::Vlm6dModel(const ModelSpec &spec, std::vector<int> class_ids, std::uint64_t seed)
    : spec_(spec),
      class_ids_(std::move(class_ids)),
      seed_(seed),
      depth_(spec.depth, nn::MixSeed(seed, 1)),
      head_rng_(nn::MixSeed(seed, 2)),
      fusion_(spec.fusion, head_rng_),
      heads_(spec.fusion.fused_dim, static_cast<int>(class_ids_.size()), head_rng_) {
  if (class_ids_.empty()) throw Error(ErrorCode::kConfig, "model needs at least one class");
  const auto source = MakeWeightSource(spec_.rgb);
  if (auto path = source->Resolve()) rgb_source_hash_ = HexHash(nn::HashFile(*path));
  rgb_ = std::move(LoadPretrained(spec_.rgb, *source).encoder);
}

int Vlm6dModel::ClassIndex(int object_id) const {
  for (size_t i = 0; i < class_ids_.size(); ++i)
    if (class_ids_[i] == object_id) return static_cast<int>(i);
  return -1;
}

nn::Vec Vlm6dModel::EncodeRgb(const FloatImage &image) const { return rgb_->Encode(image); }

std::vector<PosePrediction> Vlm6dModel::Forward(const std::vector<const ModelInput *> &batch,
                                                const nn::Mat *rgb_features, Mode norm_mode,
                                                bool dropout, std::uint64_t dropout_seed,
                                                StepCache *cache) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  nn::Mat f_rgb;
  if (rgb_features) {
    if (!rgb_->frozen())
      throw Error(ErrorCode::kContract, "precomputed rgb features need a frozen backbone");
    if (rgb_features->rows() != b)
      throw Error(ErrorCode::kContract, "rgb feature rows do not match the batch");
    f_rgb = *rgb_features;
  } else {
    f_rgb.resize(b, spec_.rgb.embed_dim);
    const bool keep = cache && !rgb_->frozen();
    if (keep) cache->rgb.resize(batch.size());
    for (Eigen::Index i = 0; i < b; ++i)
      f_rgb.row(i) = rgb_->Forward(batch[i]->image, keep ? &cache->rgb[i] : nullptr).transpose();
  }

  std::vector<Points> clouds;
  clouds.reserve(batch.size());
  for (const ModelInput *in : batch) clouds.push_back(in->cloud);
  DepthEncoder::Cache local_depth;
  const nn::Mat f_depth =
      depth_.EncodeBatch(clouds, norm_mode, cache ? &cache->depth : &local_depth);

  FusionNetwork::Cache local_fusion;
  nn::Mat fused = fusion_.Forward(f_rgb, f_depth, dropout, dropout_seed,
                                  cache ? &cache->fusion : &local_fusion);
  auto predictions = heads_.PredictBatch(fused);
  if (cache) cache->fused = std::move(fused);
  return predictions;
}

void Vlm6dModel::Backward(const StepCache &cache, const std::vector<PredictionGrad> &grads) {
  const nn::Mat grad_fused = heads_.Backward(cache.fused, grads);
  const auto [grad_rgb, grad_depth] = fusion_.Backward(cache.fusion, grad_fused);
  depth_.Backward(cache.depth, grad_depth);
  if (!rgb_->frozen() && !cache.rgb.empty())
    for (size_t i = 0; i < cache.rgb.size(); ++i)
      rgb_->Backward(cache.rgb[i], grad_rgb.row(static_cast<Eigen::Index>(i)).transpose());
}

PosePrediction Vlm6dModel::Predict(const ModelInput &input) const {
  const nn::Mat f_rgb = rgb_->Encode(input.image).transpose();
  const nn::Mat f_depth = depth_.EncodeBatch({input.cloud}, nullptr);
  FusionNetwork::Cache unused;
  const nn::Mat fused = fusion_.Forward(f_rgb, f_depth, false, 0, &unused);
  return heads_.PredictBatch(fused).front();
}

nn::ParameterList Vlm6dModel::TrainableParameters() {
  nn::ParameterList out;
  for (nn::Parameter *p : StoredParameters())
    if (p->trainable && !p->buffer) out.push_back(p);
  return out;
}

nn::ParameterList Vlm6dModel::StoredParameters() {
  nn::ParameterList out;
  if (!rgb_->frozen()) out = rgb_->Parameters();
  for (nn::Parameter *p : depth_.Parameters()) out.push_back(p);
  fusion_.Collect(out);
  heads_.Collect(out);
  return out;
}

json Vlm6dModel::RgbProvenance() const {
  json j = {{"source", spec_.rgb.source}, {"seed", spec_.rgb.seed}, {"stored", !rgb_->frozen()}};
  if (!rgb_source_hash_.empty()) j["source_hash"] = rgb_source_hash_;
  return j;
}

nn::Checkpoint Vlm6dModel::ToCheckpoint(const json &metadata, const nn::AdamW *optimizer) {
  nn::Checkpoint ckpt;
  ckpt.metadata = metadata;
  ckpt.metadata["format"] = "vlm6d-model";
  ckpt.metadata["model"] = ModelSpecToJson(spec_);
  ckpt.metadata["class_ids"] = class_ids_;
  ckpt.metadata["seed"] = seed_;
  ckpt.metadata["rgb_weights"] = RgbProvenance();
  nn::StoreParameters(StoredParameters(), ckpt);
  if (optimizer) optimizer->SaveState(ckpt);
  return ckpt;
}

void Vlm6dModel::LoadWeights(const nn::Checkpoint &ckpt) {
  const json &meta = ckpt.metadata;
  if (meta.value("format", std::string()) != "vlm6d-model")
    throw Error(ErrorCode::kIncompatibleWeights, "not a model checkpoint");
  if (meta.at("class_ids").get<std::vector<int>>() != class_ids_)
    throw Error(ErrorCode::kIncompatibleWeights, "checkpoint class set differs from the manifest");
  const json &rgb = meta.at("rgb_weights");
  if (!rgb.at("stored").get<bool>()) {
    // The frozen backbone must come from the same place.
    const json mine = RgbProvenance();
    for (const char *key : {"source", "seed", "source_hash"}) {
      if (rgb.value(key, json()) != mine.value(key, json()))
        throw Error(ErrorCode::kIncompatibleWeights,
                    std::string("frozen rgb backbone differs in '") + key + "'");
    }
    if (!rgb_->frozen())
      throw Error(ErrorCode::kIncompatibleWeights,
                  "checkpoint holds no rgb_encoder tensors but the backbone is trainable");
  } else if (rgb_->frozen()) {
    // Fine-tuned backbone weights override the configured source.
    nn::LoadParameters(ckpt, rgb_->Parameters(), [](const std::string &) { return true; });
  }
  nn::LoadParameters(ckpt, StoredParameters(), [](const std::string &name) {
    return !StartsWith(name, "optim.");
  });
}

std::unique_ptr<Vlm6dModel> Vlm6dModel::FromCheckpoint(const nn::Checkpoint &ckpt) {
  const json &meta = ckpt.metadata;
  if (meta.value("format", std::string()) != "vlm6d-model")
    throw Error(ErrorCode::kIncompatibleWeights, "not a model checkpoint");
  ModelSpec spec = ModelSpecFromJson(meta.at("model"));
  // A stored backbone is restored from the checkpoint itself.
  if (meta.at("rgb_weights").at("stored").get<bool>()) {
    spec.rgb.source = "random";
    spec.rgb.freeze = false;
  }
  auto model = std::make_unique<Vlm6dModel>(spec, meta.at("class_ids").get<std::vector<int>>(),
                                            meta.at("seed").get<std::uint64_t>());
  if (meta.at("rgb_weights").at("stored").get<bool>()) {
    nn::LoadParameters(ckpt, model->StoredParameters(),
                       [](const std::string &name) { return !StartsWith(name, "optim."); });
    model->rgb_->SetFrozen(true);
  } else {
    model->LoadWeights(ckpt);
  }
  return model;
}

}  // namespace vlm6d
