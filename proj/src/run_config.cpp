#include "vlm6d/run_config.h"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>

#include "vlm6d/error.h"

namespace vlm6d {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void MergeInto(json &base, const json &patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
      MergeInto(base[it.key()], *it);
    else
      base[it.key()] = *it;
  }
}

std::string EnvName(const std::string &path) {
  std::string out = "VLM6D";
  out += path;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

json ParseOverride(const json &current, const std::string &name, const std::string &text) {
  try {
    if (current.is_boolean()) {
      std::string lower = text;
      std::transform(lower.begin(), lower.end(), lower.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (lower == "1" || lower == "true" || lower == "yes") return true;
      if (lower == "0" || lower == "false" || lower == "no") return false;
      throw Error(ErrorCode::kConfig, name + " expects a boolean, got '" + text + "'");
    }
    if (current.is_number_unsigned()) return std::stoull(text);
    if (current.is_number_integer()) return std::stoll(text);
    if (current.is_number()) return std::stod(text);
    if (current.is_string()) return text;
    return json::parse(text);
  } catch (const Error &) {
    throw;
  } catch (const std::exception &) {
    throw Error(ErrorCode::kConfig, name + ": cannot parse '" + text + "'");
  }
}

void Walk(json &node, const std::string &path, const EnvLookup &lookup) {
  if (node.is_object()) {
    for (auto it = node.begin(); it != node.end(); ++it) Walk(*it, path + "_" + it.key(), lookup);
    return;
  }
  const std::string name = EnvName(path);
  if (auto value = lookup(name)) node = ParseOverride(node, name, *value);
}

template <typename T>
T Get(const json &j, const char *key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception &e) {
    throw Error(ErrorCode::kConfig, std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

std::optional<std::string> ProcessEnv(const std::string &name) {
  if (const char *v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

void ApplyEnvOverrides(json &j, const EnvLookup &lookup) { Walk(j, "", lookup); }

json ModelSpecToJson(const ModelSpec &spec) {
  const auto &f = spec.fusion;
  return {{"rgb_encoder", spec.rgb.ToJson()},
          {"depth_encoder", spec.depth.ToJson()},
          {"fusion",
           {{"rgb_dim", f.rgb_dim},
            {"depth_dim", f.depth_dim},
            {"hidden_dim", f.hidden_dim},
            {"fused_dim", f.fused_dim},
            {"dropout", f.dropout}}}};
}

ModelSpec ModelSpecFromJson(const json &m) {
  ModelSpec spec;
  try {
    spec.rgb = RgbEncoderConfig::FromJson(m.at("rgb_encoder"));
    spec.depth = DepthEncoderConfig::FromJson(m.at("depth_encoder"));
    const json &f = m.at("fusion");
    spec.fusion.rgb_dim = Get<int>(f, "rgb_dim");
    spec.fusion.depth_dim = Get<int>(f, "depth_dim");
    spec.fusion.hidden_dim = Get<int>(f, "hidden_dim");
    spec.fusion.fused_dim = Get<int>(f, "fused_dim");
    spec.fusion.dropout = Get<double>(f, "dropout");
  } catch (const json::exception &e) {
    throw Error(ErrorCode::kConfig, std::string("model spec: ") + e.what());
  }
  return spec;
}

void RunConfig::Validate() const {
  const auto &o = optimizer;
  if (o.epochs < 1) throw Error(ErrorCode::kConfig, "optimizer.epochs must be >= 1");
  if (!(o.learning_rate > 0)) throw Error(ErrorCode::kConfig, "optimizer.learning_rate must be > 0");
  if (o.weight_decay < 0) throw Error(ErrorCode::kConfig, "optimizer.weight_decay must be >= 0");
  if (o.batch_size < 1) throw Error(ErrorCode::kConfig, "optimizer.batch_size must be >= 1");
  if (o.grad_accumulation < 1)
    throw Error(ErrorCode::kConfig, "optimizer.grad_accumulation must be >= 1");
  if (o.name != "adamw") throw Error(ErrorCode::kConfig, "unknown optimizer '" + o.name + "'");
  if (o.schedule != "cosine" && o.schedule != "constant")
    throw Error(ErrorCode::kConfig, "unknown schedule '" + o.schedule + "'");
  if (o.checkpoint_every < 0) throw Error(ErrorCode::kConfig, "checkpoint_every must be >= 0");
  if (!(loss.tau > 0)) throw Error(ErrorCode::kConfig, "loss.tau must be > 0");
  if (loss.classification < 0 || loss.confidence < 0)
    throw Error(ErrorCode::kConfig, "loss weights must be >= 0");
  if (dataset.root.empty()) throw Error(ErrorCode::kConfig, "dataset.root is required");
  if (dataset.max_samples < 0) throw Error(ErrorCode::kConfig, "dataset.max_samples must be >= 0");
  const auto &f = model.fusion;
  if (f.dropout < 0 || f.dropout >= 1) throw Error(ErrorCode::kConfig, "fusion dropout must be in [0, 1)");
  if (f.rgb_dim != model.rgb.embed_dim)
    throw Error(ErrorCode::kConfig, "fusion rgb_dim must equal the rgb encoder width");
  if (f.depth_dim != model.depth.output_dim())
    throw Error(ErrorCode::kConfig, "fusion depth_dim must equal the depth encoder output");
  if (model.depth.num_points != preprocess.num_points)
    throw Error(ErrorCode::kConfig, "preprocess.num_points must equal the depth encoder's");
  if (model.rgb.image_size != preprocess.image_size)
    throw Error(ErrorCode::kConfig, "preprocess.image_size must equal the rgb encoder's");
  if (preprocess.min_valid_pixels < 1 || preprocess.bbox_padding < 0)
    throw Error(ErrorCode::kConfig, "invalid preprocess settings");
  for (double s : preprocess.std)
    if (!(s > 0)) throw Error(ErrorCode::kConfig, "preprocess std must be positive");
  model.rgb.Validate();
  int incoming = 0;
  for (const auto &layer : model.depth.layers) {
    layer.Validate(incoming);
    incoming = layer.mlp_widths.back();
  }
}

json RunConfig::ToJson() const {
  const auto &d = dataset;
  const auto &o = optimizer;
  const auto &p = preprocess;
  return {
      {"dataset",
       {{"root", d.root.generic_string()},
        {"split", d.split},
        {"eval_split", d.eval_split},
        {"manifest", d.manifest.generic_string()},
        {"max_model_points", d.max_model_points},
        {"max_samples", d.max_samples}}},
      {"model", ModelSpecToJson(model)},
      {"optimizer",
       {{"name", o.name},
        {"learning_rate", o.learning_rate},
        {"weight_decay", o.weight_decay},
        {"schedule", o.schedule},
        {"epochs", o.epochs},
        {"batch_size", o.batch_size},
        {"grad_accumulation", o.grad_accumulation},
        {"freeze_norm_after_epoch", o.freeze_norm_after_epoch},
        {"checkpoint_every", o.checkpoint_every}}},
      {"loss",
       {{"classification", loss.classification},
        {"confidence", loss.confidence},
        {"tau", loss.tau}}},
      {"preprocess",
       {{"image_size", p.image_size},
        {"num_points", p.num_points},
        {"bbox_padding", p.bbox_padding},
        {"min_valid_pixels", p.min_valid_pixels},
        {"mean", p.mean},
        {"std", p.std}}},
      {"seed", seed},
      {"output_dir", output_dir.generic_string()},
  };
}

RunConfig RunConfig::FromJson(const json &input) {
  json j = RunConfig().ToJson();
  MergeInto(j, input);
  RunConfig c;
  try {
    const json &d = j.at("dataset");
    c.dataset.root = Get<std::string>(d, "root");
    c.dataset.split = Get<std::string>(d, "split");
    c.dataset.eval_split = Get<std::string>(d, "eval_split");
    c.dataset.manifest = Get<std::string>(d, "manifest");
    c.dataset.max_model_points = Get<int>(d, "max_model_points");
    c.dataset.max_samples = Get<int>(d, "max_samples");

    c.model = ModelSpecFromJson(j.at("model"));

    const json &o = j.at("optimizer");
    c.optimizer.name = Get<std::string>(o, "name");
    c.optimizer.learning_rate = Get<double>(o, "learning_rate");
    c.optimizer.weight_decay = Get<double>(o, "weight_decay");
    c.optimizer.schedule = Get<std::string>(o, "schedule");
    c.optimizer.epochs = Get<int>(o, "epochs");
    c.optimizer.batch_size = Get<int>(o, "batch_size");
    c.optimizer.grad_accumulation = Get<int>(o, "grad_accumulation");
    c.optimizer.freeze_norm_after_epoch = Get<int>(o, "freeze_norm_after_epoch");
    c.optimizer.checkpoint_every = Get<int>(o, "checkpoint_every");

    const json &l = j.at("loss");
    c.loss.classification = Get<double>(l, "classification");
    c.loss.confidence = Get<double>(l, "confidence");
    c.loss.tau = Get<double>(l, "tau");

    const json &p = j.at("preprocess");
    c.preprocess.image_size = Get<int>(p, "image_size");
    c.preprocess.num_points = Get<int>(p, "num_points");
    c.preprocess.bbox_padding = Get<double>(p, "bbox_padding");
    c.preprocess.min_valid_pixels = Get<int>(p, "min_valid_pixels");
    c.preprocess.mean = Get<std::array<double, 3>>(p, "mean");
    c.preprocess.std = Get<std::array<double, 3>>(p, "std");

    c.seed = Get<std::uint64_t>(j, "seed");
    c.output_dir = Get<std::string>(j, "output_dir");
  } catch (const json::exception &e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  return c;
}

RunConfig LoadRunConfig(const fs::path &path, const EnvLookup &lookup) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot read config " + path.string());
  json user;
  try {
    user = json::parse(in);
  } catch (const json::exception &e) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  if (!user.is_object()) throw Error(ErrorCode::kConfig, path.string() + ": expected an object");
  json j = RunConfig().ToJson();
  MergeInto(j, user);
  ApplyEnvOverrides(j, lookup);
  RunConfig c = RunConfig::FromJson(j);
  const fs::path base = path.parent_path();
  if (c.dataset.root.is_relative()) c.dataset.root = base / c.dataset.root;
  if (c.output_dir.is_relative()) c.output_dir = base / c.output_dir;
  auto &source = c.model.rgb.source;
  if (source != "random" && source.rfind("registry:", 0) != 0 && fs::path(source).is_relative())
    source = (base / source).string();
  c.Validate();
  return c;
}

}  // namespace vlm6d
