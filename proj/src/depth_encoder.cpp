#include "vlm6d/depth_encoder.h"

#include <type_traits>

#include "vlm6d/error.h"

namespace vlm6d {

void SetAbstractionConfig::Validate(int incoming_features) const {
  if (mlp_widths.size() < 2)
    throw Error(ErrorCode::kConfig, "set abstraction needs at least one MLP layer");
  for (int w : mlp_widths)
    if (w <= 0) throw Error(ErrorCode::kConfig, "MLP widths must be positive");
  if (mlp_widths.front() != 3 + incoming_features)
    throw Error(ErrorCode::kConfig,
                "first MLP width " + std::to_string(mlp_widths.front()) +
                    " != 3 + incoming features " + std::to_string(incoming_features));
  if (n_centers < 0) throw Error(ErrorCode::kConfig, "n_centers must be >= 0");
  if (!is_global() && (!(radius > 0.0) || nsample < 1))
    throw Error(ErrorCode::kConfig, "local layers need radius > 0 and nsample >= 1");
}

DepthEncoderConfig DepthEncoderConfig::Default() {
  DepthEncoderConfig c;
  c.num_points = 2048;
  c.layers = {
      {512, 0.2, 32, {3, 64, 64, 128}},
      {128, 0.4, 32, {3 + 128, 128, 128, 256}},
      {0, 0.0, 0, {3 + 256, 256, 512, 1024}},
  };
  return c;
}

nlohmann::json DepthEncoderConfig::ToJson() const {
  nlohmann::json j;
  j["num_points"] = num_points;
  j["layers"] = nlohmann::json::array();
  for (const auto &l : layers)
    j["layers"].push_back({{"n_centers", l.n_centers},
                           {"radius", l.radius},
                           {"nsample", l.nsample},
                           {"mlp_widths", l.mlp_widths}});
  return j;
}

DepthEncoderConfig DepthEncoderConfig::FromJson(const nlohmann::json &j) {
  DepthEncoderConfig c;
  c.num_points = j.at("num_points");
  for (const auto &l : j.at("layers"))
    c.layers.push_back({l.at("n_centers"), l.at("radius"), l.at("nsample"),
                        l.at("mlp_widths").get<std::vector<int>>()});
  return c;
}

SetAbstraction::SetAbstraction(const std::string &name, SetAbstractionConfig config,
                               nn::Rng &rng)
    : config_(std::move(config)) {
  for (size_t l = 0; l + 1 < config_.mlp_widths.size(); ++l) {
    const std::string prefix = name + ".mlp" + std::to_string(l);
    linears_.emplace_back(prefix + ".linear", config_.mlp_widths[l],
                          config_.mlp_widths[l + 1], rng);
    norms_.emplace_back(prefix + ".norm", config_.mlp_widths[l + 1]);
  }
}

template <typename Self>
std::vector<EncoderState> SetAbstraction::Run(Self &self,
                                              const std::vector<EncoderState> &batch,
                                              bool train, Cache *cache) {
  const auto &cfg = self.config_;
  const auto nb = static_cast<Eigen::Index>(batch.size());
  if (nb == 0) return {};
  const int in_features = static_cast<int>(batch.front().features.cols());
  cfg.Validate(in_features);

  std::vector<std::vector<int>> centers(nb);
  std::vector<IndexMatrix> neighbors(nb);
  int groups = 0, group_size = 0;
  for (Eigen::Index b = 0; b < nb; ++b) {
    const auto &s = batch[b];
    if (s.features.cols() != in_features || s.features.rows() != s.coords.rows())
      throw Error(ErrorCode::kContract, "inconsistent encoder state in batch");
    if (cfg.is_global()) {
      const auto k = static_cast<int>(s.coords.rows());
      if (b > 0 && k != group_size)
        throw Error(ErrorCode::kContract, "global layer needs equal point counts");
      group_size = k;
      groups = 1;
      neighbors[b].resize(1, k);
      for (int i = 0; i < k; ++i) neighbors[b](0, i) = i;
    } else {
      if (s.coords.rows() < cfg.n_centers)
        throw Error(ErrorCode::kInsufficientPoints,
                    "set abstraction needs " + std::to_string(cfg.n_centers) +
                        " points, got " + std::to_string(s.coords.rows()));
      centers[b] = FarthestPointSample(s.coords, cfg.n_centers);
      neighbors[b] = BallQuery(s.coords, centers[b], cfg.radius, cfg.nsample).neighbor_indices;
      groups = cfg.n_centers;
      group_size = cfg.nsample;
    }
  }

  const Eigen::Index rows_per_cloud = static_cast<Eigen::Index>(groups) * group_size;
  nn::Mat x(nb * rows_per_cloud, 3 + in_features);
  for (Eigen::Index b = 0; b < nb; ++b) {
    const auto &s = batch[b];
    for (int g = 0; g < groups; ++g) {
      for (int j = 0; j < group_size; ++j) {
        const Eigen::Index r = b * rows_per_cloud + static_cast<Eigen::Index>(g) * group_size + j;
        const int n = neighbors[b](g, j);
        if (cfg.is_global()) {
          x.row(r).head<3>() = s.coords.row(n);
        } else {
          x.row(r).head<3>() = s.coords.row(n) - s.coords.row(centers[b][g]);
        }
        if (in_features > 0) x.row(r).tail(in_features) = s.features.row(n);
      }
    }
  }

  if (cache) {
    cache->centers = centers;
    cache->neighbors = neighbors;
    cache->input_points.clear();
    cache->input_features.clear();
    for (const auto &s : batch) {
      cache->input_points.push_back(s.coords.rows());
      cache->input_features.push_back(in_features);
    }
    cache->layer_inputs.clear();
    cache->norm_caches.clear();
    cache->layer_outputs.clear();
    cache->group_size = group_size;
    cache->groups_per_cloud = groups;
  }

  for (size_t l = 0; l < self.linears_.size(); ++l) {
    nn::Mat z = self.linears_[l].Forward(x);
    nn::BatchNorm::Cache bn_cache;
    nn::BatchNorm::Cache *bn_ptr = cache ? &bn_cache : nullptr;
    if (train) {
      if constexpr (std::is_const_v<Self>) {
        throw Error(ErrorCode::kContract, "training pass on a const encoder");
      } else {
        z = self.norms_[l].ForwardTrain(z, bn_ptr);
      }
    } else {
      z = self.norms_[l].ForwardEval(z, bn_ptr);
    }
    nn::Mat a = nn::Relu(z);
    if (cache) {
      cache->layer_inputs.push_back(std::move(x));
      cache->norm_caches.push_back(std::move(bn_cache));
      cache->layer_outputs.push_back(a);
    }
    x = std::move(a);
  }

  const Eigen::Index channels = x.cols();
  std::vector<EncoderState> out(nb);
  if (cache) cache->argmax.resize(nb * groups, channels);
  for (Eigen::Index b = 0; b < nb; ++b) {
    auto &o = out[b];
    o.features.resize(groups, channels);
    if (cfg.is_global()) {
      o.coords = Points::Zero(1, 3);
    } else {
      o.coords.resize(groups, 3);
      for (int g = 0; g < groups; ++g) o.coords.row(g) = batch[b].coords.row(centers[b][g]);
    }
    for (int g = 0; g < groups; ++g) {
      const Eigen::Index base = b * rows_per_cloud + static_cast<Eigen::Index>(g) * group_size;
      for (Eigen::Index c = 0; c < channels; ++c) {
        Eigen::Index best = base;
        double v = x(base, c);
        for (int j = 1; j < group_size; ++j) {
          if (x(base + j, c) > v) {
            v = x(base + j, c);
            best = base + j;
          }
        }
        o.features(g, c) = v;
        if (cache) cache->argmax(b * groups + g, c) = best;
      }
    }
  }
  return out;
}

std::vector<EncoderState> SetAbstraction::Forward(const std::vector<EncoderState> &batch,
                                                  Mode mode, Cache *cache) {
  return Run(*this, batch, mode == Mode::kTrain, cache);
}

std::vector<EncoderState> SetAbstraction::Forward(const std::vector<EncoderState> &batch,
                                                  Cache *cache) const {
  return Run(*this, batch, false, cache);
}

std::vector<EncoderState> SetAbstraction::Backward(
    const Cache &cache, const std::vector<EncoderState> &grad_out) {
  const auto nb = static_cast<Eigen::Index>(grad_out.size());
  const int groups = cache.groups_per_cloud;
  const int group_size = cache.group_size;
  const Eigen::Index rows_per_cloud = static_cast<Eigen::Index>(groups) * group_size;
  const nn::Mat &last = cache.layer_outputs.back();

  nn::Mat grad = nn::Mat::Zero(last.rows(), last.cols());
  for (Eigen::Index b = 0; b < nb; ++b)
    for (int g = 0; g < groups; ++g)
      for (Eigen::Index c = 0; c < last.cols(); ++c)
        grad(cache.argmax(b * groups + g, c), c) += grad_out[b].features(g, c);

  for (size_t l = linears_.size(); l-- > 0;) {
    nn::Mat dz = nn::ReluBackward(cache.layer_outputs[l], grad);
    dz = norms_[l].Backward(cache.norm_caches[l], dz);
    grad = linears_[l].Backward(cache.layer_inputs[l], dz);
  }

  const bool global = config_.is_global();
  std::vector<EncoderState> grad_in(nb);
  for (Eigen::Index b = 0; b < nb; ++b) {
    const int in_features = cache.input_features[b];
    auto &gi = grad_in[b];
    gi.coords = Points::Zero(cache.input_points[b], 3);
    gi.features = nn::Mat::Zero(cache.input_points[b], in_features);
    for (int g = 0; g < groups; ++g) {
      for (int j = 0; j < group_size; ++j) {
        const Eigen::Index r = b * rows_per_cloud + static_cast<Eigen::Index>(g) * group_size + j;
        const int n = cache.neighbors[b](g, j);
        gi.coords.row(n) += grad.row(r).head<3>();
        if (!global) gi.coords.row(cache.centers[b][g]) -= grad.row(r).head<3>();
        if (in_features > 0) gi.features.row(n) += grad.row(r).tail(in_features);
      }
    }
    if (!global && grad_out[b].coords.rows() == groups) {
      for (int g = 0; g < groups; ++g)
        gi.coords.row(cache.centers[b][g]) += grad_out[b].coords.row(g);
    }
  }
  return grad_in;
}

void SetAbstraction::Collect(nn::ParameterList &out) {
  for (size_t l = 0; l < linears_.size(); ++l) {
    linears_[l].Collect(out);
    norms_[l].Collect(out);
  }
}

DepthEncoder::DepthEncoder(DepthEncoderConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  if (config_.layers.empty()) throw Error(ErrorCode::kConfig, "depth encoder has no layers");
  nn::Rng rng(nn::MixSeed(seed, 0xD3E7));
  int incoming = 0;
  for (size_t i = 0; i < config_.layers.size(); ++i) {
    config_.layers[i].Validate(incoming);
    layers_.emplace_back("depth_encoder.sa" + std::to_string(i + 1), config_.layers[i], rng);
    incoming = config_.layers[i].mlp_widths.back();
  }
  if (!config_.layers.back().is_global())
    throw Error(ErrorCode::kConfig, "last set abstraction layer must be global");
}

template <typename Self>
nn::Mat DepthEncoder::Run(Self &self, const std::vector<Points> &clouds, bool train,
                          Cache *cache) {
  std::vector<EncoderState> states;
  states.reserve(clouds.size());
  if (cache) {
    cache->normalized.clear();
    cache->raw = clouds;
    cache->layers.assign(self.layers_.size(), {});
    cache->states.clear();
  }
  for (const auto &c : clouds) {
    if (c.rows() != self.config_.num_points)
      throw Error(ErrorCode::kContract,
                  "depth encoder expects " + std::to_string(self.config_.num_points) +
                      " points, got " + std::to_string(c.rows()));
    if (!c.allFinite()) throw Error(ErrorCode::kContract, "non-finite cloud coordinates");
    NormalizedCloud n = NormalizeCloud(c);
    states.push_back({n.coords, nn::Mat(c.rows(), 0)});
    if (cache) cache->normalized.push_back(std::move(n));
  }
  for (size_t i = 0; i < self.layers_.size(); ++i) {
    auto *layer_cache = cache ? &cache->layers[i] : nullptr;
    if constexpr (std::is_const_v<Self>) {
      states = self.layers_[i].Forward(states, layer_cache);
    } else {
      states = self.layers_[i].Forward(states, train ? Mode::kTrain : Mode::kEval, layer_cache);
    }
    if (cache) cache->states.push_back(states);
  }
  nn::Mat out(static_cast<Eigen::Index>(states.size()), self.config_.output_dim());
  for (size_t b = 0; b < states.size(); ++b) out.row(b) = states[b].features.row(0);
  return out;
}

nn::Vec DepthEncoder::Encode(const PointCloud &cloud) const {
  cloud.Validate();
  return EncodeBatch({cloud.coords}, nullptr).row(0).transpose();
}

nn::Mat DepthEncoder::EncodeBatch(const std::vector<Points> &clouds, Mode mode,
                                  Cache *cache) {
  return Run(*this, clouds, mode == Mode::kTrain, cache);
}

nn::Mat DepthEncoder::EncodeBatch(const std::vector<Points> &clouds, Cache *cache) const {
  return Run(*this, clouds, false, cache);
}

std::vector<Points> DepthEncoder::Backward(const Cache &cache, const nn::Mat &grad_out) {
  const auto nb = static_cast<Eigen::Index>(cache.raw.size());
  std::vector<EncoderState> grad(nb);
  for (Eigen::Index b = 0; b < nb; ++b) {
    grad[b].features = grad_out.row(b);
    grad[b].coords = Points::Zero(1, 3);
  }
  for (size_t i = layers_.size(); i-- > 0;) grad = layers_[i].Backward(cache.layers[i], grad);

  // Back through normalized = (x - mean) / scale with scale = max |x - mean|.
  std::vector<Points> out(nb);
  for (Eigen::Index b = 0; b < nb; ++b) {
    const auto &norm = cache.normalized[b];
    const Points &g = grad[b].coords;
    const double n = static_cast<double>(g.rows());
    Points dx = g / norm.scale;
    dx.rowwise() -= g.colwise().sum() / (norm.scale * n);
    Points centered = cache.raw[b].rowwise() - norm.centroid.transpose();
    Eigen::Index far = 0;
    const double radius = centered.rowwise().norm().maxCoeff(&far);
    if (radius >= 1e-9) {
      // dL/dscale = -sum_i g_i . normalized_i / scale
      const double dscale = -(g.array() * norm.coords.array()).sum() / norm.scale;
      const Eigen::RowVector3d u = centered.row(far) / radius;
      dx.row(far) += dscale * u;
      dx.rowwise() -= dscale * u / n;
    }
    out[b] = std::move(dx);
  }
  return out;
}

void SetAbstraction::SetCalibrating(bool on) {
  for (auto &n : norms_) on ? n.BeginCalibration() : n.EndCalibration();
}

void DepthEncoder::CalibrateNormalization(const std::vector<std::vector<Points>> &batches) {
  for (auto &l : layers_) l.SetCalibrating(true);
  for (const auto &b : batches) EncodeBatch(b, Mode::kTrain, nullptr);
  for (auto &l : layers_) l.SetCalibrating(false);
}

nn::ParameterList DepthEncoder::Parameters() {
  nn::ParameterList out;
  for (auto &l : layers_) l.Collect(out);
  return out;
}

}  // namespace vlm6d
