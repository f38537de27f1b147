#include "vlm6d/fusion_heads.h"

#include <cmath>

#include "vlm6d/error.h"

namespace vlm6d {

FusionNetwork::FusionNetwork(FusionConfig config, nn::Rng &rng)
    : fc1("fusion.fc1", config.rgb_dim + config.depth_dim, config.hidden_dim, rng),
      fc2("fusion.fc2", config.hidden_dim, config.fused_dim, rng),
      config_(config) {}

nn::Mat FusionNetwork::Forward(const nn::Mat &f_rgb, const nn::Mat &f_depth, bool training,
                               std::uint64_t dropout_seed, Cache *cache) const {
  if (f_rgb.cols() != config_.rgb_dim || f_depth.cols() != config_.depth_dim ||
      f_rgb.rows() != f_depth.rows())
    throw Error(ErrorCode::kContract,
                "fusion expects [B x " + std::to_string(config_.rgb_dim) + "] and [B x " +
                    std::to_string(config_.depth_dim) + "], got [" +
                    std::to_string(f_rgb.rows()) + " x " + std::to_string(f_rgb.cols()) +
                    "] and [" + std::to_string(f_depth.rows()) + " x " +
                    std::to_string(f_depth.cols()) + "]");
  const Eigen::Index b = f_rgb.rows();
  nn::Mat concat(b, f_rgb.cols() + f_depth.cols());
  concat << f_rgb, f_depth;

  nn::Mat relu1 = nn::Relu(fc1.Forward(concat));
  nn::Mat mask1, mask2;
  nn::Mat h1 = relu1;
  if (training) {
    mask1 = nn::DropoutMask(b, relu1.cols(), config_.dropout, nn::MixSeed(dropout_seed, 1));
    h1 = h1.cwiseProduct(mask1);
  }
  nn::Mat relu2 = nn::Relu(fc2.Forward(h1));
  nn::Mat fused = relu2;
  if (training) {
    mask2 = nn::DropoutMask(b, relu2.cols(), config_.dropout, nn::MixSeed(dropout_seed, 2));
    fused = fused.cwiseProduct(mask2);
  }
  if (cache) {
    cache->concat = std::move(concat);
    cache->relu1 = std::move(relu1);
    cache->mask1 = std::move(mask1);
    cache->h1 = std::move(h1);
    cache->relu2 = std::move(relu2);
    cache->mask2 = std::move(mask2);
  }
  return fused;
}

std::pair<nn::Mat, nn::Mat> FusionNetwork::Backward(const Cache &cache,
                                                    const nn::Mat &grad_fused) {
  nn::Mat g = grad_fused;
  if (cache.mask2.size() > 0) g = g.cwiseProduct(cache.mask2);
  g = nn::ReluBackward(cache.relu2, g);
  g = fc2.Backward(cache.h1, g);
  if (cache.mask1.size() > 0) g = g.cwiseProduct(cache.mask1);
  g = nn::ReluBackward(cache.relu1, g);
  g = fc1.Backward(cache.concat, g);
  return {g.leftCols(config_.rgb_dim), g.rightCols(config_.depth_dim)};
}

FeatureBundle FusionNetwork::Fuse(const nn::Vec &f_rgb, const nn::Vec &f_depth,
                                  bool training, std::uint64_t dropout_seed) const {
  Cache cache;
  nn::Mat fused = Forward(f_rgb.transpose(), f_depth.transpose(), training, dropout_seed, &cache);
  FeatureBundle out;
  out.f_rgb = f_rgb;
  out.f_depth = f_depth;
  out.f_concat = cache.concat.row(0).transpose();
  out.h1 = cache.h1.row(0).transpose();
  out.f_fused = fused.row(0).transpose();
  return out;
}

void FusionNetwork::Collect(nn::ParameterList &out) {
  fc1.Collect(out);
  fc2.Collect(out);
}

Pose PosePrediction::Decode(const Vec3 &cloud_centroid) const {
  Pose pose;
  pose.rotation = Rotation();
  pose.translation = cloud_centroid + translation_offset;
  return pose;
}

int PosePrediction::PredictedClass() const {
  if (class_logits.size() == 0) return -1;
  Eigen::Index best = 0;
  class_logits.maxCoeff(&best);
  return static_cast<int>(best);
}

PredictionHeads::PredictionHeads(int fused_dim, int num_classes, nn::Rng &rng)
    : rotation("heads.rotation", fused_dim, 6, rng),
      translation("heads.translation", fused_dim, 3, rng),
      confidence("heads.confidence", fused_dim, 1, rng),
      classify("heads.classify", fused_dim, num_classes, rng) {
  if (num_classes < 1) throw Error(ErrorCode::kConfig, "need at least one class");
  // Start at the identity rotation and zero offset so Gram-Schmidt is well
  // conditioned and the first updates do not throw the pose meters away.
  rotation.weight.value *= 0.01;
  rotation.bias.value << 1.0, 0.0, 0.0, 0.0, 1.0, 0.0;
  translation.weight.value *= 0.01;
  translation.bias.value.setZero();
}

std::vector<PosePrediction> PredictionHeads::PredictBatch(const nn::Mat &f_fused) const {
  const nn::Mat rot = rotation.Forward(f_fused);
  const nn::Mat trans = translation.Forward(f_fused);
  const nn::Mat conf = confidence.Forward(f_fused);
  const nn::Mat cls = classify.Forward(f_fused);
  std::vector<PosePrediction> out(static_cast<size_t>(f_fused.rows()));
  for (Eigen::Index b = 0; b < f_fused.rows(); ++b) {
    auto &p = out[b];
    p.rotation_6d = rot.row(b).transpose();
    p.translation_offset = trans.row(b).transpose();
    p.confidence_logit = conf(b, 0);
    p.confidence = 1.0 / (1.0 + std::exp(-p.confidence_logit));
    p.class_logits = cls.row(b).transpose();
  }
  return out;
}

PosePrediction PredictionHeads::Predict(const nn::Vec &f_fused) const {
  if (f_fused.size() != rotation.in_features())
    throw Error(ErrorCode::kContract, "prediction heads expect " +
                                          std::to_string(rotation.in_features()) +
                                          "-d features");
  return PredictBatch(f_fused.transpose()).front();
}

nn::Mat PredictionHeads::Backward(const nn::Mat &f_fused,
                                  const std::vector<PredictionGrad> &grads) {
  const Eigen::Index b = f_fused.rows();
  nn::Mat drot(b, 6), dtrans(b, 3), dconf(b, 1), dcls(b, num_classes());
  for (Eigen::Index i = 0; i < b; ++i) {
    drot.row(i) = grads[i].rotation_6d.transpose();
    dtrans.row(i) = grads[i].translation_offset.transpose();
    dconf(i, 0) = grads[i].confidence_logit;
    dcls.row(i) = grads[i].class_logits.transpose();
  }
  nn::Mat g = rotation.Backward(f_fused, drot);
  g += translation.Backward(f_fused, dtrans);
  g += confidence.Backward(f_fused, dconf);
  g += classify.Backward(f_fused, dcls);
  return g;
}

void PredictionHeads::Collect(nn::ParameterList &out) {
  rotation.Collect(out);
  translation.Collect(out);
  confidence.Collect(out);
  classify.Collect(out);
}

LossResult PoseLoss(const PosePrediction &pred, const Pose &gt, const ObjectModel &model,
                    const Vec3 &cloud_centroid, int gt_class, const LossWeights &weights) {
  const auto num_classes = pred.class_logits.size();
  if (gt_class < 0 || gt_class >= num_classes)
    throw Error(ErrorCode::kContract, "class index " + std::to_string(gt_class) +
                                          " out of range [0, " +
                                          std::to_string(num_classes) + ")");
  const Eigen::Index m = model.points.rows();
  if (m == 0) throw Error(ErrorCode::kInsufficientPoints, "model has no points");

  const Pose pose = pred.Decode(cloud_centroid);
  const Points pred_points = ApplyPose(pose, model.points);
  const Points gt_points = ApplyPose(gt, model.points);

  // dL_pose / d(pred point j)
  Points grad_points = Points::Zero(m, 3);
  double pose_loss = 0.0;
  if (model.symmetric) {
    Eigen::VectorXi nearest;
    Eigen::VectorXd dist = NearestNeighborDistances(gt_points, pred_points, &nearest);
    pose_loss = dist.mean();
    for (Eigen::Index i = 0; i < m; ++i) {
      if (dist(i) > 0.0)
        grad_points.row(nearest(i)) +=
            (pred_points.row(nearest(i)) - gt_points.row(i)) / (dist(i) * static_cast<double>(m));
    }
  } else {
    Points diff = pred_points - gt_points;
    Eigen::VectorXd dist = diff.rowwise().norm();
    pose_loss = dist.mean();
    for (Eigen::Index i = 0; i < m; ++i)
      if (dist(i) > 0.0) grad_points.row(i) = diff.row(i) / (dist(i) * static_cast<double>(m));
  }

  // Cross-entropy via log-sum-exp.
  const double max_logit = pred.class_logits.maxCoeff();
  nn::Vec exps = (pred.class_logits.array() - max_logit).exp();
  const double sum_exp = exps.sum();
  const double cls_loss = std::log(sum_exp) + max_logit - pred.class_logits(gt_class);
  nn::Vec dlogits = exps / sum_exp;
  dlogits(gt_class) -= 1.0;

  const double target = std::exp(-pose_loss / weights.tau);
  const double c = pred.confidence;
  const double conf_loss = (c - target) * (c - target);

  LossResult out;
  out.components = {{"pose", pose_loss}, {"cls", cls_loss}, {"conf", conf_loss}};
  out.confidence_target = target;
  out.total = pose_loss + weights.classification * cls_loss + weights.confidence * conf_loss;

  const double pose_scale =
      1.0 + weights.confidence * 2.0 * (c - target) * target / weights.tau;
  const Mat3 grad_rotation = pose_scale * grad_points.transpose() * model.points;
  const Vec3 grad_translation = pose_scale * grad_points.colwise().sum().transpose();
  out.grad.rotation_6d = RotationFrom6dBackward(pred.rotation_6d, grad_rotation);
  out.grad.translation_offset = grad_translation;
  out.grad.confidence_logit = weights.confidence * 2.0 * (c - target) * c * (1.0 - c);
  out.grad.class_logits = weights.classification * dlogits;
  return out;
}

}  // namespace vlm6d
