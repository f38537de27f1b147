#include "vlm6d/nn/optimizer.h"

#include <cmath>
#include <numbers>

#include "vlm6d/error.h"
#include "vlm6d/nn/checkpoint.h"

namespace vlm6d::nn {

AdamW::AdamW(const ParameterList &params, AdamWOptions options)
    : options_(options) {
  for (Parameter *p : params) {
    if (!p->trainable) continue;
    slots_.push_back({p, Mat::Zero(p->value.rows(), p->value.cols()),
                      Mat::Zero(p->value.rows(), p->value.cols())});
  }
}

void AdamW::ZeroGrad() {
  for (auto &s : slots_) s.param->ZeroGrad();
}

void AdamW::ScaleGrad(double factor) {
  for (auto &s : slots_) s.param->grad *= factor;
}

double AdamW::GradNorm() const {
  double sq = 0.0;
  for (const auto &s : slots_) sq += s.param->grad.squaredNorm();
  return std::sqrt(sq);
}

void AdamW::Step(double learning_rate) {
  ++step_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (auto &s : slots_) {
    Parameter &p = *s.param;
    s.m = options_.beta1 * s.m + (1.0 - options_.beta1) * p.grad;
    s.v = options_.beta2 * s.v + (1.0 - options_.beta2) * p.grad.cwiseAbs2();
    p.value *= (1.0 - learning_rate * options_.weight_decay);
    p.value.array() -= learning_rate * (s.m.array() / bc1) /
                       ((s.v.array() / bc2).sqrt() + options_.eps);
  }
}

void AdamW::SaveState(Checkpoint &ckpt) const {
  for (const auto &s : slots_) {
    for (const auto &[prefix, mat] : {std::pair{"optim.m.", &s.m}, std::pair{"optim.v.", &s.v}}) {
      Tensor t;
      t.shape = s.param->shape;
      t.data.assign(mat->data(), mat->data() + mat->size());
      ckpt.tensors[prefix + s.param->name] = std::move(t);
    }
  }
  ckpt.metadata["optimizer"] = {{"algorithm", "adamw"},
                                {"step", step_},
                                {"beta1", options_.beta1},
                                {"beta2", options_.beta2},
                                {"eps", options_.eps},
                                {"weight_decay", options_.weight_decay}};
}

void AdamW::LoadState(const Checkpoint &ckpt) {
  if (!ckpt.metadata.contains("optimizer"))
    throw Error(ErrorCode::kIncompatibleWeights, "checkpoint has no optimizer state");
  step_ = ckpt.metadata["optimizer"]["step"].get<std::int64_t>();
  for (auto &s : slots_) {
    for (const auto &[prefix, mat] : {std::pair{"optim.m.", &s.m}, std::pair{"optim.v.", &s.v}}) {
      auto it = ckpt.tensors.find(prefix + s.param->name);
      if (it == ckpt.tensors.end() ||
          it->second.data.size() != static_cast<size_t>(mat->size()))
        throw Error(ErrorCode::kIncompatibleWeights,
                    "optimizer state for " + s.param->name + " missing or mis-sized");
      std::copy(it->second.data.begin(), it->second.data.end(), mat->data());
    }
  }
}

double CosineLearningRate(double base_lr, std::int64_t step,
                          std::int64_t total_steps) {
  if (total_steps <= 0) return base_lr;
  double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

void SetTrainable(const ParameterList &params, bool trainable) {
  for (Parameter *p : params) {
    if (p->buffer) continue;
    p->trainable = trainable;
    if (trainable && p->grad.size() != p->value.size())
      p->grad = Mat::Zero(p->value.rows(), p->value.cols());
  }
}

}  // namespace vlm6d::nn
