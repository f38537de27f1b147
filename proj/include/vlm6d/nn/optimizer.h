#pragma once

#include <map>
#include <string>

#include "vlm6d/nn/tensor.h"

namespace vlm6d::nn {

struct Checkpoint;

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Decoupled weight decay Adam. Only parameters with trainable == true at
// construction are updated.
class AdamW {
 public:
  AdamW(const ParameterList &params, AdamWOptions options);

  void ZeroGrad();
  void Step(double learning_rate);
  // Scales accumulated gradients, e.g. 1/batch for mean reduction.
  void ScaleGrad(double factor);
  double GradNorm() const;

  std::int64_t step_count() const { return step_; }

  // Moments are stored as "optim.m.<name>" / "optim.v.<name>".
  void SaveState(Checkpoint &ckpt) const;
  void LoadState(const Checkpoint &ckpt);

 private:
  struct Slot {
    Parameter *param;
    Mat m;
    Mat v;
  };
  std::vector<Slot> slots_;
  AdamWOptions options_;
  std::int64_t step_ = 0;
};

// Cosine decay from base_lr to 0 over total_steps.
double CosineLearningRate(double base_lr, std::int64_t step,
                          std::int64_t total_steps);

void SetTrainable(const ParameterList &params, bool trainable);

}  // namespace vlm6d::nn
