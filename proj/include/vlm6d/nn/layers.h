#pragma once

#include <string>

#include "vlm6d/nn/tensor.h"

namespace vlm6d::nn {

// y = x W^T + b with W stored (out, in) like the usual checkpoint layout.
class Linear {
 public:
  Linear() = default;
  Linear(const std::string &name, int in_features, int out_features, Rng &rng);

  Mat Forward(const Mat &x) const;
  // Accumulates weight/bias gradients and returns dL/dx.
  Mat Backward(const Mat &x, const Mat &grad_out);
  void Collect(ParameterList &out);

  int in_features() const { return static_cast<int>(weight.value.cols()); }
  int out_features() const { return static_cast<int>(weight.value.rows()); }

  Parameter weight;
  Parameter bias;
};

// Normalization over rows with batch statistics in training and running
// statistics in eval mode.
class BatchNorm {
 public:
  struct Cache {
    Mat normalized;
    RowVec inv_std;
    bool batch_statistics = false;
  };

  BatchNorm() = default;
  BatchNorm(const std::string &name, int features, double eps = 1e-5,
            double momentum = 0.1);

  Mat ForwardTrain(const Mat &x, Cache *cache);
  Mat ForwardEval(const Mat &x, Cache *cache) const;
  Mat Backward(const Cache &cache, const Mat &grad_out);
  void Collect(ParameterList &out);

  // Between these calls running statistics are the equal-weight average of
  // every ForwardTrain batch instead of an exponential average.
  void BeginCalibration();
  void EndCalibration();

  Parameter gamma;
  Parameter beta;
  Parameter running_mean;
  Parameter running_var;

 private:
  double eps_ = 1e-5;
  double momentum_ = 0.1;
  bool calibrating_ = false;
  int calibration_batches_ = 0;
};

class LayerNorm {
 public:
  struct Cache {
    Mat normalized;
    Vec inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string &name, int features, double eps);

  Mat Forward(const Mat &x, Cache *cache) const;
  Mat Backward(const Cache &cache, const Mat &grad_out);
  void Collect(ParameterList &out);

  Parameter weight;
  Parameter bias;

 private:
  double eps_ = 1e-6;
};

Mat Relu(const Mat &x);
// Uses the forward output: gradient passes where out > 0.
Mat ReluBackward(const Mat &out, const Mat &grad_out);

// Exact (erf) GELU.
Mat Gelu(const Mat &x);
Mat GeluBackward(const Mat &x, const Mat &grad_out);

// Inverted-dropout mask: entries are 0 with probability `rate`, otherwise
// 1 / (1 - rate).
Mat DropoutMask(Eigen::Index rows, Eigen::Index cols, double rate,
                std::uint64_t seed);

// Row-wise softmax.
Mat Softmax(const Mat &x);

}  // namespace vlm6d::nn
