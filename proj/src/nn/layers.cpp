#include "vlm6d/nn/layers.h"

#include <cmath>

#include "vlm6d/error.h"

namespace vlm6d::nn {

Parameter::Parameter(std::string name, std::vector<std::int64_t> shape,
                     Eigen::Index rows, Eigen::Index cols, bool buffer)
    : name(std::move(name)),
      shape(std::move(shape)),
      value(Mat::Zero(rows, cols)),
      grad(Mat::Zero(buffer ? 0 : rows, buffer ? 0 : cols)),
      trainable(!buffer),
      buffer(buffer) {}

void TruncatedNormalInit(Mat &m, double stddev, Rng &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double v;
    do {
      v = normal(rng);
    } while (std::abs(v) > 2.0);
    m.data()[i] = v * stddev;
  }
}

void UniformInit(Mat &m, double bound, Rng &rng) {
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng);
}

std::uint64_t MixSeed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word.
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Linear::Linear(const std::string &name, int in_features, int out_features,
               Rng &rng)
    : weight(name + ".weight", {out_features, in_features}, out_features,
             in_features),
      bias(name + ".bias", {out_features}, 1, out_features) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  UniformInit(weight.value, bound, rng);
  UniformInit(bias.value, bound, rng);
}

Mat Linear::Forward(const Mat &x) const {
  if (x.cols() != weight.value.cols())
    throw Error(ErrorCode::kContract,
                weight.name + ": expected " + std::to_string(weight.value.cols()) +
                    " input features, got " + std::to_string(x.cols()));
  Mat y(x.rows(), weight.value.rows());
  y.noalias() = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Mat Linear::Backward(const Mat &x, const Mat &grad_out) {
  if (weight.trainable) {
    weight.grad.noalias() += grad_out.transpose() * x;
    bias.grad.row(0) += grad_out.colwise().sum();
  }
  Mat grad_in(x.rows(), x.cols());
  grad_in.noalias() = grad_out * weight.value;
  return grad_in;
}

void Linear::Collect(ParameterList &out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

BatchNorm::BatchNorm(const std::string &name, int features, double eps,
                     double momentum)
    : gamma(name + ".weight", {features}, 1, features),
      beta(name + ".bias", {features}, 1, features),
      running_mean(name + ".running_mean", {features}, 1, features, true),
      running_var(name + ".running_var", {features}, 1, features, true),
      eps_(eps),
      momentum_(momentum) {
  gamma.value.setOnes();
  running_var.value.setOnes();
}

namespace {

// Column sums of a row-major matrix, accumulated row by row so the inner loop
// is contiguous.
RowVec ColumnSum(const Mat &x) {
  RowVec sum = RowVec::Zero(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) sum += x.row(r);
  return sum;
}

// y = x * scale + shift per column, optionally caching (x - mean) * inv_std.
Mat AffineColumns(const Mat &x, const RowVec &mean, const RowVec &inv_std, const RowVec &gamma,
                  const RowVec &beta, Mat *normalized) {
  Mat y(x.rows(), x.cols());
  if (normalized) normalized->resize(x.rows(), x.cols());
  const RowVec scale = inv_std.cwiseProduct(gamma);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (normalized) {
      normalized->row(r) = (x.row(r) - mean).cwiseProduct(inv_std);
      y.row(r) = normalized->row(r).cwiseProduct(gamma) + beta;
    } else {
      y.row(r) = (x.row(r) - mean).cwiseProduct(scale) + beta;
    }
  }
  return y;
}

}  // namespace

Mat BatchNorm::ForwardTrain(const Mat &x, Cache *cache) {
  const double n = static_cast<double>(x.rows());
  const RowVec mean = ColumnSum(x) / n;
  RowVec var = RowVec::Zero(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) var += (x.row(r) - mean).array().square().matrix();
  var /= n;
  const RowVec inv_std = (var.array() + eps_).rsqrt().matrix();

  const double unbias = x.rows() > 1 ? n / (n - 1.0) : 1.0;
  const double momentum = calibrating_ ? 1.0 / ++calibration_batches_ : momentum_;
  running_mean.value.row(0) =
      (1.0 - momentum) * running_mean.value.row(0) + momentum * mean;
  running_var.value.row(0) =
      (1.0 - momentum) * running_var.value.row(0) + momentum * unbias * var;

  Mat y = AffineColumns(x, mean, inv_std, gamma.value.row(0), beta.value.row(0),
                        cache ? &cache->normalized : nullptr);
  if (cache) {
    cache->inv_std = inv_std;
    cache->batch_statistics = true;
  }
  return y;
}

void BatchNorm::BeginCalibration() {
  calibrating_ = true;
  calibration_batches_ = 0;
  running_mean.value.setZero();
  running_var.value.setOnes();
}

void BatchNorm::EndCalibration() { calibrating_ = false; }

Mat BatchNorm::ForwardEval(const Mat &x, Cache *cache) const {
  const RowVec inv_std = (running_var.value.row(0).array() + eps_).rsqrt().matrix();
  Mat y = AffineColumns(x, running_mean.value.row(0), inv_std, gamma.value.row(0),
                        beta.value.row(0), cache ? &cache->normalized : nullptr);
  if (cache) {
    cache->inv_std = inv_std;
    cache->batch_statistics = false;
  }
  return y;
}

Mat BatchNorm::Backward(const Cache &cache, const Mat &grad_out) {
  const Eigen::Index rows = grad_out.rows();
  RowVec sum_g = RowVec::Zero(grad_out.cols());
  RowVec sum_gx = RowVec::Zero(grad_out.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    sum_g += grad_out.row(r);
    sum_gx += grad_out.row(r).cwiseProduct(cache.normalized.row(r));
  }
  if (gamma.trainable) {
    gamma.grad.row(0) += sum_gx;
    beta.grad.row(0) += sum_g;
  }
  const RowVec g_scale = gamma.value.row(0).cwiseProduct(cache.inv_std);
  Mat grad_in(rows, grad_out.cols());
  if (!cache.batch_statistics) {
    for (Eigen::Index r = 0; r < rows; ++r) grad_in.row(r) = grad_out.row(r).cwiseProduct(g_scale);
    return grad_in;
  }
  // With g = grad_out * gamma: dx = inv_std * (g - mean(g) - xhat * mean(g * xhat)).
  const double n = static_cast<double>(rows);
  const RowVec mean_g = sum_g / n;
  const RowVec mean_gx = sum_gx / n;
  for (Eigen::Index r = 0; r < rows; ++r)
    grad_in.row(r) = (grad_out.row(r) - mean_g - cache.normalized.row(r).cwiseProduct(mean_gx))
                         .cwiseProduct(g_scale);
  return grad_in;
}

void BatchNorm::Collect(ParameterList &out) {
  out.push_back(&gamma);
  out.push_back(&beta);
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

LayerNorm::LayerNorm(const std::string &name, int features, double eps)
    : weight(name + ".weight", {features}, 1, features),
      bias(name + ".bias", {features}, 1, features),
      eps_(eps) {
  weight.value.setOnes();
}

Mat LayerNorm::Forward(const Mat &x, Cache *cache) const {
  Vec mean = x.rowwise().mean();
  Mat centered = x.colwise() - mean;
  Vec var = centered.array().square().rowwise().mean();
  Vec inv_std = (var.array() + eps_).rsqrt();
  Mat normalized = centered.array().colwise() * inv_std.array();
  Mat y = (normalized.array().rowwise() * weight.value.row(0).array()).rowwise() +
          bias.value.row(0).array();
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat LayerNorm::Backward(const Cache &cache, const Mat &grad_out) {
  if (weight.trainable) {
    weight.grad.row(0) += (grad_out.array() * cache.normalized.array()).colwise().sum().matrix();
    bias.grad.row(0) += grad_out.colwise().sum();
  }
  Mat g = grad_out.array().rowwise() * weight.value.row(0).array();
  const double d = static_cast<double>(g.cols());
  Vec mean_g = g.rowwise().sum() / d;
  Vec mean_gx = (g.array() * cache.normalized.array()).rowwise().sum() / d;
  Mat grad_in = g.colwise() - mean_g;
  grad_in.array() -= cache.normalized.array().colwise() * mean_gx.array();
  grad_in.array().colwise() *= cache.inv_std.array();
  return grad_in;
}

void LayerNorm::Collect(ParameterList &out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Mat Relu(const Mat &x) { return x.cwiseMax(0.0); }

Mat ReluBackward(const Mat &out, const Mat &grad_out) {
  return (out.array() > 0.0).select(grad_out, 0.0);
}

Mat Gelu(const Mat &x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
}

Mat GeluBackward(const Mat &x, const Mat &grad_out) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  Mat d = x.unaryExpr([](double v) {
    return 0.5 * (1.0 + std::erf(v * M_SQRT1_2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
  });
  return d.cwiseProduct(grad_out);
}

Mat DropoutMask(Eigen::Index rows, Eigen::Index cols, double rate,
                std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0)
    throw Error(ErrorCode::kContract, "dropout rate must be in [0, 1)");
  Rng rng(seed);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  Mat mask(rows, cols);
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = keep(rng) ? scale : 0.0;
  return mask;
}

Mat Softmax(const Mat &x) {
  Mat y = x.colwise() - x.rowwise().maxCoeff();
  y = y.array().exp();
  y.array().colwise() /= y.rowwise().sum().array();
  return y;
}

}  // namespace vlm6d::nn
