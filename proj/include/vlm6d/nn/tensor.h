#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace vlm6d::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vec = Eigen::VectorXd;
using Rng = std::mt19937_64;

// A named tensor stored as a row-major matrix. `shape` is the logical shape
// used in checkpoints; its product equals value.size(). Buffers (running
// statistics) are saved with the weights but never trained.
struct Parameter {
  std::string name;
  std::vector<std::int64_t> shape;
  Mat value;
  Mat grad;
  bool trainable = true;
  bool buffer = false;

  Parameter() = default;
  Parameter(std::string name, std::vector<std::int64_t> shape, Eigen::Index rows,
            Eigen::Index cols, bool buffer = false);

  void ZeroGrad() { grad.setZero(); }
};

using ParameterList = std::vector<Parameter *>;

// Truncated normal with the given std, cut at +-2 std.
void TruncatedNormalInit(Mat &m, double stddev, Rng &rng);
void UniformInit(Mat &m, double bound, Rng &rng);

// Stable 64-bit mix for deriving sub-seeds.
std::uint64_t MixSeed(std::uint64_t a, std::uint64_t b);

}  // namespace vlm6d::nn
