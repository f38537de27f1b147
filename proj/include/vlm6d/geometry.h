#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>
#include <span>
#include <string>

#include "vlm6d/image.h"

namespace vlm6d {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
// Row-per-point coordinate blocks.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Pixels = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  // Throws kContract when fx, fy <= 0 or the principal point leaves the image.
  void Validate() const;
};

// Rigid transform from model frame to camera frame.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose Identity() { return {}; }

  // (this * other)(p) == this(other(p))
  Pose operator*(const Pose &other) const;
  Pose Inverse() const;
  bool IsValid(double tolerance = 1e-6) const;
};

struct PointCloud {
  Points coords;
  std::optional<Points> colors;

  Eigen::Index size() const { return coords.rows(); }
  bool empty() const { return coords.rows() == 0; }
  void Validate() const;
};

struct ObjectModel {
  int object_id = 0;
  std::string name;
  Points points;
  double diameter = 0.0;
  bool symmetric = false;

  // Computes the diameter from the points. Requires at least 4 points that
  // are not coplanar.
  static ObjectModel FromPoints(int object_id, std::string name, Points points,
                                bool symmetric);
};

// One point per true mask pixel, in row-major pixel order. Colors are
// attached (scaled to [0,1]) when rgb is given.
PointCloud BackprojectDepth(const DepthImage &depth,
                            const CameraIntrinsics &intrinsics,
                            const PixelMask &valid_mask,
                            const RgbImage *rgb = nullptr);

Pixels ProjectPoints(const Points &points, const CameraIntrinsics &intrinsics);

Points ApplyPose(const Pose &pose, const Points &points);

double AddMetric(const Pose &pred, const Pose &gt, const ObjectModel &model);
double AddsMetric(const Pose &pred, const Pose &gt, const ObjectModel &model);

// Percentage of errors strictly below fraction * model.diameter.
double RecallAtThreshold(std::span<const double> errors,
                         const ObjectModel &model, double fraction = 0.1);

double ObjectDiameter(const Points &points);

// Gram-Schmidt decoding of the 6D rotation representation. The two input
// 3-vectors become the first two columns (after orthonormalization).
Mat3 RotationFrom6d(const Vec6 &r6);

// Vector-Jacobian product of RotationFrom6d: returns dL/dr6 given dL/dR.
Vec6 RotationFrom6dBackward(const Vec6 &r6, const Mat3 &grad_rotation);

// Inverse used for building regression targets: first two columns of R.
Vec6 RotationTo6d(const Mat3 &rotation);

// Nearest-neighbor distances from each query to the reference set. Exact for
// every size; uses a uniform grid when the reference set exceeds 1000 points.
Eigen::VectorXd NearestNeighborDistances(const Points &queries,
                                         const Points &reference,
                                         Eigen::VectorXi *nearest_index = nullptr);

}  // namespace vlm6d
