#include "vlm6d/geometry.h"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "vlm6d/error.h"

namespace vlm6d {

namespace {

constexpr Eigen::Index kBruteForceNeighborLimit = 1000;
constexpr Eigen::Index kBruteForceDiameterLimit = 5000;

// Uniform grid over the reference points. Lookup is exact: rings are expanded
// until no unvisited cell can contain a closer point.
class NeighborGrid {
 public:
  explicit NeighborGrid(const Points &reference) : reference_(reference) {
    lower_ = reference.colwise().minCoeff().transpose();
    Vec3 upper = reference.colwise().maxCoeff().transpose();
    Vec3 extent = (upper - lower_).cwiseMax(1e-9);
    double volume = extent.prod();
    cell_ = std::cbrt(volume / static_cast<double>(reference.rows())) * 2.0;
    cell_ = std::max(cell_, extent.maxCoeff() / 256.0);
    for (int a = 0; a < 3; ++a)
      dims_[a] = std::max(1, static_cast<int>(std::ceil(extent[a] / cell_)));
    cells_.assign(static_cast<size_t>(dims_[0]) * dims_[1] * dims_[2], {});
    for (Eigen::Index i = 0; i < reference.rows(); ++i) {
      auto c = CellOf(reference.row(i).transpose());
      cells_[Flat(c)].push_back(static_cast<int>(i));
    }
  }

  std::pair<double, int> Nearest(const Vec3 &q) const {
    auto c = CellOf(q);
    double best_sq = std::numeric_limits<double>::infinity();
    int best = -1;
    int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    for (int r = 0; r <= max_ring; ++r) {
      for (int x = c[0] - r; x <= c[0] + r; ++x) {
        if (x < 0 || x >= dims_[0]) continue;
        for (int y = c[1] - r; y <= c[1] + r; ++y) {
          if (y < 0 || y >= dims_[1]) continue;
          for (int z = c[2] - r; z <= c[2] + r; ++z) {
            if (z < 0 || z >= dims_[2]) continue;
            int cheb = std::max({std::abs(x - c[0]), std::abs(y - c[1]),
                                 std::abs(z - c[2])});
            if (cheb != r) continue;
            for (int idx : cells_[Flat({x, y, z})]) {
              double d = (reference_.row(idx).transpose() - q).squaredNorm();
              if (d < best_sq || (d == best_sq && idx < best)) {
                best_sq = d;
                best = idx;
              }
            }
          }
        }
      }
      double bound = r * cell_;
      if (best >= 0 && best_sq <= bound * bound) break;
    }
    return {std::sqrt(best_sq), best};
  }

 private:
  std::array<int, 3> CellOf(const Vec3 &p) const {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a) {
      int v = static_cast<int>(std::floor((p[a] - lower_[a]) / cell_));
      c[a] = std::clamp(v, 0, dims_[a] - 1);
    }
    return c;
  }
  size_t Flat(const std::array<int, 3> &c) const {
    return (static_cast<size_t>(c[0]) * dims_[1] + c[1]) * dims_[2] + c[2];
  }

  const Points &reference_;
  Vec3 lower_;
  double cell_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::vector<int>> cells_;
};

}  // namespace

void CameraIntrinsics::Validate() const {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw Error(ErrorCode::kContract, "focal lengths must be positive");
  if (width <= 0 || height <= 0)
    throw Error(ErrorCode::kContract, "image size must be positive");
  if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height)
    throw Error(ErrorCode::kContract, "principal point outside the image");
}

Pose Pose::operator*(const Pose &other) const {
  Pose out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

Pose Pose::Inverse() const {
  Pose out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

bool Pose::IsValid(double tolerance) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  double ortho = (rotation.transpose() * rotation - Mat3::Identity())
                     .cwiseAbs()
                     .maxCoeff();
  return ortho <= tolerance && std::abs(rotation.determinant() - 1.0) <= tolerance;
}

void PointCloud::Validate() const {
  if (!coords.allFinite())
    throw Error(ErrorCode::kContract, "point cloud has non-finite coordinates");
  if (colors && colors->rows() != coords.rows())
    throw Error(ErrorCode::kContract, "color count differs from point count");
}

ObjectModel ObjectModel::FromPoints(int object_id, std::string name,
                                    Points points, bool symmetric) {
  if (points.rows() < 4)
    throw Error(ErrorCode::kInsufficientPoints,
                "object model needs at least 4 points, got " +
                    std::to_string(points.rows()));
  Points centered = points.rowwise() - points.colwise().mean();
  const Mat3 scatter = centered.transpose() * centered;
  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  const Vec3 ev = eig.eigenvalues();  // ascending
  if (ev(0) <= 1e-12 * std::max(ev(2), 1e-18))
    throw Error(ErrorCode::kContract, "object model points are coplanar");
  ObjectModel model;
  model.object_id = object_id;
  model.name = std::move(name);
  model.diameter = ObjectDiameter(points);
  model.points = std::move(points);
  model.symmetric = symmetric;
  return model;
}

PointCloud BackprojectDepth(const DepthImage &depth,
                            const CameraIntrinsics &intrinsics,
                            const PixelMask &valid_mask, const RgbImage *rgb) {
  intrinsics.Validate();
  if (valid_mask.rows() != depth.rows() || valid_mask.cols() != depth.cols())
    throw Error(ErrorCode::kContract, "mask and depth sizes differ");
  if (rgb && (rgb->height != depth.rows() || rgb->width != depth.cols()))
    throw Error(ErrorCode::kContract, "rgb and depth sizes differ");

  Eigen::Index count = 0;
  for (Eigen::Index v = 0; v < depth.rows(); ++v)
    for (Eigen::Index u = 0; u < depth.cols(); ++u)
      if (valid_mask(v, u) && depth(v, u) > 0.0) ++count;
  if (count == 0) throw Error(ErrorCode::kEmptyCloud, "no valid depth pixels");

  PointCloud cloud;
  cloud.coords.resize(count, 3);
  if (rgb) cloud.colors = Points(count, 3);
  Eigen::Index i = 0;
  for (Eigen::Index v = 0; v < depth.rows(); ++v) {
    for (Eigen::Index u = 0; u < depth.cols(); ++u) {
      double d = depth(v, u);
      if (!valid_mask(v, u) || !(d > 0.0)) continue;
      cloud.coords(i, 0) = (static_cast<double>(u) - intrinsics.cx) * d / intrinsics.fx;
      cloud.coords(i, 1) = (static_cast<double>(v) - intrinsics.cy) * d / intrinsics.fy;
      cloud.coords(i, 2) = d;
      if (rgb) {
        for (int c = 0; c < 3; ++c)
          (*cloud.colors)(i, c) = rgb->at(static_cast<int>(v), static_cast<int>(u), c) / 255.0;
      }
      ++i;
    }
  }
  return cloud;
}

Pixels ProjectPoints(const Points &points, const CameraIntrinsics &intrinsics) {
  Pixels out(points.rows(), 2);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double z = points(i, 2);
    if (!(z > 0.0))
      throw Error(ErrorCode::kNonPositiveDepth,
                  "point " + std::to_string(i) + " has z <= 0");
    out(i, 0) = intrinsics.fx * points(i, 0) / z + intrinsics.cx;
    out(i, 1) = intrinsics.fy * points(i, 1) / z + intrinsics.cy;
  }
  return out;
}

Points ApplyPose(const Pose &pose, const Points &points) {
  Points out = points * pose.rotation.transpose();
  out.rowwise() += pose.translation.transpose();
  return out;
}

double AddMetric(const Pose &pred, const Pose &gt, const ObjectModel &model) {
  if (model.points.rows() == 0)
    throw Error(ErrorCode::kInsufficientPoints, "model has no points");
  Points diff = ApplyPose(pred, model.points) - ApplyPose(gt, model.points);
  return diff.rowwise().norm().mean();
}

double AddsMetric(const Pose &pred, const Pose &gt, const ObjectModel &model) {
  if (model.points.rows() == 0)
    throw Error(ErrorCode::kInsufficientPoints, "model has no points");
  Points gt_points = ApplyPose(gt, model.points);
  Points pred_points = ApplyPose(pred, model.points);
  return NearestNeighborDistances(gt_points, pred_points).mean();
}

Eigen::VectorXd NearestNeighborDistances(const Points &queries,
                                         const Points &reference,
                                         Eigen::VectorXi *nearest_index) {
  if (reference.rows() == 0)
    throw Error(ErrorCode::kInsufficientPoints, "empty reference set");
  Eigen::VectorXd out(queries.rows());
  if (nearest_index) nearest_index->resize(queries.rows());
  if (reference.rows() <= kBruteForceNeighborLimit) {
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
      Eigen::Index best = 0;
      double best_sq =
          (reference.rowwise() - queries.row(i)).rowwise().squaredNorm().minCoeff(&best);
      out(i) = std::sqrt(best_sq);
      if (nearest_index) (*nearest_index)(i) = static_cast<int>(best);
    }
    return out;
  }
  NeighborGrid grid(reference);
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    auto [d, idx] = grid.Nearest(queries.row(i).transpose());
    out(i) = d;
    if (nearest_index) (*nearest_index)(i) = idx;
  }
  return out;
}

double RecallAtThreshold(std::span<const double> errors,
                         const ObjectModel &model, double fraction) {
  if (errors.empty())
    throw Error(ErrorCode::kUndefinedRecall, "recall of an empty error list");
  if (!(fraction > 0.0))
    throw Error(ErrorCode::kContract, "threshold fraction must be positive");
  const double threshold = fraction * model.diameter;
  auto hits = std::count_if(errors.begin(), errors.end(),
                            [&](double e) { return e < threshold; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(errors.size());
}

double ObjectDiameter(const Points &points) {
  const Eigen::Index m = points.rows();
  if (m < 2)
    throw Error(ErrorCode::kInsufficientPoints,
                "diameter needs at least 2 points");
  double best_sq = 0.0;
  if (m <= kBruteForceDiameterLimit) {
    for (Eigen::Index i = 0; i + 1 < m; ++i) {
      double d = (points.bottomRows(m - i - 1).rowwise() - points.row(i))
                     .rowwise()
                     .squaredNorm()
                     .maxCoeff();
      best_sq = std::max(best_sq, d);
    }
    return std::sqrt(best_sq);
  }
  // Exact pruned search: |pi - pj| <= ri + rj for radii about the centroid,
  // so pairs are visited in decreasing radius order until the bound fails.
  Vec3 center = points.colwise().mean().transpose();
  Eigen::VectorXd radius = (points.rowwise() - center.transpose()).rowwise().norm();
  std::vector<Eigen::Index> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](auto a, auto b) { return radius(a) > radius(b); });
  double best = 0.0;
  for (Eigen::Index a = 0; a < m; ++a) {
    const Eigen::Index i = order[a];
    if (2.0 * radius(i) <= best) break;
    for (Eigen::Index b = a + 1; b < m; ++b) {
      const Eigen::Index j = order[b];
      if (radius(i) + radius(j) <= best) break;
      best = std::max(best, (points.row(i) - points.row(j)).norm());
    }
  }
  return best;
}

namespace {

struct GramSchmidt {
  Vec3 a1, a2, b1, b2, b3, u;
  double n1 = 0.0, n2 = 0.0;
};

GramSchmidt Orthonormalize(const Vec6 &r6) {
  GramSchmidt g;
  g.a1 = r6.head<3>();
  g.a2 = r6.tail<3>();
  g.n1 = g.a1.norm();
  if (!(g.n1 > 1e-12) || !r6.allFinite())
    throw Error(ErrorCode::kDegenerateRotation, "first 6D column is zero");
  g.b1 = g.a1 / g.n1;
  g.u = g.a2 - g.b1.dot(g.a2) * g.b1;
  g.n2 = g.u.norm();
  if (!(g.n2 > 1e-10 * std::max(1.0, g.a2.norm())))
    throw Error(ErrorCode::kDegenerateRotation,
                "6D columns are parallel or the second is zero");
  g.b2 = g.u / g.n2;
  g.b3 = g.b1.cross(g.b2);
  return g;
}

}  // namespace

Mat3 RotationFrom6d(const Vec6 &r6) {
  GramSchmidt g = Orthonormalize(r6);
  Mat3 r;
  r.col(0) = g.b1;
  r.col(1) = g.b2;
  r.col(2) = g.b3;
  return r;
}

Vec6 RotationFrom6dBackward(const Vec6 &r6, const Mat3 &grad_rotation) {
  GramSchmidt g = Orthonormalize(r6);
  const Vec3 g1 = grad_rotation.col(0);
  const Vec3 g2 = grad_rotation.col(1);
  const Vec3 g3 = grad_rotation.col(2);
  Vec3 gb1 = g1 + g.b2.cross(g3);
  Vec3 gb2 = g2 + g3.cross(g.b1);
  Vec3 du = (gb2 - g.b2 * g.b2.dot(gb2)) / g.n2;
  Vec3 da2 = du - g.b1 * g.b1.dot(du);
  gb1 -= g.b1.dot(g.a2) * du + g.a2 * g.b1.dot(du);
  Vec3 da1 = (gb1 - g.b1 * g.b1.dot(gb1)) / g.n1;
  Vec6 out;
  out << da1, da2;
  return out;
}

Vec6 RotationTo6d(const Mat3 &rotation) {
  Vec6 out;
  out << rotation.col(0), rotation.col(1);
  return out;
}

}  // namespace vlm6d
