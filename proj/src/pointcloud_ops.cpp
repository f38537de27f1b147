#include "vlm6d/pointcloud_ops.h"

#include <algorithm>
#include <limits>
#include <random>
#include <tuple>

#include "vlm6d/error.h"

namespace vlm6d {

namespace {

bool LexLess(const Points &coords, Eigen::Index a, Eigen::Index b) {
  return std::tie(coords(a, 0), coords(a, 1), coords(a, 2), a) <
         std::tie(coords(b, 0), coords(b, 1), coords(b, 2), b);
}

double SquaredDistance(const Points &coords, Eigen::Index a, const Vec3 &p) {
  const double dx = coords(a, 0) - p.x();
  const double dy = coords(a, 1) - p.y();
  const double dz = coords(a, 2) - p.z();
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

std::vector<int> FarthestPointSample(const Points &coords, int k) {
  const Eigen::Index n = coords.rows();
  if (k < 1) throw Error(ErrorCode::kContract, "FPS needs k >= 1");
  if (n < k)
    throw Error(ErrorCode::kInsufficientPoints,
                "FPS of " + std::to_string(k) + " from " + std::to_string(n) +
                    " points");
  const Vec3 centroid = coords.colwise().mean().transpose();

  auto pick_max = [&](const Eigen::VectorXd &score) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < n; ++i) {
      if (score(i) > score(best) ||
          (score(i) == score(best) && LexLess(coords, i, best)))
        best = i;
    }
    return best;
  };

  Eigen::VectorXd score(n);
  for (Eigen::Index i = 0; i < n; ++i) score(i) = SquaredDistance(coords, i, centroid);

  std::vector<int> selected;
  selected.reserve(k);
  Eigen::Index current = pick_max(score);
  selected.push_back(static_cast<int>(current));
  Eigen::VectorXd min_dist =
      Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  for (int s = 1; s < k; ++s) {
    const Vec3 p = coords.row(current).transpose();
    for (Eigen::Index i = 0; i < n; ++i)
      min_dist(i) = std::min(min_dist(i), SquaredDistance(coords, i, p));
    // Already-selected points sit at distance zero; excluding them keeps a
    // full (k == n) selection a permutation even when duplicates exist.
    for (int idx : selected) min_dist(idx) = -1.0;
    current = pick_max(min_dist);
    selected.push_back(static_cast<int>(current));
  }
  return selected;
}

SampledGroups BallQuery(const Points &coords,
                        const std::vector<int> &center_indices, double radius,
                        int nsample) {
  if (!(radius > 0.0)) throw Error(ErrorCode::kContract, "ball radius must be positive");
  if (nsample < 1) throw Error(ErrorCode::kContract, "nsample must be >= 1");
  const Eigen::Index n = coords.rows();
  const auto k = static_cast<Eigen::Index>(center_indices.size());
  const double r2 = radius * radius;

  SampledGroups groups;
  groups.center_indices = center_indices;
  groups.nsample = nsample;
  groups.neighbor_indices.resize(k, nsample);
  groups.relative_coords.resize(k * nsample, 3);

  struct Candidate {
    double d2;
    int index;
  };
  std::vector<Candidate> candidates;
  for (Eigen::Index c = 0; c < k; ++c) {
    const int center = center_indices[c];
    if (center < 0 || center >= n)
      throw Error(ErrorCode::kContract, "center index out of range");
    const Vec3 p = coords.row(center).transpose();
    candidates.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      double d2 = SquaredDistance(coords, i, p);
      if (d2 < r2) candidates.push_back({d2, static_cast<int>(i)});
    }
    auto closer = [&](const Candidate &a, const Candidate &b) {
      if (a.d2 != b.d2) return a.d2 < b.d2;
      return LexLess(coords, a.index, b.index);
    };
    const size_t take = std::min<size_t>(candidates.size(), nsample);
    std::partial_sort(candidates.begin(), candidates.begin() + take,
                      candidates.end(), closer);
    const int nearest = take > 0 ? candidates.front().index : center;
    std::vector<int> chosen;
    chosen.reserve(nsample);
    for (size_t j = 0; j < take; ++j) chosen.push_back(candidates[j].index);
    std::sort(chosen.begin(), chosen.end());
    while (static_cast<int>(chosen.size()) < nsample) chosen.push_back(nearest);
    for (int j = 0; j < nsample; ++j) {
      groups.neighbor_indices(c, j) = chosen[j];
      groups.relative_coords.row(c * nsample + j) =
          coords.row(chosen[j]) - coords.row(center);
    }
  }
  return groups;
}

NormalizedCloud NormalizeCloud(const Points &coords) {
  if (coords.rows() < 1) throw Error(ErrorCode::kEmptyCloud, "cannot normalize an empty cloud");
  NormalizedCloud out;
  out.centroid = coords.colwise().mean().transpose();
  Points centered = coords.rowwise() - out.centroid.transpose();
  double scale = centered.rowwise().norm().maxCoeff();
  out.scale = scale < 1e-9 ? 1.0 : scale;
  out.coords = centered / out.scale;
  return out;
}

PointCloud ResampleFixed(const PointCloud &cloud, int n_target,
                         std::uint64_t seed) {
  const Eigen::Index n = cloud.size();
  if (n == 0) throw Error(ErrorCode::kEmptyCloud, "cannot resample an empty cloud");
  if (n_target < 1) throw Error(ErrorCode::kContract, "n_target must be >= 1");

  std::vector<int> indices;
  if (n >= n_target) {
    indices = FarthestPointSample(cloud.coords, n_target);
  } else {
    indices.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) indices[i] = static_cast<int>(i);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
    while (static_cast<int>(indices.size()) < n_target) indices.push_back(pick(rng));
  }

  PointCloud out;
  out.coords.resize(n_target, 3);
  if (cloud.colors) out.colors = Points(n_target, 3);
  for (int i = 0; i < n_target; ++i) {
    out.coords.row(i) = cloud.coords.row(indices[i]);
    if (cloud.colors) out.colors->row(i) = cloud.colors->row(indices[i]);
  }
  return out;
}

}  // namespace vlm6d
