#pragma once

#include <cstdint>
#include <vector>

#include "vlm6d/geometry.h"

namespace vlm6d {

using IndexMatrix =
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SampledGroups {
  std::vector<int> center_indices;  // K
  IndexMatrix neighbor_indices;     // K x nsample
  Points relative_coords;           // (K * nsample) x 3, row k * nsample + j
  int nsample = 0;
};

struct NormalizedCloud {
  Points coords;
  Vec3 centroid = Vec3::Zero();
  double scale = 1.0;
};

// Greedy farthest point sampling. The first pick is the point farthest from
// the centroid; every pick maximizes the minimum distance to the picks so
// far. Equal distances go to the lexicographically smallest (x, y, z), so the
// selected coordinate set depends only on geometry.
std::vector<int> FarthestPointSample(const Points &coords, int k);

// For every center, the nsample nearest points strictly inside `radius`
// (distance, then coordinates, break ties), listed by ascending index. Short
// groups are padded with the nearest member; the center itself is always in
// range because centers index into `coords`.
SampledGroups BallQuery(const Points &coords,
                        const std::vector<int> &center_indices, double radius,
                        int nsample);

NormalizedCloud NormalizeCloud(const Points &coords);

// Exactly n_target points: FPS when the cloud is large enough, otherwise all
// points followed by seeded uniform duplicates.
PointCloud ResampleFixed(const PointCloud &cloud, int n_target,
                         std::uint64_t seed);

}  // namespace vlm6d
