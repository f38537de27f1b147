#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include "doctest.h"
#include "support/oracles.h"
#include "vlm6d/error.h"
#include "vlm6d/pointcloud_ops.h"

using namespace vlm6d;
using oracle::ThrownCode;

namespace {

using Key = std::tuple<double, double, double>;

std::multiset<Key> CoordSet(const Points &p, const std::vector<int> &idx) {
  std::multiset<Key> out;
  for (int i : idx) out.insert({p(i, 0), p(i, 1), p(i, 2)});
  return out;
}

std::multiset<Key> CoordSet(const Points &p) {
  std::vector<int> all(p.rows());
  std::iota(all.begin(), all.end(), 0);
  return CoordSet(p, all);
}

double MinDistanceTo(const Points &p, int i, const std::vector<int> &chosen, size_t count) {
  double best = 1e300;
  for (size_t j = 0; j < count; ++j)
    best = std::min(best, oracle::Dist(p.row(i).transpose(), p.row(chosen[j]).transpose()));
  return best;
}

Points Permute(const Points &p, const std::vector<int> &perm) {
  Points out(p.rows(), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) out.row(i) = p.row(perm[i]);
  return out;
}

}  // namespace

TEST_CASE("FPS with k = N is a permutation") {
  std::mt19937_64 rng(1);
  Points p = oracle::RandomPoints(rng, 37);
  std::vector<int> idx = FarthestPointSample(p, 37);
  std::sort(idx.begin(), idx.end());
  for (int i = 0; i < 37; ++i) CHECK(idx[i] == i);
}

TEST_CASE("FPS on the line {0, 1, 10}") {
  Points p(3, 3);
  p << 0, 0, 0,
       1, 0, 0,
       10, 0, 0;
  std::vector<int> idx = FarthestPointSample(p, 2);
  REQUIRE(idx.size() == 2);
  CHECK(idx[0] == 2);
  CHECK(idx[1] == 0);
}

TEST_CASE("FPS ties break on the lexicographically smallest coordinates") {
  Points p(4, 3);
  p << 1, 0, 0,
       -1, 0, 0,
       0, 1, 0,
       0, -1, 0;
  std::vector<int> idx = FarthestPointSample(p, 2);
  CHECK(idx[0] == 1);  // (-1, 0, 0) is smallest among four equidistant points
  CHECK(idx[1] == 0);  // (1, 0, 0) is farthest from it
}

TEST_CASE("every FPS pick survives exhaustive one-step exchange") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Points p = oracle::RandomPoints(rng, 64, 1.0);
    std::vector<int> idx = FarthestPointSample(p, 8);
    // first pick: farthest from the centroid
    Vec3 c = p.colwise().mean().transpose();
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      REQUIRE((p.row(i).transpose() - c).norm() <= (p.row(idx[0]).transpose() - c).norm());
    for (size_t s = 1; s < idx.size(); ++s) {
      const double chosen = MinDistanceTo(p, idx[s], idx, s);
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        if (std::find(idx.begin(), idx.begin() + s, i) != idx.begin() + s) continue;
        REQUIRE(MinDistanceTo(p, static_cast<int>(i), idx, s) <= chosen);
      }
    }
  }
}

TEST_CASE("FPS selects the same coordinate set under permutation and commutes with rigid motion") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    Points p = oracle::RandomPoints(rng, 200, 1.0);
    std::vector<int> perm(200);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Points q = Permute(p, perm);
    CHECK(CoordSet(p, FarthestPointSample(p, 32)) == CoordSet(q, FarthestPointSample(q, 32)));

    Pose t = oracle::RandomPose(rng);
    Points moved = ApplyPose(t, p);
    std::vector<int> a = FarthestPointSample(p, 32);
    std::vector<int> b = FarthestPointSample(moved, 32);
    CHECK(a == b);
  }
}

TEST_CASE("FPS errors") {
  Points p = Points::Zero(3, 3);
  CHECK(ThrownCode([&] { FarthestPointSample(p, 4); }) == ErrorCode::kInsufficientPoints);
  CHECK(ThrownCode([&] { FarthestPointSample(p, 0); }) == ErrorCode::kContract);
}

TEST_CASE("isolated center with a tiny radius groups only itself") {
  Points p(3, 3);
  p << 0, 0, 0,
       1, 0, 0,
       0, 5, 0;
  SampledGroups g = BallQuery(p, {1}, 1e-3, 4);
  for (int j = 0; j < 4; ++j) CHECK(g.neighbor_indices(0, j) == 1);
  CHECK(g.relative_coords.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unit grid with radius 1.1 picks the center and its axis neighbors") {
  Points p(27, 3);
  int r = 0;
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 3; ++y)
      for (int z = 0; z < 3; ++z) p.row(r++) << x, y, z;
  const int center = 13;  // (1, 1, 1)
  SampledGroups g = BallQuery(p, {center}, 1.1, 8);
  // scan oracle: in-radius points, nearest first
  std::vector<std::pair<double, int>> scan;
  for (int i = 0; i < 27; ++i) {
    double d = oracle::Dist(p.row(i).transpose(), p.row(center).transpose());
    if (d < 1.1) scan.push_back({d, i});
  }
  REQUIRE(scan.size() == 7);
  std::vector<int> expected;
  for (auto &s : scan) expected.push_back(s.second);
  std::sort(expected.begin(), expected.end());
  for (int j = 0; j < 7; ++j) CHECK(g.neighbor_indices(0, j) == expected[j]);
  CHECK(g.neighbor_indices(0, 7) == center);  // padded with the nearest member
}

TEST_CASE("ball query keeps the nearest members when the ball is over-full") {
  Points p(5, 3);
  p << 0, 0, 0,
       0.9, 0, 0,
       0.1, 0, 0,
       0.5, 0, 0,
       -0.3, 0, 0;
  SampledGroups g = BallQuery(p, {0}, 1.0, 3);
  CHECK(g.neighbor_indices(0, 0) == 0);
  CHECK(g.neighbor_indices(0, 1) == 2);
  CHECK(g.neighbor_indices(0, 2) == 4);
}

TEST_CASE("ball query postconditions over random clouds") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    Points p = oracle::RandomPoints(rng, 128, 1.0);
    std::vector<int> centers = FarthestPointSample(p, 16);
    const double radius = 0.4;
    SampledGroups g = BallQuery(p, centers, radius, 8);
    REQUIRE(g.relative_coords.rows() == 16 * 8);
    REQUIRE(g.relative_coords.rowwise().norm().maxCoeff() <= radius + 1e-6);
    for (int c = 0; c < 16; ++c)
      for (int j = 0; j < 8; ++j) {
        const int n = g.neighbor_indices(c, j);
        REQUIRE((g.relative_coords.row(c * 8 + j) - (p.row(n) - p.row(centers[c]))).norm() == 0.0);
      }
  }
}

TEST_CASE("ball query groups map through input permutations") {
  std::mt19937_64 rng(5);
  Points p = oracle::RandomPoints(rng, 100, 1.0);
  std::vector<int> perm(100);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Points q = Permute(p, perm);  // q row i is p row perm[i]
  std::vector<int> inverse(100);
  for (int i = 0; i < 100; ++i) inverse[perm[i]] = i;

  std::vector<int> centers_p = {3, 17, 42, 99};
  std::vector<int> centers_q;
  for (int c : centers_p) centers_q.push_back(inverse[c]);
  SampledGroups gp = BallQuery(p, centers_p, 0.5, 6);
  SampledGroups gq = BallQuery(q, centers_q, 0.5, 6);
  for (int c = 0; c < 4; ++c) {
    std::multiset<int> a, b;
    for (int j = 0; j < 6; ++j) {
      a.insert(gp.neighbor_indices(c, j));
      b.insert(perm[gq.neighbor_indices(c, j)]);
    }
    CHECK(a == b);
  }
}

TEST_CASE("ball query argument errors") {
  Points p = Points::Zero(2, 3);
  CHECK(ThrownCode([&] { BallQuery(p, {0}, 0.0, 2); }) == ErrorCode::kContract);
  CHECK(ThrownCode([&] { BallQuery(p, {0}, 0.1, 0); }) == ErrorCode::kContract);
  CHECK(ThrownCode([&] { BallQuery(p, {5}, 0.1, 2); }) == ErrorCode::kContract);
}

TEST_CASE("normalize_cloud") {
  Points unit(2, 3);
  unit << 1, 0, 0,
          -1, 0, 0;
  NormalizedCloud n = NormalizeCloud(unit);
  CHECK(n.coords == unit);
  CHECK(n.centroid == Vec3::Zero());
  CHECK(n.scale == 1.0);

  Points single(1, 3);
  single << 0.3, -0.2, 1.5;
  n = NormalizeCloud(single);
  CHECK(n.coords.norm() == 0.0);
  CHECK(n.centroid == Vec3(0.3, -0.2, 1.5));
  CHECK(n.scale == 1.0);

  std::mt19937_64 rng(6);
  Points p = (oracle::RandomPoints(rng, 300, 0.2).rowwise() + Eigen::RowVector3d(0.1, 0.2, 0.9)).eval();
  n = NormalizeCloud(p);
  CHECK(n.coords.rowwise().norm().maxCoeff() == doctest::Approx(1.0));
  Points back = (n.coords * n.scale).rowwise() + n.centroid.transpose();
  CHECK((back - p).cwiseAbs().maxCoeff() < 1e-7);

  Points empty(0, 3);
  CHECK(ThrownCode([&] { NormalizeCloud(empty); }) == ErrorCode::kEmptyCloud);
}

TEST_CASE("resample_fixed") {
  std::mt19937_64 rng(7);
  PointCloud c;
  c.coords = oracle::RandomPoints(rng, 64);
  PointCloud same = ResampleFixed(c, 64, 1);
  CHECK(CoordSet(same.coords) == CoordSet(c.coords));

  PointCloud one;
  one.coords.resize(1, 3);
  one.coords << 1, 2, 3;
  PointCloud four = ResampleFixed(one, 4, 9);
  REQUIRE(four.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(four.coords.row(i) == one.coords.row(0));

  PointCloud big;
  big.coords = oracle::RandomPoints(rng, 5000);
  big.colors = Points::Random(5000, 3);
  PointCloud down = ResampleFixed(big, 2048, 3);
  REQUIRE(down.size() == 2048);
  REQUIRE(down.colors.has_value());
  std::multiset<Key> input = CoordSet(big.coords);
  for (Eigen::Index i = 0; i < down.size(); ++i)
    REQUIRE(input.count({down.coords(i, 0), down.coords(i, 1), down.coords(i, 2)}) == 1);

  PointCloud small;
  small.coords = oracle::RandomPoints(rng, 10);
  PointCloud up1 = ResampleFixed(small, 50, 42);
  PointCloud up2 = ResampleFixed(small, 50, 42);
  PointCloud up3 = ResampleFixed(small, 50, 43);
  CHECK(up1.coords == up2.coords);
  CHECK(up1.coords != up3.coords);
  CHECK(up1.coords.topRows(10) == small.coords);

  PointCloud empty;
  empty.coords.resize(0, 3);
  CHECK(ThrownCode([&] { ResampleFixed(empty, 4, 0); }) == ErrorCode::kEmptyCloud);
}
