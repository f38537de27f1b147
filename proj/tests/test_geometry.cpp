#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "support/oracles.h"
#include "vlm6d/error.h"
#include "vlm6d/geometry.h"
#include "vlm6d/model_io.h"

using namespace vlm6d;
using oracle::ThrownCode;

namespace {

CameraIntrinsics Cam() { return {500.0, 480.0, 320.0, 240.0, 640, 480}; }

ObjectModel ModelFrom(const Points &pts, bool symmetric = false) {
  ObjectModel m;
  m.points = pts;
  m.diameter = oracle::Diameter(pts);
  m.symmetric = symmetric;
  return m;
}

Points CubeCorners(double side) {
  Points p(8, 3);
  int r = 0;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int z = 0; z < 2; ++z) p.row(r++) << x * side, y * side, z * side;
  return p;
}

}  // namespace

TEST_CASE("backprojection of the principal point lies on the optical axis") {
  DepthImage depth = DepthImage::Zero(480, 640);
  depth(240, 320) = 1.0;
  depth(240, 820 - 320) = 0.0;
  PixelMask mask = depth.array() > 0.0;
  PointCloud cloud = BackprojectDepth(depth, Cam(), mask);
  REQUIRE(cloud.size() == 1);
  CHECK(cloud.coords(0, 0) == 0.0);
  CHECK(cloud.coords(0, 1) == 0.0);
  CHECK(cloud.coords(0, 2) == 1.0);
}

TEST_CASE("one focal length right of the principal point gives x equal to z") {
  CameraIntrinsics cam{100.0, 100.0, 20.0, 10.0, 200, 40};
  DepthImage depth = DepthImage::Zero(40, 200);
  depth(10, 120) = 2.0;
  PointCloud cloud = BackprojectDepth(depth, cam, depth.array() > 0.0);
  REQUIRE(cloud.size() == 1);
  CHECK(cloud.coords(0, 0) == doctest::Approx(2.0));
  CHECK(cloud.coords(0, 1) == doctest::Approx(0.0));
  CHECK(cloud.coords(0, 2) == doctest::Approx(2.0));
}

TEST_CASE("backprojection emits one point per mask pixel in row-major order with colors") {
  CameraIntrinsics cam{10.0, 10.0, 2.0, 1.5, 4, 3};
  DepthImage depth(3, 4);
  depth << 1, 0, 2, 0,
           0, 3, 0, 0,
           0, 0, 0, 4;
  PixelMask mask = depth.array() > 0.0;
  mask(0, 2) = false;
  RgbImage rgb(3, 4, 3, 0);
  rgb.at(1, 1, 0) = 255;
  PointCloud cloud = BackprojectDepth(depth, cam, mask, &rgb);
  REQUIRE(cloud.size() == 3);
  CHECK(cloud.coords(0, 2) == 1.0);
  CHECK(cloud.coords(1, 2) == 3.0);
  CHECK(cloud.coords(2, 2) == 4.0);
  REQUIRE(cloud.colors.has_value());
  CHECK((*cloud.colors)(1, 0) == 1.0);
  CHECK((*cloud.colors)(0, 0) == 0.0);
}

TEST_CASE("backprojection with no valid pixel is an empty-cloud error") {
  DepthImage depth = DepthImage::Zero(4, 4);
  CameraIntrinsics cam{10, 10, 2, 2, 4, 4};
  CHECK(ThrownCode([&] { BackprojectDepth(depth, cam, depth.array() > 0.0); }) ==
        ErrorCode::kEmptyCloud);
}

TEST_CASE("random depth maps round-trip through projection") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> d(0.3, 3.0);
  CameraIntrinsics cam{612.3, 608.9, 3.7, 4.1, 8, 8};
  for (int trial = 0; trial < 100; ++trial) {
    DepthImage depth(8, 8);
    for (int v = 0; v < 8; ++v)
      for (int u = 0; u < 8; ++u) depth(v, u) = d(rng);
    PointCloud cloud = BackprojectDepth(depth, cam, depth.array() > 0.0);
    Pixels px = ProjectPoints(cloud.coords, cam);
    double worst = 0.0;
    for (int i = 0; i < 64; ++i) {
      worst = std::max(worst, std::abs(px(i, 0) - (i % 8)));
      worst = std::max(worst, std::abs(px(i, 1) - (i / 8)));
    }
    REQUIRE(worst < 1e-4);
  }
}

TEST_CASE("projection examples") {
  CameraIntrinsics cam{500.0, 500.0, 320.0, 240.0, 640, 480};
  Points p(2, 3);
  p << 0, 0, 1,
       1, 0, 1;
  Pixels px = ProjectPoints(p, cam);
  CHECK(px(0, 0) == 320.0);
  CHECK(px(0, 1) == 240.0);
  CHECK(px(1, 0) == 820.0);
  CHECK(px(1, 1) == 240.0);
}

TEST_CASE("projecting a point at or behind the camera is rejected") {
  Points p(1, 3);
  p << 0.1, 0.2, 0.0;
  CHECK(ThrownCode([&] { ProjectPoints(p, Cam()); }) == ErrorCode::kNonPositiveDepth);
  p(0, 2) = -1.0;
  CHECK(ThrownCode([&] { ProjectPoints(p, Cam()); }) == ErrorCode::kNonPositiveDepth);
}

TEST_CASE("intrinsics validation") {
  CHECK_NOTHROW(Cam().Validate());
  CameraIntrinsics bad = Cam();
  bad.fx = 0.0;
  CHECK(ThrownCode([&] { bad.Validate(); }) == ErrorCode::kContract);
  bad = Cam();
  bad.cx = 700.0;
  CHECK(ThrownCode([&] { bad.Validate(); }) == ErrorCode::kContract);
}

TEST_CASE("apply_pose identity, translation and composition") {
  std::mt19937_64 rng(3);
  Points pts = oracle::RandomPoints(rng, 20);
  CHECK(ApplyPose(Pose::Identity(), pts) == pts);

  Pose shift;
  shift.translation = Vec3(0.1, -0.2, 0.3);
  CHECK((ApplyPose(shift, pts) - (pts.rowwise() + shift.translation.transpose())).cwiseAbs().maxCoeff() <
        1e-15);

  for (int trial = 0; trial < 20; ++trial) {
    Pose a = oracle::RandomPose(rng), b = oracle::RandomPose(rng);
    Points nested = ApplyPose(a, ApplyPose(b, pts));
    Points composed = ApplyPose(a * b, pts);
    CHECK((nested - composed).cwiseAbs().maxCoeff() < 1e-6);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      Vec3 ref = oracle::Transform(b, pts(i, 0), pts(i, 1), pts(i, 2));
      ref = oracle::Transform(a, ref(0), ref(1), ref(2));
      CHECK((nested.row(i).transpose() - ref).norm() < 1e-12);
    }
  }
}

TEST_CASE("pose inverse and validity") {
  std::mt19937_64 rng(4);
  Pose p = oracle::RandomPose(rng);
  CHECK(p.IsValid());
  Pose id = p * p.Inverse();
  CHECK((id.rotation - Mat3::Identity()).norm() < 1e-12);
  CHECK(id.translation.norm() < 1e-12);
  Pose skew = p;
  skew.rotation(0, 0) += 1e-3;
  CHECK_FALSE(skew.IsValid());
  Pose reflect;
  reflect.rotation = Mat3::Identity();
  reflect.rotation(2, 2) = -1.0;
  CHECK_FALSE(reflect.IsValid());
}

TEST_CASE("ADD examples") {
  std::mt19937_64 rng(5);
  ObjectModel m = ModelFrom(oracle::RandomPoints(rng, 30));
  Pose gt = oracle::RandomPose(rng);
  CHECK(AddMetric(gt, gt, m) == 0.0);
  Pose shifted = gt;
  const Vec3 delta(0.01, -0.02, 0.005);
  shifted.translation += delta;
  CHECK(AddMetric(shifted, gt, m) == doctest::Approx(delta.norm()).epsilon(1e-12));
}

TEST_CASE("ADD and ADD-S match scalar-loop oracles") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    ObjectModel m = ModelFrom(oracle::RandomPoints(rng, 30));
    Pose pred = oracle::RandomPose(rng), gt = oracle::RandomPose(rng);
    CHECK(std::abs(AddMetric(pred, gt, m) - oracle::Add(pred, gt, m.points)) < 1e-9);
    CHECK(std::abs(AddsMetric(pred, gt, m) - oracle::Adds(pred, gt, m.points)) < 1e-9);
  }
}

TEST_CASE("ADD-S never exceeds ADD") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    ObjectModel m = ModelFrom(oracle::RandomPoints(rng, 25));
    Pose pred = oracle::RandomPose(rng, 0.05), gt = oracle::RandomPose(rng, 0.05);
    CHECK(AddsMetric(pred, gt, m) <= AddMetric(pred, gt, m) + 1e-15);
  }
}

TEST_CASE("ADD is invariant under a common rigid transform") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    ObjectModel m = ModelFrom(oracle::RandomPoints(rng, 20));
    Pose pred = oracle::RandomPose(rng), gt = oracle::RandomPose(rng), t = oracle::RandomPose(rng);
    CHECK(std::abs(AddMetric(t * pred, t * gt, m) - AddMetric(pred, gt, m)) < 1e-9);
  }
}

TEST_CASE("square rotated about its symmetry axis: ADD-S vanishes while ADD does not") {
  Points square(4, 3);
  square << 0.05, 0.05, 0.0,
            -0.05, 0.05, 0.0,
            -0.05, -0.05, 0.0,
            0.05, -0.05, 0.0;
  ObjectModel m;
  m.points = square;
  m.diameter = oracle::Diameter(square);
  std::mt19937_64 rng(9);
  Pose gt = oracle::RandomPose(rng);
  Pose sym;
  sym.rotation = Eigen::AngleAxisd(M_PI / 2, Vec3::UnitZ()).toRotationMatrix();
  Pose pred = gt * sym;
  CHECK(AddsMetric(pred, gt, m) < 1e-9);
  CHECK(oracle::Adds(pred, gt, square) < 1e-9);
  CHECK(AddMetric(pred, gt, m) > 0.05);
}

TEST_CASE("ADD-S above the grid threshold matches brute force") {
  std::mt19937_64 rng(10);
  ObjectModel m = ModelFrom(oracle::RandomPoints(rng, 1500));
  Pose gt = oracle::RandomPose(rng, 0.1);
  Pose pred = gt;
  pred.rotation = Eigen::AngleAxisd(0.2, Vec3(1, 1, 0).normalized()).toRotationMatrix() * gt.rotation;
  pred.translation += Vec3(0.003, 0.0, -0.002);
  CHECK(std::abs(AddsMetric(pred, gt, m) - oracle::Adds(pred, gt, m.points)) < 1e-12);
}

TEST_CASE("nearest neighbor distances agree with brute force on both code paths") {
  std::mt19937_64 rng(12);
  for (Eigen::Index n : {50, 1001, 2500}) {
    Points ref = oracle::RandomPoints(rng, n, 0.1);
    Points q = oracle::RandomPoints(rng, 200, 0.12);
    Eigen::VectorXi idx;
    Eigen::VectorXd d = NearestNeighborDistances(q, ref, &idx);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      double best = 1e9;
      for (Eigen::Index j = 0; j < ref.rows(); ++j)
        best = std::min(best, oracle::Dist(q.row(i).transpose(), ref.row(j).transpose()));
      REQUIRE(d(i) == doctest::Approx(best).epsilon(1e-14));
      REQUIRE(oracle::Dist(q.row(i).transpose(), ref.row(idx(i)).transpose()) ==
              doctest::Approx(best).epsilon(1e-14));
    }
  }
}

TEST_CASE("recall at threshold") {
  ObjectModel m;
  m.diameter = 0.2;
  std::vector<double> zeros(5, 0.0);
  CHECK(RecallAtThreshold(zeros, m) == 100.0);
  std::vector<double> errs{0.5 * 0.2, 0.05 * 0.2, 0.2 * 0.2};
  CHECK(RecallAtThreshold(errs, m) == doctest::Approx(100.0 / 3.0));
  std::vector<double> boundary{0.1 * 0.2};
  CHECK(RecallAtThreshold(boundary, m) == 0.0);
  std::vector<double> empty;
  CHECK(ThrownCode([&] { RecallAtThreshold(empty, m); }) == ErrorCode::kUndefinedRecall);
  CHECK(ThrownCode([&] { RecallAtThreshold(zeros, m, 0.0); }) == ErrorCode::kContract);
}

TEST_CASE("Table 1 VLM6D column: the mean of the eight cells differs from the printed average") {
  // ape, can, cat, driller, duck, eggbox, glue, holepuncher
  const std::vector<double> cells{81.0, 78.9, 86.7, 81.9, 75.0, 83.4, 79.0, 81.0};
  double sum = 0.0;
  for (double c : cells) sum += c;
  const double mean = sum / 8.0;
  CHECK(mean == doctest::Approx(80.8625));
  CHECK(std::abs(mean - 81.6) > 0.5);
}

TEST_CASE("object diameter") {
  CHECK(ObjectDiameter(CubeCorners(1.0)) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
  Points two(2, 3);
  two << 0, 0, 0,
         0.07, 0, 0;
  CHECK(ObjectDiameter(two) == doctest::Approx(0.07).epsilon(1e-15));
  Points one(1, 3);
  one << 1, 2, 3;
  CHECK(ThrownCode([&] { ObjectDiameter(one); }) == ErrorCode::kInsufficientPoints);

  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    Points pts = oracle::RandomPoints(rng, 200);
    CHECK(ObjectDiameter(pts) == doctest::Approx(oracle::Diameter(pts)).epsilon(1e-14));
    Pose t = oracle::RandomPose(rng);
    CHECK(std::abs(ObjectDiameter(ApplyPose(t, pts)) - ObjectDiameter(pts)) < 1e-9);
  }
  Points big = oracle::RandomPoints(rng, 6000);
  CHECK(ObjectDiameter(big) == doctest::Approx(oracle::Diameter(big)).epsilon(1e-14));
}

TEST_CASE("object models need four non-coplanar points") {
  CHECK_NOTHROW(ObjectModel::FromPoints(1, "cube", CubeCorners(0.1), false));
  ObjectModel m = ObjectModel::FromPoints(1, "cube", CubeCorners(0.1), true);
  CHECK(m.diameter == doctest::Approx(0.1 * std::sqrt(3.0)));
  CHECK(m.symmetric);
  Points flat(5, 3);
  flat << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0, 0.5, 0.2, 0;
  CHECK(ThrownCode([&] { ObjectModel::FromPoints(1, "flat", flat, false); }) == ErrorCode::kContract);
  Points three = CubeCorners(1.0).topRows(3);
  CHECK(ThrownCode([&] { ObjectModel::FromPoints(1, "few", three, false); }) ==
        ErrorCode::kInsufficientPoints);
}

TEST_CASE("6D rotation decoding examples") {
  Vec6 a;
  a << 1, 0, 0, 0, 1, 0;
  CHECK(RotationFrom6d(a) == Mat3::Identity());
  a << 2, 0, 0, 0, 3, 0;
  CHECK((RotationFrom6d(a) - Mat3::Identity()).norm() < 1e-15);
  a << 0, 0, 0, 0, 1, 0;
  CHECK(ThrownCode([&] { RotationFrom6d(a); }) == ErrorCode::kDegenerateRotation);
  a << 1, 2, 3, 2, 4, 6;
  CHECK(ThrownCode([&] { RotationFrom6d(a); }) == ErrorCode::kDegenerateRotation);
}

TEST_CASE("decoded rotations are proper, scale invariant and invert RotationTo6d") {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> s(0.1, 10.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Vec6 r6;
    for (int i = 0; i < 6; ++i) r6(i) = n(rng);
    Mat3 r = RotationFrom6d(r6);
    REQUIRE((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    REQUIRE(std::abs(r.determinant() - 1.0) < 1e-6);
    Pose p;
    p.rotation = r;
    REQUIRE(p.IsValid());
    Vec6 scaled = r6;
    scaled.head<3>() *= s(rng);
    scaled.tail<3>() *= s(rng);
    REQUIRE((RotationFrom6d(scaled) - r).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((RotationFrom6d(RotationTo6d(r)) - r).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("6D decoding backward matches finite differences") {
  std::mt19937_64 rng(15);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    Vec6 r6;
    for (int i = 0; i < 6; ++i) r6(i) = n(rng);
    Mat3 w;
    for (int i = 0; i < 9; ++i) w(i) = n(rng);
    auto f = [&](const Eigen::VectorXd &x) { return (RotationFrom6d(Vec6(x)).cwiseProduct(w)).sum(); };
    Eigen::VectorXd numeric = oracle::NumericGradient(f, r6, 1e-6);
    Vec6 analytic = RotationFrom6dBackward(r6, w);
    CHECK(oracle::MaxRelativeError(analytic, numeric, 1e-6) < 1e-5);
  }
}

TEST_CASE("point cloud validation") {
  PointCloud c;
  c.coords = Points::Zero(3, 3);
  CHECK_NOTHROW(c.Validate());
  c.colors = Points::Zero(2, 3);
  CHECK(ThrownCode([&] { c.Validate(); }) == ErrorCode::kContract);
  c.colors.reset();
  c.coords(1, 1) = std::nan("");
  CHECK(ThrownCode([&] { c.Validate(); }) == ErrorCode::kContract);
}

TEST_CASE("PLY and xyz model files") {
  auto dir = oracle::ScratchDir("model_io");
  std::mt19937_64 rng(16);
  Points pts = oracle::RandomPoints(rng, 40);

  WritePlyPoints(dir / "binary.ply", pts);
  Points back = LoadPlyPoints(dir / "binary.ply");
  REQUIRE(back.rows() == 40);
  // float storage in millimeters
  CHECK((back - pts).cwiseAbs().maxCoeff() < 1e-8);

  {
    std::ofstream out(dir / "ascii.ply");
    out << "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\nproperty float x\n"
           "property float y\nproperty float z\nproperty uchar red\nelement face 1\n"
           "property list uchar int vertex_indices\nend_header\n"
           "10 20 30 255\n-1 0 2.5 0\n3 0 1 1\n";
  }
  Points ascii = LoadModelPoints(dir / "ascii.ply");
  REQUIRE(ascii.rows() == 2);
  CHECK(ascii(0, 0) == doctest::Approx(0.010));
  CHECK(ascii(0, 2) == doctest::Approx(0.030));
  CHECK(ascii(1, 2) == doctest::Approx(0.0025));

  {
    std::ofstream out(dir / "pts.xyz");
    out << "# comment\n0.1 0.2 0.3\n\n1 2 3 # trailing\n";
  }
  Points xyz = LoadModelPoints(dir / "pts.xyz");
  REQUIRE(xyz.rows() == 2);
  CHECK(xyz(0, 1) == 0.2);
  CHECK(xyz(1, 2) == 3.0);

  CHECK(ThrownCode([&] { LoadModelPoints(dir / "missing.ply"); }) == ErrorCode::kIngestion);
  {
    std::ofstream out(dir / "bad.ply");
    out << "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
           "property float z\nend_header\n1 2 3\n";
  }
  CHECK(ThrownCode([&] { LoadModelPoints(dir / "bad.ply"); }) == ErrorCode::kParse);
}
