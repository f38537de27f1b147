#pragma once

// Independent reference implementations used as test oracles. Everything
// here is written as plain scalar loops so it shares no code with the
// library beyond the data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vlm6d/error.h"
#include "vlm6d/geometry.h"

namespace oracle {

using vlm6d::Mat3;
using vlm6d::Points;
using vlm6d::Pose;
using vlm6d::Vec3;

inline Vec3 Transform(const Pose &pose, double x, double y, double z) {
  Vec3 out;
  for (int r = 0; r < 3; ++r)
    out(r) = pose.rotation(r, 0) * x + pose.rotation(r, 1) * y + pose.rotation(r, 2) * z +
             pose.translation(r);
  return out;
}

inline double Dist(const Vec3 &a, const Vec3 &b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += (a(i) - b(i)) * (a(i) - b(i));
  return std::sqrt(s);
}

inline double Add(const Pose &pred, const Pose &gt, const Points &pts) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    sum += Dist(Transform(pred, pts(i, 0), pts(i, 1), pts(i, 2)),
                Transform(gt, pts(i, 0), pts(i, 1), pts(i, 2)));
  return sum / static_cast<double>(pts.rows());
}

inline double Adds(const Pose &pred, const Pose &gt, const Points &pts) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const Vec3 g = Transform(gt, pts(i, 0), pts(i, 1), pts(i, 2));
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < pts.rows(); ++j)
      best = std::min(best, Dist(g, Transform(pred, pts(j, 0), pts(j, 1), pts(j, 2))));
    sum += best;
  }
  return sum / static_cast<double>(pts.rows());
}

inline double Diameter(const Points &pts) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pts.rows(); ++j)
      best = std::max(best, Dist(pts.row(i).transpose(), pts.row(j).transpose()));
  return best;
}

inline Mat3 RandomRotation(std::mt19937_64 &rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

inline Pose RandomPose(std::mt19937_64 &rng, double translation_scale = 0.5) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Pose p;
  p.rotation = RandomRotation(rng);
  p.translation = Vec3(u(rng), u(rng), u(rng)) * translation_scale;
  return p;
}

inline Points RandomPoints(std::mt19937_64 &rng, Eigen::Index n, double scale = 0.05) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Points p(n, 3);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = u(rng) * scale;
  return p;
}

// Central finite difference of f along every coordinate of x.
inline Eigen::VectorXd NumericGradient(const std::function<double(const Eigen::VectorXd &)> &f,
                                       Eigen::VectorXd x, double eps) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + eps;
    const double up = f(x);
    x(i) = keep - eps;
    const double down = f(x);
    x(i) = keep;
    g(i) = (up - down) / (2.0 * eps);
  }
  return g;
}

// |a - b| / max(|a|, |b|, floor), the usual gradient-check statistic.
inline double RelativeError(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double MaxRelativeError(const Eigen::VectorXd &a, const Eigen::VectorXd &b,
                               double floor = 1e-8) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) worst = std::max(worst, RelativeError(a(i), b(i), floor));
  return worst;
}

// Fresh scratch directory under VLM6D_TEST_TMP (or the system temp dir).
inline std::filesystem::path ScratchDir(const std::string &name) {
  const char *base = std::getenv("VLM6D_TEST_TMP");
  std::filesystem::path root =
      base ? std::filesystem::path(base) : std::filesystem::temp_directory_path() / "vlm6d_tests";
  std::filesystem::path dir = root / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Code of the vlm6d::Error thrown by f, or nullopt when nothing is thrown.
template <typename F>
std::optional<vlm6d::ErrorCode> ThrownCode(F &&f) {
  try {
    f();
  } catch (const vlm6d::Error &e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace oracle
