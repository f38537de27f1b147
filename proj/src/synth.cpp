#include "vlm6d/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "vlm6d/error.h"
#include "vlm6d/model_io.h"
#include "vlm6d/nn/tensor.h"
#include "vlm6d/pointcloud_ops.h"

namespace vlm6d {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SampleBuffer {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  void Add(const Vec3 &p, const Vec3 &n) {
    points.push_back(p);
    normals.push_back(n);
  }
};

int Cells(double extent, double spacing) {
  return std::max(1, static_cast<int>(std::ceil(extent / spacing)));
}

// Cell-centered grid on the six faces of [lo, hi].
void SampleBoxFaces(const Vec3 &lo, const Vec3 &hi, double spacing, SampleBuffer &out) {
  for (int axis = 0; axis < 3; ++axis) {
    const int a = (axis + 1) % 3;
    const int b = (axis + 2) % 3;
    const int na = Cells(hi(a) - lo(a), spacing);
    const int nb = Cells(hi(b) - lo(b), spacing);
    for (int side = 0; side < 2; ++side) {
      Vec3 normal = Vec3::Zero();
      normal(axis) = side == 0 ? -1.0 : 1.0;
      for (int i = 0; i < na; ++i) {
        for (int j = 0; j < nb; ++j) {
          Vec3 p;
          p(axis) = side == 0 ? lo(axis) : hi(axis);
          p(a) = lo(a) + (i + 0.5) * (hi(a) - lo(a)) / na;
          p(b) = lo(b) + (j + 0.5) * (hi(b) - lo(b)) / nb;
          out.Add(p, normal);
        }
      }
    }
  }
}

void SampleCylinder(double radius, double height, double spacing, SampleBuffer &out) {
  const double two_pi = 2.0 * std::numbers::pi;
  const int nt = Cells(two_pi * radius, spacing);
  const int nz = Cells(height, spacing);
  for (int i = 0; i < nt; ++i) {
    const double theta = (i + 0.5) * two_pi / nt;
    const Vec3 n(std::cos(theta), std::sin(theta), 0.0);
    for (int j = 0; j < nz; ++j)
      out.Add(Vec3(radius * n.x(), radius * n.y(), -0.5 * height + (j + 0.5) * height / nz), n);
  }
  const int nr = Cells(radius, spacing);
  for (int side = 0; side < 2; ++side) {
    const double z = side == 0 ? -0.5 * height : 0.5 * height;
    const Vec3 n(0.0, 0.0, side == 0 ? -1.0 : 1.0);
    for (int r = 0; r < nr; ++r) {
      const double rho = (r + 0.5) * radius / nr;
      const int count = Cells(two_pi * rho, spacing);
      for (int k = 0; k < count; ++k) {
        const double theta = (k + 0.5) * two_pi / count;
        out.Add(Vec3(rho * std::cos(theta), rho * std::sin(theta), z), n);
      }
    }
  }
}

bool InsideBox(const Vec3 &p, const Vec3 &lo, const Vec3 &hi, double margin) {
  for (int i = 0; i < 3; ++i)
    if (p(i) <= lo(i) + margin || p(i) >= hi(i) - margin) return false;
  return true;
}

void SampleLBracket(double arm_x, double arm_y, double thickness, double width, double spacing,
                    SampleBuffer &out) {
  const Vec3 lo_a(0, 0, 0), hi_a(arm_x, thickness, width);
  const Vec3 lo_b(0, 0, 0), hi_b(thickness, arm_y, width);
  const double eps = 1e-9;
  SampleBuffer a, b;
  SampleBoxFaces(lo_a, hi_a, spacing, a);
  SampleBoxFaces(lo_b, hi_b, spacing, b);
  // Faces of A strictly inside B are internal.
  for (size_t i = 0; i < a.points.size(); ++i)
    if (!InsideBox(a.points[i], lo_b, hi_b, eps)) out.Add(a.points[i], a.normals[i]);
  // Faces of B on or inside the closed A are internal or duplicated.
  for (size_t i = 0; i < b.points.size(); ++i)
    if (!InsideBox(b.points[i], lo_a, hi_a, -eps)) out.Add(b.points[i], b.normals[i]);
}

PrimitiveShape ShapeFromName(const std::string &name) {
  if (name == "box") return PrimitiveShape::kBox;
  if (name == "cylinder") return PrimitiveShape::kCylinder;
  if (name == "l_bracket") return PrimitiveShape::kLBracket;
  throw Error(ErrorCode::kConfig, "unknown primitive shape '" + name + "'");
}

std::string ShapeName(PrimitiveShape shape) {
  switch (shape) {
    case PrimitiveShape::kBox: return "box";
    case PrimitiveShape::kCylinder: return "cylinder";
    case PrimitiveShape::kLBracket: return "l_bracket";
  }
  return "box";
}

size_t ExpectedDims(PrimitiveShape shape) {
  switch (shape) {
    case PrimitiveShape::kBox: return 3;
    case PrimitiveShape::kCylinder: return 2;
    case PrimitiveShape::kLBracket: return 4;
  }
  return 0;
}

Mat3 RandomRotation(nn::Rng &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
  q.normalize();
  return q.toRotationMatrix();
}

std::string Padded(int value) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", value);
  return buf;
}

}  // namespace

ToySceneConfig ToySceneConfig::Default() {
  ToySceneConfig c;
  c.objects = {
      {1, "box", PrimitiveShape::kBox, {0.10, 0.06, 0.04}, {200, 60, 60}, true},
      {2, "cylinder", PrimitiveShape::kCylinder, {0.03, 0.10}, {60, 170, 70}, true},
      {3, "l_bracket", PrimitiveShape::kLBracket, {0.09, 0.06, 0.02, 0.05}, {60, 90, 210}, false},
  };
  return c;
}

void ToySceneConfig::Validate() const {
  intrinsics.Validate();
  if (objects.empty()) throw Error(ErrorCode::kConfig, "toy scene needs at least one object");
  if (!(depth_min > 0 && depth_max > depth_min))
    throw Error(ErrorCode::kConfig, "toy scene depth range must satisfy 0 < min < max");
  if (objects_per_frame < 1) throw Error(ErrorCode::kConfig, "objects_per_frame must be >= 1");
  if (!(render_spacing > 0)) throw Error(ErrorCode::kConfig, "render_spacing must be positive");
  if (model_points < 4) throw Error(ErrorCode::kConfig, "model_points must be >= 4");
  for (const auto &o : objects) {
    if (o.dims.size() != ExpectedDims(o.shape))
      throw Error(ErrorCode::kConfig, "object " + o.name + " needs " +
                                          std::to_string(ExpectedDims(o.shape)) + " dims");
    for (double d : o.dims)
      if (!(d > 0)) throw Error(ErrorCode::kConfig, "object " + o.name + " has a non-positive dim");
    if (o.shape == PrimitiveShape::kLBracket &&
        (o.dims[2] >= o.dims[0] || o.dims[2] >= o.dims[1]))
      throw Error(ErrorCode::kConfig, "L-bracket thickness must be below both arm lengths");
  }
}

json ToySceneConfig::ToJson() const {
  json objs = json::array();
  for (const auto &o : objects)
    objs.push_back({{"id", o.object_id},
                    {"name", o.name},
                    {"shape", ShapeName(o.shape)},
                    {"dims", o.dims},
                    {"color", o.color},
                    {"symmetric", o.symmetric}});
  const auto &k = intrinsics;
  return {{"camera",
           {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width},
            {"height", k.height}}},
          {"depth_min", depth_min},
          {"depth_max", depth_max},
          {"objects_per_frame", objects_per_frame},
          {"render_spacing", render_spacing},
          {"model_points", model_points},
          {"objects", objs}};
}

ToySceneConfig ToySceneConfig::FromJson(const json &j) {
  ToySceneConfig c = Default();
  try {
    if (j.contains("camera")) {
      const json &k = j.at("camera");
      c.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(),
                      k.at("cx").get<double>(), k.at("cy").get<double>(),
                      k.at("width").get<int>(),  k.at("height").get<int>()};
    }
    c.depth_min = j.value("depth_min", c.depth_min);
    c.depth_max = j.value("depth_max", c.depth_max);
    c.objects_per_frame = j.value("objects_per_frame", c.objects_per_frame);
    c.render_spacing = j.value("render_spacing", c.render_spacing);
    c.model_points = j.value("model_points", c.model_points);
    if (j.contains("objects")) {
      c.objects.clear();
      for (const auto &o : j.at("objects")) {
        PrimitiveSpec s;
        s.object_id = o.at("id").get<int>();
        s.name = o.value("name", "object_" + std::to_string(s.object_id));
        s.shape = ShapeFromName(o.at("shape").get<std::string>());
        s.dims = o.at("dims").get<std::vector<double>>();
        if (o.contains("color")) s.color = o.at("color").get<std::array<std::uint8_t, 3>>();
        s.symmetric = o.value("symmetric", false);
        c.objects.push_back(std::move(s));
      }
    }
  } catch (const json::exception &e) {
    throw Error(ErrorCode::kConfig, std::string("toy scene config: ") + e.what());
  }
  c.Validate();
  return c;
}

SurfaceSamples SamplePrimitiveSurface(const PrimitiveSpec &spec, double spacing) {
  SampleBuffer buf;
  const auto &d = spec.dims;
  switch (spec.shape) {
    case PrimitiveShape::kBox:
      SampleBoxFaces(Vec3(-0.5 * d[0], -0.5 * d[1], -0.5 * d[2]),
                     Vec3(0.5 * d[0], 0.5 * d[1], 0.5 * d[2]), spacing, buf);
      break;
    case PrimitiveShape::kCylinder:
      SampleCylinder(d[0], d[1], spacing, buf);
      break;
    case PrimitiveShape::kLBracket:
      SampleLBracket(d[0], d[1], d[2], d[3], spacing, buf);
      break;
  }
  SurfaceSamples out;
  out.points.resize(static_cast<Eigen::Index>(buf.points.size()), 3);
  out.normals.resize(out.points.rows(), 3);
  for (size_t i = 0; i < buf.points.size(); ++i) {
    out.points.row(i) = buf.points[i].transpose();
    out.normals.row(i) = buf.normals[i].transpose();
  }
  const Eigen::RowVector3d centroid = out.points.colwise().mean();
  out.points.rowwise() -= centroid;
  return out;
}

std::map<int, Renderable> BuildRenderables(const ToySceneConfig &config) {
  config.Validate();
  std::map<int, Renderable> out;
  for (const auto &spec : config.objects) {
    Renderable r;
    r.spec = spec;
    r.surface = SamplePrimitiveSurface(spec, config.render_spacing);
    const int m = std::min<int>(config.model_points, static_cast<int>(r.surface.points.rows()));
    const auto idx = FarthestPointSample(r.surface.points, m);
    Points pts(m, 3);
    for (int i = 0; i < m; ++i) pts.row(i) = r.surface.points.row(idx[i]);
    r.model = ObjectModel::FromPoints(spec.object_id, spec.name, std::move(pts), spec.symmetric);
    if (!out.emplace(spec.object_id, std::move(r)).second)
      throw Error(ErrorCode::kConfig, "duplicate object id " + std::to_string(spec.object_id));
  }
  return out;
}

std::map<int, ObjectModel> ModelRegistry(const std::map<int, Renderable> &renderables) {
  std::map<int, ObjectModel> out;
  for (const auto &[id, r] : renderables) out.emplace(id, r.model);
  return out;
}

RGBDFrame RenderScene(const CameraIntrinsics &k, const std::map<int, Renderable> &renderables,
                      const std::vector<PlacedObject> &objects, const RenderSettings &settings) {
  k.Validate();
  const int w = k.width;
  const int h = k.height;
  const double inf = std::numeric_limits<double>::infinity();
  DepthImage zbuf = DepthImage::Constant(h, w, inf);
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> owner =
      Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(h, w, -1);
  DepthImage shade = DepthImage::Zero(h, w);
  std::vector<std::vector<int>> coverage(objects.size());  // per object, unoccluded pixel ids
  const Vec3 light = settings.light_direction.normalized();

  for (size_t o = 0; o < objects.size(); ++o) {
    const auto it = renderables.find(objects[o].object_id);
    if (it == renderables.end())
      throw Error(ErrorCode::kContract,
                  "no renderable for object " + std::to_string(objects[o].object_id));
    const SurfaceSamples &s = it->second.surface;
    const Pose &pose = objects[o].pose;
    std::vector<char> covered(static_cast<size_t>(w) * h, 0);
    for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
      const Vec3 p = pose.rotation * s.points.row(i).transpose() + pose.translation;
      const Vec3 n = pose.rotation * s.normals.row(i).transpose();
      if (p.z() <= 0.0 || n.dot(p) >= 0.0) continue;
      const double u = k.fx * p.x() / p.z() + k.cx;
      const double v = k.fy * p.y() / p.z() + k.cy;
      const int half = static_cast<int>(std::floor(0.5 * settings.render_spacing * k.fx / p.z() + 0.5));
      const long iu = std::lround(u);
      const long iv = std::lround(v);
      const double lit = settings.ambient + (1.0 - settings.ambient) * std::max(0.0, n.dot(light));
      for (long y = iv - half; y <= iv + half; ++y) {
        if (y < 0 || y >= h) continue;
        for (long x = iu - half; x <= iu + half; ++x) {
          if (x < 0 || x >= w) continue;
          covered[y * w + x] = 1;
          if (p.z() < zbuf(y, x)) {
            zbuf(y, x) = p.z();
            owner(y, x) = static_cast<int>(o);
            shade(y, x) = lit;
          }
        }
      }
    }
    for (int i = 0; i < w * h; ++i)
      if (covered[i]) coverage[o].push_back(i);
  }

  RGBDFrame frame;
  frame.intrinsics = k;
  frame.rgb = RgbImage(h, w, 3);
  frame.depth = DepthImage::Zero(h, w);
  std::vector<std::array<int, 5>> boxes(objects.size(), {w, h, -1, -1, 0});  // x0 y0 x1 y1 count
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int o = owner(y, x);
      if (o < 0) {
        for (int c = 0; c < 3; ++c) frame.rgb.at(y, x, c) = settings.background[c];
        continue;
      }
      frame.depth(y, x) = zbuf(y, x);
      const auto &color = renderables.at(objects[o].object_id).spec.color;
      for (int c = 0; c < 3; ++c)
        frame.rgb.at(y, x, c) =
            static_cast<std::uint8_t>(std::clamp(std::lround(color[c] * shade(y, x)), 0L, 255L));
      auto &b = boxes[o];
      b[0] = std::min(b[0], x);
      b[1] = std::min(b[1], y);
      b[2] = std::max(b[2], x);
      b[3] = std::max(b[3], y);
      ++b[4];
    }
  }
  for (size_t o = 0; o < objects.size(); ++o) {
    Annotation a;
    a.object_id = objects[o].object_id;
    a.pose = objects[o].pose;
    auto b = boxes[o];
    if (b[4] == 0) {
      for (int id : coverage[o]) {
        b[0] = std::min(b[0], id % w);
        b[1] = std::min(b[1], id / w);
        b[2] = std::max(b[2], id % w);
        b[3] = std::max(b[3], id / w);
      }
    }
    if (b[2] >= b[0]) a.bbox = {b[0], b[1], b[2] - b[0] + 1, b[3] - b[1] + 1};
    a.visibility = coverage[o].empty()
                       ? 0.0
                       : static_cast<double>(boxes[o][4]) / static_cast<double>(coverage[o].size());
    frame.annotations.push_back(a);
  }
  return frame;
}

SynthResult SynthScene(std::uint64_t seed, const ToySceneConfig &config) {
  const auto renderables = BuildRenderables(config);
  nn::Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<int> ids;
  for (const auto &spec : config.objects) ids.push_back(spec.object_id);
  std::vector<PlacedObject> placed;
  for (int i = 0; i < config.objects_per_frame; ++i) {
    if (i % static_cast<int>(ids.size()) == 0) std::shuffle(ids.begin(), ids.end(), rng);
    const int id = ids[i % ids.size()];
    const double radius = 0.5 * renderables.at(id).model.diameter;
    const double z_lo = std::min(config.depth_min + radius, 0.5 * (config.depth_min + config.depth_max));
    const double z_hi = std::max(config.depth_max - radius, z_lo);
    const double z = z_lo + (z_hi - z_lo) * unit(rng);
    const auto &k = config.intrinsics;
    auto axis = [&](double f, double c, int size) {
      const double margin = std::min(radius * f / z + 2.0, 0.5 * size);
      const double pixel = margin + (size - 2.0 * margin) * unit(rng);
      return (pixel - c) * z / f;
    };
    const double x = axis(k.fx, k.cx, k.width);
    const double y = axis(k.fy, k.cy, k.height);
    PlacedObject p;
    p.object_id = id;
    p.pose.rotation = RandomRotation(rng);
    p.pose.translation = Vec3(x, y, z);
    placed.push_back(p);
  }

  RenderSettings settings;
  settings.render_spacing = config.render_spacing;
  settings.light_direction =
      Vec3(1.4 * unit(rng) - 0.7, 1.4 * unit(rng) - 0.7, -1.0).normalized();

  SynthResult out;
  out.frame = RenderScene(config.intrinsics, renderables, placed, settings);
  out.models = ModelRegistry(renderables);
  return out;
}

void WriteSynthDataset(const fs::path &out, std::uint64_t seed, int frames,
                       const ToySceneConfig &config) {
  if (frames < 1) throw Error(ErrorCode::kConfig, "frames must be >= 1");
  const auto renderables = BuildRenderables(config);
  fs::create_directories(out / "models");
  DatasetManifest manifest;
  for (const auto &spec : config.objects) {
    const std::string rel = "models/obj_" + Padded(spec.object_id) + ".ply";
    WritePlyPoints(out / rel, renderables.at(spec.object_id).model.points);
    manifest.objects.push_back({spec.object_id, spec.name, rel, spec.symmetric});
  }
  SaveManifest(out / "manifest.json", manifest);
  {
    std::ofstream f(out / "toy_scene.json");
    f << config.ToJson().dump(2) << '\n';
  }
  for (int i = 0; i < frames; ++i) {
    const SynthResult r = SynthScene(nn::MixSeed(seed, static_cast<std::uint64_t>(i)), config);
    WriteBopFrame(out / "train", 0, i, r.frame);
  }
}

}  // namespace vlm6d
