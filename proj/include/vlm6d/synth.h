#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlm6d/dataset.h"
#include "vlm6d/geometry.h"

namespace vlm6d {

enum class PrimitiveShape { kBox, kCylinder, kLBracket };

// dims: box (x, y, z) extents; cylinder (radius, height) along z; L-bracket
// (arm_x, arm_y, thickness, width) with both arms sharing the width along z.
struct PrimitiveSpec {
  int object_id = 1;
  std::string name;
  PrimitiveShape shape = PrimitiveShape::kBox;
  std::vector<double> dims;
  std::array<std::uint8_t, 3> color{200, 60, 60};
  bool symmetric = false;
};

struct ToySceneConfig {
  CameraIntrinsics intrinsics{320.0, 320.0, 160.0, 120.0, 320, 240};
  double depth_min = 0.4;
  double depth_max = 1.2;
  int objects_per_frame = 1;
  double render_spacing = 0.002;  // meters between splatted surface samples
  int model_points = 1000;
  std::vector<PrimitiveSpec> objects;

  // Box, cylinder and L-bracket with distinct colors.
  static ToySceneConfig Default();
  void Validate() const;
  nlohmann::json ToJson() const;
  static ToySceneConfig FromJson(const nlohmann::json &j);
};

// Dense oriented surface samples centered on the primitive's centroid.
struct SurfaceSamples {
  Points points;
  Points normals;
};

SurfaceSamples SamplePrimitiveSurface(const PrimitiveSpec &spec, double spacing);

struct Renderable {
  PrimitiveSpec spec;
  SurfaceSamples surface;
  ObjectModel model;  // fixed FPS subset of the surface
};

std::map<int, Renderable> BuildRenderables(const ToySceneConfig &config);
std::map<int, ObjectModel> ModelRegistry(const std::map<int, Renderable> &renderables);

struct PlacedObject {
  int object_id = 0;
  Pose pose;
};

struct RenderSettings {
  Vec3 light_direction = Vec3(0.0, 0.0, -1.0);  // toward the light, camera frame
  double ambient = 0.3;
  std::array<std::uint8_t, 3> background{90, 90, 90};
  double render_spacing = 0.002;
};

// Z-buffers the surface samples of every placed object, splatting each into a
// square footprint sized by its projected spacing. Background depth is 0.
// Annotations carry tight bboxes of visible pixels and the visible fraction.
RGBDFrame RenderScene(const CameraIntrinsics &intrinsics,
                      const std::map<int, Renderable> &renderables,
                      const std::vector<PlacedObject> &objects, const RenderSettings &settings);

struct SynthResult {
  RGBDFrame frame;
  std::map<int, ObjectModel> models;
};

// Random poses within the depth range and a random light; deterministic per
// seed.
SynthResult SynthScene(std::uint64_t seed, const ToySceneConfig &config);

// Writes <out>/models/*.ply, <out>/manifest.json, <out>/toy_scene.json and
// frames 0..k-1 of scene 0 in <out>/train.
void WriteSynthDataset(const std::filesystem::path &out, std::uint64_t seed, int frames,
                       const ToySceneConfig &config);

}  // namespace vlm6d
