#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlm6d/geometry.h"
#include "vlm6d/image.h"

namespace vlm6d {

// Half-open pixel rectangle [x, x + width) x [y, y + height).
struct BoundingBox {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool Empty() const { return width <= 0 || height <= 0; }
  bool WithinImage(int image_width, int image_height) const;
  friend bool operator==(const BoundingBox &, const BoundingBox &) = default;
};

struct Annotation {
  int object_id = 0;
  Pose pose;
  BoundingBox bbox;
  double visibility = 1.0;
};

struct RGBDFrame {
  RgbImage rgb;
  DepthImage depth;  // meters
  CameraIntrinsics intrinsics;
  std::vector<Annotation> annotations;

  void Validate() const;
};

struct FrameId {
  int scene = 0;
  int frame = 0;
  friend auto operator<=>(const FrameId &, const FrameId &) = default;
};

// BOP scene directory: <root>/<split>/<scene:06d>/{scene_camera,scene_gt,
// scene_gt_info}.json with rgb/<frame:06d>.png and depth/<frame:06d>.png.
std::filesystem::path SceneDirectory(const std::filesystem::path &split_root, int scene);
RGBDFrame LoadBopSample(const std::filesystem::path &split_root, int scene, int frame);
// Every (scene, frame) with a scene_gt entry, sorted.
std::vector<FrameId> ListBopFrames(const std::filesystem::path &split_root);

// Appends one frame to a BOP scene, merging with existing JSON files. Depth
// is quantized to 16-bit with `depth_scale` millimeters per unit.
void WriteBopFrame(const std::filesystem::path &split_root, int scene, int frame,
                   const RGBDFrame &frame_data, double depth_scale = 0.1);

struct ObjectEntry {
  int object_id = 0;
  std::string name;
  std::filesystem::path model_path;  // relative paths resolve against the manifest
  bool symmetric = false;
};

// Object registry for a dataset. Class indices follow list order.
struct DatasetManifest {
  std::vector<ObjectEntry> objects;

  int ClassIndex(int object_id) const;  // -1 when unknown
  const ObjectEntry &Entry(int object_id) const;
  int num_classes() const { return static_cast<int>(objects.size()); }

  nlohmann::json ToJson() const;
  static DatasetManifest FromJson(const nlohmann::json &j);
};

DatasetManifest LoadManifest(const std::filesystem::path &path);
void SaveManifest(const std::filesystem::path &path, const DatasetManifest &manifest);

// Loads every model in the manifest, subsampled by FPS to at most
// `max_model_points`. Keyed by object id.
std::map<int, ObjectModel> LoadObjectModels(const DatasetManifest &manifest,
                                            const std::filesystem::path &manifest_dir,
                                            int max_model_points = 1000);

// The eight LM-O evaluation objects with their BOP ids and symmetry flags.
DatasetManifest LinemodOccludedManifest();

}  // namespace vlm6d
