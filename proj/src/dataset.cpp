#include "vlm6d/dataset.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "vlm6d/error.h"
#include "vlm6d/image_io.h"
#include "vlm6d/model_io.h"
#include "vlm6d/pointcloud_ops.h"

namespace vlm6d {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string Padded(int value) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", value);
  return buf;
}

json ReadJson(const fs::path &path, const std::string &context) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIngestion, "missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    throw Error(ErrorCode::kParse, path.string() + " (" + context + "): " + e.what());
  }
}

void WriteJson(const fs::path &path, const json &j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

const json &FrameEntry(const json &doc, int frame, const fs::path &path,
                       const std::string &context) {
  const std::string key = std::to_string(frame);
  if (!doc.is_object() || !doc.contains(key))
    throw Error(ErrorCode::kParse, path.string() + " (" + context + "): no entry for frame");
  return doc.at(key);
}

BoundingBox ClampBox(const std::vector<double> &xywh, int width, int height) {
  if (xywh.size() != 4) return {};
  const int x0 = std::clamp(static_cast<int>(std::floor(xywh[0])), 0, width);
  const int y0 = std::clamp(static_cast<int>(std::floor(xywh[1])), 0, height);
  const int x1 = std::clamp(static_cast<int>(std::floor(xywh[0] + xywh[2])), 0, width);
  const int y1 = std::clamp(static_cast<int>(std::floor(xywh[1] + xywh[3])), 0, height);
  if (xywh[2] <= 0 || xywh[3] <= 0) return {};
  return {x0, y0, x1 - x0, y1 - y0};
}

}  // namespace

bool BoundingBox::WithinImage(int image_width, int image_height) const {
  return x >= 0 && y >= 0 && width >= 0 && height >= 0 && x + width <= image_width &&
         y + height <= image_height;
}

void RGBDFrame::Validate() const {
  if (rgb.height != depth.rows() || rgb.width != depth.cols())
    throw Error(ErrorCode::kContract,
                "rgb " + std::to_string(rgb.height) + "x" + std::to_string(rgb.width) +
                    " and depth " + std::to_string(depth.rows()) + "x" +
                    std::to_string(depth.cols()) + " differ in size");
  if (rgb.channels != 3) throw Error(ErrorCode::kContract, "rgb must have 3 channels");
  for (const auto &a : annotations)
    if (!a.bbox.WithinImage(rgb.width, rgb.height))
      throw Error(ErrorCode::kContract,
                  "bbox of object " + std::to_string(a.object_id) + " leaves the image");
}

fs::path SceneDirectory(const fs::path &split_root, int scene) {
  return split_root / Padded(scene);
}

RGBDFrame LoadBopSample(const fs::path &split_root, int scene, int frame) {
  const fs::path dir = SceneDirectory(split_root, scene);
  const std::string context = "scene " + std::to_string(scene) + ", frame " + std::to_string(frame);
  const fs::path camera_path = dir / "scene_camera.json";
  const fs::path gt_path = dir / "scene_gt.json";
  const fs::path info_path = dir / "scene_gt_info.json";
  const fs::path rgb_path = dir / "rgb" / (Padded(frame) + ".png");
  const fs::path depth_path = dir / "depth" / (Padded(frame) + ".png");
  for (const auto &p : {camera_path, gt_path, rgb_path, depth_path})
    if (!fs::exists(p)) throw Error(ErrorCode::kIngestion, "missing file " + p.string());

  const json cameras = ReadJson(camera_path, context);
  const json gts = ReadJson(gt_path, context);
  const json infos = fs::exists(info_path) ? ReadJson(info_path, context) : json::object();

  RGBDFrame out;
  out.rgb = ReadPngRgb(rgb_path);
  const Gray16Image raw = ReadPngGray16(depth_path);
  if (raw.width != out.rgb.width || raw.height != out.rgb.height)
    throw Error(ErrorCode::kIngestion, "depth and rgb sizes differ for " + context);

  try {
    const json &cam = FrameEntry(cameras, frame, camera_path, context);
    const auto k = cam.at("cam_K").get<std::vector<double>>();
    if (k.size() != 9) throw Error(ErrorCode::kParse, camera_path.string() + " (" + context + "): cam_K needs 9 values");
    out.intrinsics = {k[0], k[4], k[2], k[5], out.rgb.width, out.rgb.height};
    const double depth_scale = cam.value("depth_scale", 1.0);
    // Raw units times depth_scale give millimeters.
    out.depth.resize(raw.height, raw.width);
    for (int i = 0; i < raw.height * raw.width; ++i)
      out.depth.data()[i] = raw.data[i] * depth_scale * 1e-3;

    const json &gt_list = FrameEntry(gts, frame, gt_path, context);
    const json *info_list = nullptr;
    if (infos.contains(std::to_string(frame))) info_list = &infos.at(std::to_string(frame));
    for (size_t i = 0; i < gt_list.size(); ++i) {
      const json &g = gt_list.at(i);
      Annotation a;
      a.object_id = g.at("obj_id").get<int>();
      const auto r = g.at("cam_R_m2c").get<std::vector<double>>();
      const auto t = g.at("cam_t_m2c").get<std::vector<double>>();
      if (r.size() != 9 || t.size() != 3)
        throw Error(ErrorCode::kParse, gt_path.string() + " (" + context + "): malformed pose");
      for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) a.pose.rotation(row, col) = r[row * 3 + col];
        a.pose.translation(row) = t[row] * 1e-3;
      }
      if (info_list && i < info_list->size()) {
        const json &info = info_list->at(i);
        BoundingBox box = ClampBox(info.value("bbox_visib", std::vector<double>{}),
                                   out.rgb.width, out.rgb.height);
        if (box.Empty())
          box = ClampBox(info.value("bbox_obj", std::vector<double>{}), out.rgb.width,
                         out.rgb.height);
        a.bbox = box;
        a.visibility = info.value("visib_fract", 1.0);
      }
      out.annotations.push_back(a);
    }
  } catch (const json::exception &e) {
    throw Error(ErrorCode::kParse, dir.string() + " (" + context + "): " + e.what());
  }
  return out;
}

std::vector<FrameId> ListBopFrames(const fs::path &split_root) {
  if (!fs::is_directory(split_root))
    throw Error(ErrorCode::kIngestion, "missing directory " + split_root.string());
  std::vector<FrameId> frames;
  for (const auto &entry : fs::directory_iterator(split_root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.empty() || name.find_first_not_of("0123456789") != std::string::npos) continue;
    const fs::path gt_path = entry.path() / "scene_gt.json";
    if (!fs::exists(gt_path)) continue;
    const int scene = std::stoi(name);
    const json gts = ReadJson(gt_path, "scene " + name);
    for (const auto &[key, value] : gts.items()) frames.push_back({scene, std::stoi(key)});
  }
  std::sort(frames.begin(), frames.end());
  return frames;
}

void WriteBopFrame(const fs::path &split_root, int scene, int frame, const RGBDFrame &data,
                   double depth_scale) {
  data.Validate();
  if (!(depth_scale > 0)) throw Error(ErrorCode::kContract, "depth_scale must be positive");
  const fs::path dir = SceneDirectory(split_root, scene);
  fs::create_directories(dir / "rgb");
  fs::create_directories(dir / "depth");
  const std::string key = std::to_string(frame);
  const std::string context = "scene " + std::to_string(scene);

  WritePngRgb(dir / "rgb" / (Padded(frame) + ".png"), data.rgb);
  Gray16Image raw{static_cast<int>(data.depth.rows()), static_cast<int>(data.depth.cols()), {}};
  raw.data.resize(data.depth.size());
  for (Eigen::Index i = 0; i < data.depth.size(); ++i) {
    const double units = std::round(data.depth.data()[i] * 1e3 / depth_scale);
    raw.data[i] = static_cast<std::uint16_t>(
        std::clamp(units, 0.0, static_cast<double>(std::numeric_limits<std::uint16_t>::max())));
  }
  WritePngGray16(dir / "depth" / (Padded(frame) + ".png"), raw);

  auto load = [&](const char *name) {
    const fs::path p = dir / name;
    return fs::exists(p) ? ReadJson(p, context) : json::object();
  };
  json cameras = load("scene_camera.json");
  json gts = load("scene_gt.json");
  json infos = load("scene_gt_info.json");

  const auto &k = data.intrinsics;
  cameras[key] = {{"cam_K", {k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0}},
                  {"depth_scale", depth_scale}};
  json gt_list = json::array();
  json info_list = json::array();
  for (const auto &a : data.annotations) {
    std::vector<double> r(9), t(3);
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 3; ++col) r[row * 3 + col] = a.pose.rotation(row, col);
      t[row] = a.pose.translation(row) * 1e3;
    }
    gt_list.push_back({{"cam_R_m2c", r}, {"cam_t_m2c", t}, {"obj_id", a.object_id}});
    const std::vector<int> box{a.bbox.x, a.bbox.y, a.bbox.width, a.bbox.height};
    info_list.push_back({{"bbox_obj", box}, {"bbox_visib", box}, {"visib_fract", a.visibility}});
  }
  gts[key] = gt_list;
  infos[key] = info_list;
  WriteJson(dir / "scene_camera.json", cameras);
  WriteJson(dir / "scene_gt.json", gts);
  WriteJson(dir / "scene_gt_info.json", infos);
}

int DatasetManifest::ClassIndex(int object_id) const {
  for (size_t i = 0; i < objects.size(); ++i)
    if (objects[i].object_id == object_id) return static_cast<int>(i);
  return -1;
}

const ObjectEntry &DatasetManifest::Entry(int object_id) const {
  const int idx = ClassIndex(object_id);
  if (idx < 0)
    throw Error(ErrorCode::kIngestion, "object " + std::to_string(object_id) +
                                           " is not in the manifest");
  return objects[idx];
}

json DatasetManifest::ToJson() const {
  json list = json::array();
  for (const auto &o : objects)
    list.push_back({{"id", o.object_id},
                    {"name", o.name},
                    {"model", o.model_path.generic_string()},
                    {"symmetric", o.symmetric}});
  return {{"objects", list}};
}

DatasetManifest DatasetManifest::FromJson(const json &j) {
  DatasetManifest m;
  try {
    std::set<int> seen;
    for (const auto &o : j.at("objects")) {
      ObjectEntry e;
      e.object_id = o.at("id").get<int>();
      e.name = o.at("name").get<std::string>();
      e.model_path = o.value("model", std::string());
      e.symmetric = o.value("symmetric", false);
      if (!seen.insert(e.object_id).second)
        throw Error(ErrorCode::kConfig, "duplicate object id " + std::to_string(e.object_id));
      m.objects.push_back(std::move(e));
    }
  } catch (const json::exception &e) {
    throw Error(ErrorCode::kParse, std::string("manifest: ") + e.what());
  }
  if (m.objects.empty()) throw Error(ErrorCode::kConfig, "manifest lists no objects");
  return m;
}

DatasetManifest LoadManifest(const fs::path &path) {
  return DatasetManifest::FromJson(ReadJson(path, "manifest"));
}

void SaveManifest(const fs::path &path, const DatasetManifest &manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  WriteJson(path, manifest.ToJson());
}

std::map<int, ObjectModel> LoadObjectModels(const DatasetManifest &manifest,
                                            const fs::path &manifest_dir,
                                            int max_model_points) {
  std::map<int, ObjectModel> models;
  for (const auto &o : manifest.objects) {
    fs::path p = o.model_path;
    if (p.is_relative()) p = manifest_dir / p;
    if (!fs::exists(p)) throw Error(ErrorCode::kIngestion, "missing file " + p.string());
    Points pts = LoadModelPoints(p);
    const double diameter = ObjectDiameter(pts);
    if (max_model_points > 0 && pts.rows() > max_model_points) {
      const auto idx = FarthestPointSample(pts, max_model_points);
      Points sub(idx.size(), 3);
      for (size_t i = 0; i < idx.size(); ++i) sub.row(i) = pts.row(idx[i]);
      pts = std::move(sub);
    }
    ObjectModel model = ObjectModel::FromPoints(o.object_id, o.name, pts, o.symmetric);
    model.diameter = diameter;  // of the full-resolution model
    models.emplace(o.object_id, std::move(model));
  }
  return models;
}

DatasetManifest LinemodOccludedManifest() {
  DatasetManifest m;
  const std::pair<int, const char *> rows[] = {{1, "ape"},   {5, "can"},      {6, "cat"},
                                               {8, "driller"}, {9, "duck"},  {10, "eggbox"},
                                               {11, "glue"}, {12, "holepuncher"}};
  for (const auto &[id, name] : rows) {
    ObjectEntry e;
    e.object_id = id;
    e.name = name;
    e.model_path = "models/obj_" + Padded(id) + ".ply";
    e.symmetric = id == 10 || id == 11;
    m.objects.push_back(e);
  }
  return m;
}

}  // namespace vlm6d
