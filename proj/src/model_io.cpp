#include "vlm6d/model_io.h"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vlm6d/error.h"

namespace vlm6d {

namespace {

struct PlyProperty {
  std::string name;
  std::string type;
  bool is_list = false;
  std::string count_type;
};

struct PlyElement {
  std::string name;
  size_t count = 0;
  std::vector<PlyProperty> properties;
};

size_t TypeSize(const std::string &type, const std::filesystem::path &path) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "float" || type == "int32" ||
      type == "uint32" || type == "float32")
    return 4;
  if (type == "double" || type == "float64") return 8;
  throw Error(ErrorCode::kParse, path.string() + ": unknown PLY type " + type);
}

double ReadBinary(const char *ptr, const std::string &type) {
  auto load = [ptr](auto v) {
    std::memcpy(&v, ptr, sizeof(v));
    return static_cast<double>(v);
  };
  if (type == "char" || type == "int8") return load(std::int8_t{});
  if (type == "uchar" || type == "uint8") return load(std::uint8_t{});
  if (type == "short" || type == "int16") return load(std::int16_t{});
  if (type == "ushort" || type == "uint16") return load(std::uint16_t{});
  if (type == "int" || type == "int32") return load(std::int32_t{});
  if (type == "uint" || type == "uint32") return load(std::uint32_t{});
  if (type == "float" || type == "float32") return load(float{});
  return load(double{});
}

}  // namespace

Points LoadPlyPoints(const std::filesystem::path &path, double scale) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIngestion, "cannot open " + path.string());

  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0)
    throw Error(ErrorCode::kParse, path.string() + ": missing ply magic");
  std::string format;
  std::vector<PlyElement> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      ls >> format;
    } else if (key == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (key == "property") {
      if (elements.empty())
        throw Error(ErrorCode::kParse, path.string() + ": property before element");
      PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        p.is_list = true;
        ls >> p.count_type >> p.type >> p.name;
      } else {
        p.type = type;
        ls >> p.name;
      }
      elements.back().properties.push_back(p);
    } else if (key == "end_header") {
      break;
    }
  }
  if (format != "ascii" && format != "binary_little_endian")
    throw Error(ErrorCode::kParse,
                path.string() + ": unsupported PLY format '" + format + "'");

  Points points;
  for (const auto &element : elements) {
    const bool is_vertex = element.name == "vertex";
    int ix = -1, iy = -1, iz = -1;
    if (is_vertex) {
      for (size_t k = 0; k < element.properties.size(); ++k) {
        if (element.properties[k].name == "x") ix = static_cast<int>(k);
        if (element.properties[k].name == "y") iy = static_cast<int>(k);
        if (element.properties[k].name == "z") iz = static_cast<int>(k);
      }
      if (ix < 0 || iy < 0 || iz < 0)
        throw Error(ErrorCode::kParse, path.string() + ": vertex lacks x/y/z");
      points.resize(static_cast<Eigen::Index>(element.count), 3);
    }
    std::vector<double> values(element.properties.size());
    for (size_t r = 0; r < element.count; ++r) {
      if (format == "ascii") {
        if (!std::getline(in, line))
          throw Error(ErrorCode::kParse, path.string() + ": truncated element " + element.name);
        std::istringstream ls(line);
        for (size_t k = 0; k < element.properties.size(); ++k) {
          const auto &p = element.properties[k];
          if (p.is_list) {
            size_t n = 0;
            ls >> n;
            double skip;
            for (size_t q = 0; q < n; ++q) ls >> skip;
          } else {
            ls >> values[k];
          }
        }
        if (!ls && is_vertex)
          throw Error(ErrorCode::kParse, path.string() + ": bad vertex line " + std::to_string(r));
      } else {
        for (size_t k = 0; k < element.properties.size(); ++k) {
          const auto &p = element.properties[k];
          char buf[8];
          if (p.is_list) {
            size_t cs = TypeSize(p.count_type, path);
            in.read(buf, static_cast<std::streamsize>(cs));
            auto n = static_cast<size_t>(ReadBinary(buf, p.count_type));
            in.ignore(static_cast<std::streamsize>(n * TypeSize(p.type, path)));
          } else {
            size_t s = TypeSize(p.type, path);
            in.read(buf, static_cast<std::streamsize>(s));
            values[k] = ReadBinary(buf, p.type);
          }
        }
        if (!in)
          throw Error(ErrorCode::kParse, path.string() + ": truncated binary element " + element.name);
      }
      if (is_vertex) {
        points(static_cast<Eigen::Index>(r), 0) = values[ix] * scale;
        points(static_cast<Eigen::Index>(r), 1) = values[iy] * scale;
        points(static_cast<Eigen::Index>(r), 2) = values[iz] * scale;
      }
    }
    if (is_vertex) break;
  }
  if (points.rows() == 0)
    throw Error(ErrorCode::kParse, path.string() + ": no vertices");
  return points;
}

Points LoadXyzPoints(const std::filesystem::path &path, double scale) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIngestion, "cannot open " + path.string());
  std::vector<double> flat;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    double x, y, z;
    if (!(ls >> x)) continue;
    if (!(ls >> y >> z))
      throw Error(ErrorCode::kParse,
                  path.string() + ":" + std::to_string(line_no) + ": expected x y z");
    flat.insert(flat.end(), {x * scale, y * scale, z * scale});
  }
  if (flat.empty()) throw Error(ErrorCode::kParse, path.string() + ": no points");
  return Eigen::Map<Points>(flat.data(), static_cast<Eigen::Index>(flat.size() / 3), 3);
}

Points LoadModelPoints(const std::filesystem::path &path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == ".ply") return LoadPlyPoints(path);
  return LoadXyzPoints(path);
}

void WritePlyPoints(const std::filesystem::path &path, const Points &points_m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << points_m.rows() << "\n"
      << "property float x\nproperty float y\nproperty float z\nend_header\n";
  for (Eigen::Index i = 0; i < points_m.rows(); ++i) {
    for (int c = 0; c < 3; ++c) {
      float v = static_cast<float>(points_m(i, c) * 1000.0);
      out.write(reinterpret_cast<const char *>(&v), sizeof(v));
    }
  }
}

}  // namespace vlm6d
