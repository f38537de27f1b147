#pragma once

#include <filesystem>

#include "vlm6d/geometry.h"

namespace vlm6d {

// Vertex positions from an ASCII or binary_little_endian PLY file. Other
// vertex properties and elements are skipped. Coordinates are multiplied by
// `scale`; the default converts BOP millimeters to meters.
Points LoadPlyPoints(const std::filesystem::path &path, double scale = 1e-3);

// Whitespace-separated "x y z" lines; '#' starts a comment.
Points LoadXyzPoints(const std::filesystem::path &path, double scale = 1.0);

// Dispatches on extension: .ply -> millimeters, anything else -> meters.
Points LoadModelPoints(const std::filesystem::path &path);

// Binary little-endian PLY with float x/y/z in millimeters.
void WritePlyPoints(const std::filesystem::path &path, const Points &points_m);

}  // namespace vlm6d
