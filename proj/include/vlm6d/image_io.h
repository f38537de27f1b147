#pragma once

#include <cstdint>
#include <filesystem>

#include "vlm6d/image.h"

namespace vlm6d {

// 16-bit grayscale samples, row-major.
struct Gray16Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> data;
};

// Reads any 8-bit PNG and converts to RGB (gray expanded, alpha dropped).
RgbImage ReadPngRgb(const std::filesystem::path &path);
void WritePngRgb(const std::filesystem::path &path, const RgbImage &image);

// Reads a single-channel 8- or 16-bit PNG without scaling.
Gray16Image ReadPngGray16(const std::filesystem::path &path);
void WritePngGray16(const std::filesystem::path &path, const Gray16Image &image);

}  // namespace vlm6d
