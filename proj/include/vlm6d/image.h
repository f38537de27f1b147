#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace vlm6d {

// Depth in meters, indexed (row v, column u). Zero marks an invalid pixel.
using DepthImage =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using PixelMask =
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Interleaved HxWxC image.
template <typename T>
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<T> data;

  Image() = default;
  Image(int h, int w, int c, T fill = T{})
      : height(h), width(w), channels(c),
        data(static_cast<size_t>(h) * w * c, fill) {}

  T &at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  const T &at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  bool empty() const { return data.empty(); }
  friend bool operator==(const Image &, const Image &) = default;
};

using RgbImage = Image<std::uint8_t>;
using FloatImage = Image<double>;

}  // namespace vlm6d
