#include "vlm6d/preprocess.h"

#include <algorithm>
#include <cmath>

#include "vlm6d/error.h"
#include "vlm6d/pointcloud_ops.h"

namespace vlm6d {

BoundingBox GroundTruthCropProvider::Crop(const RGBDFrame &frame, int annotation_index) const {
  return frame.annotations.at(annotation_index).bbox;
}

BoundingBox PaddedSquareCrop(const BoundingBox &bbox, double padding, int image_width,
                             int image_height) {
  if (bbox.Empty()) throw Error(ErrorCode::kContract, "bbox has no area");
  const double cx = bbox.x + 0.5 * bbox.width;
  const double cy = bbox.y + 0.5 * bbox.height;
  const int side = std::max(
      1, static_cast<int>(std::lround((1.0 + padding) * std::max(bbox.width, bbox.height))));
  auto place = [side](double center, int limit, int &start, int &extent) {
    extent = std::min(side, limit);
    start = static_cast<int>(std::lround(center - 0.5 * side));
    start = std::clamp(start, 0, limit - extent);
  };
  BoundingBox out;
  place(cx, image_width, out.x, out.width);
  place(cy, image_height, out.y, out.height);
  return out;
}

FloatImage ResizeBilinear(const RgbImage &image, const BoundingBox &region, int out_width,
                          int out_height) {
  if (region.Empty() || !region.WithinImage(image.width, image.height))
    throw Error(ErrorCode::kContract, "resize region outside image");
  FloatImage out(out_height, out_width, image.channels);
  const double sx = static_cast<double>(region.width) / out_width;
  const double sy = static_cast<double>(region.height) / out_height;
  for (int y = 0; y < out_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, region.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, region.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, region.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, region.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = (1 - wx) * image.at(region.y + y0, region.x + x0, c) +
                           wx * image.at(region.y + y0, region.x + x1, c);
        const double bottom = (1 - wx) * image.at(region.y + y1, region.x + x0, c) +
                              wx * image.at(region.y + y1, region.x + x1, c);
        out.at(y, x, c) = (1 - wy) * top + wy * bottom;
      }
    }
  }
  return out;
}

FloatImage NormalizeImage(const RgbImage &image, const PreprocessConfig &config) {
  FloatImage f(image.height, image.width, image.channels);
  std::copy(image.data.begin(), image.data.end(), f.data.begin());
  return NormalizeImage(f, config);
}

FloatImage NormalizeImage(const FloatImage &image, const PreprocessConfig &config) {
  if (image.channels != 3) throw Error(ErrorCode::kContract, "normalization needs 3 channels");
  FloatImage out(image.height, image.width, 3);
  for (size_t i = 0; i < image.data.size(); ++i) {
    const int c = static_cast<int>(i % 3);
    out.data[i] = (image.data[i] / 255.0 - config.mean[c]) / config.std[c];
  }
  return out;
}

ModelInput PreprocessRegion(const RGBDFrame &frame, const BoundingBox &bbox, int object_id,
                            std::uint64_t seed, const PreprocessConfig &config) {
  frame.Validate();
  const BoundingBox crop =
      PaddedSquareCrop(bbox, config.bbox_padding, frame.rgb.width, frame.rgb.height);

  ModelInput input;
  input.object_id = object_id;
  input.crop = crop;
  input.image = NormalizeImage(
      ResizeBilinear(frame.rgb, crop, config.image_size, config.image_size), config);

  PixelMask mask = PixelMask::Constant(frame.depth.rows(), frame.depth.cols(), false);
  mask.block(crop.y, crop.x, crop.height, crop.width) =
      frame.depth.block(crop.y, crop.x, crop.height, crop.width).array() > 0.0;
  const Eigen::Index valid = mask.count();
  if (valid < config.min_valid_pixels)
    throw Error(ErrorCode::kDegenerateSample,
                "crop of object " + std::to_string(object_id) + " has " +
                    std::to_string(valid) + " valid depth pixels, need " +
                    std::to_string(config.min_valid_pixels));
  PointCloud cloud = BackprojectDepth(frame.depth, frame.intrinsics, mask);
  input.cloud = ResampleFixed(cloud, config.num_points, seed).coords;
  input.cloud_centroid = input.cloud.colwise().mean().transpose();
  return input;
}

ModelInput Preprocess(const RGBDFrame &frame, int annotation_index, std::uint64_t seed,
                      const PreprocessConfig &config, bool include_gt_pose,
                      const CropProvider &crops) {
  if (annotation_index < 0 || annotation_index >= static_cast<int>(frame.annotations.size()))
    throw Error(ErrorCode::kContract,
                "annotation " + std::to_string(annotation_index) + " out of range");
  const Annotation &a = frame.annotations[annotation_index];
  ModelInput input =
      PreprocessRegion(frame, crops.Crop(frame, annotation_index), a.object_id, seed, config);
  if (include_gt_pose) input.gt_pose = a.pose;
  return input;
}

}  // namespace vlm6d
