#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "vlm6d/dataset.h"
#include "vlm6d/geometry.h"
#include "vlm6d/image.h"

namespace vlm6d {

struct PreprocessConfig {
  int image_size = 224;
  int num_points = 2048;
  double bbox_padding = 0.2;  // fraction of the longer bbox side added in total
  int min_valid_pixels = 32;
  // ImageNet channel statistics on [0, 1] intensities.
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
};

struct ModelInput {
  FloatImage image;  // image_size x image_size x 3, normalized
  Points cloud;      // num_points x 3, camera frame, meters
  Vec3 cloud_centroid = Vec3::Zero();
  int object_id = 0;
  BoundingBox crop;
  std::optional<Pose> gt_pose;  // set only on request
};

// Chooses the image region fed to the network for one annotation.
class CropProvider {
 public:
  virtual ~CropProvider() = default;
  virtual BoundingBox Crop(const RGBDFrame &frame, int annotation_index) const = 0;
};

class GroundTruthCropProvider : public CropProvider {
 public:
  BoundingBox Crop(const RGBDFrame &frame, int annotation_index) const override;
};

// Square of side (1 + padding) * max(w, h) around the bbox center, shifted to
// stay inside the image and clipped where the image is smaller.
BoundingBox PaddedSquareCrop(const BoundingBox &bbox, double padding, int image_width,
                             int image_height);

// Bilinear resampling with pixel centers at half-integers. Intensities stay
// in [0, 255] and are not rounded.
FloatImage ResizeBilinear(const RgbImage &image, const BoundingBox &region, int out_width,
                          int out_height);
// (v / 255 - mean) / std per channel.
FloatImage NormalizeImage(const FloatImage &image, const PreprocessConfig &config);
FloatImage NormalizeImage(const RgbImage &image, const PreprocessConfig &config);

// Crop, resize and normalize the image; back-project the crop's valid depth
// and resample it to num_points with `seed`.
ModelInput PreprocessRegion(const RGBDFrame &frame, const BoundingBox &bbox, int object_id,
                            std::uint64_t seed, const PreprocessConfig &config = {});

ModelInput Preprocess(const RGBDFrame &frame, int annotation_index, std::uint64_t seed,
                      const PreprocessConfig &config = {}, bool include_gt_pose = false,
                      const CropProvider &crops = GroundTruthCropProvider());

}  // namespace vlm6d
