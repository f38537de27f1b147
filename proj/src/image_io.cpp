#include "vlm6d/image_io.h"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "vlm6d/error.h"

namespace vlm6d {
namespace {

struct FileCloser {
  void operator()(std::FILE *f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr OpenFile(const std::filesystem::path &path, const char *mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorCode::kIngestion, "cannot open " + path.string());
  return f;
}

[[noreturn]] void PngFail(png_structp, png_const_charp msg) {
  throw Error(ErrorCode::kParse, std::string("png: ") + msg);
}
void PngWarn(png_structp, png_const_charp) {}

// Decoded rows after the requested transforms.
struct Decoded {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> bytes;
};

Decoded Decode(const std::filesystem::path &path, bool to_rgb8) {
  FilePtr file = OpenFile(path, "rb");
  png_byte signature[8];
  if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0)
    throw Error(ErrorCode::kParse, "not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, PngFail, PngWarn);
  png_infop info = png_create_info_struct(png);
  Decoded out;
  try {
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (to_rgb8) {
      if (depth == 16) png_set_strip_16(png);
      if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
      if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    } else {
      if (color != PNG_COLOR_TYPE_GRAY)
        throw Error(ErrorCode::kParse, "expected single-channel PNG: " + path.string());
      if (depth == 16) png_set_swap(png);  // host order is little-endian
    }
    png_read_update_info(png, info);
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    const size_t stride = png_get_rowbytes(png, info);
    out.bytes.resize(stride * out.height);
    std::vector<png_bytep> rows(out.height);
    for (int y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  } catch (const Error &e) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(e.code(), std::string(e.what()) + " (" + path.string() + ")");
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void Encode(const std::filesystem::path &path, int width, int height, int color, int depth,
            const std::uint8_t *bytes, size_t stride) {
  FilePtr file = OpenFile(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, PngFail, PngWarn);
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, file.get());
    png_set_IHDR(png, info, width, height, depth, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (depth == 16) png_set_swap(png);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
      rows[y] = const_cast<png_bytep>(bytes + stride * y);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

}  // namespace

RgbImage ReadPngRgb(const std::filesystem::path &path) {
  Decoded d = Decode(path, true);
  RgbImage image(d.height, d.width, 3);
  image.data = std::move(d.bytes);
  return image;
}

void WritePngRgb(const std::filesystem::path &path, const RgbImage &image) {
  if (image.channels != 3) throw Error(ErrorCode::kContract, "RGB PNG needs 3 channels");
  Encode(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 8, image.data.data(),
         static_cast<size_t>(image.width) * 3);
}

Gray16Image ReadPngGray16(const std::filesystem::path &path) {
  Decoded d = Decode(path, false);
  Gray16Image image{d.height, d.width, {}};
  image.data.resize(static_cast<size_t>(d.height) * d.width);
  if (d.bit_depth == 16) {
    std::memcpy(image.data.data(), d.bytes.data(), image.data.size() * 2);
  } else {
    for (size_t i = 0; i < image.data.size(); ++i) image.data[i] = d.bytes[i];
  }
  return image;
}

void WritePngGray16(const std::filesystem::path &path, const Gray16Image &image) {
  Encode(path, image.width, image.height, PNG_COLOR_TYPE_GRAY, 16,
         reinterpret_cast<const std::uint8_t *>(image.data.data()),
         static_cast<size_t>(image.width) * 2);
}

}  // namespace vlm6d
