#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace featsplat {

/// Row-major interleaved float image (H x W x C).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float &at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  float at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  bool same_shape(const Image &o) const { return width == o.width && height == o.height && channels == o.channels; }
};

/// Boolean raster used for segmentation masks.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits; // 0 or 1

  Mask() = default;
  Mask(int w, int h, bool fill = false) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill ? 1 : 0) {}
  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const;
};

double mask_iou(const Mask &a, const Mask &b);

// PNG helpers. Float images are clamped to [0,1] and rounded to 8 bits.
std::vector<std::uint8_t> encode_png(const Image &img);
std::vector<std::uint8_t> encode_png(const Mask &mask);
Image decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path &path, const Image &img);
void write_png(const std::filesystem::path &path, const Mask &mask);
Image read_png(const std::filesystem::path &path);
/// 8-bit single channel mask: 0 = background, 255 = foreground (any value >= 128 counts as set).
Mask decode_mask_png(std::span<const std::uint8_t> bytes);
Mask read_mask_png(const std::filesystem::path &path);

} // namespace featsplat
