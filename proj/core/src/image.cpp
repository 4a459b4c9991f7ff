#include "featsplat/image.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <png.h>

#include "featsplat/binary_io.hpp"
#include "featsplat/error.hpp"

namespace featsplat {

namespace {

std::uint8_t to_byte(float v) {
  if (!(v > 0.0f))
    return 0;
  if (v >= 1.0f)
    return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0f));
}

std::vector<std::uint8_t> encode_raw(const std::uint8_t *pixels, int width, int height, std::uint32_t format) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels, 0, nullptr))
    throw Error(ErrorKind::Io, std::string("png sizing failed: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels, 0, nullptr))
    throw Error(ErrorKind::Io, std::string("png encode failed: ") + image.message);
  out.resize(size);
  return out;
}

struct DecodedPng {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

DecodedPng decode_raw(std::span<const std::uint8_t> bytes, std::uint32_t format) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw Error(ErrorKind::MalformedRecord, std::string("png header: ") + image.message);
  image.format = format;
  DecodedPng out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorKind::MalformedRecord, std::string("png decode: ") + image.message);
  }
  return out;
}

} // namespace

std::size_t Mask::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

double mask_iou(const Mask &a, const Mask &b) {
  if (a.width != b.width || a.height != b.height)
    throw Error(ErrorKind::ShapeMismatch, "mask_iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += (a.bits[i] && b.bits[i]) ? 1 : 0;
    uni += (a.bits[i] || b.bits[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::uint8_t> encode_png(const Image &img) {
  std::uint32_t format = 0;
  switch (img.channels) {
  case 1: format = PNG_FORMAT_GRAY; break;
  case 3: format = PNG_FORMAT_RGB; break;
  case 4: format = PNG_FORMAT_RGBA; break;
  default: throw Error(ErrorKind::InvalidArgument, "png needs 1, 3 or 4 channels");
  }
  std::vector<std::uint8_t> bytes(img.data.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), to_byte);
  return encode_raw(bytes.data(), img.width, img.height, format);
}

std::vector<std::uint8_t> encode_png(const Mask &mask) {
  std::vector<std::uint8_t> bytes(mask.bits.size());
  std::transform(mask.bits.begin(), mask.bits.end(), bytes.begin(), [](std::uint8_t b) { return b ? 255 : 0; });
  return encode_raw(bytes.data(), mask.width, mask.height, PNG_FORMAT_GRAY);
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  auto raw = decode_raw(bytes, PNG_FORMAT_RGB);
  Image img(raw.width, raw.height, 3);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i)
    img.data[i] = static_cast<float>(raw.pixels[i]) / 255.0f;
  return img;
}

Mask decode_mask_png(std::span<const std::uint8_t> bytes) {
  auto raw = decode_raw(bytes, PNG_FORMAT_GRAY);
  Mask mask(raw.width, raw.height);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i)
    mask.bits[i] = raw.pixels[i] >= 128 ? 1 : 0;
  return mask;
}

void write_png(const std::filesystem::path &path, const Image &img) { write_file_atomic(path, encode_png(img)); }
void write_png(const std::filesystem::path &path, const Mask &mask) { write_file_atomic(path, encode_png(mask)); }
Image read_png(const std::filesystem::path &path) { return decode_png(read_file(path)); }
Mask read_mask_png(const std::filesystem::path &path) { return decode_mask_png(read_file(path)); }

} // namespace featsplat
