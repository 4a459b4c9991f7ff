#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "featsplat/image.hpp"

namespace featsplat {

/// H x W x F grid of semantic feature vectors, row-major with channels innermost.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<float> data;
  std::string source_tag;

  FeatureMap() = default;
  FeatureMap(int h, int w, int f, std::string tag = {})
      : height(h), width(w), dim(f), data(static_cast<std::size_t>(h) * w * f, 0.0f), source_tag(std::move(tag)) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  std::span<float> pixel(int x, int y) {
    return {&data[(static_cast<std::size_t>(y) * width + x) * dim], static_cast<std::size_t>(dim)};
  }
  std::span<const float> pixel(int x, int y) const {
    return {&data[(static_cast<std::size_t>(y) * width + x) * dim], static_cast<std::size_t>(dim)};
  }

  void validate() const;
};

struct TextEmbedding {
  std::string label;
  std::vector<float> vector;

  int dim() const { return static_cast<int>(vector.size()); }
  double norm() const;
};

enum class FeatureDtype : std::uint8_t { F32 = 0, F16 = 1 };

namespace fmap {

std::vector<std::uint8_t> encode(const FeatureMap &map, FeatureDtype dtype = FeatureDtype::F32);
FeatureMap decode(std::span<const std::uint8_t> bytes);
void write(const FeatureMap &map, const std::filesystem::path &path, FeatureDtype dtype = FeatureDtype::F32);
FeatureMap read(const std::filesystem::path &path);

} // namespace fmap

namespace temb {

std::vector<std::uint8_t> encode(const TextEmbedding &emb);
/// Stored vectors are returned as-is; a warning is logged when the norm is off by more than 1e-5.
TextEmbedding decode(std::span<const std::uint8_t> bytes);
void write(const TextEmbedding &emb, const std::filesystem::path &path);
TextEmbedding read(const std::filesystem::path &path);

} // namespace temb

/// Bilinear resize, align-corners=false, edge-clamped sampling.
FeatureMap resize_bilinear(const FeatureMap &map, int new_h, int new_w);

struct PaletteEntry {
  Eigen::Vector3f color;
  std::vector<float> embedding;
};

/// Assigns each pixel the embedding of its nearest palette color (L2 in RGB); ties go to the lower index.
FeatureMap synth_features(const Image &rgb, std::span<const PaletteEntry> palette, std::string source_tag = "synthetic");

/// Per-pixel nearest-palette index, the assignment used by synth_features.
std::vector<int> palette_assignment(const Image &rgb, std::span<const PaletteEntry> palette);

/// Relative file path "features/<backbone>/<image stem>.fmap".
std::filesystem::path feature_path(const std::filesystem::path &project, const std::string &backbone,
                                   const std::string &image_name);

/// Lowercase alnum/underscore slug used for prompt file names.
std::string slugify(std::string_view label);

} // namespace featsplat
