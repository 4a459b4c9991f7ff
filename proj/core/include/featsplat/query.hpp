#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "featsplat/feature_store.hpp"
#include "featsplat/image.hpp"

namespace featsplat::query {

inline constexpr double kDefaultTau = 0.75;

/// Per-pixel cosine similarity against one prompt embedding.
struct QueryHeatmap {
  int width = 0;
  int height = 0;
  std::vector<double> raw;        // [-1, 1]
  std::vector<double> normalized; // (raw + 1) / 2
  std::string prompt_label;

  double raw_at(int x, int y) const { return raw[static_cast<std::size_t>(y) * width + x]; }
  double normalized_at(int x, int y) const { return normalized[static_cast<std::size_t>(y) * width + x]; }
};

struct BinaryMask : Mask {
  double threshold_used = 0;
};

/// Single pixel prompt for an external promptable segmenter. x is the column, y the row.
struct PointPrompt {
  int x = 0;
  int y = 0;
  double score = 0;
  std::string prompt_label;
  std::string view_id;
  int image_width = 0;
  int image_height = 0;
  std::string source = "lseg_argmax";

  std::string to_json() const;
  static PointPrompt from_json(std::string_view text);
  bool operator==(const PointPrompt &) const = default;
};

struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<int> labels;

  int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

/// raw = <f, t> / max(|f| |t|, eps), clamped to [-1, 1]; 0 where |f| < eps. normalized = (raw + 1) / 2.
QueryHeatmap cosine_heatmap(const FeatureMap &feature, const TextEmbedding &prompt, double eps = 1e-8);

/// bits = normalized >= tau; tau must lie in [0, 1].
BinaryMask threshold_mask(const QueryHeatmap &heatmap, double tau = kDefaultTau);

/// Global maximum of the normalized heatmap; ties go to the smallest row, then the smallest column.
PointPrompt argmax_point(const QueryHeatmap &heatmap, std::string view_id = {});

/// Per-pixel argmax of raw cosine over labels; ties go to the lowest label index.
LabelMap label_segmentation(const FeatureMap &feature, std::span<const TextEmbedding> labels);

/// Top-3 principal components of the mean-centered pixel features, each min-max scaled to [0,1].
/// Components with no variance (or missing because F < 3) map to 0.5. Degenerate input gives a uniform 0.5 image.
Image pca_visualize(const FeatureMap &feature);

/// Dark blue (0) through cyan, yellow-green and orange to red (1).
Eigen::Vector3f colormap(double value);

/// 50% blend of base with the colormap of the normalized heatmap.
Image overlay_heatmap(const Image &base, const QueryHeatmap &heatmap);
/// Masked pixels tinted 50% red; others unchanged.
Image overlay_mask(const Image &base, const Mask &mask);

} // namespace featsplat::query
