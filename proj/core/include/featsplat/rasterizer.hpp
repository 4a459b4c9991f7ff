#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "featsplat/colmap.hpp"
#include "featsplat/feature_store.hpp"
#include "featsplat/gaussian_set.hpp"
#include "featsplat/image.hpp"

namespace featsplat {

struct RenderConfig {
  int tile_size = 16;
  double alpha_clamp = 0.99;
  double alpha_skip = 1.0 / 255.0;
  /// Added to both diagonal entries of every screen-space covariance (pixel^2).
  double dilation = 0.3;
  double near_plane = 0.01;
  double transmittance_stop = 1e-4;
  Eigen::Vector3d background_rgb = Eigen::Vector3d::Zero();
  /// Empty means zeros of the scene's feature dimension.
  std::vector<double> background_feature;

  void validate() const;
};

/// A Gaussian projected onto the image plane. Pixel (x, y) has its center at (x + 0.5, y + 0.5).
struct Splat2D {
  Eigen::Vector2d mean2d;
  Eigen::Matrix2d cov2d;
  double depth = 0;
  int radius = 0;
  std::size_t gaussian_index = 0;
};

/// EWA projection. Returns nullopt when the Gaussian is culled (behind the near plane,
/// entirely off screen, or too transparent to ever pass alpha_skip).
///
/// The support radius is ceil(k * sqrt(lambda_max)) with k = max(3, sqrt(2 ln(opacity / alpha_skip))):
/// every pixel where the splat could reach alpha_skip lies inside it, so tiling never changes the image.
std::optional<Splat2D> project_gaussian(const Eigen::Vector3d &mean, const Eigen::Matrix3d &cov3d,
                                        const CameraView &camera, const RenderConfig &cfg, double opacity = 1.0,
                                        std::size_t gaussian_index = 0);

template <typename Scalar> struct BasicRenderOutput {
  int width = 0;
  int height = 0;
  int feature_dim = 0;
  std::vector<Scalar> rgb;     // H x W x 3, pre-clamp
  std::vector<Scalar> feature; // H x W x F
  std::vector<Scalar> alpha;   // H x W
  std::vector<Scalar> depth;   // H x W, alpha-normalized expected depth
  std::vector<int> contributors;

  Image rgb_image() const;
  FeatureMap feature_map(std::string source_tag = "render") const;
  Image alpha_image() const;
  /// Depth mapped to [0,1] over the covered pixels' range, 0 where alpha is 0.
  Image depth_image() const;
};

using RenderOutput = BasicRenderOutput<float>;
using RenderOutput64 = BasicRenderOutput<double>;

/// Forward rasterization. Scalar selects the compositing precision (float for training, double for reference).
template <typename Scalar>
BasicRenderOutput<Scalar> render(const GaussianSet &set, const CameraView &camera, const RenderConfig &cfg = {});

/// dL/d(outputs). Empty vectors are treated as zero.
template <typename Scalar> struct RenderGrads {
  std::vector<Scalar> rgb;
  std::vector<Scalar> feature;
  std::vector<Scalar> alpha;
};

struct GaussianGradients {
  GaussianSet params; // same layout as the scene, holds dL/dparam
  /// |dL/d mean2d| expressed in NDC units (pixel gradient scaled by W/2, H/2), for densification.
  std::vector<double> screen_grad_norm;
  std::vector<std::uint8_t> visible;
};

template <typename Scalar>
GaussianGradients render_backward(const GaussianSet &set, const CameraView &camera, const RenderConfig &cfg,
                                  const RenderGrads<Scalar> &upstream);

/// Degree-L real spherical-harmonic color of Gaussian i seen from camera_center (before the >= 0 clamp).
Eigen::Vector3d sh_color(const GaussianSet &set, std::size_t i, const Eigen::Vector3d &camera_center);

} // namespace featsplat
