#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "featsplat/colmap.hpp"
#include "featsplat/gaussian_set.hpp"
#include "featsplat/image.hpp"
#include "featsplat/rasterizer.hpp"

namespace featsplat::metrics {

/// Returned for identical images (zero MSE).
inline constexpr double kPsnrCapDb = 100.0;

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

double mse(const Image &a, const Image &b);

/// 10 log10(1 / MSE) for images in [0,1].
double psnr(const Image &a, const Image &b);

/// Mean SSIM: 11x11 Gaussian window (sigma 1.5), K1 0.01, K2 0.03, dynamic range 1,
/// same-size statistics with half-sample symmetric padding, averaged over pixels and channels.
double ssim(const Image &a, const Image &b);

/// As ssim(), also writing d(mean SSIM)/d(a) into grad_a (same layout as a.data).
double ssim_with_grad(const Image &a, const Image &b, std::vector<double> &grad_a);

struct ViewMetric {
  std::string view_id;
  double psnr_db = 0;
  double ssim = 0;
  std::optional<double> lpips; // reserved, filled externally
};

struct MetricReport {
  std::vector<ViewMetric> per_view;
  double mean_psnr_db = 0;
  double mean_ssim = 0;

  std::string to_csv() const;
};

struct EvalView {
  CameraView camera;
  std::optional<Image> ground_truth;
};

/// Renders every view, clamps rgb to [0,1], and scores it against its ground truth.
MetricReport evaluate(const GaussianSet &set, std::span<const EvalView> views, const RenderConfig &cfg = {});

} // namespace featsplat::metrics
