#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "featsplat/colmap.hpp"

namespace featsplat {

/// Degree-0 real spherical-harmonic constant.
inline constexpr double kSH0 = 0.28209479177387814;

enum class ParamGroup { Position, LogScale, Rotation, OpacityLogit, ColorSH, Feature };
inline constexpr ParamGroup kAllParamGroups[] = {ParamGroup::Position,     ParamGroup::LogScale,
                                                 ParamGroup::Rotation,     ParamGroup::OpacityLogit,
                                                 ParamGroup::ColorSH,      ParamGroup::Feature};

/// The optimizable scene. Each field is a flat row-major array with one row per Gaussian:
/// positions N x 3, log_scales N x 3, rotations N x 4 (w,x,y,z, normalized on use),
/// opacity_logits N, colors_sh N x 3 x B with B = (L+1)^2, features N x F.
class GaussianSet {
public:
  GaussianSet() = default;
  GaussianSet(std::size_t count, int feature_dim, int sh_degree = 0);

  std::size_t size() const { return opacity_logits.size(); }
  int feature_dim() const { return feature_dim_; }
  int sh_degree() const { return sh_degree_; }
  int sh_coeffs() const { return (sh_degree_ + 1) * (sh_degree_ + 1); }

  /// Values per Gaussian for a parameter group.
  std::size_t stride(ParamGroup g) const;
  std::vector<double> &group(ParamGroup g);
  const std::vector<double> &group(ParamGroup g) const;

  Eigen::Map<Eigen::Vector3d> position(std::size_t i) { return Eigen::Map<Eigen::Vector3d>(&positions[3 * i]); }
  Eigen::Map<const Eigen::Vector3d> position(std::size_t i) const {
    return Eigen::Map<const Eigen::Vector3d>(&positions[3 * i]);
  }
  Eigen::Map<Eigen::Vector3d> log_scale(std::size_t i) { return Eigen::Map<Eigen::Vector3d>(&log_scales[3 * i]); }
  Eigen::Map<const Eigen::Vector3d> log_scale(std::size_t i) const {
    return Eigen::Map<const Eigen::Vector3d>(&log_scales[3 * i]);
  }
  Eigen::Map<Eigen::Vector4d> rotation(std::size_t i) { return Eigen::Map<Eigen::Vector4d>(&rotations[4 * i]); }
  Eigen::Map<const Eigen::Vector4d> rotation(std::size_t i) const {
    return Eigen::Map<const Eigen::Vector4d>(&rotations[4 * i]);
  }
  std::span<double> feature(std::size_t i) { return {&features[i * feature_dim_], static_cast<std::size_t>(feature_dim_)}; }
  std::span<const double> feature(std::size_t i) const {
    return {&features[i * feature_dim_], static_cast<std::size_t>(feature_dim_)};
  }
  /// Coefficient k of color channel c.
  double &sh(std::size_t i, int c, int k) { return colors_sh[(i * 3 + c) * sh_coeffs() + k]; }
  double sh(std::size_t i, int c, int k) const { return colors_sh[(i * 3 + c) * sh_coeffs() + k]; }

  /// Throws NonFiniteParameter / InvalidArgument when an invariant is broken.
  void validate() const;

  /// New set made of the listed Gaussians (repeats allowed), in order.
  GaussianSet gather(std::span<const std::size_t> indices) const;
  void append(const GaussianSet &other);

  bool operator==(const GaussianSet &) const = default;

  std::vector<double> positions;
  std::vector<double> log_scales;
  std::vector<double> rotations;
  std::vector<double> opacity_logits;
  std::vector<double> colors_sh;
  std::vector<double> features;

private:
  int feature_dim_ = 0;
  int sh_degree_ = 0;
};

enum class FeatureInit { Zeros, GaussianNoise };

struct InitConfig {
  int knn_k = 3;
  double opacity_init = 0.1;
  FeatureInit feature_init = FeatureInit::Zeros;
  double feature_noise_sigma = 0.01;
  int sh_degree = 0;
  int feature_dim = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

GaussianSet init_from_sparse(const SparsePoints &points, const InitConfig &cfg);

struct ActivatedGaussians {
  std::vector<Eigen::Vector3d> scales;
  std::vector<double> opacities;
  std::vector<Eigen::Vector4d> rotations; // unit (w,x,y,z)
};

ActivatedGaussians activated_view(const GaussianSet &set);

double sigmoid(double x);
double logit(double p);

/// Rotation matrix of a unit quaternion (w,x,y,z).
Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d &q);

/// Sigma = R diag(s^2) R^T.
Eigen::Matrix3d covariance3d(const Eigen::Vector3d &scale, const Eigen::Vector4d &unit_q);

// Checkpoint file "scene.gsplat".
std::vector<std::uint8_t> encode_checkpoint(const GaussianSet &set);
GaussianSet decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path &path, const GaussianSet &set);
GaussianSet load_checkpoint(const std::filesystem::path &path);

} // namespace featsplat
