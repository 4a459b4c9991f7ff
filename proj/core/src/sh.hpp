#pragma once

#include <array>

#include <Eigen/Core>

namespace featsplat::detail {

inline constexpr double kC0 = 0.28209479177387814;
inline constexpr double kC1 = 0.4886025119029199;
inline constexpr std::array<double, 5> kC2 = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                              -1.0925484305920792, 0.5462742152960396};
inline constexpr std::array<double, 7> kC3 = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                              0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                              -0.5900435899266435};

/// Real SH basis up to degree 3 at unit direction d, and optionally the partial
/// derivatives of each basis function with respect to (x, y, z).
inline void sh_basis(int degree, const Eigen::Vector3d &d, std::array<double, 16> &y,
                     std::array<Eigen::Vector3d, 16> *dy = nullptr) {
  const double x = d.x(), yy_ = d.y(), z = d.z();
  const double xx = x * x, yy = yy_ * yy_, zz = z * z;
  y[0] = kC0;
  if (dy)
    (*dy)[0].setZero();
  if (degree < 1)
    return;
  y[1] = -kC1 * yy_;
  y[2] = kC1 * z;
  y[3] = -kC1 * x;
  if (dy) {
    (*dy)[1] = {0, -kC1, 0};
    (*dy)[2] = {0, 0, kC1};
    (*dy)[3] = {-kC1, 0, 0};
  }
  if (degree < 2)
    return;
  y[4] = kC2[0] * x * yy_;
  y[5] = kC2[1] * yy_ * z;
  y[6] = kC2[2] * (2 * zz - xx - yy);
  y[7] = kC2[3] * x * z;
  y[8] = kC2[4] * (xx - yy);
  if (dy) {
    (*dy)[4] = kC2[0] * Eigen::Vector3d(yy_, x, 0);
    (*dy)[5] = kC2[1] * Eigen::Vector3d(0, z, yy_);
    (*dy)[6] = kC2[2] * Eigen::Vector3d(-2 * x, -2 * yy_, 4 * z);
    (*dy)[7] = kC2[3] * Eigen::Vector3d(z, 0, x);
    (*dy)[8] = kC2[4] * Eigen::Vector3d(2 * x, -2 * yy_, 0);
  }
  if (degree < 3)
    return;
  y[9] = kC3[0] * yy_ * (3 * xx - yy);
  y[10] = kC3[1] * x * yy_ * z;
  y[11] = kC3[2] * yy_ * (4 * zz - xx - yy);
  y[12] = kC3[3] * z * (2 * zz - 3 * xx - 3 * yy);
  y[13] = kC3[4] * x * (4 * zz - xx - yy);
  y[14] = kC3[5] * z * (xx - yy);
  y[15] = kC3[6] * x * (xx - 3 * yy);
  if (dy) {
    (*dy)[9] = kC3[0] * Eigen::Vector3d(6 * x * yy_, 3 * xx - 3 * yy, 0);
    (*dy)[10] = kC3[1] * Eigen::Vector3d(yy_ * z, x * z, x * yy_);
    (*dy)[11] = kC3[2] * Eigen::Vector3d(-2 * x * yy_, 4 * zz - xx - 3 * yy, 8 * yy_ * z);
    (*dy)[12] = kC3[3] * Eigen::Vector3d(-6 * x * z, -6 * yy_ * z, 6 * zz - 3 * xx - 3 * yy);
    (*dy)[13] = kC3[4] * Eigen::Vector3d(4 * zz - 3 * xx - yy, -2 * x * yy_, 8 * x * z);
    (*dy)[14] = kC3[5] * Eigen::Vector3d(2 * x * z, -2 * yy_ * z, xx - yy);
    (*dy)[15] = kC3[6] * Eigen::Vector3d(3 * xx - 3 * yy, -6 * x * yy_, 0);
  }
}

} // namespace featsplat::detail
