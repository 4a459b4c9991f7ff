#include "featsplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "featsplat/error.hpp"
#include "featsplat/parallel.hpp"
#include "sh.hpp"

namespace featsplat {

void RenderConfig::validate() const {
  if (tile_size < 1)
    throw Error(ErrorKind::InvalidArgument, "tile_size must be >= 1");
  if (!(alpha_skip > 0 && alpha_skip < alpha_clamp && alpha_clamp < 1))
    throw Error(ErrorKind::InvalidArgument, "need 0 < alpha_skip < alpha_clamp < 1");
  if (!(near_plane > 0) || !(dilation >= 0) || !(transmittance_stop >= 0))
    throw Error(ErrorKind::InvalidArgument, "invalid render constants");
}

namespace {

struct CameraGeom {
  Eigen::Matrix3d rot;
  Eigen::Vector3d trans;
  Eigen::Vector3d center;
  double fx, fy, cx, cy;
  int width, height;

  explicit CameraGeom(const CameraView &cam)
      : rot(cam.pose.rotation()), trans(cam.pose.translation()), center(cam.pose.center()), fx(cam.intrinsics.fx),
        fy(cam.intrinsics.fy), cx(cam.intrinsics.cx), cy(cam.intrinsics.cy), width(cam.intrinsics.width),
        height(cam.intrinsics.height) {}
};

Eigen::Matrix<double, 2, 3> projection_jacobian(const CameraGeom &g, const Eigen::Vector3d &t) {
  const double iz = 1.0 / t.z(), iz2 = iz * iz;
  Eigen::Matrix<double, 2, 3> j;
  j << g.fx * iz, 0, -g.fx * t.x() * iz2, 0, g.fy * iz, -g.fy * t.y() * iz2;
  return j;
}

std::optional<Splat2D> project_with(const CameraGeom &g, const Eigen::Vector3d &mean, const Eigen::Matrix3d &cov3d,
                                    const RenderConfig &cfg, double opacity, std::size_t index) {
  if (!(opacity >= cfg.alpha_skip))
    return std::nullopt;
  const Eigen::Vector3d t = g.rot * mean + g.trans;
  if (!(t.z() > cfg.near_plane))
    return std::nullopt;
  const auto j = projection_jacobian(g, t);
  const Eigen::Matrix<double, 2, 3> m = j * g.rot;
  Eigen::Matrix2d cov = m * cov3d * m.transpose();
  cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
  cov(0, 0) += cfg.dilation;
  cov(1, 1) += cfg.dilation;
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
  if (!(det > 0))
    return std::nullopt;
  const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
  const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
  const double k = std::max(3.0, std::sqrt(2.0 * std::log(opacity / cfg.alpha_skip)));
  const double r = std::ceil(k * std::sqrt(lambda_max));
  if (!std::isfinite(r))
    return std::nullopt;

  Splat2D s;
  s.mean2d = {g.fx * t.x() / t.z() + g.cx, g.fy * t.y() / t.z() + g.cy};
  s.cov2d = cov;
  s.depth = t.z();
  s.radius = static_cast<int>(std::clamp(r, 1.0, 1e9));
  s.gaussian_index = index;
  if (s.mean2d.x() + s.radius < 0 || s.mean2d.x() - s.radius > g.width || s.mean2d.y() + s.radius < 0 ||
      s.mean2d.y() - s.radius > g.height)
    return std::nullopt;
  return s;
}

/// Per-Gaussian quantities shared by the forward and backward passes.
struct Projected {
  bool visible = false;
  Splat2D splat;
  double conic_a = 0, conic_b = 0, conic_c = 0;
  double opacity = 0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  Eigen::Vector3d color_raw = Eigen::Vector3d::Zero();
};

Eigen::Vector3d color_of(const GaussianSet &set, std::size_t i, const Eigen::Vector3d &cam_center) {
  std::array<double, 16> basis{};
  Eigen::Vector3d dir = set.position(i) - cam_center;
  const double n = dir.norm();
  dir = n > 0 ? Eigen::Vector3d(dir / n) : Eigen::Vector3d::UnitZ();
  detail::sh_basis(set.sh_degree(), dir, basis);
  Eigen::Vector3d c;
  for (int ch = 0; ch < 3; ++ch) {
    double v = 0.5;
    for (int k = 0; k < set.sh_coeffs(); ++k)
      v += basis[static_cast<std::size_t>(k)] * set.sh(i, ch, k);
    c[ch] = v;
  }
  return c;
}

void check_finite(const GaussianSet &set, std::size_t i) {
  auto bad = [&](double v) { return !std::isfinite(v); };
  bool fail = set.position(i).hasNaN() || !set.position(i).allFinite() ||
              !set.log_scale(i).array().exp().allFinite() || !set.rotation(i).allFinite() ||
              !(set.rotation(i).squaredNorm() > 0) || bad(set.opacity_logits[i]);
  for (int c = 0; c < 3 && !fail; ++c)
    for (int k = 0; k < set.sh_coeffs(); ++k)
      fail = fail || bad(set.sh(i, c, k));
  for (double f : set.feature(i))
    fail = fail || bad(f);
  if (fail)
    throw Error(ErrorKind::NonFiniteParameter, std::to_string(i));
}

struct TileGrid {
  int tiles_x = 0, tiles_y = 0, tile = 16;
  std::vector<std::vector<std::uint32_t>> lists;
};

/// Everything needed to composite: per-Gaussian projections and depth-sorted tile lists.
struct Prepared {
  CameraGeom geom;
  std::vector<Projected> proj;
  TileGrid grid;
  std::vector<double> bg_feature;
};

Prepared prepare(const GaussianSet &set, const CameraView &camera, const RenderConfig &cfg) {
  cfg.validate();
  camera.intrinsics.validate();
  Prepared p{CameraGeom(camera), {}, {}, {}};
  const auto n = set.size();
  const int fdim = set.feature_dim();
  if (cfg.background_feature.empty())
    p.bg_feature.assign(static_cast<std::size_t>(std::max(fdim, 0)), 0.0);
  else if (static_cast<int>(cfg.background_feature.size()) != fdim)
    throw Error(ErrorKind::DimMismatch, "background_feature size does not match the scene feature dim");
  else
    p.bg_feature = cfg.background_feature;

  p.proj.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    check_finite(set, i);
    auto &pr = p.proj[i];
    const Eigen::Vector3d scale = set.log_scale(i).array().exp();
    const Eigen::Vector4d q = set.rotation(i).normalized();
    pr.opacity = sigmoid(set.opacity_logits[i]);
    auto splat = project_with(p.geom, set.position(i), covariance3d(scale, q), cfg, pr.opacity, i);
    if (!splat)
      continue;
    pr.visible = true;
    pr.splat = *splat;
    const auto &cv = splat->cov2d;
    const double det = cv(0, 0) * cv(1, 1) - cv(0, 1) * cv(0, 1);
    pr.conic_a = cv(1, 1) / det;
    pr.conic_b = -cv(0, 1) / det;
    pr.conic_c = cv(0, 0) / det;
    pr.color_raw = color_of(set, i, p.geom.center);
    pr.color = pr.color_raw.cwiseMax(0.0);
  }

  auto &grid = p.grid;
  grid.tile = cfg.tile_size;
  grid.tiles_x = (p.geom.width + cfg.tile_size - 1) / cfg.tile_size;
  grid.tiles_y = (p.geom.height + cfg.tile_size - 1) / cfg.tile_size;
  grid.lists.assign(static_cast<std::size_t>(grid.tiles_x) * grid.tiles_y, {});
  const double wmax = p.geom.width - 1, hmax = p.geom.height - 1;
  for (std::size_t i = 0; i < n; ++i) {
    const auto &pr = p.proj[i];
    if (!pr.visible)
      continue;
    const auto &s = pr.splat;
    // Pixels whose centers fall within mean +/- radius, widened by one pixel.
    const double x_lo = std::clamp(std::floor(s.mean2d.x() - s.radius - 0.5) - 1, 0.0, wmax);
    const double x_hi = std::clamp(std::ceil(s.mean2d.x() + s.radius - 0.5) + 1, 0.0, wmax);
    const double y_lo = std::clamp(std::floor(s.mean2d.y() - s.radius - 0.5) - 1, 0.0, hmax);
    const double y_hi = std::clamp(std::ceil(s.mean2d.y() + s.radius - 0.5) + 1, 0.0, hmax);
    const int tx0 = static_cast<int>(x_lo) / grid.tile, tx1 = static_cast<int>(x_hi) / grid.tile;
    const int ty0 = static_cast<int>(y_lo) / grid.tile, ty1 = static_cast<int>(y_hi) / grid.tile;
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        grid.lists[static_cast<std::size_t>(ty) * grid.tiles_x + tx].push_back(static_cast<std::uint32_t>(i));
  }
  // Total order: depth, then index. Makes output independent of any processing order.
  for (auto &list : grid.lists)
    std::sort(list.begin(), list.end(), [&](std::uint32_t a, std::uint32_t b) {
      const double da = p.proj[a].splat.depth, db = p.proj[b].splat.depth;
      return da < db || (da == db && a < b);
    });
  return p;
}

/// Splat attributes converted to the compositing precision.
template <typename Scalar> struct SplatTable {
  std::vector<Scalar> mx, my, ca, cb, cc, opacity, depth, color, feature;
  int fdim = 0;

  SplatTable(const GaussianSet &set, const Prepared &p) : fdim(set.feature_dim()) {
    const auto n = set.size();
    for (auto *v : {&mx, &my, &ca, &cb, &cc, &opacity, &depth})
      v->resize(n);
    color.resize(3 * n);
    feature.resize(n * static_cast<std::size_t>(fdim));
    for (std::size_t i = 0; i < n; ++i) {
      const auto &pr = p.proj[i];
      if (!pr.visible)
        continue;
      mx[i] = static_cast<Scalar>(pr.splat.mean2d.x());
      my[i] = static_cast<Scalar>(pr.splat.mean2d.y());
      ca[i] = static_cast<Scalar>(pr.conic_a);
      cb[i] = static_cast<Scalar>(pr.conic_b);
      cc[i] = static_cast<Scalar>(pr.conic_c);
      opacity[i] = static_cast<Scalar>(pr.opacity);
      depth[i] = static_cast<Scalar>(pr.splat.depth);
      for (int c = 0; c < 3; ++c)
        color[3 * i + c] = static_cast<Scalar>(pr.color[c]);
      const auto f = set.feature(i);
      for (int k = 0; k < fdim; ++k)
        feature[i * fdim + k] = static_cast<Scalar>(f[k]);
    }
  }
};

struct TileBounds {
  int x0, x1, y0, y1;
};

TileBounds tile_bounds(const Prepared &p, std::size_t tile) {
  const int tx = static_cast<int>(tile) % p.grid.tiles_x, ty = static_cast<int>(tile) / p.grid.tiles_x;
  return {tx * p.grid.tile, std::min((tx + 1) * p.grid.tile, p.geom.width), ty * p.grid.tile,
          std::min((ty + 1) * p.grid.tile, p.geom.height)};
}

template <typename Scalar> struct Contribution {
  std::uint32_t slot; // position in the tile list
  Scalar alpha, gauss, transmittance, dx, dy;
  bool clamped;
};

/// Front-to-back walk over one pixel. `visit` sees each accepted contribution; returns final transmittance.
template <typename Scalar, typename Visit>
Scalar composite_pixel(const SplatTable<Scalar> &tab, const std::vector<std::uint32_t> &list, int px, int py,
                       const RenderConfig &cfg, Visit &&visit) {
  const Scalar clamp = static_cast<Scalar>(cfg.alpha_clamp);
  const Scalar skip = static_cast<Scalar>(cfg.alpha_skip);
  const Scalar stop = static_cast<Scalar>(cfg.transmittance_stop);
  const Scalar cx = static_cast<Scalar>(px) + Scalar(0.5), cy = static_cast<Scalar>(py) + Scalar(0.5);
  Scalar t = 1;
  for (std::uint32_t slot = 0; slot < list.size(); ++slot) {
    const auto g = list[slot];
    const Scalar dx = cx - tab.mx[g], dy = cy - tab.my[g];
    const Scalar power = Scalar(-0.5) * (tab.ca[g] * dx * dx + tab.cc[g] * dy * dy) - tab.cb[g] * dx * dy;
    const Scalar gauss = std::exp(power);
    const Scalar raw = tab.opacity[g] * gauss;
    const bool clamped = raw > clamp;
    const Scalar alpha = clamped ? clamp : raw;
    if (alpha < skip)
      continue;
    visit(Contribution<Scalar>{slot, alpha, gauss, t, dx, dy, clamped});
    t *= (Scalar(1) - alpha);
    if (t < stop)
      break;
  }
  return t;
}

} // namespace

std::optional<Splat2D> project_gaussian(const Eigen::Vector3d &mean, const Eigen::Matrix3d &cov3d,
                                        const CameraView &camera, const RenderConfig &cfg, double opacity,
                                        std::size_t gaussian_index) {
  return project_with(CameraGeom(camera), mean, cov3d, cfg, opacity, gaussian_index);
}

Eigen::Vector3d sh_color(const GaussianSet &set, std::size_t i, const Eigen::Vector3d &camera_center) {
  return color_of(set, i, camera_center);
}

template <typename Scalar>
BasicRenderOutput<Scalar> render(const GaussianSet &set, const CameraView &camera, const RenderConfig &cfg) {
  const auto p = prepare(set, camera, cfg);
  const SplatTable<Scalar> tab(set, p);
  const int w = p.geom.width, h = p.geom.height, fdim = set.feature_dim();
  BasicRenderOutput<Scalar> out;
  out.width = w;
  out.height = h;
  out.feature_dim = fdim;
  const auto npix = static_cast<std::size_t>(w) * h;
  out.rgb.assign(npix * 3, 0);
  out.feature.assign(npix * fdim, 0);
  out.alpha.assign(npix, 0);
  out.depth.assign(npix, 0);
  out.contributors.assign(npix, 0);

  parallel_for(p.grid.lists.size(), [&](std::size_t tile) {
    const auto &list = p.grid.lists[tile];
    const auto b = tile_bounds(p, tile);
    std::vector<Scalar> feat(static_cast<std::size_t>(fdim));
    for (int py = b.y0; py < b.y1; ++py) {
      for (int px = b.x0; px < b.x1; ++px) {
        Scalar rgb[3] = {0, 0, 0};
        Scalar depth = 0;
        int count = 0;
        std::fill(feat.begin(), feat.end(), Scalar(0));
        const Scalar t = composite_pixel(tab, list, px, py, cfg, [&](const Contribution<Scalar> &c) {
          const auto g = list[c.slot];
          const Scalar weight = c.alpha * c.transmittance;
          for (int ch = 0; ch < 3; ++ch)
            rgb[ch] += weight * tab.color[3 * g + ch];
          for (int k = 0; k < fdim; ++k)
            feat[k] += weight * tab.feature[g * fdim + k];
          depth += weight * tab.depth[g];
          ++count;
        });
        const auto pix = static_cast<std::size_t>(py) * w + px;
        for (int ch = 0; ch < 3; ++ch)
          out.rgb[3 * pix + ch] = rgb[ch] + t * static_cast<Scalar>(cfg.background_rgb[ch]);
        for (int k = 0; k < fdim; ++k)
          out.feature[pix * fdim + k] = feat[k] + t * static_cast<Scalar>(p.bg_feature[k]);
        const Scalar alpha = Scalar(1) - t;
        out.alpha[pix] = alpha;
        out.depth[pix] = depth / std::max(alpha, Scalar(1e-8));
        out.contributors[pix] = count;
      }
    }
  });
  return out;
}

template <typename Scalar>
GaussianGradients render_backward(const GaussianSet &set, const CameraView &camera, const RenderConfig &cfg,
                                  const RenderGrads<Scalar> &upstream) {
  const auto p = prepare(set, camera, cfg);
  const SplatTable<Scalar> tab(set, p);
  const int w = p.geom.width, h = p.geom.height, fdim = set.feature_dim();
  const auto npix = static_cast<std::size_t>(w) * h;
  const auto n = set.size();
  if ((!upstream.rgb.empty() && upstream.rgb.size() != npix * 3) ||
      (!upstream.feature.empty() && upstream.feature.size() != npix * fdim) ||
      (!upstream.alpha.empty() && upstream.alpha.size() != npix))
    throw Error(ErrorKind::ShapeMismatch, "upstream gradient shape");

  // Per-slot 2D gradient record: mean2d(2), conic(3), opacity(1), color(3), feature(F).
  const std::size_t rec = 9 + static_cast<std::size_t>(fdim);
  std::vector<std::vector<double>> tile_grads(p.grid.lists.size());

  parallel_for(p.grid.lists.size(), [&](std::size_t tile) {
    const auto &list = p.grid.lists[tile];
    if (list.empty())
      return;
    auto &acc = tile_grads[tile];
    acc.assign(list.size() * rec, 0.0);
    const auto b = tile_bounds(p, tile);
    std::vector<Contribution<Scalar>> contribs;
    std::vector<Scalar> behind_feat(static_cast<std::size_t>(fdim));
    for (int py = b.y0; py < b.y1; ++py) {
      for (int px = b.x0; px < b.x1; ++px) {
        const auto pix = static_cast<std::size_t>(py) * w + px;
        contribs.clear();
        const Scalar t_final = composite_pixel(tab, list, px, py, cfg,
                                               [&](const Contribution<Scalar> &c) { contribs.push_back(c); });
        if (contribs.empty())
          continue;
        Scalar g_rgb[3] = {0, 0, 0};
        if (!upstream.rgb.empty())
          for (int ch = 0; ch < 3; ++ch)
            g_rgb[ch] = upstream.rgb[3 * pix + ch];
        const Scalar *g_feat = upstream.feature.empty() ? nullptr : &upstream.feature[pix * fdim];
        const Scalar g_alpha = upstream.alpha.empty() ? Scalar(0) : upstream.alpha[pix];

        // Back-to-front: "behind" holds everything composited after the current splat, incl. background.
        Scalar behind_rgb[3];
        for (int ch = 0; ch < 3; ++ch)
          behind_rgb[ch] = t_final * static_cast<Scalar>(cfg.background_rgb[ch]);
        for (int k = 0; k < fdim; ++k)
          behind_feat[k] = t_final * static_cast<Scalar>(p.bg_feature[k]);

        for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
          const auto &c = *it;
          const auto g = list[c.slot];
          double *r = &acc[c.slot * rec];
          const Scalar weight = c.alpha * c.transmittance;
          const Scalar inv_one_minus = Scalar(1) / (Scalar(1) - c.alpha);

          Scalar d_alpha = g_alpha * t_final * inv_one_minus;
          for (int ch = 0; ch < 3; ++ch) {
            const Scalar col = tab.color[3 * g + ch];
            d_alpha += g_rgb[ch] * (c.transmittance * col - behind_rgb[ch] * inv_one_minus);
            r[6 + ch] += static_cast<double>(weight * g_rgb[ch]);
            behind_rgb[ch] += weight * col;
          }
          if (g_feat) {
            for (int k = 0; k < fdim; ++k) {
              const Scalar f = tab.feature[g * fdim + k];
              d_alpha += g_feat[k] * (c.transmittance * f - behind_feat[k] * inv_one_minus);
              r[9 + k] += static_cast<double>(weight * g_feat[k]);
              behind_feat[k] += weight * f;
            }
          }
          if (c.clamped)
            continue;
          r[5] += static_cast<double>(d_alpha * c.gauss);
          const Scalar d_power = d_alpha * tab.opacity[g] * c.gauss;
          const Scalar a = tab.ca[g], bb = tab.cb[g], cc = tab.cc[g];
          // power = -0.5 (a dx^2 + c dy^2) - b dx dy, with d = pixel - mean
          r[0] += static_cast<double>(d_power * (a * c.dx + bb * c.dy));
          r[1] += static_cast<double>(d_power * (bb * c.dx + cc * c.dy));
          r[2] += static_cast<double>(d_power * Scalar(-0.5) * c.dx * c.dx);
          r[3] += static_cast<double>(d_power * -c.dx * c.dy);
          r[4] += static_cast<double>(d_power * Scalar(-0.5) * c.dy * c.dy);
        }
      }
    }
  });

  // Deterministic reduction in tile order.
  std::vector<double> g2d(n * rec, 0.0);
  for (std::size_t tile = 0; tile < p.grid.lists.size(); ++tile) {
    const auto &list = p.grid.lists[tile];
    const auto &acc = tile_grads[tile];
    if (acc.empty())
      continue;
    for (std::size_t slot = 0; slot < list.size(); ++slot)
      for (std::size_t k = 0; k < rec; ++k)
        g2d[list[slot] * rec + k] += acc[slot * rec + k];
  }

  GaussianGradients out;
  out.params = GaussianSet(n, fdim, set.sh_degree());
  std::fill(out.params.rotations.begin(), out.params.rotations.end(), 0.0);
  out.screen_grad_norm.assign(n, 0.0);
  out.visible.assign(n, 0);
  const auto &geom = p.geom;

  parallel_for(n, [&](std::size_t i) {
    const auto &pr = p.proj[i];
    if (!pr.visible)
      return;
    out.visible[i] = 1;
    const double *r = &g2d[i * rec];
    const Eigen::Vector2d d_mean(r[0], r[1]);
    out.screen_grad_norm[i] = Eigen::Vector2d(d_mean.x() * 0.5 * w, d_mean.y() * 0.5 * h).norm();

    // Features and opacity.
    auto gf = out.params.feature(i);
    for (int k = 0; k < fdim; ++k)
      gf[k] = r[9 + k];
    out.params.opacity_logits[i] = r[5] * pr.opacity * (1.0 - pr.opacity);

    // Color through the clamp and the SH basis.
    const Eigen::Vector3d mu = set.position(i);
    Eigen::Vector3d d_mu = Eigen::Vector3d::Zero();
    {
      Eigen::Vector3d d_color_raw;
      for (int ch = 0; ch < 3; ++ch)
        d_color_raw[ch] = pr.color_raw[ch] > 0 ? r[6 + ch] : 0.0;
      Eigen::Vector3d v = mu - geom.center;
      const double vn = v.norm();
      const Eigen::Vector3d dir = vn > 0 ? Eigen::Vector3d(v / vn) : Eigen::Vector3d::UnitZ();
      std::array<double, 16> basis{};
      std::array<Eigen::Vector3d, 16> dbasis{};
      detail::sh_basis(set.sh_degree(), dir, basis, &dbasis);
      Eigen::Vector3d d_dir = Eigen::Vector3d::Zero();
      for (int ch = 0; ch < 3; ++ch)
        for (int k = 0; k < set.sh_coeffs(); ++k) {
          out.params.sh(i, ch, k) = d_color_raw[ch] * basis[static_cast<std::size_t>(k)];
          d_dir += d_color_raw[ch] * set.sh(i, ch, k) * dbasis[static_cast<std::size_t>(k)];
        }
      if (set.sh_degree() > 0 && vn > 0)
        d_mu += (Eigen::Matrix3d::Identity() - dir * dir.transpose()) * d_dir / vn;
    }

    // Conic -> 2D covariance.
    const auto &cov = pr.splat.cov2d;
    const double ca = cov(0, 0), cb = cov(0, 1), cc = cov(1, 1);
    const double det = ca * cc - cb * cb, inv_det2 = 1.0 / (det * det);
    const double ga = r[2], gb = r[3], gc = r[4];
    const double d_cov_a = (-cc * cc * ga + cb * cc * gb - cb * cb * gc) * inv_det2;
    const double d_cov_b = (2 * cb * cc * ga - (ca * cc + cb * cb) * gb + 2 * ca * cb * gc) * inv_det2;
    const double d_cov_c = (-cb * cb * ga + ca * cb * gb - ca * ca * gc) * inv_det2;

    // 2D covariance = M Sigma M^T with M = J W.
    const Eigen::Vector3d t = geom.rot * mu + geom.trans;
    const auto jac = projection_jacobian(geom, t);
    const Eigen::Matrix<double, 2, 3> m = jac * geom.rot;
    const Eigen::Vector3d scale = set.log_scale(i).array().exp();
    const Eigen::Vector4d q_raw = set.rotation(i);
    const double q_norm = q_raw.norm();
    const Eigen::Vector4d q = q_raw / q_norm;
    const Eigen::Matrix3d rot = quaternion_to_matrix(q);
    const Eigen::Matrix3d sigma = covariance3d(scale, q);

    const Eigen::Vector3d m0 = m.row(0).transpose(), m1 = m.row(1).transpose();
    const Eigen::Matrix3d d_sigma = d_cov_a * m0 * m0.transpose() +
                                    0.5 * d_cov_b * (m0 * m1.transpose() + m1 * m0.transpose()) +
                                    d_cov_c * m1 * m1.transpose();
    Eigen::Matrix<double, 2, 3> d_m;
    d_m.row(0) = (2 * d_cov_a * sigma * m0 + d_cov_b * sigma * m1).transpose();
    d_m.row(1) = (d_cov_b * sigma * m0 + 2 * d_cov_c * sigma * m1).transpose();
    const Eigen::Matrix<double, 2, 3> d_j = d_m * geom.rot.transpose();

    // Camera-space mean: through J and the projected mean.
    const double iz = 1.0 / t.z(), iz2 = iz * iz, iz3 = iz2 * iz;
    Eigen::Vector3d d_t;
    d_t.x() = d_j(0, 2) * (-geom.fx * iz2) + d_mean.x() * geom.fx * iz;
    d_t.y() = d_j(1, 2) * (-geom.fy * iz2) + d_mean.y() * geom.fy * iz;
    d_t.z() = d_j(0, 0) * (-geom.fx * iz2) + d_j(0, 2) * (2 * geom.fx * t.x() * iz3) + d_j(1, 1) * (-geom.fy * iz2) +
              d_j(1, 2) * (2 * geom.fy * t.y() * iz3) - d_mean.x() * geom.fx * t.x() * iz2 -
              d_mean.y() * geom.fy * t.y() * iz2;
    d_mu += geom.rot.transpose() * d_t;
    Eigen::Map<Eigen::Vector3d>(&out.params.positions[3 * i]) = d_mu;

    // Sigma = (R S)(R S)^T.
    const Eigen::Matrix3d rs = rot * scale.asDiagonal();
    const Eigen::Matrix3d d_rs = 2.0 * d_sigma * rs;
    Eigen::Matrix3d d_rot;
    Eigen::Vector3d d_scale;
    for (int col = 0; col < 3; ++col) {
      d_rot.col(col) = d_rs.col(col) * scale[col];
      d_scale[col] = d_rs.col(col).dot(rot.col(col));
    }
    Eigen::Map<Eigen::Vector3d>(&out.params.log_scales[3 * i]) = d_scale.cwiseProduct(scale);

    const double qw = q[0], qx = q[1], qy = q[2], qz = q[3];
    Eigen::Matrix3d dr_w, dr_x, dr_y, dr_z;
    dr_w << 0, -qz, qy, qz, 0, -qx, -qy, qx, 0;
    dr_x << 0, qy, qz, qy, -2 * qx, -qw, qz, qw, -2 * qx;
    dr_y << -2 * qy, qx, qw, qx, 0, qz, -qw, qz, -2 * qy;
    dr_z << -2 * qz, -qw, qx, qw, -2 * qz, qy, qx, qy, 0;
    const Eigen::Vector4d d_qn(2 * d_rot.cwiseProduct(dr_w).sum(), 2 * d_rot.cwiseProduct(dr_x).sum(),
                               2 * d_rot.cwiseProduct(dr_y).sum(), 2 * d_rot.cwiseProduct(dr_z).sum());
    Eigen::Map<Eigen::Vector4d>(&out.params.rotations[4 * i]) = (d_qn - q * q.dot(d_qn)) / q_norm;
  });
  return out;
}

template <typename Scalar> Image BasicRenderOutput<Scalar>::rgb_image() const {
  Image img(width, height, 3);
  std::transform(rgb.begin(), rgb.end(), img.data.begin(), [](Scalar v) { return static_cast<float>(v); });
  return img;
}

template <typename Scalar> FeatureMap BasicRenderOutput<Scalar>::feature_map(std::string source_tag) const {
  FeatureMap map(height, width, feature_dim, std::move(source_tag));
  std::transform(feature.begin(), feature.end(), map.data.begin(), [](Scalar v) { return static_cast<float>(v); });
  return map;
}

template <typename Scalar> Image BasicRenderOutput<Scalar>::alpha_image() const {
  Image img(width, height, 1);
  std::transform(alpha.begin(), alpha.end(), img.data.begin(), [](Scalar v) { return static_cast<float>(v); });
  return img;
}

template <typename Scalar> Image BasicRenderOutput<Scalar>::depth_image() const {
  Image img(width, height, 1);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < depth.size(); ++i)
    if (alpha[i] > 0) {
      lo = std::min(lo, static_cast<double>(depth[i]));
      hi = std::max(hi, static_cast<double>(depth[i]));
    }
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (!(alpha[i] > 0))
      continue;
    img.data[i] = hi > lo ? static_cast<float>((depth[i] - lo) / (hi - lo)) : 0.5f;
  }
  return img;
}

template struct BasicRenderOutput<float>;
template struct BasicRenderOutput<double>;
template BasicRenderOutput<float> render<float>(const GaussianSet &, const CameraView &, const RenderConfig &);
template BasicRenderOutput<double> render<double>(const GaussianSet &, const CameraView &, const RenderConfig &);
template GaussianGradients render_backward<float>(const GaussianSet &, const CameraView &, const RenderConfig &,
                                                  const RenderGrads<float> &);
template GaussianGradients render_backward<double>(const GaussianSet &, const CameraView &, const RenderConfig &,
                                                   const RenderGrads<double> &);

} // namespace featsplat
