#include "test_support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <unistd.h>

namespace testsupport {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string &tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("featsplat_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

CameraView front_camera(int width, int height, double focal) {
  CameraView v;
  v.intrinsics.camera_id = 1;
  v.intrinsics.model = CameraModel::Pinhole;
  v.intrinsics.width = width;
  v.intrinsics.height = height;
  v.intrinsics.fx = v.intrinsics.fy = focal;
  v.intrinsics.cx = width / 2.0;
  v.intrinsics.cy = height / 2.0;
  v.pose.camera_id = 1;
  v.pose.image_id = 1;
  v.pose.image_name = "front.png";
  return v;
}

GaussianSet random_scene(Gen &g, const SceneSpec &spec) {
  GaussianSet s(static_cast<std::size_t>(spec.count), spec.feature_dim, spec.sh_degree);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double z = g.uniform(2.0, 6.0);
    s.position(i) = Eigen::Vector3d(g.uniform(-0.45, 0.45) * z, g.uniform(-0.45, 0.45) * z, z);
    for (int a = 0; a < 3; ++a)
      s.log_scale(i)(a) = std::log(g.uniform(spec.min_scale, spec.max_scale));
    s.rotation(i) = Eigen::Vector4d(g.normal(), g.normal(), g.normal(), g.normal());
    s.opacity_logits[i] = logit(g.uniform(spec.min_opacity, spec.max_opacity));
    for (int c = 0; c < 3; ++c) {
      const double target = spec.positive_colors ? g.uniform(0.2, 0.8) : g.uniform(-0.3, 1.2);
      s.sh(i, c, 0) = (target - 0.5) / kSH0;
      for (int k = 1; k < s.sh_coeffs(); ++k)
        s.sh(i, c, k) = g.uniform(-0.1, 0.1);
    }
    for (auto &f : s.feature(i))
      f = g.uniform(-1.0, 1.0);
  }
  return s;
}

namespace {

Eigen::Vector3d oracle_color(const GaussianSet &set, std::size_t i, const Eigen::Vector3d &eye) {
  if (set.sh_degree() > 1)
    throw std::runtime_error("oracle supports SH degree <= 1");
  const Eigen::Vector3d d = (set.position(i) - eye).normalized();
  Eigen::Vector3d c;
  for (int ch = 0; ch < 3; ++ch) {
    double v = 0.28209479177387814 * set.sh(i, ch, 0);
    if (set.sh_degree() == 1)
      v += 0.4886025119029199 * (-d.y() * set.sh(i, ch, 1) + d.z() * set.sh(i, ch, 2) - d.x() * set.sh(i, ch, 3));
    c[ch] = std::max(0.0, v + 0.5);
  }
  return c;
}

} // namespace

RenderOutput64 brute_force_render(const GaussianSet &set, const CameraView &camera, const RenderConfig &cfg) {
  struct Item {
    double depth;
    std::size_t index;
    Eigen::Vector2d mean;
    Eigen::Matrix2d inv_cov;
    double opacity;
    Eigen::Vector3d color;
  };
  const Eigen::Matrix3d r = Eigen::Quaterniond(camera.pose.qw, camera.pose.qx, camera.pose.qy, camera.pose.qz)
                                .normalized()
                                .toRotationMatrix();
  const Eigen::Vector3d tr(camera.pose.tx, camera.pose.ty, camera.pose.tz);
  const Eigen::Vector3d eye = -r.transpose() * tr;
  const auto &in = camera.intrinsics;

  std::vector<Item> items;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Eigen::Vector3d p = r * set.position(i) + tr;
    if (p.z() <= cfg.near_plane)
      continue;
    const Eigen::Vector4d qv = set.rotation(i).normalized();
    const Eigen::Matrix3d rot = Eigen::Quaterniond(qv[0], qv[1], qv[2], qv[3]).toRotationMatrix();
    const Eigen::Vector3d s = set.log_scale(i).array().exp();
    const Eigen::Matrix3d sigma = rot * s.cwiseAbs2().asDiagonal() * rot.transpose();
    Eigen::Matrix<double, 2, 3> jac;
    jac << in.fx / p.z(), 0, -in.fx * p.x() / (p.z() * p.z()), 0, in.fy / p.z(), -in.fy * p.y() / (p.z() * p.z());
    Eigen::Matrix2d cov = jac * r * sigma * r.transpose() * jac.transpose();
    cov += cfg.dilation * Eigen::Matrix2d::Identity();
    if (!(cov.determinant() > 0))
      continue;
    items.push_back({p.z(), i, {in.fx * p.x() / p.z() + in.cx, in.fy * p.y() / p.z() + in.cy}, cov.inverse(),
                     1.0 / (1.0 + std::exp(-set.opacity_logits[i])), oracle_color(set, i, eye)});
  }
  std::sort(items.begin(), items.end(), [](const Item &a, const Item &b) {
    return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
  });

  const int w = in.width, h = in.height, f = set.feature_dim();
  std::vector<double> bg(static_cast<std::size_t>(f), 0.0);
  if (!cfg.background_feature.empty())
    bg = cfg.background_feature;
  RenderOutput64 out;
  out.width = w;
  out.height = h;
  out.feature_dim = f;
  const auto npix = static_cast<std::size_t>(w) * h;
  out.rgb.assign(3 * npix, 0);
  out.feature.assign(npix * f, 0);
  out.alpha.assign(npix, 0);
  out.depth.assign(npix, 0);
  out.contributors.assign(npix, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto pix = static_cast<std::size_t>(y) * w + x;
      const Eigen::Vector2d c(x + 0.5, y + 0.5);
      double t = 1, depth = 0;
      for (const auto &it : items) {
        const Eigen::Vector2d d = c - it.mean;
        const double a = std::min(cfg.alpha_clamp, it.opacity * std::exp(-0.5 * d.dot(it.inv_cov * d)));
        if (a < cfg.alpha_skip)
          continue;
        const double wgt = a * t;
        for (int ch = 0; ch < 3; ++ch)
          out.rgb[3 * pix + ch] += wgt * it.color[ch];
        for (int k = 0; k < f; ++k)
          out.feature[pix * f + k] += wgt * set.feature(it.index)[static_cast<std::size_t>(k)];
        depth += wgt * it.depth;
        out.contributors[pix] += 1;
        t *= 1 - a;
        if (t < cfg.transmittance_stop)
          break;
      }
      for (int ch = 0; ch < 3; ++ch)
        out.rgb[3 * pix + ch] += t * cfg.background_rgb[ch];
      for (int k = 0; k < f; ++k)
        out.feature[pix * f + k] += t * bg[static_cast<std::size_t>(k)];
      out.alpha[pix] = 1 - t;
      out.depth[pix] = depth / std::max(1 - t, 1e-8);
    }
  return out;
}

std::vector<double> heatmap_oracle(const FeatureMap &f, const TextEmbedding &t) {
  std::vector<double> out;
  double tt = 0;
  for (float v : t.vector)
    tt += static_cast<double>(v) * v;
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      double dot = 0, ff = 0;
      for (int k = 0; k < f.dim; ++k) {
        const double a = f.pixel(x, y)[static_cast<std::size_t>(k)];
        dot += a * t.vector[static_cast<std::size_t>(k)];
        ff += a * a;
      }
      double cosine = 0;
      if (std::sqrt(ff) >= 1e-8)
        cosine = dot / std::max(std::sqrt(ff) * std::sqrt(tt), 1e-8);
      out.push_back(std::max(-1.0, std::min(1.0, cosine)));
    }
  return out;
}

std::vector<int> label_oracle(const FeatureMap &f, const std::vector<TextEmbedding> &labels) {
  std::vector<std::vector<double>> maps;
  for (const auto &l : labels)
    maps.push_back(heatmap_oracle(f, l));
  std::vector<int> out(f.pixel_count());
  for (std::size_t p = 0; p < out.size(); ++p) {
    int best = 0;
    for (std::size_t k = 0; k < maps.size(); ++k)
      if (maps[k][p] > maps[static_cast<std::size_t>(best)][p])
        best = static_cast<int>(k);
    out[p] = best;
  }
  return out;
}

std::size_t argmax_oracle(const std::vector<double> &values) {
  const double m = *std::max_element(values.begin(), values.end());
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] == m)
      return i;
  return 0;
}

double ssim_oracle(const Image &a, const Image &b) {
  const int r = 5;
  double k1d[11], ksum = 0;
  for (int i = -r; i <= r; ++i) {
    k1d[i + r] = std::exp(-(i * i) / (2 * 1.5 * 1.5));
    ksum += k1d[i + r];
  }
  auto mirror = [](int i, int n) { return i < 0 ? -i - 1 : (i >= n ? 2 * n - 1 - i : i); };
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  for (int ch = 0; ch < a.channels; ++ch)
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int j = -r; j <= r; ++j)
          for (int i = -r; i <= r; ++i) {
            const double wgt = k1d[i + r] * k1d[j + r] / (ksum * ksum);
            const int xx = mirror(x + i, a.width), yy = mirror(y + j, a.height);
            const double va = a.at(xx, yy, ch), vb = b.at(xx, yy, ch);
            ma += wgt * va;
            mb += wgt * vb;
            saa += wgt * va * va;
            sbb += wgt * vb * vb;
            sab += wgt * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
  return total / (static_cast<double>(a.width) * a.height * a.channels);
}

double psnr_oracle(const Image &a, const Image &b) {
  double sum = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    sum += std::pow(static_cast<double>(a.data[i]) - b.data[i], 2);
  const double m = sum / a.data.size();
  return m == 0 ? 100.0 : std::min(100.0, -10.0 * std::log10(m));
}

FeatureMap random_feature_map(Gen &g, int h, int w, int dim) {
  FeatureMap m(h, w, dim, "random");
  for (auto &v : m.data)
    v = static_cast<float>(g.normal());
  return m;
}

TextEmbedding random_embedding(Gen &g, int dim, const std::string &label) {
  TextEmbedding t{label, std::vector<float>(static_cast<std::size_t>(dim))};
  double n = 0;
  for (auto &v : t.vector) {
    v = static_cast<float>(g.normal());
    n += static_cast<double>(v) * v;
  }
  for (auto &v : t.vector)
    v = static_cast<float>(v / std::sqrt(n));
  return t;
}

Image random_image(Gen &g, int w, int h, int c) {
  Image img(w, h, c);
  for (auto &v : img.data)
    v = static_cast<float>(g.uniform());
  return img;
}

void write_colmap_fixture(const fs::path &dir) {
  fs::create_directories(dir);
  std::ofstream cams(dir / "cameras.txt");
  cams << "# Camera list with one line of data per camera:\n"
          "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n"
          "# Number of cameras: 1\n"
          "1 PINHOLE 64 48 60.5 60.5 32 24\n";
  std::ofstream imgs(dir / "images.txt");
  imgs << "# Image list with two lines of data per image:\n"
          "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
          "#   POINTS2D[] as (X, Y, POINT3D_ID)\n";
  char buf[256];
  for (int i = 0; i < 10; ++i) {
    // Cameras on an arc around the y axis, looking at the origin from distance 4.
    const double th = -0.6 + 0.12 * i;
    const Eigen::Quaterniond q(Eigen::AngleAxisd(th, Eigen::Vector3d::UnitY()));
    const Eigen::Vector3d center(4 * std::sin(th), 0.0, -4 * std::cos(th));
    const Eigen::Vector3d t = -(q.toRotationMatrix() * center);
    std::snprintf(buf, sizeof(buf), "%d %.12f %.12f %.12f %.12f %.12f %.12f %.12f 1 frame_%02d.png\n", 10 - i, q.w(),
                  q.x(), q.y(), q.z(), t.x(), t.y(), t.z(), i);
    imgs << buf;
    imgs << "12.5 20.25 1 30.0 8.5 -1\n";
  }
  std::ofstream pts(dir / "points3D.txt");
  pts << "# 3D point list with one line of data per point:\n"
         "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n";
  for (int i = 0; i < 12; ++i) {
    std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f %d %d %d 0.5 1 0 2 0\n", i + 1, 0.1 * (i % 4) - 0.15,
                  0.1 * (i / 4) - 0.1, 0.05 * (i % 3), 20 * i, 255 - 20 * i, 128);
    pts << buf;
  }
}

GradCheckReport gradient_check(std::uint64_t seed, int sh_degree) {
  Gen g(seed);
  SceneSpec spec;
  spec.count = g.integer(1, 10);
  spec.feature_dim = 4;
  spec.sh_degree = sh_degree;
  spec.max_opacity = 0.9;
  spec.min_scale = 0.1;
  const auto base = random_scene(g, spec);
  const CameraView cam = front_camera(16, 16, 16.0);
  RenderConfig cfg;
  cfg.background_rgb = Eigen::Vector3d(g.uniform(), g.uniform(), g.uniform());

  const std::size_t npix = 16 * 16;
  RenderGrads<double> up;
  up.rgb.resize(3 * npix);
  up.feature.resize(npix * 4);
  up.alpha.resize(npix);
  for (auto *v : {&up.rgb, &up.feature, &up.alpha})
    for (auto &x : *v)
      x = g.uniform(-1.0, 1.0);

  struct Eval {
    double loss;
    std::vector<int> contributors;
  };
  const auto eval = [&](const GaussianSet &s) {
    const auto out = render<double>(s, cam, cfg);
    double l = 0;
    for (std::size_t i = 0; i < out.rgb.size(); ++i)
      l += up.rgb[i] * out.rgb[i];
    for (std::size_t i = 0; i < out.feature.size(); ++i)
      l += up.feature[i] * out.feature[i];
    for (std::size_t i = 0; i < out.alpha.size(); ++i)
      l += up.alpha[i] * out.alpha[i];
    return Eval{l, out.contributors};
  };
  const auto analytic = render_backward<double>(base, cam, cfg, up);
  const auto base_contrib = eval(base).contributors;

  GradCheckReport rep;
  const char *names[] = {"position", "log_scale", "rotation", "opacity_logit", "color_sh", "feature"};
  int gi = 0;
  for (ParamGroup group : kAllParamGroups) {
    const auto &grad = analytic.params.group(group);
    for (std::size_t k = 0; k < base.group(group).size(); ++k) {
      bool done = false;
      for (double h = 1e-6; h >= 1e-9 && !done; h *= 0.1) {
        GaussianSet plus = base, minus = base;
        plus.group(group)[k] += h;
        minus.group(group)[k] -= h;
        const auto ep = eval(plus), em = eval(minus);
        // A probe that changes which splats composite at some pixel crosses a discontinuity of the image.
        if (ep.contributors != base_contrib || em.contributors != base_contrib) {
          if (h == 1e-6)
            ++rep.reprobed;
          continue;
        }
        const double numeric = (ep.loss - em.loss) / (2 * h);
        const double a = grad[k];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
        if (rel > rep.worst_relative_error) {
          rep.worst_relative_error = rel;
          rep.worst_location = std::string(names[gi]) + "[" + std::to_string(k) + "] analytic=" +
                               std::to_string(a) + " numeric=" + std::to_string(numeric);
        }
        ++rep.checked;
        done = true;
      }
      if (!done)
        ++rep.undefined;
    }
    ++gi;
  }
  return rep;
}

fs::path cli_path() { return FEATSPLAT_CLI_PATH; }

} // namespace testsupport
