#include "featsplat/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "featsplat/error.hpp"

namespace featsplat::metrics {

namespace {

void require_same(const Image &a, const Image &b) {
  if (!a.same_shape(b))
    throw Error(ErrorKind::ShapeMismatch, "images differ in shape");
}

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> w{};
  double sum = 0;
  constexpr int half = kSsimWindow / 2;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - half;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (auto &v : w)
    v /= sum;
  return w;
}

/// Half-sample symmetric index (d c b a | a b c d).
int reflect(int i, int n) {
  if (i < 0)
    return -i - 1;
  if (i >= n)
    return 2 * n - i - 1;
  return i;
}

/// Single-channel planar buffer.
struct Plane {
  int w, h;
  std::vector<double> v;
  Plane(int w_, int h_) : w(w_), h(h_), v(static_cast<std::size_t>(w_) * h_, 0.0) {}
  double &operator()(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
  double operator()(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane blur(const Plane &in) {
  static const auto win = gaussian_window();
  constexpr int half = kSsimWindow / 2;
  Plane tmp(in.w, in.h), out(in.w, in.h);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double s = 0;
      for (int k = -half; k <= half; ++k)
        s += win[static_cast<std::size_t>(k + half)] * in(reflect(x + k, in.w), y);
      tmp(x, y) = s;
    }
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double s = 0;
      for (int k = -half; k <= half; ++k)
        s += win[static_cast<std::size_t>(k + half)] * tmp(x, reflect(y + k, in.h));
      out(x, y) = s;
    }
  return out;
}

/// Adjoint of blur().
Plane blur_adjoint(const Plane &g) {
  static const auto win = gaussian_window();
  constexpr int half = kSsimWindow / 2;
  Plane tmp(g.w, g.h), out(g.w, g.h);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x)
      for (int k = -half; k <= half; ++k)
        tmp(x, reflect(y + k, g.h)) += win[static_cast<std::size_t>(k + half)] * g(x, y);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x)
      for (int k = -half; k <= half; ++k)
        out(reflect(x + k, g.w), y) += win[static_cast<std::size_t>(k + half)] * tmp(x, y);
  return out;
}

Plane channel(const Image &img, int c) {
  Plane p(img.width, img.height);
  for (std::size_t i = 0; i < img.pixel_count(); ++i)
    p.v[i] = img.data[i * img.channels + c];
  return p;
}

double ssim_impl(const Image &a, const Image &b, std::vector<double> *grad_a) {
  require_same(a, b);
  if (std::min(a.width, a.height) < kSsimWindow)
    throw Error(ErrorKind::TooSmall, "SSIM needs images of at least 11x11");
  constexpr double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
  constexpr double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
  const auto npix = a.pixel_count();
  const double norm = 1.0 / static_cast<double>(npix * static_cast<std::size_t>(a.channels));
  if (grad_a)
    grad_a->assign(a.data.size(), 0.0);

  double total = 0;
  for (int c = 0; c < a.channels; ++c) {
    const Plane pa = channel(a, c), pb = channel(b, c);
    Plane aa(a.width, a.height), bb(a.width, a.height), ab(a.width, a.height);
    for (std::size_t i = 0; i < npix; ++i) {
      aa.v[i] = pa.v[i] * pa.v[i];
      bb.v[i] = pb.v[i] * pb.v[i];
      ab.v[i] = pa.v[i] * pb.v[i];
    }
    const Plane mu_a = blur(pa), mu_b = blur(pb), e_aa = blur(aa), e_bb = blur(bb), e_ab = blur(ab);
    Plane d_mu(a.width, a.height), d_eaa(a.width, a.height), d_eab(a.width, a.height);
    for (std::size_t i = 0; i < npix; ++i) {
      const double ma = mu_a.v[i], mb = mu_b.v[i];
      const double n1 = 2 * ma * mb + c1;
      const double n2 = 2 * (e_ab.v[i] - ma * mb) + c2;
      const double d1 = ma * ma + mb * mb + c1;
      const double d2 = (e_aa.v[i] - ma * ma) + (e_bb.v[i] - mb * mb) + c2;
      const double s = (n1 * n2) / (d1 * d2);
      total += s;
      if (grad_a) {
        d_mu.v[i] = norm * s * (2 * mb / n1 - 2 * mb / n2 - 2 * ma / d1 + 2 * ma / d2);
        d_eaa.v[i] = norm * s * (-1.0 / d2);
        d_eab.v[i] = norm * s * (2.0 / n2);
      }
    }
    if (grad_a) {
      const Plane g_mu = blur_adjoint(d_mu), g_aa = blur_adjoint(d_eaa), g_ab = blur_adjoint(d_eab);
      for (std::size_t i = 0; i < npix; ++i)
        (*grad_a)[i * a.channels + c] = g_mu.v[i] + 2 * pa.v[i] * g_aa.v[i] + pb.v[i] * g_ab.v[i];
    }
  }
  return total * norm;
}

} // namespace

double mse(const Image &a, const Image &b) {
  require_same(a, b);
  if (a.data.empty())
    throw Error(ErrorKind::EmptyInput, "mse of empty images");
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

double psnr(const Image &a, const Image &b) {
  const double m = mse(a, b);
  if (m == 0.0)
    return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / m));
}

double ssim(const Image &a, const Image &b) { return ssim_impl(a, b, nullptr); }

double ssim_with_grad(const Image &a, const Image &b, std::vector<double> &grad_a) {
  return ssim_impl(a, b, &grad_a);
}

std::string MetricReport::to_csv() const {
  const bool with_lpips = std::any_of(per_view.begin(), per_view.end(), [](const auto &v) { return v.lpips; });
  std::ostringstream os;
  os << "view_id,psnr_db,ssim" << (with_lpips ? ",lpips" : "") << '\n';
  char buf[128];
  for (const auto &v : per_view) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f", v.psnr_db, v.ssim);
    os << v.view_id << ',' << buf;
    if (with_lpips) {
      os << ',';
      if (v.lpips) {
        std::snprintf(buf, sizeof(buf), "%.6f", *v.lpips);
        os << buf;
      }
    }
    os << '\n';
  }
  std::snprintf(buf, sizeof(buf), "%.6f,%.6f", mean_psnr_db, mean_ssim);
  os << "mean," << buf << (with_lpips ? "," : "") << '\n';
  return os.str();
}

MetricReport evaluate(const GaussianSet &set, std::span<const EvalView> views, const RenderConfig &cfg) {
  if (views.empty())
    throw Error(ErrorKind::EmptyInput, "evaluate needs at least one test view");
  MetricReport report;
  for (const auto &view : views) {
    if (!view.ground_truth)
      throw Error(ErrorKind::MissingGroundTruth, view.camera.name());
    Image img = render<float>(set, view.camera, cfg).rgb_image();
    for (auto &v : img.data)
      v = std::clamp(v, 0.0f, 1.0f);
    ViewMetric m;
    m.view_id = std::filesystem::path(view.camera.name()).stem().string();
    m.psnr_db = psnr(img, *view.ground_truth);
    m.ssim = ssim(img, *view.ground_truth);
    report.per_view.push_back(m);
  }
  for (const auto &m : report.per_view) {
    report.mean_psnr_db += m.psnr_db;
    report.mean_ssim += m.ssim;
  }
  report.mean_psnr_db /= static_cast<double>(report.per_view.size());
  report.mean_ssim /= static_cast<double>(report.per_view.size());
  return report;
}

} // namespace featsplat::metrics
