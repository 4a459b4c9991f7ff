#include "featsplat/query.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "featsplat/error.hpp"

namespace featsplat::query {

using nlohmann::json;

std::string PointPrompt::to_json() const {
  json j = {{"view_id", view_id}, {"prompt_label", prompt_label}, {"x", x},           {"y", y},
            {"score", score},     {"image_width", image_width},   {"image_height", image_height},
            {"source", source}};
  return j.dump(2) + "\n";
}

PointPrompt PointPrompt::from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    PointPrompt p;
    p.view_id = j.at("view_id").get<std::string>();
    p.prompt_label = j.at("prompt_label").get<std::string>();
    p.x = j.at("x").get<int>();
    p.y = j.at("y").get<int>();
    p.score = j.at("score").get<double>();
    p.image_width = j.at("image_width").get<int>();
    p.image_height = j.at("image_height").get<int>();
    p.source = j.value("source", std::string("lseg_argmax"));
    if (p.x < 0 || p.y < 0 || p.x >= p.image_width || p.y >= p.image_height)
      throw Error(ErrorKind::MalformedRecord, "point prompt lies outside its image");
    return p;
  } catch (const json::exception &e) {
    throw Error(ErrorKind::MalformedRecord, std::string("point prompt: ") + e.what());
  }
}

QueryHeatmap cosine_heatmap(const FeatureMap &feature, const TextEmbedding &prompt, double eps) {
  if (feature.dim != prompt.dim())
    throw Error(ErrorKind::DimMismatch,
                "feature dim " + std::to_string(feature.dim) + " vs prompt dim " + std::to_string(prompt.dim()));
  QueryHeatmap h;
  h.width = feature.width;
  h.height = feature.height;
  h.prompt_label = prompt.label;
  h.raw.resize(feature.pixel_count());
  h.normalized.resize(feature.pixel_count());
  const double tnorm = prompt.norm();
  const auto dim = static_cast<std::size_t>(feature.dim);
  for (std::size_t p = 0; p < feature.pixel_count(); ++p) {
    const float *f = &feature.data[p * dim];
    double dot = 0, ff = 0;
    for (std::size_t k = 0; k < dim; ++k) {
      dot += static_cast<double>(f[k]) * prompt.vector[k];
      ff += static_cast<double>(f[k]) * f[k];
    }
    const double fnorm = std::sqrt(ff);
    // eps only guards the division; adding it to the denominator would break scale invariance
    // for short feature vectors.
    const double raw = fnorm < eps ? 0.0 : std::clamp(dot / std::max(fnorm * tnorm, eps), -1.0, 1.0);
    h.raw[p] = raw;
    h.normalized[p] = (raw + 1.0) / 2.0;
  }
  return h;
}

BinaryMask threshold_mask(const QueryHeatmap &heatmap, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0))
    throw Error(ErrorKind::InvalidArgument, "tau must lie in [0,1]");
  BinaryMask m;
  static_cast<Mask &>(m) = Mask(heatmap.width, heatmap.height);
  m.threshold_used = tau;
  for (std::size_t p = 0; p < heatmap.normalized.size(); ++p)
    m.bits[p] = heatmap.normalized[p] >= tau ? 1 : 0;
  return m;
}

PointPrompt argmax_point(const QueryHeatmap &heatmap, std::string view_id) {
  if (heatmap.normalized.empty())
    throw Error(ErrorKind::EmptyInput, "argmax of an empty heatmap");
  // Row-major scan with strict '>' keeps the first (smallest y, then x) maximum.
  std::size_t best = 0;
  for (std::size_t p = 1; p < heatmap.normalized.size(); ++p)
    if (heatmap.normalized[p] > heatmap.normalized[best])
      best = p;
  PointPrompt pt;
  pt.x = static_cast<int>(best % static_cast<std::size_t>(heatmap.width));
  pt.y = static_cast<int>(best / static_cast<std::size_t>(heatmap.width));
  pt.score = heatmap.normalized[best];
  pt.prompt_label = heatmap.prompt_label;
  pt.view_id = std::move(view_id);
  pt.image_width = heatmap.width;
  pt.image_height = heatmap.height;
  return pt;
}

LabelMap label_segmentation(const FeatureMap &feature, std::span<const TextEmbedding> labels) {
  if (labels.empty())
    throw Error(ErrorKind::InvalidArgument, "label_segmentation needs at least one label");
  std::vector<QueryHeatmap> maps;
  maps.reserve(labels.size());
  for (const auto &l : labels)
    maps.push_back(cosine_heatmap(feature, l));
  LabelMap out{feature.width, feature.height, std::vector<int>(feature.pixel_count(), 0)};
  for (std::size_t p = 0; p < out.labels.size(); ++p) {
    int best = 0;
    for (std::size_t k = 1; k < maps.size(); ++k)
      if (maps[k].raw[p] > maps[static_cast<std::size_t>(best)].raw[p])
        best = static_cast<int>(k);
    out.labels[p] = best;
  }
  return out;
}

Image pca_visualize(const FeatureMap &feature) {
  const auto npix = feature.pixel_count();
  if (npix < 3)
    throw Error(ErrorKind::TooSmall, "PCA visualization needs at least 3 pixels");
  const int dim = feature.dim;
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> raw(
      feature.data.data(), static_cast<Eigen::Index>(npix), dim);
  const Eigen::MatrixXd x = raw.cast<double>();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(npix);

  Image out(feature.width, feature.height, 3, 0.5f);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd &values = eig.eigenvalues(); // ascending
  const double top = values(dim - 1);
  if (!(top > 0))
    return out; // all pixels identical

  for (int c = 0; c < std::min(3, dim); ++c) {
    const int idx = dim - 1 - c;
    if (!(values(idx) > 1e-10 * top))
      continue;
    Eigen::VectorXd axis = eig.eigenvectors().col(idx);
    Eigen::Index arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0)
      axis = -axis;
    const Eigen::VectorXd proj = centered * axis;
    const double lo = proj.minCoeff(), hi = proj.maxCoeff();
    if (!(hi - lo > 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)))))
      continue;
    for (std::size_t p = 0; p < npix; ++p)
      out.data[3 * p + c] = static_cast<float>((proj(static_cast<Eigen::Index>(p)) - lo) / (hi - lo));
  }
  return out;
}

Eigen::Vector3f colormap(double value) {
  struct Stop {
    double at;
    float r, g, b;
  };
  static constexpr std::array<Stop, 5> stops = {{{0.0, 0.0f, 0.0f, 0.5f},
                                                 {0.25, 0.0f, 0.5f, 1.0f},
                                                 {0.5, 0.5f, 1.0f, 0.5f},
                                                 {0.75, 1.0f, 0.6f, 0.0f},
                                                 {1.0, 1.0f, 0.0f, 0.0f}}};
  const double v = std::clamp(value, 0.0, 1.0);
  for (std::size_t i = 1; i < stops.size(); ++i) {
    if (v <= stops[i].at) {
      const auto &a = stops[i - 1], &b = stops[i];
      const float t = static_cast<float>((v - a.at) / (b.at - a.at));
      return {a.r + t * (b.r - a.r), a.g + t * (b.g - a.g), a.b + t * (b.b - a.b)};
    }
  }
  return {stops.back().r, stops.back().g, stops.back().b};
}

Image overlay_heatmap(const Image &base, const QueryHeatmap &heatmap) {
  if (base.width != heatmap.width || base.height != heatmap.height || base.channels != 3)
    throw Error(ErrorKind::ShapeMismatch, "overlay: base and heatmap differ");
  Image out = base;
  for (std::size_t p = 0; p < base.pixel_count(); ++p) {
    const auto c = colormap(heatmap.normalized[p]);
    for (int ch = 0; ch < 3; ++ch)
      out.data[3 * p + ch] = 0.5f * base.data[3 * p + ch] + 0.5f * c[ch];
  }
  return out;
}

Image overlay_mask(const Image &base, const Mask &mask) {
  if (base.width != mask.width || base.height != mask.height || base.channels != 3)
    throw Error(ErrorKind::ShapeMismatch, "overlay: base and mask differ");
  Image out = base;
  const float tint[3] = {1.0f, 0.0f, 0.0f};
  for (std::size_t p = 0; p < base.pixel_count(); ++p)
    if (mask.bits[p])
      for (int ch = 0; ch < 3; ++ch)
        out.data[3 * p + ch] = 0.5f * base.data[3 * p + ch] + 0.5f * tint[ch];
  return out;
}

} // namespace featsplat::query
