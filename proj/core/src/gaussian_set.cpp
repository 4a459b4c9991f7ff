#include "featsplat/gaussian_set.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "featsplat/binary_io.hpp"
#include "featsplat/error.hpp"

namespace featsplat {

GaussianSet::GaussianSet(std::size_t count, int feature_dim, int sh_degree)
    : feature_dim_(feature_dim), sh_degree_(sh_degree) {
  if (feature_dim < 1)
    throw Error(ErrorKind::InvalidArgument, "feature_dim must be >= 1");
  if (sh_degree < 0 || sh_degree > 3)
    throw Error(ErrorKind::InvalidArgument, "sh_degree must be in [0,3]");
  positions.assign(count * 3, 0.0);
  log_scales.assign(count * 3, 0.0);
  rotations.assign(count * 4, 0.0);
  for (std::size_t i = 0; i < count; ++i)
    rotations[4 * i] = 1.0;
  opacity_logits.assign(count, 0.0);
  colors_sh.assign(count * 3 * static_cast<std::size_t>(sh_coeffs()), 0.0);
  features.assign(count * static_cast<std::size_t>(feature_dim), 0.0);
}

std::size_t GaussianSet::stride(ParamGroup g) const {
  switch (g) {
  case ParamGroup::Position: return 3;
  case ParamGroup::LogScale: return 3;
  case ParamGroup::Rotation: return 4;
  case ParamGroup::OpacityLogit: return 1;
  case ParamGroup::ColorSH: return 3 * static_cast<std::size_t>(sh_coeffs());
  case ParamGroup::Feature: return static_cast<std::size_t>(feature_dim_);
  }
  return 0;
}

std::vector<double> &GaussianSet::group(ParamGroup g) {
  return const_cast<std::vector<double> &>(static_cast<const GaussianSet &>(*this).group(g));
}

const std::vector<double> &GaussianSet::group(ParamGroup g) const {
  switch (g) {
  case ParamGroup::Position: return positions;
  case ParamGroup::LogScale: return log_scales;
  case ParamGroup::Rotation: return rotations;
  case ParamGroup::OpacityLogit: return opacity_logits;
  case ParamGroup::ColorSH: return colors_sh;
  case ParamGroup::Feature: return features;
  }
  return positions;
}

void GaussianSet::validate() const {
  const auto n = size();
  for (auto g : kAllParamGroups) {
    const auto &v = group(g);
    if (v.size() != n * stride(g))
      throw Error(ErrorKind::InvalidArgument, "parameter array size mismatch");
    for (std::size_t k = 0; k < v.size(); ++k)
      if (!std::isfinite(v[k]))
        throw Error(ErrorKind::NonFiniteParameter, "gaussian " + std::to_string(k / stride(g)));
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!(rotation(i).squaredNorm() > 0))
      throw Error(ErrorKind::NonFiniteParameter, "gaussian " + std::to_string(i) + " has zero rotation");
}

GaussianSet GaussianSet::gather(std::span<const std::size_t> indices) const {
  GaussianSet out(0, feature_dim_, sh_degree_);
  for (auto g : kAllParamGroups) {
    const auto s = stride(g);
    const auto &src = group(g);
    auto &dst = out.group(g);
    dst.reserve(indices.size() * s);
    for (auto i : indices)
      dst.insert(dst.end(), src.begin() + static_cast<std::ptrdiff_t>(i * s),
                 src.begin() + static_cast<std::ptrdiff_t>((i + 1) * s));
  }
  return out;
}

void GaussianSet::append(const GaussianSet &other) {
  if (other.feature_dim_ != feature_dim_ || other.sh_degree_ != sh_degree_)
    throw Error(ErrorKind::DimMismatch, "append: incompatible Gaussian sets");
  for (auto g : kAllParamGroups) {
    const auto &src = other.group(g);
    group(g).insert(group(g).end(), src.begin(), src.end());
  }
}

void InitConfig::validate() const {
  if (knn_k < 1)
    throw Error(ErrorKind::InvalidArgument, "knn_k must be >= 1");
  if (!(opacity_init > 0.0 && opacity_init < 1.0))
    throw Error(ErrorKind::InvalidArgument, "opacity_init must be in (0,1)");
  if (sh_degree < 0 || sh_degree > 3)
    throw Error(ErrorKind::InvalidArgument, "sh_degree must be in [0,3]");
  if (feature_dim < 1)
    throw Error(ErrorKind::InvalidArgument, "feature_dim must be >= 1");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

GaussianSet init_from_sparse(const SparsePoints &points, const InitConfig &cfg) {
  cfg.validate();
  const auto n = points.size();
  if (n == 0)
    throw Error(ErrorKind::EmptyPointCloud, "init_from_sparse needs at least one point");

  GaussianSet set(n, cfg.feature_dim, cfg.sh_degree);
  const double min_log_scale = std::log(1e-7);
  std::vector<double> dists;
  dists.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    set.position(i) = points.positions[i];

    // Exact brute-force kNN.
    dists.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i)
        dists.push_back((points.positions[j] - points.positions[i]).norm());
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(cfg.knn_k), dists.size());
    double log_scale;
    if (k == 0) {
      log_scale = std::log(0.1);
    } else {
      std::partial_sort(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(k), dists.end());
      double mean = 0.0;
      for (std::size_t m = 0; m < k; ++m)
        mean += dists[m];
      mean /= static_cast<double>(k);
      log_scale = mean > 0 ? std::max(std::log(mean), min_log_scale) : min_log_scale;
    }
    set.log_scale(i).setConstant(log_scale);

    for (int c = 0; c < 3; ++c)
      set.sh(i, c, 0) = (points.colors[i][c] - 0.5) / kSH0;
    set.opacity_logits[i] = logit(cfg.opacity_init);
  }

  if (cfg.feature_init == FeatureInit::GaussianNoise) {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, cfg.feature_noise_sigma);
    for (auto &f : set.features)
      f = noise(rng);
  }
  return set;
}

ActivatedGaussians activated_view(const GaussianSet &set) {
  ActivatedGaussians out;
  const auto n = set.size();
  out.scales.reserve(n);
  out.opacities.reserve(n);
  out.rotations.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.scales.push_back(set.log_scale(i).array().exp());
    out.opacities.push_back(sigmoid(set.opacity_logits[i]));
    out.rotations.push_back(set.rotation(i).normalized());
  }
  return out;
}

Eigen::Matrix3d quaternion_to_matrix(const Eigen::Vector4d &q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Eigen::Matrix3d covariance3d(const Eigen::Vector3d &scale, const Eigen::Vector4d &unit_q) {
  const Eigen::Matrix3d m = quaternion_to_matrix(unit_q) * scale.asDiagonal();
  Eigen::Matrix3d sigma = m * m.transpose();
  // Exact symmetry regardless of rounding in the product.
  return 0.5 * (sigma + sigma.transpose());
}

namespace {

constexpr char kMagic[4] = {'G', 'S', 'P', 'L'};
constexpr std::uint32_t kVersion = 1;

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const GaussianSet &set) {
  ByteWriter header;
  header.write_string({kMagic, 4});
  header.write<std::uint32_t>(kVersion);
  header.write<std::uint64_t>(set.size());
  header.write<std::uint32_t>(static_cast<std::uint32_t>(set.feature_dim()));
  header.write<std::uint32_t>(static_cast<std::uint32_t>(set.sh_degree()));

  ByteWriter payload;
  for (auto g : kAllParamGroups)
    for (double v : set.group(g))
      payload.write<float>(static_cast<float>(v));

  auto out = header.take();
  const auto &body = payload.bytes();
  out.insert(out.end(), body.begin(), body.end());
  const auto crc = crc32(body);
  const auto *p = reinterpret_cast<const std::uint8_t *>(&crc);
  out.insert(out.end(), p, p + sizeof(crc));
  return out;
}

GaussianSet decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.read_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic))
    throw Error(ErrorKind::MalformedRecord, "not a gsplat checkpoint");
  const auto version = r.read<std::uint32_t>();
  if (version != kVersion)
    throw Error(ErrorKind::VersionUnsupported, "checkpoint version " + std::to_string(version));
  const auto n = r.read<std::uint64_t>();
  const auto f = r.read<std::uint32_t>();
  const auto sh = r.read<std::uint32_t>();
  if (f < 1 || sh > 3)
    throw Error(ErrorKind::VersionUnsupported, "invalid checkpoint header");
  const std::uint64_t per_gaussian = 3 + 3 + 4 + 1 + 3ull * (sh + 1) * (sh + 1) + f;
  if (n > r.remaining() / (per_gaussian * sizeof(float)))
    throw Error(ErrorKind::TruncatedFile, "checkpoint payload");
  const auto payload = r.read_bytes(static_cast<std::size_t>(n * per_gaussian * sizeof(float)));
  const auto stored_crc = r.read<std::uint32_t>();
  if (!r.at_end())
    throw Error(ErrorKind::MalformedRecord, "trailing bytes in checkpoint");
  if (crc32(payload) != stored_crc)
    throw Error(ErrorKind::ChecksumMismatch, "checkpoint payload");

  GaussianSet set(static_cast<std::size_t>(n), static_cast<int>(f), static_cast<int>(sh));
  ByteReader pr(payload);
  for (auto g : kAllParamGroups)
    for (double &v : set.group(g))
      v = static_cast<double>(pr.read<float>());
  set.validate();
  return set;
}

void save_checkpoint(const std::filesystem::path &path, const GaussianSet &set) {
  write_file_atomic(path, encode_checkpoint(set));
}

GaussianSet load_checkpoint(const std::filesystem::path &path) { return decode_checkpoint(read_file(path)); }

} // namespace featsplat
