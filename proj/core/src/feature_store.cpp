#include "featsplat/feature_store.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <Eigen/Core>

#include "featsplat/binary_io.hpp"
#include "featsplat/error.hpp"
#include "featsplat/log.hpp"

namespace featsplat {

namespace {

constexpr std::uint32_t kFmapVersion = 1;
constexpr std::uint32_t kTembVersion = 1;

void check_magic(ByteReader &r, const char (&magic)[5], const char *what) {
  const auto m = r.read_bytes(4);
  if (!std::equal(m.begin(), m.end(), magic))
    throw Error(ErrorKind::MalformedRecord, std::string("bad magic, not a ") + what + " file");
}

void write_prefixed_string(ByteWriter &w, const std::string &s) {
  if (s.size() > 0xFFFF)
    throw Error(ErrorKind::InvalidArgument, "string too long for u16 length prefix");
  w.write<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
  w.write_string(s);
}

std::string read_prefixed_string(ByteReader &r) {
  const auto n = r.read<std::uint16_t>();
  const auto b = r.read_bytes(n);
  return {b.begin(), b.end()};
}

// The trailer covers every byte before it, header included.
void append_crc(std::vector<std::uint8_t> &out) {
  const auto crc = crc32(out);
  const auto *p = reinterpret_cast<const std::uint8_t *>(&crc);
  out.insert(out.end(), p, p + sizeof(crc));
}

} // namespace

void FeatureMap::validate() const {
  if (dim < 1 || height < 1 || width < 1)
    throw Error(ErrorKind::InvalidArgument, "feature map dims must be positive");
  if (data.size() != pixel_count() * static_cast<std::size_t>(dim))
    throw Error(ErrorKind::ShapeMismatch, "feature map data size");
  for (float v : data)
    if (!std::isfinite(v))
      throw Error(ErrorKind::NonFiniteValue, "feature map value");
}

double TextEmbedding::norm() const {
  double s = 0;
  for (float v : vector)
    s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

namespace fmap {

std::vector<std::uint8_t> encode(const FeatureMap &map, FeatureDtype dtype) {
  map.validate();
  ByteWriter w;
  w.write_string("FMAP");
  w.write<std::uint32_t>(kFmapVersion);
  w.write<std::uint32_t>(static_cast<std::uint32_t>(map.height));
  w.write<std::uint32_t>(static_cast<std::uint32_t>(map.width));
  w.write<std::uint32_t>(static_cast<std::uint32_t>(map.dim));
  w.write<std::uint8_t>(static_cast<std::uint8_t>(dtype));
  write_prefixed_string(w, map.source_tag);
  if (dtype == FeatureDtype::F32) {
    for (float v : map.data)
      w.write<float>(v);
  } else {
    for (float v : map.data)
      w.write<std::uint16_t>(Eigen::numext::bit_cast<std::uint16_t>(Eigen::half(v)));
  }
  auto out = w.take();
  append_crc(out);
  return out;
}

FeatureMap decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  check_magic(r, "FMAP", "FMAP");
  const auto version = r.read<std::uint32_t>();
  if (version != kFmapVersion)
    throw Error(ErrorKind::VersionUnsupported, "FMAP version " + std::to_string(version));
  FeatureMap map;
  map.height = static_cast<int>(r.read<std::uint32_t>());
  map.width = static_cast<int>(r.read<std::uint32_t>());
  map.dim = static_cast<int>(r.read<std::uint32_t>());
  const auto dtype = r.read<std::uint8_t>();
  if (map.height < 1 || map.width < 1 || map.dim < 1)
    throw Error(ErrorKind::MalformedRecord, "FMAP header declares an empty dimension");
  if (dtype > 1)
    throw Error(ErrorKind::VersionUnsupported, "FMAP dtype " + std::to_string(dtype));
  map.source_tag = read_prefixed_string(r);
  const std::size_t elem = dtype == 0 ? 4 : 2;
  // Divide rather than multiply so absurd headers cannot overflow.
  std::size_t budget = r.remaining() / elem;
  for (const int d : {map.height, map.width, map.dim}) {
    if (static_cast<std::size_t>(d) > budget)
      throw Error(ErrorKind::TruncatedFile, "FMAP payload");
    budget /= static_cast<std::size_t>(d);
  }
  const std::size_t count = map.pixel_count() * static_cast<std::size_t>(map.dim);
  if (count > r.remaining() / elem)
    throw Error(ErrorKind::TruncatedFile, "FMAP payload");
  const auto payload = r.read_bytes(count * elem);
  const auto covered = bytes.first(r.offset());
  const auto stored = r.read<std::uint32_t>();
  if (!r.at_end())
    throw Error(ErrorKind::MalformedRecord, "trailing bytes after FMAP checksum");
  if (crc32(covered) != stored)
    throw Error(ErrorKind::ChecksumMismatch, "FMAP");
  ByteReader pr(payload);
  map.data.resize(count);
  for (auto &v : map.data)
    v = dtype == 0 ? pr.read<float>()
                   : static_cast<float>(Eigen::numext::bit_cast<Eigen::half>(pr.read<std::uint16_t>()));
  for (float v : map.data)
    if (!std::isfinite(v))
      throw Error(ErrorKind::NonFiniteValue, "FMAP payload");
  return map;
}

void write(const FeatureMap &map, const std::filesystem::path &path, FeatureDtype dtype) {
  write_file_atomic(path, encode(map, dtype));
}

FeatureMap read(const std::filesystem::path &path) { return decode(read_file(path)); }

} // namespace fmap

namespace temb {

std::vector<std::uint8_t> encode(const TextEmbedding &emb) {
  if (emb.vector.empty())
    throw Error(ErrorKind::InvalidArgument, "empty embedding");
  ByteWriter w;
  w.write_string("TEMB");
  w.write<std::uint32_t>(kTembVersion);
  w.write<std::uint32_t>(static_cast<std::uint32_t>(emb.vector.size()));
  write_prefixed_string(w, emb.label);
  for (float v : emb.vector)
    w.write<float>(v);
  auto out = w.take();
  append_crc(out);
  return out;
}

TextEmbedding decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  check_magic(r, "TEMB", "TEMB");
  const auto version = r.read<std::uint32_t>();
  if (version != kTembVersion)
    throw Error(ErrorKind::VersionUnsupported, "TEMB version " + std::to_string(version));
  const auto dim = r.read<std::uint32_t>();
  if (dim < 1)
    throw Error(ErrorKind::MalformedRecord, "TEMB header declares dim=0");
  TextEmbedding emb;
  emb.label = read_prefixed_string(r);
  if (dim > r.remaining() / 4)
    throw Error(ErrorKind::TruncatedFile, "TEMB payload");
  const auto payload = r.read_bytes(dim * 4u);
  const auto covered = bytes.first(r.offset());
  const auto stored = r.read<std::uint32_t>();
  if (!r.at_end())
    throw Error(ErrorKind::MalformedRecord, "trailing bytes after TEMB checksum");
  if (crc32(covered) != stored)
    throw Error(ErrorKind::ChecksumMismatch, "TEMB");
  ByteReader pr(payload);
  emb.vector.resize(dim);
  for (auto &v : emb.vector)
    v = pr.read<float>();
  const double n = emb.norm();
  if (!std::isfinite(n))
    throw Error(ErrorKind::NonFiniteValue, "TEMB vector");
  if (std::abs(n - 1.0) > 1e-5)
    log::warn("embedding '" + emb.label + "' has norm " + std::to_string(n));
  return emb;
}

void write(const TextEmbedding &emb, const std::filesystem::path &path) { write_file_atomic(path, encode(emb)); }

TextEmbedding read(const std::filesystem::path &path) { return decode(read_file(path)); }

} // namespace temb

FeatureMap resize_bilinear(const FeatureMap &map, int new_h, int new_w) {
  if (new_h < 1 || new_w < 1)
    throw Error(ErrorKind::InvalidArgument, "resize target must be at least 1x1");
  if (new_h == map.height && new_w == map.width)
    return map;
  FeatureMap out(new_h, new_w, map.dim, map.source_tag);
  struct Tap {
    int i0, i1;
    double t;
  };
  auto taps = [](int out_n, int in_n) {
    std::vector<Tap> v(static_cast<std::size_t>(out_n));
    const double scale = static_cast<double>(in_n) / out_n;
    for (int o = 0; o < out_n; ++o) {
      double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in_n - 1));
      const int i0 = static_cast<int>(std::floor(src));
      v[o] = {i0, std::min(i0 + 1, in_n - 1), src - i0};
    }
    return v;
  };
  const auto ty = taps(new_h, map.height);
  const auto tx = taps(new_w, map.width);
  for (int y = 0; y < new_h; ++y) {
    for (int x = 0; x < new_w; ++x) {
      const auto a = map.pixel(tx[x].i0, ty[y].i0), b = map.pixel(tx[x].i1, ty[y].i0);
      const auto c = map.pixel(tx[x].i0, ty[y].i1), d = map.pixel(tx[x].i1, ty[y].i1);
      auto o = out.pixel(x, y);
      const double u = tx[x].t, v = ty[y].t;
      for (int k = 0; k < map.dim; ++k) {
        const double top = a[k] * (1 - u) + b[k] * u;
        const double bot = c[k] * (1 - u) + d[k] * u;
        o[k] = static_cast<float>(top * (1 - v) + bot * v);
      }
    }
  }
  return out;
}

std::vector<int> palette_assignment(const Image &rgb, std::span<const PaletteEntry> palette) {
  if (palette.empty())
    throw Error(ErrorKind::InvalidArgument, "empty palette");
  if (rgb.channels != 3)
    throw Error(ErrorKind::ShapeMismatch, "palette assignment needs an RGB image");
  std::vector<int> out(rgb.pixel_count());
  for (std::size_t p = 0; p < out.size(); ++p) {
    const Eigen::Vector3f c(rgb.data[3 * p], rgb.data[3 * p + 1], rgb.data[3 * p + 2]);
    int best = 0;
    float best_d = (c - palette[0].color).squaredNorm();
    for (std::size_t k = 1; k < palette.size(); ++k) {
      const float d = (c - palette[k].color).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    out[p] = best;
  }
  return out;
}

FeatureMap synth_features(const Image &rgb, std::span<const PaletteEntry> palette, std::string source_tag) {
  if (palette.empty())
    throw Error(ErrorKind::InvalidArgument, "empty palette");
  const auto dim = palette[0].embedding.size();
  for (const auto &e : palette)
    if (e.embedding.size() != dim || dim == 0)
      throw Error(ErrorKind::DimMismatch, "palette embeddings differ in dimension");
  const auto assign = palette_assignment(rgb, palette);
  FeatureMap map(rgb.height, rgb.width, static_cast<int>(dim), std::move(source_tag));
  for (std::size_t p = 0; p < assign.size(); ++p)
    std::copy(palette[assign[p]].embedding.begin(), palette[assign[p]].embedding.end(), map.data.begin() + p * dim);
  return map;
}

std::filesystem::path feature_path(const std::filesystem::path &project, const std::string &backbone,
                                   const std::string &image_name) {
  auto stem = std::filesystem::path(image_name).replace_extension(".fmap");
  return project / "features" / backbone / stem;
}

std::string slugify(std::string_view label) {
  std::string out;
  for (char ch : label) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c))
      out.push_back(static_cast<char>(std::tolower(c)));
    else if (!out.empty() && out.back() != '_')
      out.push_back('_');
  }
  while (!out.empty() && out.back() == '_')
    out.pop_back();
  return out.empty() ? "prompt" : out;
}

} // namespace featsplat
