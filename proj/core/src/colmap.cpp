#include "featsplat/colmap.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include <Eigen/Geometry>

#include "featsplat/binary_io.hpp"
#include "featsplat/error.hpp"
#include "featsplat/log.hpp"

namespace featsplat {

namespace {

struct ModelInfo {
  int id;
  const char *name;
  int num_params;
};

// Full COLMAP table so unsupported models are reported by name.
constexpr ModelInfo kModels[] = {
    {0, "SIMPLE_PINHOLE", 3}, {1, "PINHOLE", 4},           {2, "SIMPLE_RADIAL", 4},          {3, "RADIAL", 5},
    {4, "OPENCV", 8},         {5, "OPENCV_FISHEYE", 8},    {6, "FULL_OPENCV", 12},           {7, "FOV", 5},
    {8, "SIMPLE_RADIAL_FISHEYE", 4}, {9, "RADIAL_FISHEYE", 5}, {10, "THIN_PRISM_FISHEYE", 12},
};

std::string model_name_for_id(int id) {
  for (const auto &m : kModels)
    if (m.id == id)
      return m.name;
  return "model_id=" + std::to_string(id);
}

CameraModel supported_model_from_name(std::string_view name) {
  if (name == "SIMPLE_PINHOLE")
    return CameraModel::SimplePinhole;
  if (name == "PINHOLE")
    return CameraModel::Pinhole;
  if (name == "SIMPLE_RADIAL")
    return CameraModel::SimpleRadial;
  throw Error(ErrorKind::UnsupportedCameraModel, std::string(name));
}

int param_count(CameraModel m) { return m == CameraModel::Pinhole || m == CameraModel::SimpleRadial ? 4 : 3; }

CameraIntrinsics make_camera(int id, CameraModel model, std::uint64_t width, std::uint64_t height,
                             std::span<const double> p, const std::string &where) {
  CameraIntrinsics cam;
  cam.camera_id = id;
  cam.model = model;
  cam.width = static_cast<int>(width);
  cam.height = static_cast<int>(height);
  switch (model) {
  case CameraModel::SimplePinhole:
    cam.fx = cam.fy = p[0];
    cam.cx = p[1];
    cam.cy = p[2];
    break;
  case CameraModel::Pinhole:
    cam.fx = p[0];
    cam.fy = p[1];
    cam.cx = p[2];
    cam.cy = p[3];
    break;
  case CameraModel::SimpleRadial:
    cam.fx = cam.fy = p[0];
    cam.cx = p[1];
    cam.cy = p[2];
    cam.radial_k1 = p[3];
    break;
  }
  for (double v : p)
    if (!std::isfinite(v))
      throw Error(ErrorKind::NonFiniteValue, "camera " + std::to_string(id) + " at " + where);
  try {
    cam.validate();
  } catch (const Error &e) {
    throw Error(ErrorKind::MalformedRecord, e.detail() + " at " + where);
  }
  if (std::abs(cam.radial_k1) > 1e-6)
    log::warn("camera " + std::to_string(id) + " has radial distortion k1=" + std::to_string(cam.radial_k1) +
              "; images are treated as undistorted");
  return cam;
}

void normalize_pose(CameraPose &pose, const std::string &where) {
  const double vals[] = {pose.qw, pose.qx, pose.qy, pose.qz, pose.tx, pose.ty, pose.tz};
  for (double v : vals)
    if (!std::isfinite(v))
      throw Error(ErrorKind::NonFiniteValue, "image " + std::to_string(pose.image_id) + " at " + where);
  const double n = std::sqrt(pose.qw * pose.qw + pose.qx * pose.qx + pose.qy * pose.qy + pose.qz * pose.qz);
  if (!(n > 0))
    throw Error(ErrorKind::MalformedRecord, "zero quaternion for image " + std::to_string(pose.image_id));
  // Already unit up to rounding: leave the bits alone so write/parse cycles are exact.
  if (std::abs(n - 1.0) <= 8 * std::numeric_limits<double>::epsilon())
    return;
  pose.qw /= n;
  pose.qx /= n;
  pose.qy /= n;
  pose.qz /= n;
}

// ---- text helpers ----

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos)
    return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t'))
      ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t')
      ++j;
    if (j > i)
      out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T> T parse_num(std::string_view tok, int line) {
  T value{};
  const auto *end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, value);
  if (ec != std::errc() || ptr != end)
    throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line) + ": bad number '" + std::string(tok) + "'");
  return value;
}

/// Splits into lines, keeping 1-based line numbers.
struct TextLines {
  std::vector<std::string_view> lines;
  explicit TextLines(std::span<const std::uint8_t> bytes) {
    std::string_view text(reinterpret_cast<const char *>(bytes.data()), bytes.size());
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto nl = text.find('\n', start);
      if (nl == std::string_view::npos) {
        if (start < text.size())
          lines.push_back(text.substr(start));
        break;
      }
      lines.push_back(text.substr(start, nl - start));
      start = nl + 1;
    }
  }
};

bool is_skippable(std::string_view line) {
  line = trim(line);
  return line.empty() || line.front() == '#';
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<CameraIntrinsics> parse_cameras_text(std::span<const std::uint8_t> bytes) {
  std::vector<CameraIntrinsics> out;
  TextLines text(bytes);
  for (std::size_t i = 0; i < text.lines.size(); ++i) {
    const int line_no = static_cast<int>(i) + 1;
    if (is_skippable(text.lines[i]))
      continue;
    const auto tok = split_ws(trim(text.lines[i]));
    if (tok.size() < 4)
      throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line_no) + ": expected camera record");
    const int id = parse_num<int>(tok[0], line_no);
    const auto model = supported_model_from_name(tok[1]);
    const auto w = parse_num<std::uint64_t>(tok[2], line_no);
    const auto h = parse_num<std::uint64_t>(tok[3], line_no);
    const auto n = static_cast<std::size_t>(param_count(model));
    if (tok.size() != 4 + n)
      throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line_no) + ": expected " + std::to_string(n) +
                                                  " parameters for " + std::string(tok[1]));
    std::vector<double> params;
    for (std::size_t k = 0; k < n; ++k)
      params.push_back(parse_num<double>(tok[4 + k], line_no));
    out.push_back(make_camera(id, model, w, h, params, "line " + std::to_string(line_no)));
  }
  return out;
}

std::vector<CameraIntrinsics> parse_cameras_binary(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto count = r.read<std::uint64_t>();
  std::vector<CameraIntrinsics> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto offset = r.offset();
    const auto id = r.read<std::uint32_t>();
    const auto model_id = r.read<std::int32_t>();
    const auto w = r.read<std::uint64_t>();
    const auto h = r.read<std::uint64_t>();
    const auto model = supported_model_from_name(model_name_for_id(model_id));
    std::vector<double> params(static_cast<std::size_t>(param_count(model)));
    for (auto &p : params)
      p = r.read<double>();
    out.push_back(make_camera(static_cast<int>(id), model, w, h, params, "offset " + std::to_string(offset)));
  }
  if (!r.at_end())
    throw Error(ErrorKind::MalformedRecord, "trailing bytes at offset " + std::to_string(r.offset()));
  return out;
}

std::vector<CameraPose> parse_images_text(std::span<const std::uint8_t> bytes) {
  std::vector<CameraPose> out;
  TextLines text(bytes);
  for (std::size_t i = 0; i < text.lines.size(); ++i) {
    const int line_no = static_cast<int>(i) + 1;
    if (is_skippable(text.lines[i]))
      continue;
    const auto tok = split_ws(trim(text.lines[i]));
    if (tok.size() < 10)
      throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line_no) + ": expected image record");
    CameraPose pose;
    pose.image_id = parse_num<int>(tok[0], line_no);
    pose.qw = parse_num<double>(tok[1], line_no);
    pose.qx = parse_num<double>(tok[2], line_no);
    pose.qy = parse_num<double>(tok[3], line_no);
    pose.qz = parse_num<double>(tok[4], line_no);
    pose.tx = parse_num<double>(tok[5], line_no);
    pose.ty = parse_num<double>(tok[6], line_no);
    pose.tz = parse_num<double>(tok[7], line_no);
    pose.camera_id = parse_num<int>(tok[8], line_no);
    // Names may contain spaces; everything after the camera id is the name.
    const auto rest = trim(text.lines[i]);
    const auto name_start = static_cast<std::size_t>(tok[9].data() - rest.data());
    pose.image_name = std::string(trim(rest.substr(name_start)));
    normalize_pose(pose, "line " + std::to_string(line_no));
    out.push_back(std::move(pose));
    ++i; // 2D observations line, discarded
  }
  std::sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.image_id < b.image_id; });
  return out;
}

std::vector<CameraPose> parse_images_binary(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto count = r.read<std::uint64_t>();
  std::vector<CameraPose> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto offset = r.offset();
    CameraPose pose;
    pose.image_id = static_cast<int>(r.read<std::uint32_t>());
    pose.qw = r.read<double>();
    pose.qx = r.read<double>();
    pose.qy = r.read<double>();
    pose.qz = r.read<double>();
    pose.tx = r.read<double>();
    pose.ty = r.read<double>();
    pose.tz = r.read<double>();
    pose.camera_id = static_cast<int>(r.read<std::uint32_t>());
    pose.image_name = r.read_cstring();
    const auto num_points2d = r.read<std::uint64_t>();
    constexpr std::uint64_t kObsBytes = 2 * sizeof(double) + sizeof(std::uint64_t);
    if (num_points2d > r.remaining() / kObsBytes)
      throw Error(ErrorKind::TruncatedFile, "image " + std::to_string(pose.image_id) + " observations");
    r.read_bytes(static_cast<std::size_t>(num_points2d * kObsBytes));
    normalize_pose(pose, "offset " + std::to_string(offset));
    out.push_back(std::move(pose));
  }
  if (!r.at_end())
    throw Error(ErrorKind::MalformedRecord, "trailing bytes at offset " + std::to_string(r.offset()));
  std::sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.image_id < b.image_id; });
  return out;
}

void check_point(const Eigen::Vector3d &p, std::uint64_t id) {
  if (!p.allFinite())
    throw Error(ErrorKind::NonFiniteValue, "point " + std::to_string(id));
}

SparsePoints parse_points_text(std::span<const std::uint8_t> bytes) {
  SparsePoints out;
  TextLines text(bytes);
  for (std::size_t i = 0; i < text.lines.size(); ++i) {
    const int line_no = static_cast<int>(i) + 1;
    if (is_skippable(text.lines[i]))
      continue;
    const auto tok = split_ws(trim(text.lines[i]));
    if (tok.size() < 8 || (tok.size() - 8) % 2 != 0)
      throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line_no) + ": expected point record");
    const auto id = parse_num<std::uint64_t>(tok[0], line_no);
    Eigen::Vector3d p(parse_num<double>(tok[1], line_no), parse_num<double>(tok[2], line_no),
                      parse_num<double>(tok[3], line_no));
    check_point(p, id);
    Eigen::Vector3d c;
    for (int k = 0; k < 3; ++k) {
      const int v = parse_num<int>(tok[4 + k], line_no);
      if (v < 0 || v > 255)
        throw Error(ErrorKind::MalformedRecord, "line " + std::to_string(line_no) + ": color out of range");
      c[k] = v / 255.0;
    }
    parse_num<double>(tok[7], line_no); // reprojection error, unused
    out.positions.push_back(p);
    out.colors.push_back(c);
    out.point_ids.push_back(id);
  }
  return out;
}

SparsePoints parse_points_binary(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto count = r.read<std::uint64_t>();
  SparsePoints out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto id = r.read<std::uint64_t>();
    Eigen::Vector3d p;
    for (int k = 0; k < 3; ++k)
      p[k] = r.read<double>();
    check_point(p, id);
    Eigen::Vector3d c;
    for (int k = 0; k < 3; ++k)
      c[k] = r.read<std::uint8_t>() / 255.0;
    r.read<double>(); // error
    const auto track_len = r.read<std::uint64_t>();
    constexpr std::uint64_t kTrackBytes = 2 * sizeof(std::uint32_t);
    if (track_len > r.remaining() / kTrackBytes)
      throw Error(ErrorKind::TruncatedFile, "point " + std::to_string(id) + " track");
    r.read_bytes(static_cast<std::size_t>(track_len * kTrackBytes));
    out.positions.push_back(p);
    out.colors.push_back(c);
    out.point_ids.push_back(id);
  }
  if (!r.at_end())
    throw Error(ErrorKind::MalformedRecord, "trailing bytes at offset " + std::to_string(r.offset()));
  return out;
}

std::uint8_t color_byte(double c) { return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0)); }

} // namespace

int colmap_model_id(CameraModel model) {
  switch (model) {
  case CameraModel::SimplePinhole: return 0;
  case CameraModel::Pinhole: return 1;
  case CameraModel::SimpleRadial: return 2;
  }
  return -1;
}

std::string_view colmap_model_name(CameraModel model) {
  switch (model) {
  case CameraModel::SimplePinhole: return "SIMPLE_PINHOLE";
  case CameraModel::Pinhole: return "PINHOLE";
  case CameraModel::SimpleRadial: return "SIMPLE_RADIAL";
  }
  return "";
}

void CameraIntrinsics::validate() const {
  const auto id = std::to_string(camera_id);
  if (width <= 0 || height <= 0)
    throw Error(ErrorKind::MalformedRecord, "camera " + id + ": non-positive image size");
  if (!(fx > 0) || !(fy > 0))
    throw Error(ErrorKind::MalformedRecord, "camera " + id + ": non-positive focal length");
  if (!(cx >= 0 && cx <= width) || !(cy >= 0 && cy <= height))
    throw Error(ErrorKind::MalformedRecord, "camera " + id + ": principal point outside image");
}

Eigen::Matrix3d CameraPose::rotation() const { return Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix(); }

Eigen::Vector3d CameraPose::center() const { return -rotation().transpose() * translation(); }

namespace colmap {

std::vector<CameraIntrinsics> parse_cameras(std::span<const std::uint8_t> bytes, ColmapFormat format) {
  auto cams = format == ColmapFormat::Text ? parse_cameras_text(bytes) : parse_cameras_binary(bytes);
  std::sort(cams.begin(), cams.end(), [](const auto &a, const auto &b) { return a.camera_id < b.camera_id; });
  return cams;
}

std::vector<CameraPose> parse_images(std::span<const std::uint8_t> bytes, ColmapFormat format) {
  return format == ColmapFormat::Text ? parse_images_text(bytes) : parse_images_binary(bytes);
}

SparsePoints parse_points3d(std::span<const std::uint8_t> bytes, ColmapFormat format) {
  return format == ColmapFormat::Text ? parse_points_text(bytes) : parse_points_binary(bytes);
}

std::string write_cameras_text(std::span<const CameraIntrinsics> cameras) {
  std::ostringstream os;
  os << "# Camera list with one line of data per camera:\n"
     << "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n"
     << "# Number of cameras: " << cameras.size() << '\n';
  for (const auto &c : cameras) {
    os << c.camera_id << ' ' << colmap_model_name(c.model) << ' ' << c.width << ' ' << c.height;
    switch (c.model) {
    case CameraModel::SimplePinhole:
      os << ' ' << fmt_double(c.fx) << ' ' << fmt_double(c.cx) << ' ' << fmt_double(c.cy);
      break;
    case CameraModel::Pinhole:
      os << ' ' << fmt_double(c.fx) << ' ' << fmt_double(c.fy) << ' ' << fmt_double(c.cx) << ' ' << fmt_double(c.cy);
      break;
    case CameraModel::SimpleRadial:
      os << ' ' << fmt_double(c.fx) << ' ' << fmt_double(c.cx) << ' ' << fmt_double(c.cy) << ' '
         << fmt_double(c.radial_k1);
      break;
    }
    os << '\n';
  }
  return os.str();
}

std::string write_images_text(std::span<const CameraPose> images) {
  std::ostringstream os;
  os << "# Image list with two lines of data per image:\n"
     << "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
     << "#   POINTS2D[] as (X, Y, POINT3D_ID)\n"
     << "# Number of images: " << images.size() << '\n';
  for (const auto &p : images) {
    os << p.image_id << ' ' << fmt_double(p.qw) << ' ' << fmt_double(p.qx) << ' ' << fmt_double(p.qy) << ' '
       << fmt_double(p.qz) << ' ' << fmt_double(p.tx) << ' ' << fmt_double(p.ty) << ' ' << fmt_double(p.tz) << ' '
       << p.camera_id << ' ' << p.image_name << "\n\n";
  }
  return os.str();
}

std::string write_points3d_text(const SparsePoints &points) {
  std::ostringstream os;
  os << "# 3D point list with one line of data per point:\n"
     << "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n"
     << "# Number of points: " << points.size() << '\n';
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto &p = points.positions[i];
    const auto &c = points.colors[i];
    os << points.point_ids[i] << ' ' << fmt_double(p.x()) << ' ' << fmt_double(p.y()) << ' ' << fmt_double(p.z())
       << ' ' << int(color_byte(c.x())) << ' ' << int(color_byte(c.y())) << ' ' << int(color_byte(c.z())) << " 0\n";
  }
  return os.str();
}

std::vector<std::uint8_t> write_cameras_binary(std::span<const CameraIntrinsics> cameras) {
  ByteWriter w;
  w.write<std::uint64_t>(cameras.size());
  for (const auto &c : cameras) {
    w.write<std::uint32_t>(static_cast<std::uint32_t>(c.camera_id));
    w.write<std::int32_t>(colmap_model_id(c.model));
    w.write<std::uint64_t>(static_cast<std::uint64_t>(c.width));
    w.write<std::uint64_t>(static_cast<std::uint64_t>(c.height));
    switch (c.model) {
    case CameraModel::SimplePinhole:
      for (double v : {c.fx, c.cx, c.cy})
        w.write(v);
      break;
    case CameraModel::Pinhole:
      for (double v : {c.fx, c.fy, c.cx, c.cy})
        w.write(v);
      break;
    case CameraModel::SimpleRadial:
      for (double v : {c.fx, c.cx, c.cy, c.radial_k1})
        w.write(v);
      break;
    }
  }
  return w.take();
}

std::vector<std::uint8_t> write_images_binary(std::span<const CameraPose> images) {
  ByteWriter w;
  w.write<std::uint64_t>(images.size());
  for (const auto &p : images) {
    w.write<std::uint32_t>(static_cast<std::uint32_t>(p.image_id));
    for (double v : {p.qw, p.qx, p.qy, p.qz, p.tx, p.ty, p.tz})
      w.write(v);
    w.write<std::uint32_t>(static_cast<std::uint32_t>(p.camera_id));
    w.write_string(p.image_name);
    w.write<char>('\0');
    w.write<std::uint64_t>(0);
  }
  return w.take();
}

std::vector<std::uint8_t> write_points3d_binary(const SparsePoints &points) {
  ByteWriter w;
  w.write<std::uint64_t>(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    w.write<std::uint64_t>(points.point_ids[i]);
    for (int k = 0; k < 3; ++k)
      w.write<double>(points.positions[i][k]);
    for (int k = 0; k < 3; ++k)
      w.write<std::uint8_t>(color_byte(points.colors[i][k]));
    w.write<double>(0.0);
    w.write<std::uint64_t>(0);
  }
  return w.take();
}

void write_model(const std::filesystem::path &dir, std::span<const CameraIntrinsics> cameras,
                 std::span<const CameraPose> images, const SparsePoints &points, ColmapFormat format) {
  std::filesystem::create_directories(dir);
  if (format == ColmapFormat::Text) {
    write_text_file_atomic(dir / "cameras.txt", write_cameras_text(cameras));
    write_text_file_atomic(dir / "images.txt", write_images_text(images));
    write_text_file_atomic(dir / "points3D.txt", write_points3d_text(points));
  } else {
    write_file_atomic(dir / "cameras.bin", write_cameras_binary(cameras));
    write_file_atomic(dir / "images.bin", write_images_binary(images));
    write_file_atomic(dir / "points3D.bin", write_points3d_binary(points));
  }
}

double camera_extent(std::span<const CameraPose> poses) {
  if (poses.empty())
    return 0.0;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto &p : poses)
    centroid += p.center();
  centroid /= static_cast<double>(poses.size());
  double radius = 0.0;
  for (const auto &p : poses)
    radius = std::max(radius, (p.center() - centroid).norm());
  return radius;
}

SceneInputs load_model(const std::filesystem::path &dir, const SplitRule &split) {
  namespace fs = std::filesystem;
  const char *names[] = {"cameras", "images", "points3D"};
  auto complete = [&](const char *ext) {
    return std::all_of(std::begin(names), std::end(names),
                       [&](const char *n) { return fs::exists(dir / (std::string(n) + ext)); });
  };
  ColmapFormat format;
  const char *ext;
  if (complete(".txt")) {
    format = ColmapFormat::Text;
    ext = ".txt";
  } else if (complete(".bin")) {
    format = ColmapFormat::Binary;
    ext = ".bin";
  } else {
    // Report against whichever format the cameras file suggests.
    ext = fs::exists(dir / "cameras.bin") && !fs::exists(dir / "cameras.txt") ? ".bin" : ".txt";
    for (const char *n : names)
      if (!fs::exists(dir / (std::string(n) + ext)))
        throw Error(ErrorKind::MissingFile, std::string(n) + ext);
    throw Error(ErrorKind::MissingFile, dir.string());
  }
  if (split.every_kth < 0 || split.every_kth == 1)
    throw Error(ErrorKind::InvalidArgument, "split every_kth must be 0 (no test split) or >= 2");

  const auto cameras = parse_cameras(read_file(dir / (std::string("cameras") + ext)), format);
  auto images = parse_images(read_file(dir / (std::string("images") + ext)), format);
  SceneInputs scene;
  scene.points = parse_points3d(read_file(dir / (std::string("points3D") + ext)), format);
  for (const auto &c : cameras)
    scene.intrinsics[c.camera_id] = c;
  for (const auto &img : images)
    if (!scene.intrinsics.contains(img.camera_id))
      throw Error(ErrorKind::InconsistentReferences,
                  "image " + img.image_name + " references camera " + std::to_string(img.camera_id));

  scene.scene_extent = camera_extent(images);
  if (!(scene.scene_extent > 1e-12))
    throw Error(ErrorKind::DegenerateExtent, "all camera centers coincide");

  std::stable_sort(images.begin(), images.end(),
                   [](const auto &a, const auto &b) { return a.image_name < b.image_name; });
  for (std::size_t i = 0; i < images.size(); ++i) {
    const bool test = split.every_kth > 0 && i % static_cast<std::size_t>(split.every_kth) == 0;
    (test ? scene.test_views : scene.train_views).push_back(images[i]);
  }
  return scene;
}

} // namespace colmap
} // namespace featsplat
