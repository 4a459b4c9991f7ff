#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace featsplat {

enum class CameraModel { SimplePinhole, Pinhole, SimpleRadial };

/// COLMAP model ids as used by the binary format.
int colmap_model_id(CameraModel model);
std::string_view colmap_model_name(CameraModel model);

struct CameraIntrinsics {
  int camera_id = 0;
  CameraModel model = CameraModel::Pinhole;
  int width = 0;
  int height = 0;
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  double radial_k1 = 0; // only nonzero for SIMPLE_RADIAL

  void validate() const;
};

/// World-to-camera pose of one registered image.
struct CameraPose {
  int image_id = 0;
  double qw = 1, qx = 0, qy = 0, qz = 0;
  double tx = 0, ty = 0, tz = 0;
  int camera_id = 0;
  std::string image_name;

  Eigen::Matrix3d rotation() const;
  Eigen::Vector3d translation() const { return {tx, ty, tz}; }
  /// Camera center in world coordinates, -R^T t.
  Eigen::Vector3d center() const;
};

struct SparsePoints {
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> colors; // [0,1]
  std::vector<std::uint64_t> point_ids;

  std::size_t size() const { return positions.size(); }
};

struct SceneInputs {
  std::map<int, CameraIntrinsics> intrinsics;
  std::vector<CameraPose> train_views;
  std::vector<CameraPose> test_views;
  SparsePoints points;
  double scene_extent = 0;
};

enum class ColmapFormat { Text, Binary };

struct SplitRule {
  int every_kth = 8;
};

namespace colmap {

std::vector<CameraIntrinsics> parse_cameras(std::span<const std::uint8_t> bytes, ColmapFormat format);
std::vector<CameraPose> parse_images(std::span<const std::uint8_t> bytes, ColmapFormat format);
SparsePoints parse_points3d(std::span<const std::uint8_t> bytes, ColmapFormat format);

std::string write_cameras_text(std::span<const CameraIntrinsics> cameras);
std::string write_images_text(std::span<const CameraPose> images);
std::string write_points3d_text(const SparsePoints &points);
std::vector<std::uint8_t> write_cameras_binary(std::span<const CameraIntrinsics> cameras);
std::vector<std::uint8_t> write_images_binary(std::span<const CameraPose> images);
std::vector<std::uint8_t> write_points3d_binary(const SparsePoints &points);

/// Writes cameras/images/points3D into `dir` in the given format.
void write_model(const std::filesystem::path &dir, std::span<const CameraIntrinsics> cameras,
                 std::span<const CameraPose> images, const SparsePoints &points, ColmapFormat format);

/// Loads a sparse model directory and splits it: every k-th image by sorted name goes to test.
SceneInputs load_model(const std::filesystem::path &dir, const SplitRule &split = {});

/// Radius of the sphere centered at the camera-center centroid enclosing every center.
double camera_extent(std::span<const CameraPose> poses);

} // namespace colmap

/// Intrinsics + pose pair: the unit of rendering and training.
struct CameraView {
  CameraIntrinsics intrinsics;
  CameraPose pose;

  const std::string &name() const { return pose.image_name; }
  int width() const { return intrinsics.width; }
  int height() const { return intrinsics.height; }
};

} // namespace featsplat
