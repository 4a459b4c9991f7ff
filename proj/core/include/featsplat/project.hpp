#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "featsplat/colmap.hpp"
#include "featsplat/gaussian_set.hpp"
#include "featsplat/metrics.hpp"
#include "featsplat/query.hpp"
#include "featsplat/rasterizer.hpp"
#include "featsplat/trainer.hpp"

namespace featsplat::project {

/// Directory convention of a project root. Every command writes only below `root`.
struct Layout {
  std::filesystem::path root;

  explicit Layout(std::filesystem::path r) : root(std::move(r)) {}

  std::filesystem::path colmap() const { return root / "colmap"; }
  std::filesystem::path images() const { return root / "images"; }
  std::filesystem::path features(const std::string &backbone) const { return root / "features" / backbone; }
  std::filesystem::path prompts() const { return root / "prompts"; }
  std::filesystem::path checkpoints(const std::string &backbone) const { return root / "checkpoints" / backbone; }
  std::filesystem::path default_checkpoint(const std::string &backbone) const {
    return checkpoints(backbone) / "scene.gsplat";
  }
  std::filesystem::path renders() const { return root / "renders"; }
  std::filesystem::path masks() const { return root / "masks"; }
  std::filesystem::path logs() const { return root / "logs"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path render_settings() const { return root / "render.json"; }

  /// Creates any missing standard subdirectory.
  void ensure() const;
};

struct ViewEntry {
  std::string view_id; // image name without extension
  std::string image_name;
  int image_id = 0;
  int camera_id = 0;
  std::string split; // "train" or "test"
  int width = 0;
  int height = 0;
};

struct Manifest {
  int split_every_kth = 8;
  double scene_extent = 0;
  std::size_t num_points = 0;
  std::vector<ViewEntry> views; // sorted by image name

  std::string to_json() const;
  static Manifest from_json(std::string_view text);
};

/// Optional per-project rendering defaults (render.json): background color and background feature.
RenderConfig load_render_config(const Layout &layout);
void save_render_config(const Layout &layout, const RenderConfig &cfg);

/// A loaded project: manifest, scene inputs and render defaults.
struct Project {
  Layout layout;
  Manifest manifest;
  SceneInputs scene;
  RenderConfig render;

  static Project open(const std::filesystem::path &root);

  /// Accepts a view id or a full image name. Throws NotFound.
  CameraView view(std::string_view id) const;
  const ViewEntry &entry(std::string_view id) const;
  std::vector<CameraView> test_views() const;
};

// ---- commands ----

struct IngestOptions {
  int split_every_kth = 8;
  /// When set, the registered images are copied from here into images/.
  std::optional<std::filesystem::path> images_dir;
};

/// Validates a COLMAP model, copies it into colmap/ and writes manifest.json.
Manifest ingest(const std::filesystem::path &colmap_dir, const std::filesystem::path &root,
                const IngestOptions &options = {});

struct SynthOptions {
  std::string preset = "two_regions";
  std::uint64_t seed = 7;
};

struct SynthSummary {
  Manifest manifest;
  std::string backbone = "synthetic";
  std::vector<std::string> prompt_labels;       // region0, region1
  std::filesystem::path ground_truth_checkpoint; // the generating Gaussians
};

/// Generates a fully synthetic project: COLMAP model, rendered photographs, palette feature maps,
/// prompt embeddings (TEMB) and ground-truth region masks.
SynthSummary synth(const std::filesystem::path &root, const SynthOptions &options = {});

/// Ground-truth mask of `region` for a synthetic view: masks/gt/<view_id>_<region>.png.
std::filesystem::path gt_mask_path(const Layout &layout, const std::string &view_id, const std::string &region);

struct TrainCommandOptions {
  std::string backbone;
  std::optional<std::filesystem::path> config_file;
  std::optional<int> iterations;
  std::optional<std::uint64_t> seed;
};

struct TrainCommandResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::size_t num_gaussians = 0;
  LossBreakdown final_loss;
};

TrainCommandResult train(const std::filesystem::path &root, const TrainCommandOptions &options);

enum class RenderMode { Rgb, FeaturePca, Depth, Alpha };
RenderMode parse_render_mode(std::string_view s);
std::string_view render_mode_name(RenderMode mode);

struct RenderCommandResult {
  std::filesystem::path png;
  std::optional<std::filesystem::path> fmap; // raw features, feature_pca mode only
};

/// Renders one view into renders/<view_id>_<mode>.png.
RenderCommandResult render_view(const std::filesystem::path &root, const std::filesystem::path &checkpoint,
                                std::string_view view_id, RenderMode mode);

/// Image used as input for external point-prompted refinement.
enum class RefineSource { Rendered, GroundTruth };

struct QueryCommandResult {
  query::PointPrompt point;
  std::filesystem::path heatmap_png;
  std::filesystem::path heatmap_overlay_png;
  std::filesystem::path mask_png;
  std::filesystem::path mask_overlay_png;
  std::filesystem::path point_json;
  std::filesystem::path refine_input_png;
  query::BinaryMask mask;
};

QueryCommandResult query_view(const std::filesystem::path &root, const std::filesystem::path &checkpoint,
                              std::string_view view_id, const std::filesystem::path &prompt_file,
                              double tau = query::kDefaultTau, RefineSource refine_source = RefineSource::Rendered);

/// Evaluates the test split and writes logs/metrics.csv.
metrics::MetricReport metrics_report(const std::filesystem::path &root, const std::filesystem::path &checkpoint,
                                     std::filesystem::path *csv_out = nullptr);

} // namespace featsplat::project
