#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "featsplat/colmap.hpp"
#include "featsplat/feature_store.hpp"
#include "featsplat/gaussian_set.hpp"
#include "featsplat/image.hpp"
#include "featsplat/rasterizer.hpp"

namespace featsplat {

struct LossWeights {
  double lambda_ssim = 0.2;
  double gamma_feature = 1.0;

  void validate() const;
};

struct LossBreakdown {
  double l1_rgb = 0;
  double dssim = 0;
  double l1_feature = 0;
  double total = 0;
};

/// Adaptive density control. stop_iter <= 0 means half of the iteration budget.
struct DensifyConfig {
  int start_iter = 500;
  int interval = 100;
  int stop_iter = 0;
  double grad_threshold = 2e-4;
  /// Relative to scene extent.
  double split_scale_threshold = 0.01;
  double prune_opacity = 0.005;
  int split_children = 2;
  double split_scale_shrink = 1.6;

  int resolved_stop(int iterations) const { return stop_iter > 0 ? stop_iter : iterations / 2; }
  void validate(int iterations) const;
};

struct TrainConfig {
  int iterations = 7000;
  /// Position learning rate, multiplied by the scene extent, decays exponentially from init to final.
  double lr_position_init = 1.6e-4;
  double lr_position_final = 1.6e-6;
  double lr_feature = 2.5e-3;
  double lr_color = 2.5e-3;
  double lr_opacity = 5e-2;
  double lr_scale = 5e-3;
  double lr_rotation = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-15;
  std::optional<DensifyConfig> densify;
  std::uint64_t seed = 0;
  LossWeights loss;
  InitConfig init;
  /// Write a checkpoint every N iterations (0 disables; the final checkpoint is always written).
  int checkpoint_interval = 0;
  /// Periodic opacity reset; 0 disables.
  int opacity_reset_interval = 0;

  void validate() const;
  double position_lr(int step, double scene_extent) const;
  double lr(ParamGroup g, int step, double scene_extent) const;
};

/// Parses the declarative JSON config. Unknown keys are rejected.
TrainConfig parse_train_config(std::string_view json_text);
TrainConfig load_train_config(const std::filesystem::path &path);
std::string train_config_to_json(const TrainConfig &cfg);

struct TrainingView {
  CameraView camera;
  Image gt_rgb;
  FeatureMap target_feature; // already at render resolution
};

LossBreakdown compute_loss(const RenderOutput &render, const Image &gt_rgb, const FeatureMap &target_feature,
                           const LossWeights &w);

/// Loss plus dL/d(render outputs).
LossBreakdown compute_loss_with_grad(const RenderOutput &render, const Image &gt_rgb,
                                     const FeatureMap &target_feature, const LossWeights &w,
                                     RenderGrads<float> &grads);

struct OptimizerState {
  std::array<std::vector<double>, 6> m;
  std::array<std::vector<double>, 6> v;
  std::int64_t step = 0;
  // Densification statistics.
  std::vector<double> grad_accum;
  std::vector<int> grad_count;

  static OptimizerState for_set(const GaussianSet &set);
};

struct StepResult {
  LossBreakdown loss;
  double lr_position = 0;
};

/// One forward/loss/backward/Adam update. `iteration` is zero-based and drives the position schedule.
StepResult train_step(GaussianSet &set, const TrainingView &view, const TrainConfig &cfg, OptimizerState &state,
                      int iteration, double scene_extent, const RenderConfig &render_cfg = {},
                      bool accumulate_stats = false);

/// Clone/split high-gradient Gaussians, prune transparent ones, and remap optimizer state.
void densify_and_prune(GaussianSet &set, OptimizerState &state, const DensifyConfig &cfg, double scene_extent,
                       std::mt19937_64 &rng);

struct TrainLogRow {
  int iteration = 0;
  LossBreakdown loss;
  std::size_t num_gaussians = 0;
  double lr_position = 0;
};

std::string training_log_csv(const std::vector<TrainLogRow> &log);

struct TrainResult {
  GaussianSet set;
  std::vector<TrainLogRow> log;
};

struct TrainOptions {
  RenderConfig render;
  /// Called with (iteration, set) at checkpoint intervals and once at the end.
  std::function<void(int, const GaussianSet &)> on_checkpoint;
};

/// Training loop over preloaded views.
TrainResult train(GaussianSet initial, const std::vector<TrainingView> &views, double scene_extent,
                  const TrainConfig &cfg, const TrainOptions &options = {});

/// Loads ground truth and feature targets for the training split, initializes from the sparse points,
/// then trains. Every target is checked before the first iteration.
TrainResult train(const SceneInputs &scene, const std::filesystem::path &images_dir,
                  const std::filesystem::path &feature_dir, const TrainConfig &cfg, const TrainOptions &options = {});

} // namespace featsplat
