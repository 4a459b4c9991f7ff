#include "featsplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "featsplat/binary_io.hpp"
#include "featsplat/error.hpp"
#include "featsplat/metrics.hpp"

namespace featsplat {

using nlohmann::json;

void LossWeights::validate() const {
  if (!(lambda_ssim >= 0 && lambda_ssim < 1))
    throw Error(ErrorKind::InvalidArgument, "lambda_ssim must be in [0,1)");
  if (!(gamma_feature >= 0))
    throw Error(ErrorKind::InvalidArgument, "gamma_feature must be >= 0");
}

void DensifyConfig::validate(int iterations) const {
  const int stop = resolved_stop(iterations);
  if (!(start_iter < stop && stop <= iterations))
    throw Error(ErrorKind::InvalidArgument, "densify needs start_iter < stop_iter <= iterations");
  if (interval < 1 || split_children < 1 || !(split_scale_shrink > 0) || !(grad_threshold >= 0))
    throw Error(ErrorKind::InvalidArgument, "invalid densify settings");
}

void TrainConfig::validate() const {
  if (iterations < 0)
    throw Error(ErrorKind::InvalidArgument, "iterations must be >= 0");
  for (double lr : {lr_position_init, lr_position_final, lr_feature, lr_color, lr_opacity, lr_scale, lr_rotation})
    if (!(lr >= 0))
      throw Error(ErrorKind::InvalidArgument, "learning rates must be non-negative");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0))
    throw Error(ErrorKind::InvalidArgument, "invalid Adam hyperparameters");
  loss.validate();
  init.validate();
  if (densify && iterations > 0)
    densify->validate(iterations);
}

double TrainConfig::position_lr(int step, double scene_extent) const {
  if (lr_position_init <= 0 || lr_position_final <= 0)
    return lr_position_init * scene_extent;
  const double r = iterations > 1 ? std::clamp(static_cast<double>(step) / (iterations - 1), 0.0, 1.0) : 0.0;
  return std::exp((1 - r) * std::log(lr_position_init) + r * std::log(lr_position_final)) * scene_extent;
}

double TrainConfig::lr(ParamGroup g, int step, double scene_extent) const {
  switch (g) {
  case ParamGroup::Position: return position_lr(step, scene_extent);
  case ParamGroup::LogScale: return lr_scale;
  case ParamGroup::Rotation: return lr_rotation;
  case ParamGroup::OpacityLogit: return lr_opacity;
  case ParamGroup::ColorSH: return lr_color;
  case ParamGroup::Feature: return lr_feature;
  }
  return 0;
}

// ---- config file ----

namespace {

template <typename T> void take(json &j, const char *key, T &out) {
  if (auto it = j.find(key); it != j.end()) {
    out = it->get<T>();
    j.erase(it);
  }
}

void reject_leftovers(const json &j, const std::string &scope) {
  if (!j.empty())
    throw Error(ErrorKind::InvalidArgument, "unknown config key '" + j.begin().key() + "' in " + scope);
}

} // namespace

TrainConfig parse_train_config(std::string_view text) {
  TrainConfig cfg;
  try {
    json j = json::parse(text);
    if (!j.is_object())
      throw Error(ErrorKind::InvalidArgument, "config must be a JSON object");
    take(j, "iterations", cfg.iterations);
    take(j, "lr_position_init", cfg.lr_position_init);
    take(j, "lr_position_final", cfg.lr_position_final);
    take(j, "lr_feature", cfg.lr_feature);
    take(j, "lr_color", cfg.lr_color);
    take(j, "lr_opacity", cfg.lr_opacity);
    take(j, "lr_scale", cfg.lr_scale);
    take(j, "lr_rotation", cfg.lr_rotation);
    take(j, "adam_beta1", cfg.adam_beta1);
    take(j, "adam_beta2", cfg.adam_beta2);
    take(j, "adam_eps", cfg.adam_eps);
    take(j, "seed", cfg.seed);
    take(j, "checkpoint_interval", cfg.checkpoint_interval);
    take(j, "opacity_reset_interval", cfg.opacity_reset_interval);
    if (auto it = j.find("densify"); it != j.end()) {
      if (it->is_object()) {
        json d = *it;
        DensifyConfig dc;
        take(d, "start_iter", dc.start_iter);
        take(d, "interval", dc.interval);
        take(d, "stop_iter", dc.stop_iter);
        take(d, "grad_threshold", dc.grad_threshold);
        take(d, "split_scale_threshold", dc.split_scale_threshold);
        take(d, "prune_opacity", dc.prune_opacity);
        take(d, "split_children", dc.split_children);
        take(d, "split_scale_shrink", dc.split_scale_shrink);
        reject_leftovers(d, "densify");
        cfg.densify = dc;
      } else if (it->is_boolean() && it->get<bool>()) {
        cfg.densify = DensifyConfig{};
      } else if (!(it->is_null() || it->is_boolean() || (it->is_string() && it->get<std::string>() == "off"))) {
        throw Error(ErrorKind::InvalidArgument, "densify must be an object, true/false, null or \"off\"");
      }
      j.erase(it);
    }
    if (auto it = j.find("loss"); it != j.end()) {
      json l = *it;
      take(l, "lambda_ssim", cfg.loss.lambda_ssim);
      take(l, "gamma_feature", cfg.loss.gamma_feature);
      reject_leftovers(l, "loss");
      j.erase(it);
    }
    if (auto it = j.find("init"); it != j.end()) {
      json in = *it;
      take(in, "knn_k", cfg.init.knn_k);
      take(in, "opacity_init", cfg.init.opacity_init);
      take(in, "sh_degree", cfg.init.sh_degree);
      take(in, "feature_noise_sigma", cfg.init.feature_noise_sigma);
      std::string fi = "zeros";
      take(in, "feature_init", fi);
      if (fi == "zeros")
        cfg.init.feature_init = FeatureInit::Zeros;
      else if (fi == "gaussian_noise")
        cfg.init.feature_init = FeatureInit::GaussianNoise;
      else
        throw Error(ErrorKind::InvalidArgument, "feature_init must be 'zeros' or 'gaussian_noise'");
      reject_leftovers(in, "init");
      j.erase(it);
    }
    reject_leftovers(j, "config");
  } catch (const json::exception &e) {
    throw Error(ErrorKind::InvalidArgument, std::string("config: ") + e.what());
  }
  cfg.init.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path &path) { return parse_train_config(read_text_file(path)); }

std::string train_config_to_json(const TrainConfig &cfg) {
  json j = {{"iterations", cfg.iterations},
            {"lr_position_init", cfg.lr_position_init},
            {"lr_position_final", cfg.lr_position_final},
            {"lr_feature", cfg.lr_feature},
            {"lr_color", cfg.lr_color},
            {"lr_opacity", cfg.lr_opacity},
            {"lr_scale", cfg.lr_scale},
            {"lr_rotation", cfg.lr_rotation},
            {"adam_beta1", cfg.adam_beta1},
            {"adam_beta2", cfg.adam_beta2},
            {"adam_eps", cfg.adam_eps},
            {"seed", cfg.seed},
            {"checkpoint_interval", cfg.checkpoint_interval},
            {"opacity_reset_interval", cfg.opacity_reset_interval},
            {"loss", {{"lambda_ssim", cfg.loss.lambda_ssim}, {"gamma_feature", cfg.loss.gamma_feature}}},
            {"init",
             {{"knn_k", cfg.init.knn_k},
              {"opacity_init", cfg.init.opacity_init},
              {"sh_degree", cfg.init.sh_degree},
              {"feature_noise_sigma", cfg.init.feature_noise_sigma},
              {"feature_init", cfg.init.feature_init == FeatureInit::Zeros ? "zeros" : "gaussian_noise"}}}};
  if (cfg.densify) {
    const auto &d = *cfg.densify;
    j["densify"] = {{"start_iter", d.start_iter},
                    {"interval", d.interval},
                    {"stop_iter", d.stop_iter},
                    {"grad_threshold", d.grad_threshold},
                    {"split_scale_threshold", d.split_scale_threshold},
                    {"prune_opacity", d.prune_opacity},
                    {"split_children", d.split_children},
                    {"split_scale_shrink", d.split_scale_shrink}};
  } else {
    j["densify"] = "off";
  }
  return j.dump(2) + "\n";
}

// ---- loss ----

namespace {

void check_loss_shapes(const RenderOutput &render, const Image &gt, const FeatureMap &target) {
  if (gt.width != render.width || gt.height != render.height || gt.channels != 3)
    throw Error(ErrorKind::ShapeMismatch, "ground truth does not match render size");
  if (target.width != render.width || target.height != render.height || target.dim != render.feature_dim)
    throw Error(ErrorKind::ShapeMismatch, "target feature map does not match render feature shape");
}

LossBreakdown loss_impl(const RenderOutput &render, const Image &gt, const FeatureMap &target, const LossWeights &w,
                        RenderGrads<float> *grads) {
  w.validate();
  check_loss_shapes(render, gt, target);
  LossBreakdown out;
  const double n_rgb = static_cast<double>(render.rgb.size());
  const double n_feat = static_cast<double>(render.feature.size());

  for (std::size_t i = 0; i < render.rgb.size(); ++i)
    out.l1_rgb += std::abs(static_cast<double>(render.rgb[i]) - gt.data[i]);
  out.l1_rgb /= n_rgb;
  for (std::size_t i = 0; i < render.feature.size(); ++i)
    out.l1_feature += std::abs(static_cast<double>(render.feature[i]) - target.data[i]);
  out.l1_feature /= n_feat;

  Image rgb = render.rgb_image();
  std::vector<double> ssim_grad;
  const bool need_ssim = w.lambda_ssim > 0 || !grads;
  double ssim_value = 1.0;
  if (need_ssim)
    ssim_value = grads && w.lambda_ssim > 0 ? metrics::ssim_with_grad(rgb, gt, ssim_grad) : metrics::ssim(rgb, gt);
  out.dssim = 1.0 - ssim_value;
  out.total = (1 - w.lambda_ssim) * out.l1_rgb + w.lambda_ssim * out.dssim + w.gamma_feature * out.l1_feature;

  const std::pair<const char *, double> terms[] = {
      {"l1_rgb", out.l1_rgb}, {"dssim", out.dssim}, {"l1_feature", out.l1_feature}, {"total", out.total}};
  for (const auto &[name, v] : terms)
    if (!std::isfinite(v))
      throw Error(ErrorKind::NonFiniteLoss, std::string(name) + " is not finite");

  if (grads) {
    auto sign = [](double d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); };
    grads->rgb.resize(render.rgb.size());
    const double k_l1 = (1 - w.lambda_ssim) / n_rgb;
    for (std::size_t i = 0; i < render.rgb.size(); ++i) {
      double g = k_l1 * sign(static_cast<double>(render.rgb[i]) - gt.data[i]);
      if (!ssim_grad.empty())
        g -= w.lambda_ssim * ssim_grad[i];
      grads->rgb[i] = static_cast<float>(g);
    }
    grads->feature.resize(render.feature.size());
    const double k_f = w.gamma_feature / n_feat;
    for (std::size_t i = 0; i < render.feature.size(); ++i)
      grads->feature[i] = static_cast<float>(k_f * sign(static_cast<double>(render.feature[i]) - target.data[i]));
    grads->alpha.clear();
  }
  return out;
}

} // namespace

LossBreakdown compute_loss(const RenderOutput &render, const Image &gt_rgb, const FeatureMap &target_feature,
                           const LossWeights &w) {
  return loss_impl(render, gt_rgb, target_feature, w, nullptr);
}

LossBreakdown compute_loss_with_grad(const RenderOutput &render, const Image &gt_rgb,
                                     const FeatureMap &target_feature, const LossWeights &w,
                                     RenderGrads<float> &grads) {
  return loss_impl(render, gt_rgb, target_feature, w, &grads);
}

// ---- optimizer ----

OptimizerState OptimizerState::for_set(const GaussianSet &set) {
  OptimizerState s;
  for (auto g : kAllParamGroups) {
    const auto k = static_cast<std::size_t>(g);
    s.m[k].assign(set.group(g).size(), 0.0);
    s.v[k].assign(set.group(g).size(), 0.0);
  }
  s.grad_accum.assign(set.size(), 0.0);
  s.grad_count.assign(set.size(), 0);
  return s;
}

StepResult train_step(GaussianSet &set, const TrainingView &view, const TrainConfig &cfg, OptimizerState &state,
                      int iteration, double scene_extent, const RenderConfig &render_cfg, bool accumulate_stats) {
  const auto out = render<float>(set, view.camera, render_cfg);
  RenderGrads<float> grads;
  StepResult result;
  result.loss = compute_loss_with_grad(out, view.gt_rgb, view.target_feature, cfg.loss, grads);
  const auto g = render_backward<float>(set, view.camera, render_cfg, grads);

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  for (auto group : kAllParamGroups) {
    const auto k = static_cast<std::size_t>(group);
    auto &param = set.group(group);
    const auto &grad = g.params.group(group);
    auto &m = state.m[k];
    auto &v = state.v[k];
    const double lr = cfg.lr(group, iteration, scene_extent);
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = cfg.adam_beta1 * m[i] + (1 - cfg.adam_beta1) * grad[i];
      v[i] = cfg.adam_beta2 * v[i] + (1 - cfg.adam_beta2) * grad[i] * grad[i];
      param[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
    }
  }
  result.lr_position = cfg.position_lr(iteration, scene_extent);

  if (accumulate_stats) {
    for (std::size_t i = 0; i < set.size(); ++i)
      if (g.visible[i]) {
        state.grad_accum[i] += g.screen_grad_norm[i];
        state.grad_count[i] += 1;
      }
  }
  return result;
}

void densify_and_prune(GaussianSet &set, OptimizerState &state, const DensifyConfig &cfg, double scene_extent,
                       std::mt19937_64 &rng) {
  const auto n = set.size();
  const double split_threshold = cfg.split_scale_threshold * scene_extent;
  std::vector<std::size_t> keep, clones, splits;
  for (std::size_t i = 0; i < n; ++i) {
    const double mean_grad = state.grad_count[i] > 0 ? state.grad_accum[i] / state.grad_count[i] : 0.0;
    const bool hot = state.grad_count[i] > 0 && mean_grad >= cfg.grad_threshold;
    const double max_scale = std::exp(set.log_scale(i).maxCoeff());
    if (hot && max_scale >= split_threshold) {
      splits.push_back(i);
      continue; // parent replaced by its children
    }
    keep.push_back(i);
    if (hot)
      clones.push_back(i);
  }

  GaussianSet next = set.gather(keep);
  next.append(set.gather(clones));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double log_shrink = std::log(cfg.split_scale_shrink);
  for (auto parent : splits) {
    const Eigen::Vector3d scale = set.log_scale(parent).array().exp();
    const Eigen::Matrix3d rot = quaternion_to_matrix(set.rotation(parent).normalized());
    const std::vector<std::size_t> idx(static_cast<std::size_t>(cfg.split_children), parent);
    GaussianSet children = set.gather(idx);
    for (std::size_t c = 0; c < children.size(); ++c) {
      const Eigen::Vector3d sample(normal(rng), normal(rng), normal(rng));
      children.position(c) = set.position(parent) + rot * scale.cwiseProduct(sample);
      children.log_scale(c) = set.log_scale(parent).array() - log_shrink;
    }
    next.append(children);
  }

  // Optimizer moments: survivors keep theirs, new Gaussians start at zero.
  OptimizerState remapped = OptimizerState::for_set(next);
  remapped.step = state.step;
  for (auto g : kAllParamGroups) {
    const auto k = static_cast<std::size_t>(g);
    const auto s = set.stride(g);
    for (std::size_t j = 0; j < keep.size(); ++j)
      for (std::size_t e = 0; e < s; ++e) {
        remapped.m[k][j * s + e] = state.m[k][keep[j] * s + e];
        remapped.v[k][j * s + e] = state.v[k][keep[j] * s + e];
      }
  }

  // Prune.
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < next.size(); ++i)
    if (sigmoid(next.opacity_logits[i]) >= cfg.prune_opacity)
      survivors.push_back(i);
  if (survivors.size() != next.size()) {
    GaussianSet pruned = next.gather(survivors);
    OptimizerState ps = OptimizerState::for_set(pruned);
    ps.step = remapped.step;
    for (auto g : kAllParamGroups) {
      const auto k = static_cast<std::size_t>(g);
      const auto s = next.stride(g);
      for (std::size_t j = 0; j < survivors.size(); ++j)
        for (std::size_t e = 0; e < s; ++e) {
          ps.m[k][j * s + e] = remapped.m[k][survivors[j] * s + e];
          ps.v[k][j * s + e] = remapped.v[k][survivors[j] * s + e];
        }
    }
    next = std::move(pruned);
    remapped = std::move(ps);
  }
  set = std::move(next);
  state = std::move(remapped);
}

std::string training_log_csv(const std::vector<TrainLogRow> &log) {
  std::ostringstream os;
  os << "iteration,l1_rgb,dssim,l1_feature,total,num_gaussians,lr_position\n";
  char buf[256];
  for (const auto &r : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%zu,%.9g\n", r.iteration, r.loss.l1_rgb, r.loss.dssim,
                  r.loss.l1_feature, r.loss.total, r.num_gaussians, r.lr_position);
    os << buf;
  }
  return os.str();
}

TrainResult train(GaussianSet initial, const std::vector<TrainingView> &views, double scene_extent,
                  const TrainConfig &cfg, const TrainOptions &options) {
  cfg.validate();
  TrainResult result;
  result.set = std::move(initial);
  if (cfg.iterations == 0)
    return result;
  if (views.empty())
    throw Error(ErrorKind::EmptyInput, "no training views");

  auto &set = result.set;
  auto state = OptimizerState::for_set(set);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(views.size());
  std::size_t cursor = order.size();
  const int densify_stop = cfg.densify ? cfg.densify->resolved_stop(cfg.iterations) : 0;

  for (int it = 0; it < cfg.iterations; ++it) {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const auto &view = views[order[cursor++]];
    const int iteration = it + 1;
    const bool in_densify_window = cfg.densify && iteration < densify_stop;
    const auto step = train_step(set, view, cfg, state, it, scene_extent, options.render, in_densify_window);
    result.log.push_back({iteration, step.loss, set.size(), step.lr_position});

    if (in_densify_window && iteration > cfg.densify->start_iter && iteration % cfg.densify->interval == 0) {
      densify_and_prune(set, state, *cfg.densify, scene_extent, rng);
    }
    if (cfg.opacity_reset_interval > 0 && iteration % cfg.opacity_reset_interval == 0 &&
        iteration < cfg.iterations) {
      const double cap = logit(0.01);
      const auto k = static_cast<std::size_t>(ParamGroup::OpacityLogit);
      for (std::size_t i = 0; i < set.size(); ++i) {
        set.opacity_logits[i] = std::min(set.opacity_logits[i], cap);
        state.m[k][i] = state.v[k][i] = 0.0;
      }
    }
    if (options.on_checkpoint && cfg.checkpoint_interval > 0 && iteration % cfg.checkpoint_interval == 0 &&
        iteration < cfg.iterations)
      options.on_checkpoint(iteration, set);
  }
  if (options.on_checkpoint)
    options.on_checkpoint(cfg.iterations, set);
  return result;
}

TrainResult train(const SceneInputs &scene, const std::filesystem::path &images_dir,
                  const std::filesystem::path &feature_dir, const TrainConfig &cfg, const TrainOptions &options) {
  cfg.validate();
  // Check every target exists before doing any work.
  for (const auto &pose : scene.train_views) {
    const auto path = feature_dir / std::filesystem::path(pose.image_name).replace_extension(".fmap");
    if (!std::filesystem::exists(path))
      throw Error(ErrorKind::MissingFeatureMap, pose.image_name);
  }
  std::vector<TrainingView> views;
  int dim = -1;
  for (const auto &pose : scene.train_views) {
    TrainingView v;
    v.camera = {scene.intrinsics.at(pose.camera_id), pose};
    const auto img_path = images_dir / pose.image_name;
    if (!std::filesystem::exists(img_path))
      throw Error(ErrorKind::MissingGroundTruth, pose.image_name);
    v.gt_rgb = read_png(img_path);
    if (v.gt_rgb.width != v.camera.width() || v.gt_rgb.height != v.camera.height())
      throw Error(ErrorKind::ShapeMismatch, "image " + pose.image_name + " does not match its camera size");
    auto fmap = fmap::read(feature_dir / std::filesystem::path(pose.image_name).replace_extension(".fmap"));
    if (dim < 0)
      dim = fmap.dim;
    else if (fmap.dim != dim)
      throw Error(ErrorKind::DimMismatch, "feature dim differs across training views at " + pose.image_name);
    v.target_feature = resize_bilinear(fmap, v.camera.height(), v.camera.width());
    views.push_back(std::move(v));
  }
  auto init = cfg.init;
  init.seed = cfg.seed;
  if (dim > 0)
    init.feature_dim = dim;
  auto set = init_from_sparse(scene.points, init);
  return train(std::move(set), views, scene.scene_extent, cfg, options);
}

} // namespace featsplat
