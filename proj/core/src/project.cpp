#include "featsplat/project.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "featsplat/binary_io.hpp"
#include "featsplat/error.hpp"
#include "featsplat/feature_store.hpp"
#include "featsplat/log.hpp"

namespace featsplat::project {

namespace fs = std::filesystem;
using nlohmann::json;

void Layout::ensure() const {
  for (const auto &dir : {colmap(), images(), root / "features", prompts(), root / "checkpoints", renders(), masks(),
                          logs()})
    fs::create_directories(dir);
}

// ---- manifest ----

std::string Manifest::to_json() const {
  json views_json = json::array();
  for (const auto &v : views)
    views_json.push_back({{"view_id", v.view_id},
                          {"image_name", v.image_name},
                          {"image_id", v.image_id},
                          {"camera_id", v.camera_id},
                          {"split", v.split},
                          {"width", v.width},
                          {"height", v.height}});
  json j = {{"format_version", 1},
            {"split_every_kth", split_every_kth},
            {"scene_extent", scene_extent},
            {"num_points", num_points},
            {"views", views_json}};
  return j.dump(2) + "\n";
}

Manifest Manifest::from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    if (j.at("format_version").get<int>() != 1)
      throw Error(ErrorKind::VersionUnsupported, "manifest format_version");
    Manifest m;
    m.split_every_kth = j.at("split_every_kth").get<int>();
    m.scene_extent = j.at("scene_extent").get<double>();
    m.num_points = j.at("num_points").get<std::size_t>();
    for (const auto &v : j.at("views")) {
      ViewEntry e;
      e.view_id = v.at("view_id").get<std::string>();
      e.image_name = v.at("image_name").get<std::string>();
      e.image_id = v.at("image_id").get<int>();
      e.camera_id = v.at("camera_id").get<int>();
      e.split = v.at("split").get<std::string>();
      e.width = v.at("width").get<int>();
      e.height = v.at("height").get<int>();
      m.views.push_back(std::move(e));
    }
    return m;
  } catch (const json::exception &e) {
    throw Error(ErrorKind::MalformedRecord, std::string("manifest: ") + e.what());
  }
}

// ---- render settings ----

RenderConfig load_render_config(const Layout &layout) {
  RenderConfig cfg;
  if (!fs::exists(layout.render_settings()))
    return cfg;
  try {
    const auto j = json::parse(read_text_file(layout.render_settings()));
    if (auto it = j.find("background_rgb"); it != j.end()) {
      const auto v = it->get<std::vector<double>>();
      if (v.size() != 3)
        throw Error(ErrorKind::MalformedRecord, "render.json: background_rgb needs 3 values");
      cfg.background_rgb = {v[0], v[1], v[2]};
    }
    if (auto it = j.find("background_feature"); it != j.end())
      cfg.background_feature = it->get<std::vector<double>>();
    if (auto it = j.find("tile_size"); it != j.end())
      cfg.tile_size = it->get<int>();
  } catch (const json::exception &e) {
    throw Error(ErrorKind::MalformedRecord, std::string("render.json: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_render_config(const Layout &layout, const RenderConfig &cfg) {
  json j = {{"background_rgb", {cfg.background_rgb.x(), cfg.background_rgb.y(), cfg.background_rgb.z()}},
            {"background_feature", cfg.background_feature},
            {"tile_size", cfg.tile_size}};
  write_text_file_atomic(layout.render_settings(), j.dump(2) + "\n");
}

// ---- project ----

namespace {

std::string view_id_of(const std::string &image_name) { return fs::path(image_name).stem().string(); }

Manifest build_manifest(const SceneInputs &scene, int k) {
  Manifest m;
  m.split_every_kth = k;
  m.scene_extent = scene.scene_extent;
  m.num_points = scene.points.size();
  auto add = [&](const CameraPose &p, const char *split) {
    const auto &cam = scene.intrinsics.at(p.camera_id);
    m.views.push_back({view_id_of(p.image_name), p.image_name, p.image_id, p.camera_id, split, cam.width, cam.height});
  };
  for (const auto &p : scene.train_views)
    add(p, "train");
  for (const auto &p : scene.test_views)
    add(p, "test");
  std::sort(m.views.begin(), m.views.end(), [](const auto &a, const auto &b) { return a.image_name < b.image_name; });
  for (std::size_t i = 1; i < m.views.size(); ++i)
    if (m.views[i].view_id == m.views[i - 1].view_id)
      throw Error(ErrorKind::InconsistentReferences, "two images share the view id '" + m.views[i].view_id + "'");
  return m;
}

} // namespace

Project Project::open(const fs::path &root) {
  Layout layout(root);
  if (!fs::exists(layout.manifest()))
    throw Error(ErrorKind::MissingFile, layout.manifest().string() + " (run ingest or synth first)");
  auto manifest = Manifest::from_json(read_text_file(layout.manifest()));
  auto scene = colmap::load_model(layout.colmap(), SplitRule{manifest.split_every_kth});
  auto render = load_render_config(layout);
  return Project{std::move(layout), std::move(manifest), std::move(scene), std::move(render)};
}

const ViewEntry &Project::entry(std::string_view id) const {
  for (const auto &v : manifest.views)
    if (v.view_id == id || v.image_name == id)
      return v;
  throw Error(ErrorKind::NotFound, "unknown view '" + std::string(id) + "'");
}

CameraView Project::view(std::string_view id) const {
  const auto &e = entry(id);
  for (const auto *list : {&scene.train_views, &scene.test_views})
    for (const auto &p : *list)
      if (p.image_name == e.image_name)
        return {scene.intrinsics.at(p.camera_id), p};
  throw Error(ErrorKind::InconsistentReferences, "manifest view '" + e.view_id + "' is not in the COLMAP model");
}

std::vector<CameraView> Project::test_views() const {
  std::vector<CameraView> out;
  for (const auto &p : scene.test_views)
    out.push_back({scene.intrinsics.at(p.camera_id), p});
  return out;
}

// ---- ingest ----

Manifest ingest(const fs::path &colmap_dir, const fs::path &root, const IngestOptions &options) {
  if (options.split_every_kth < 0 || options.split_every_kth == 1)
    throw Error(ErrorKind::InvalidArgument, "split_k must be 0 (no test split) or >= 2");
  const auto scene = colmap::load_model(colmap_dir, SplitRule{options.split_every_kth});
  Layout layout(root);
  layout.ensure();

  const bool same_dir = fs::exists(layout.colmap()) && fs::equivalent(colmap_dir, layout.colmap());
  if (!same_dir) {
    static constexpr const char *kFiles[] = {"cameras.txt", "images.txt", "points3D.txt",
                                             "cameras.bin", "images.bin", "points3D.bin"};
    for (const char *name : kFiles)
      fs::remove(layout.colmap() / name);
    for (const char *name : kFiles)
      if (fs::exists(colmap_dir / name))
        fs::copy_file(colmap_dir / name, layout.colmap() / name, fs::copy_options::overwrite_existing);
  }
  if (options.images_dir) {
    for (const auto *list : {&scene.train_views, &scene.test_views})
      for (const auto &p : *list) {
        const auto src = *options.images_dir / p.image_name;
        if (!fs::exists(src))
          throw Error(ErrorKind::MissingFile, src.string());
        const auto dst = layout.images() / p.image_name;
        fs::create_directories(dst.parent_path());
        if (!fs::exists(dst) || !fs::equivalent(src, dst))
          fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
      }
  }
  auto manifest = build_manifest(scene, options.split_every_kth);
  write_text_file_atomic(layout.manifest(), manifest.to_json());
  log::info("ingested " + std::to_string(manifest.views.size()) + " views (" +
            std::to_string(scene.train_views.size()) + " train, " + std::to_string(scene.test_views.size()) +
            " test), " + std::to_string(scene.points.size()) + " points");
  return manifest;
}

// ---- synth ----

namespace {

struct TwoRegionsPreset {
  static constexpr int kGaussians = 50;
  static constexpr int kViews = 24;
  static constexpr int kSplitK = 6;
  static constexpr int kFeatureDim = 16;
  static constexpr int kImageSize = 64;
  static constexpr double kFocal = 70.0;
  static constexpr double kRingRadius = 3.5;
  static constexpr double kRingHeight = 1.2;
  static constexpr double kClusterOffset = 0.7;
};

/// Rows of the returned matrix are orthonormal.
Eigen::MatrixXd random_orthonormal(int count, int dim, std::mt19937_64 &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(count, dim);
  for (int r = 0; r < count; ++r) {
    Eigen::VectorXd v(dim);
    for (int k = 0; k < dim; ++k)
      v(k) = normal(rng);
    for (int q = 0; q < r; ++q)
      v -= v.dot(out.row(q).transpose()) * out.row(q).transpose();
    out.row(r) = v.normalized().transpose();
  }
  return out;
}

CameraPose look_at(const Eigen::Vector3d &center, const Eigen::Vector3d &target, int image_id, std::string name) {
  const Eigen::Vector3d forward = (target - center).normalized();
  const Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitZ()).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  const Eigen::Quaterniond q(r);
  const Eigen::Vector3d t = -r * center;
  CameraPose p;
  p.image_id = image_id;
  p.qw = q.w();
  p.qx = q.x();
  p.qy = q.y();
  p.qz = q.z();
  p.tx = t.x();
  p.ty = t.y();
  p.tz = t.z();
  p.camera_id = 1;
  p.image_name = std::move(name);
  return p;
}

} // namespace

fs::path gt_mask_path(const Layout &layout, const std::string &view_id, const std::string &region) {
  return layout.masks() / "gt" / (view_id + "_" + region + ".png");
}

SynthSummary synth(const fs::path &root, const SynthOptions &options) {
  if (options.preset != "two_regions")
    throw Error(ErrorKind::InvalidArgument, "unknown synth preset '" + options.preset + "'");
  using P = TwoRegionsPreset;
  Layout layout(root);
  layout.ensure();
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  // Palette: region colors plus the black background, each with an orthonormal embedding.
  const Eigen::MatrixXd emb = random_orthonormal(3, P::kFeatureDim, rng);
  const Eigen::Vector3d region_color[2] = {{0.9, 0.2, 0.15}, {0.15, 0.35, 0.9}};
  const std::string region_label[2] = {"region0", "region1"};
  std::vector<PaletteEntry> palette(3);
  for (int k = 0; k < 3; ++k) {
    palette[k].color = k < 2 ? Eigen::Vector3f(region_color[k].cast<float>()) : Eigen::Vector3f::Zero();
    palette[k].embedding.resize(P::kFeatureDim);
    for (int d = 0; d < P::kFeatureDim; ++d)
      palette[k].embedding[d] = static_cast<float>(emb(k, d));
  }

  // Ground-truth Gaussians.
  GaussianSet truth(P::kGaussians, P::kFeatureDim, 0);
  for (int i = 0; i < P::kGaussians; ++i) {
    const int region = i % 2;
    const auto n = static_cast<std::size_t>(i);
    const double cx = region == 0 ? -P::kClusterOffset : P::kClusterOffset;
    truth.position(n) = Eigen::Vector3d(cx + 0.2 * normal(rng), 0.2 * normal(rng), 0.15 * normal(rng));
    for (int a = 0; a < 3; ++a)
      truth.log_scale(n)(a) = std::log(0.08 + 0.10 * uniform(rng));
    Eigen::Vector4d q(normal(rng), normal(rng), normal(rng), normal(rng));
    truth.rotation(n) = q.normalized();
    truth.opacity_logits[n] = logit(0.8 + 0.15 * uniform(rng));
    for (int c = 0; c < 3; ++c) {
      const double color = std::clamp(region_color[region](c) + 0.03 * normal(rng), 0.0, 1.0);
      truth.sh(n, c, 0) = (color - 0.5) / kSH0;
    }
    for (int d = 0; d < P::kFeatureDim; ++d)
      truth.feature(n)[static_cast<std::size_t>(d)] = emb(region, d);
  }

  // COLMAP model: one pinhole camera on a ring of poses looking at the origin.
  CameraIntrinsics cam;
  cam.camera_id = 1;
  cam.model = CameraModel::Pinhole;
  cam.width = cam.height = P::kImageSize;
  cam.fx = cam.fy = P::kFocal;
  cam.cx = cam.cy = P::kImageSize / 2.0;
  std::vector<CameraPose> poses;
  for (int i = 0; i < P::kViews; ++i) {
    const double theta = 2.0 * std::numbers::pi * i / P::kViews + std::numbers::pi / 4.0;
    const double h = P::kRingHeight + 0.4 * ((i % 3) - 1);
    const Eigen::Vector3d center(P::kRingRadius * std::cos(theta), P::kRingRadius * std::sin(theta), h);
    char name[32];
    std::snprintf(name, sizeof(name), "view_%03d.png", i);
    poses.push_back(look_at(center, Eigen::Vector3d::Zero(), i + 1, name));
  }
  SparsePoints points;
  for (int i = 0; i < P::kGaussians; ++i) {
    const auto n = static_cast<std::size_t>(i);
    points.positions.push_back(truth.position(n) + 0.02 * Eigen::Vector3d(normal(rng), normal(rng), normal(rng)));
    Eigen::Vector3d color;
    for (int c = 0; c < 3; ++c)
      color(c) = truth.sh(n, c, 0) * kSH0 + 0.5;
    points.colors.push_back(color);
    points.point_ids.push_back(static_cast<std::uint64_t>(i + 1));
  }
  colmap::write_model(layout.colmap(), std::span(&cam, 1), poses, points, ColmapFormat::Text);
  // Render from exactly what is persisted (f32 checkpoint, reparsed poses) so the photos are reproducible.
  for (auto *v : {&truth.positions, &truth.log_scales, &truth.rotations, &truth.opacity_logits, &truth.colors_sh,
                  &truth.features})
    for (auto &x : *v)
      x = static_cast<float>(x);
  poses = colmap::parse_images(read_file(layout.colmap() / "images.txt"), ColmapFormat::Text);

  RenderConfig render_cfg;
  render_cfg.background_feature.assign(palette[2].embedding.begin(), palette[2].embedding.end());
  save_render_config(layout, render_cfg);

  const auto backbone = std::string("synthetic");
  fs::create_directories(layout.features(backbone));
  fs::create_directories(layout.masks() / "gt");
  for (const auto &pose : poses) {
    const CameraView view{cam, pose};
    const auto png = encode_png(render<float>(truth, view, render_cfg).rgb_image());
    write_file_atomic(layout.images() / pose.image_name, png);
    const Image photo = decode_png(png);
    write_file_atomic(feature_path(root, backbone, pose.image_name),
                      fmap::encode(synth_features(photo, palette, backbone)));
    const auto assign = palette_assignment(photo, palette);
    const auto id = view_id_of(pose.image_name);
    for (int region = 0; region < 2; ++region) {
      Mask m(photo.width, photo.height);
      for (std::size_t p = 0; p < assign.size(); ++p)
        m.bits[p] = assign[p] == region ? 1 : 0;
      write_file_atomic(gt_mask_path(layout, id, region_label[region]), encode_png(m));
    }
  }
  for (int region = 0; region < 2; ++region)
    write_file_atomic(layout.prompts() / (region_label[region] + ".temb"),
                      temb::encode({region_label[region], palette[static_cast<std::size_t>(region)].embedding}));

  SynthSummary summary;
  summary.ground_truth_checkpoint = layout.checkpoints("ground_truth") / "scene.gsplat";
  fs::create_directories(summary.ground_truth_checkpoint.parent_path());
  save_checkpoint(summary.ground_truth_checkpoint, truth);
  summary.manifest = ingest(layout.colmap(), root, IngestOptions{P::kSplitK, std::nullopt});
  summary.backbone = backbone;
  summary.prompt_labels = {region_label[0], region_label[1]};
  return summary;
}

// ---- train ----

TrainCommandResult train(const fs::path &root, const TrainCommandOptions &options) {
  if (options.backbone.empty())
    throw Error(ErrorKind::InvalidArgument, "backbone name is required");
  const auto project = Project::open(root);
  const auto &layout = project.layout;
  TrainConfig cfg = options.config_file ? load_train_config(*options.config_file) : TrainConfig{};
  if (options.iterations)
    cfg.iterations = *options.iterations;
  if (options.seed) {
    cfg.seed = *options.seed;
    cfg.init.seed = *options.seed;
  }
  if (cfg.densify && cfg.iterations > 0)
    cfg.densify->validate(cfg.iterations);
  cfg.validate();

  const auto feature_dir = layout.features(options.backbone);
  if (!fs::is_directory(feature_dir))
    throw Error(ErrorKind::MissingFeatureMap, "no feature directory " + feature_dir.string());

  const auto ckpt_dir = layout.checkpoints(options.backbone);
  fs::create_directories(ckpt_dir);
  fs::create_directories(layout.logs());
  TrainOptions topts;
  topts.render = project.render;
  topts.on_checkpoint = [&](int iteration, const GaussianSet &set) {
    if (iteration < cfg.iterations)
      save_checkpoint(ckpt_dir / ("iter_" + std::to_string(iteration) + ".gsplat"), set);
  };
  log::info("training '" + options.backbone + "' for " + std::to_string(cfg.iterations) + " iterations");
  const auto result = featsplat::train(project.scene, layout.images(), feature_dir, cfg, topts);

  TrainCommandResult out;
  out.checkpoint = layout.default_checkpoint(options.backbone);
  out.log = layout.logs() / ("train_" + options.backbone + ".csv");
  save_checkpoint(out.checkpoint, result.set);
  write_text_file_atomic(out.log, training_log_csv(result.log));
  write_text_file_atomic(ckpt_dir / "config.json", train_config_to_json(cfg));
  out.num_gaussians = result.set.size();
  if (!result.log.empty())
    out.final_loss = result.log.back().loss;
  return out;
}

// ---- render ----

RenderMode parse_render_mode(std::string_view s) {
  if (s == "rgb")
    return RenderMode::Rgb;
  if (s == "feature_pca")
    return RenderMode::FeaturePca;
  if (s == "depth")
    return RenderMode::Depth;
  if (s == "alpha")
    return RenderMode::Alpha;
  throw Error(ErrorKind::InvalidArgument, "unknown render mode '" + std::string(s) + "'");
}

std::string_view render_mode_name(RenderMode mode) {
  switch (mode) {
  case RenderMode::Rgb: return "rgb";
  case RenderMode::FeaturePca: return "feature_pca";
  case RenderMode::Depth: return "depth";
  case RenderMode::Alpha: return "alpha";
  }
  return "rgb";
}

RenderCommandResult render_view(const fs::path &root, const fs::path &checkpoint, std::string_view view_id,
                                RenderMode mode) {
  const auto project = Project::open(root);
  const auto view = project.view(view_id);
  const auto set = load_checkpoint(checkpoint);
  const auto out = render<float>(set, view, project.render);
  const auto id = view_id_of(view.name());
  fs::create_directories(project.layout.renders());

  RenderCommandResult result;
  result.png = project.layout.renders() / (id + "_" + std::string(render_mode_name(mode)) + ".png");
  switch (mode) {
  case RenderMode::Rgb: write_file_atomic(result.png, encode_png(out.rgb_image())); break;
  case RenderMode::FeaturePca: {
    const auto features = out.feature_map();
    write_file_atomic(result.png, encode_png(query::pca_visualize(features)));
    result.fmap = project.layout.renders() / (id + "_feature.fmap");
    write_file_atomic(*result.fmap, fmap::encode(features));
    break;
  }
  case RenderMode::Depth: write_file_atomic(result.png, encode_png(out.depth_image())); break;
  case RenderMode::Alpha: write_file_atomic(result.png, encode_png(out.alpha_image())); break;
  }
  return result;
}

// ---- query ----

QueryCommandResult query_view(const fs::path &root, const fs::path &checkpoint, std::string_view view_id,
                              const fs::path &prompt_file, double tau, RefineSource refine_source) {
  const auto project = Project::open(root);
  const auto view = project.view(view_id);
  const auto prompt = temb::read(prompt_file);
  const auto set = load_checkpoint(checkpoint);
  if (set.feature_dim() != prompt.dim())
    throw Error(ErrorKind::DimMismatch, "prompt dim " + std::to_string(prompt.dim()) + " vs scene feature dim " +
                                            std::to_string(set.feature_dim()));
  const auto out = render<float>(set, view, project.render);
  const auto id = view_id_of(view.name());
  const auto heat = query::cosine_heatmap(out.feature_map(), prompt);

  QueryCommandResult r;
  r.mask = query::threshold_mask(heat, tau);
  r.point = query::argmax_point(heat, id);

  const auto &dir = project.layout.renders();
  fs::create_directories(dir);
  const auto stem = id + "_" + slugify(prompt.label);
  const Image rgb = out.rgb_image();

  Image heat_rgb(heat.width, heat.height, 3);
  for (std::size_t p = 0; p < heat.normalized.size(); ++p) {
    const auto c = query::colormap(heat.normalized[p]);
    for (int ch = 0; ch < 3; ++ch)
      heat_rgb.data[3 * p + ch] = c[ch];
  }
  r.heatmap_png = dir / (stem + "_heatmap.png");
  r.heatmap_overlay_png = dir / (stem + "_heatmap_overlay.png");
  r.mask_png = dir / (stem + "_mask.png");
  r.mask_overlay_png = dir / (stem + "_mask_overlay.png");
  r.point_json = dir / (stem + "_point.json");
  r.refine_input_png = dir / (stem + "_refine_input.png");
  write_file_atomic(r.heatmap_png, encode_png(heat_rgb));
  write_file_atomic(r.heatmap_overlay_png, encode_png(query::overlay_heatmap(rgb, heat)));
  write_file_atomic(r.mask_png, encode_png(static_cast<const Mask &>(r.mask)));
  write_file_atomic(r.mask_overlay_png, encode_png(query::overlay_mask(rgb, r.mask)));
  write_text_file_atomic(r.point_json, r.point.to_json());

  if (refine_source == RefineSource::GroundTruth) {
    const auto photo = project.layout.images() / view.name();
    if (!fs::exists(photo))
      throw Error(ErrorKind::MissingGroundTruth, view.name());
    write_file_atomic(r.refine_input_png, encode_png(read_png(photo)));
  } else {
    write_file_atomic(r.refine_input_png, encode_png(rgb));
  }
  return r;
}

// ---- metrics ----

metrics::MetricReport metrics_report(const fs::path &root, const fs::path &checkpoint, fs::path *csv_out) {
  const auto project = Project::open(root);
  const auto set = load_checkpoint(checkpoint);
  std::vector<metrics::EvalView> views;
  for (const auto &v : project.test_views()) {
    metrics::EvalView ev{v, std::nullopt};
    const auto photo = project.layout.images() / v.name();
    if (fs::exists(photo))
      ev.ground_truth = read_png(photo);
    views.push_back(std::move(ev));
  }
  auto report = metrics::evaluate(set, views, project.render);
  const auto csv = project.layout.logs() / "metrics.csv";
  fs::create_directories(csv.parent_path());
  write_text_file_atomic(csv, report.to_csv());
  if (csv_out)
    *csv_out = csv;
  return report;
}

} // namespace featsplat::project
