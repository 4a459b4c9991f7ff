#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <memory>

#include <nlohmann/json.hpp>

#include "featsplat/binary_io.hpp"
#include "featsplat/error.hpp"
#include "featsplat/metrics.hpp"
#include "featsplat/project.hpp"
#include "test_support.hpp"

using namespace featsplat;
using testsupport::TempDir;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int exit_code;
  std::string output;
};

CliRun cli(const std::string &args) {
  TempDir tmp("cli");
  const auto out = tmp / "out.txt";
  const std::string cmd = testsupport::cli_path().string() + " " + args + " > " + out.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), read_text_file(out)};
}

template <typename F> ErrorKind kind_of(F &&f) {
  try {
    f();
  } catch (const Error &e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::Io;
}

// One synthetic project with a briefly trained checkpoint, shared by the read-only tests below.
class SynthProject : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<TempDir>("synth_project");
    project::synth(dir_->path());
    project::TrainCommandOptions opts;
    opts.backbone = "synthetic";
    opts.iterations = 40;
    ckpt_ = project::train(dir_->path(), opts).checkpoint;
  }
  static void TearDownTestSuite() { dir_.reset(); }
  static const fs::path &root() { return dir_->path(); }

  static std::unique_ptr<TempDir> dir_;
  static fs::path ckpt_;
};
std::unique_ptr<TempDir> SynthProject::dir_;
fs::path SynthProject::ckpt_;

} // namespace

TEST(Ingest, FixtureManifestCountsAndDeterminism) {
  TempDir src("colmap"), proj("proj");
  testsupport::write_colmap_fixture(src.path());
  project::IngestOptions opts;
  opts.split_every_kth = 5;
  const auto m = project::ingest(src.path(), proj.path(), opts);
  EXPECT_EQ(m.views.size(), 10u);
  EXPECT_EQ(std::count_if(m.views.begin(), m.views.end(), [](auto &v) { return v.split == "train"; }), 8);
  EXPECT_EQ(std::count_if(m.views.begin(), m.views.end(), [](auto &v) { return v.split == "test"; }), 2);
  EXPECT_EQ(m.views[0].view_id, "frame_00");
  const auto first = read_file(project::Layout(proj.path()).manifest());
  project::ingest(src.path(), proj.path(), opts);
  EXPECT_EQ(read_file(project::Layout(proj.path()).manifest()), first);
  for (const char *sub : {"colmap", "images", "features", "prompts", "checkpoints", "renders", "masks", "logs"})
    EXPECT_TRUE(fs::is_directory(proj / sub)) << sub;
  EXPECT_EQ(project::Manifest::from_json(m.to_json()).to_json(), m.to_json());
}

TEST(Ingest, MissingPointsFile) {
  TempDir src("colmap"), proj("proj");
  testsupport::write_colmap_fixture(src.path());
  fs::remove(src / "points3D.txt");
  EXPECT_EQ(kind_of([&] { project::ingest(src.path(), proj.path()); }), ErrorKind::MissingFile);
}

TEST(Synth, SameSeedGivesIdenticalFiles) {
  TempDir a("synth_a"), b("synth_b");
  project::synth(a.path());
  project::synth(b.path());
  std::size_t files = 0;
  for (const auto &e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file())
      continue;
    const auto rel = fs::relative(e.path(), a.path());
    ASSERT_TRUE(fs::exists(b.path() / rel)) << rel;
    EXPECT_EQ(read_file(e.path()), read_file(b.path() / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 24u * 3);
}

TEST(Synth, EmbeddingsOrthonormalAndMasksDisjoint) {
  TempDir dir("synth");
  const auto summary = project::synth(dir.path());
  const project::Layout layout(dir.path());
  std::vector<TextEmbedding> e;
  for (const auto &label : summary.prompt_labels)
    e.push_back(temb::read(layout.prompts() / (label + ".temb")));
  ASSERT_EQ(e.size(), 2u);
  double dot = 0;
  for (int k = 0; k < e[0].dim(); ++k)
    dot += static_cast<double>(e[0].vector[k]) * e[1].vector[k];
  EXPECT_NEAR(e[0].norm(), 1.0, 1e-6);
  EXPECT_NEAR(e[1].norm(), 1.0, 1e-6);
  EXPECT_NEAR(dot, 0.0, 1e-6);

  EXPECT_EQ(summary.manifest.views.size(), 24u);
  int tests = 0;
  for (const auto &v : summary.manifest.views) {
    tests += v.split == "test";
    const auto m0 = read_mask_png(project::gt_mask_path(layout, v.view_id, "region0"));
    const auto m1 = read_mask_png(project::gt_mask_path(layout, v.view_id, "region1"));
    std::size_t both = 0;
    for (std::size_t p = 0; p < m0.bits.size(); ++p)
      both += m0.bits[p] && m1.bits[p];
    EXPECT_EQ(both, 0u) << v.view_id;
    // On the ring the clusters can eclipse each other; the held-out views look at both side by side.
    if (v.split == "test") {
      EXPECT_GT(m0.count(), 20u) << v.view_id;
      EXPECT_GT(m1.count(), 20u) << v.view_id;
    } else {
      EXPECT_GT(m0.count() + m1.count(), 20u) << v.view_id;
    }
  }
  EXPECT_EQ(tests, 4);
}

TEST(Synth, GroundTruthCheckpointReproducesPhotos) {
  TempDir dir("synth");
  const auto summary = project::synth(dir.path());
  const auto rep = project::metrics_report(dir.path(), summary.ground_truth_checkpoint);
  EXPECT_EQ(rep.per_view.size(), 4u);
  // Photos are 8-bit quantized renders, so PSNR is bounded by quantization noise, not exact.
  EXPECT_GT(rep.mean_psnr_db, 50.0);
  EXPECT_GT(rep.mean_ssim, 0.999);
  EXPECT_TRUE(fs::exists(project::Layout(dir.path()).logs() / "metrics.csv"));
}

TEST(TrainCommand, ZeroIterationsWritesInit) {
  TempDir dir("synth");
  project::synth(dir.path());
  project::TrainCommandOptions opts;
  opts.backbone = "synthetic";
  opts.iterations = 0;
  const auto res = project::train(dir.path(), opts);
  const auto p = project::Project::open(dir.path());
  InitConfig init;
  init.feature_dim = 16;
  auto expected = init_from_sparse(p.scene.points, init);
  for (auto *v : {&expected.positions, &expected.log_scales, &expected.rotations, &expected.opacity_logits,
                  &expected.colors_sh, &expected.features})
    for (auto &x : *v)
      x = static_cast<float>(x); // checkpoints store f32
  EXPECT_EQ(load_checkpoint(res.checkpoint), expected);
}

TEST(TrainCommand, UnknownBackbone) {
  TempDir dir("synth");
  project::synth(dir.path());
  project::TrainCommandOptions opts;
  opts.backbone = "lseg";
  opts.iterations = 3;
  EXPECT_EQ(kind_of([&] { project::train(dir.path(), opts); }), ErrorKind::MissingFeatureMap);
}

TEST_F(SynthProject, TrainWritesLogAndConfig) {
  const project::Layout layout(root());
  const auto csv = read_text_file(layout.logs() / "train_synthetic.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 41);
  const auto cfg = load_train_config(layout.checkpoints("synthetic") / "config.json");
  EXPECT_EQ(cfg.iterations, 40);
}

TEST_F(SynthProject, RenderModesAndUnknownView) {
  for (auto mode : {project::RenderMode::Rgb, project::RenderMode::FeaturePca, project::RenderMode::Depth,
                    project::RenderMode::Alpha}) {
    const auto a = project::render_view(root(), ckpt_, "view_006", mode);
    const auto bytes = read_file(a.png);
    const auto b = project::render_view(root(), ckpt_, "view_006.png", mode);
    EXPECT_EQ(read_file(b.png), bytes);
    const auto img = decode_png(bytes);
    EXPECT_EQ(img.width, 64);
    EXPECT_EQ(a.fmap.has_value(), mode == project::RenderMode::FeaturePca);
  }
  EXPECT_EQ(fmap::read(root() / "renders" / "view_006_feature.fmap").dim, 16);
  EXPECT_EQ(kind_of([&] { project::render_view(root(), ckpt_, "view_999", project::RenderMode::Rgb); }),
            ErrorKind::NotFound);
  EXPECT_THROW(project::parse_render_mode("normals"), Error);
}

TEST_F(SynthProject, RenderRgbOfGroundTruthHitsCap) {
  const project::Layout layout(root());
  const auto gt_ckpt = layout.checkpoints("ground_truth") / "scene.gsplat";
  const auto res = project::render_view(root(), gt_ckpt, "view_012", project::RenderMode::Rgb);
  EXPECT_EQ(metrics::psnr(read_png(res.png), read_png(layout.images() / "view_012.png")), metrics::kPsnrCapDb);
}

TEST_F(SynthProject, QueryOutputsAndTauZero) {
  const project::Layout layout(root());
  const auto prompt = layout.prompts() / "region0.temb";
  const auto res = project::query_view(root(), ckpt_, "view_000", prompt, 0.0);
  EXPECT_EQ(res.mask.count(), 64u * 64u);
  for (const auto &p : {res.heatmap_png, res.heatmap_overlay_png, res.mask_png, res.mask_overlay_png,
                        res.refine_input_png, res.point_json})
    EXPECT_TRUE(fs::exists(p)) << p;
  const auto point = query::PointPrompt::from_json(read_text_file(res.point_json));
  EXPECT_EQ(point, res.point);
  EXPECT_EQ(point.view_id, "view_000");
  EXPECT_EQ(point.prompt_label, "region0");
  EXPECT_EQ(read_mask_png(res.mask_png).bits, res.mask.bits);
  // Refinement input defaults to the rendered image, or the photo on request.
  const auto rendered = read_file(res.refine_input_png);
  const auto gt = project::query_view(root(), ckpt_, "view_000", prompt, 0.5, project::RefineSource::GroundTruth);
  EXPECT_EQ(read_png(gt.refine_input_png).data, read_png(layout.images() / "view_000.png").data);
  EXPECT_NE(read_file(gt.refine_input_png), rendered);
}

TEST_F(SynthProject, QueryDimMismatch) {
  TempDir tmp("prompt");
  temb::write({"odd", {1.0f, 0.0f, 0.0f}}, tmp / "odd.temb");
  EXPECT_EQ(kind_of([&] { project::query_view(root(), ckpt_, "view_000", tmp / "odd.temb"); }),
            ErrorKind::DimMismatch);
}

TEST(Cli, EndToEndCommands) {
  TempDir dir("cli_proj");
  const auto root = dir.path().string();
  auto r = cli("synth " + root);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  r = cli("train " + root + " --backbone synthetic --iterations 5 --seed 3");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  r = cli("render " + root + " --backbone synthetic --view view_001 --mode feature_pca");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir / "renders/view_001_feature_pca.png"));
  r = cli("query " + root + " --backbone synthetic --view view_006 --prompt " + root + "/prompts/region1.temb --tau 0.6");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir / "renders/view_006_region1_point.json"));
  r = cli("metrics " + root + " --backbone synthetic");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto csv = read_text_file(dir / "logs/metrics.csv");
  EXPECT_NE(csv.find("view_018"), std::string::npos);
}

TEST(Cli, ErrorsExitNonZeroWithKind) {
  TempDir dir("cli_err");
  testsupport::write_colmap_fixture(dir / "model");
  fs::remove(dir / "model/points3D.txt");
  const auto r = cli("ingest " + (dir / "model").string() + " " + (dir / "proj").string());
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.output.find("MissingFile"), std::string::npos) << r.output;
  const auto bad = cli("render " + (dir / "proj").string() + " --view x --mode sideways");
  EXPECT_NE(bad.exit_code, 0);
  const auto tau = cli("query " + (dir / "proj").string() + " --view x --prompt p --tau 1.5");
  EXPECT_NE(tau.exit_code, 0);
}

TEST(Cli, IngestWithSplitFlag) {
  TempDir dir("cli_ingest");
  testsupport::write_colmap_fixture(dir / "model");
  const auto r = cli("ingest " + (dir / "model").string() + " " + (dir / "proj").string() + " --split-k 5");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto m = project::Manifest::from_json(read_text_file(dir / "proj/manifest.json"));
  EXPECT_EQ(m.split_every_kth, 5);
  EXPECT_EQ(std::count_if(m.views.begin(), m.views.end(), [](auto &v) { return v.split == "test"; }), 2);
}
