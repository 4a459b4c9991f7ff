#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "featsplat/error.hpp"
#include "featsplat/project.hpp"
#include "featsplat/service.hpp"

namespace fs = std::filesystem;
using namespace featsplat;

namespace {

fs::path resolve_checkpoint(const fs::path &root, const std::string &checkpoint, const std::string &backbone) {
  if (!checkpoint.empty())
    return checkpoint;
  if (backbone.empty())
    throw Error(ErrorKind::InvalidArgument, "pass --checkpoint or --backbone");
  return project::Layout(root).default_checkpoint(backbone);
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Feature-field Gaussian splatting: ingest, train, render and query scenes"};
  app.require_subcommand(1);

  std::string project_dir, checkpoint, backbone, view;

  auto *ingest = app.add_subcommand("ingest", "Validate a COLMAP sparse model and create a project");
  std::string colmap_dir, images_dir;
  int split_k = 8;
  ingest->add_option("colmap_dir", colmap_dir, "Directory with cameras/images/points3D (.txt or .bin)")->required();
  ingest->add_option("project", project_dir, "Project root")->required();
  ingest->add_option("--split-k", split_k, "Every k-th image (sorted by name) is held out; 0 disables");
  ingest->add_option("--images", images_dir, "Copy the registered images from this directory");

  auto *synth = app.add_subcommand("synth", "Generate a synthetic project with ground truth");
  std::string preset = "two_regions";
  std::uint64_t synth_seed = 7;
  synth->add_option("project", project_dir, "Project root")->required();
  synth->add_option("--preset", preset, "Scene preset")->check(CLI::IsMember({"two_regions"}));
  synth->add_option("--seed", synth_seed, "Generator seed");

  auto *train = app.add_subcommand("train", "Optimize Gaussians against photos and feature maps");
  std::string config_file;
  std::optional<int> iterations;
  std::optional<std::uint64_t> seed;
  train->add_option("project", project_dir, "Project root")->required();
  train->add_option("--backbone", backbone, "Feature source under features/<backbone>/")->required();
  train->add_option("--config", config_file, "JSON training config");
  train->add_option("--iterations", iterations, "Override the iteration count");
  train->add_option("--seed", seed, "Override the seed");

  auto *render = app.add_subcommand("render", "Render one view to PNG");
  std::string mode = "rgb";
  render->add_option("project", project_dir, "Project root")->required();
  render->add_option("--view", view, "View id or image name")->required();
  render->add_option("--mode", mode, "rgb | feature_pca | depth | alpha")
      ->check(CLI::IsMember({"rgb", "feature_pca", "depth", "alpha"}));
  render->add_option("--checkpoint", checkpoint, "Checkpoint file");
  render->add_option("--backbone", backbone, "Use checkpoints/<backbone>/scene.gsplat");

  auto *query = app.add_subcommand("query", "Heatmap, mask and point prompt for a text embedding");
  std::string prompt_file, refine_on = "rendered";
  double tau = query::kDefaultTau;
  query->add_option("project", project_dir, "Project root")->required();
  query->add_option("--view", view, "View id or image name")->required();
  query->add_option("--prompt", prompt_file, "TEMB prompt embedding")->required();
  query->add_option("--tau", tau, "Threshold on the normalized similarity")->check(CLI::Range(0.0, 1.0));
  query->add_option("--refine-on", refine_on, "Image handed to external refinement: rendered | ground_truth")
      ->check(CLI::IsMember({"rendered", "ground_truth"}));
  query->add_option("--checkpoint", checkpoint, "Checkpoint file");
  query->add_option("--backbone", backbone, "Use checkpoints/<backbone>/scene.gsplat");

  auto *metrics_cmd = app.add_subcommand("metrics", "PSNR and SSIM over the test split");
  metrics_cmd->add_option("project", project_dir, "Project root")->required();
  metrics_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file");
  metrics_cmd->add_option("--backbone", backbone, "Use checkpoints/<backbone>/scene.gsplat");

  auto *serve = app.add_subcommand("serve", "HTTP API for the viewer");
  std::string bind = "127.0.0.1:8080", bridge;
  serve->add_option("project", project_dir, "Project root")->required();
  serve->add_option("--checkpoint", checkpoint, "Checkpoint file");
  serve->add_option("--backbone", backbone, "Use checkpoints/<backbone>/scene.gsplat");
  serve->add_option("--bind", bind, "host:port");
  serve->add_option("--bridge-url", bridge, "Embedding bridge base URL (else $FEATSPLAT_BRIDGE_URL)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) {
      project::IngestOptions opts{split_k, std::nullopt};
      if (!images_dir.empty())
        opts.images_dir = images_dir;
      const auto m = project::ingest(colmap_dir, project_dir, opts);
      std::cout << "wrote " << (fs::path(project_dir) / "manifest.json").string() << " (" << m.views.size()
                << " views)\n";
    } else if (*synth) {
      const auto s = project::synth(project_dir, {preset, synth_seed});
      std::cout << "synthetic project '" << preset << "' with " << s.manifest.views.size()
                << " views, backbone '" << s.backbone << "'\n";
    } else if (*train) {
      project::TrainCommandOptions opts;
      opts.backbone = backbone;
      if (!config_file.empty())
        opts.config_file = config_file;
      opts.iterations = iterations;
      opts.seed = seed;
      const auto r = project::train(project_dir, opts);
      std::printf("checkpoint %s (%zu Gaussians), final loss %.6f\n", r.checkpoint.c_str(), r.num_gaussians,
                  r.final_loss.total);
    } else if (*render) {
      const auto r = project::render_view(project_dir, resolve_checkpoint(project_dir, checkpoint, backbone), view,
                                          project::parse_render_mode(mode));
      std::cout << r.png.string() << '\n';
      if (r.fmap)
        std::cout << r.fmap->string() << '\n';
    } else if (*query) {
      const auto r = project::query_view(project_dir, resolve_checkpoint(project_dir, checkpoint, backbone), view,
                                         prompt_file, tau,
                                         refine_on == "ground_truth" ? project::RefineSource::GroundTruth
                                                                     : project::RefineSource::Rendered);
      std::printf("argmax (%d, %d) score %.6f, mask %zu px\n", r.point.x, r.point.y, r.point.score, r.mask.count());
      for (const auto &p : {r.heatmap_png, r.heatmap_overlay_png, r.mask_png, r.mask_overlay_png, r.point_json,
                            r.refine_input_png})
        std::cout << p.string() << '\n';
    } else if (*metrics_cmd) {
      fs::path csv;
      const auto report =
          project::metrics_report(project_dir, resolve_checkpoint(project_dir, checkpoint, backbone), &csv);
      std::cout << report.to_csv() << "wrote " << csv.string() << '\n';
    } else if (*serve) {
      const auto colon = bind.rfind(':');
      if (colon == std::string::npos)
        throw Error(ErrorKind::InvalidArgument, "--bind expects host:port");
      service::ServiceOptions opts;
      if (!bridge.empty())
        opts.bridge_url = bridge;
      service::Service svc(project_dir, resolve_checkpoint(project_dir, checkpoint, backbone), opts);
      svc.listen(bind.substr(0, colon), std::stoi(bind.substr(colon + 1)));
    }
  } catch (const Error &e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.detail() << '\n';
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
