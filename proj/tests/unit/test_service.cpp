#include <gtest/gtest.h>

#include <memory>
#include <thread>

#include <nlohmann/json.hpp>

#include "featsplat/binary_io.hpp"
#include "featsplat/image.hpp"
#include "featsplat/project.hpp"
#include "featsplat/query.hpp"
#include "featsplat/service.hpp"
#include "test_support.hpp"

// Last: resolv.h (pulled in by httplib) defines a `_res` macro that breaks Eigen headers.
#include <httplib.h>

using namespace featsplat;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

service::Request get(const std::string &path, std::map<std::string, std::string> params = {}) {
  return {"GET", path, std::move(params), {}};
}

service::Request post(const std::string &path, std::string body, std::map<std::string, std::string> params = {}) {
  return {"POST", path, std::move(params), std::move(body)};
}

std::string embedding_body(const std::string &label, const std::vector<float> &v) {
  return json{{"label", label}, {"embedding", v}}.dump();
}

class ServiceTest : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<testsupport::TempDir>("service");
    project::synth(dir_->path());
    project::TrainCommandOptions opts;
    opts.backbone = "synthetic";
    opts.iterations = 30;
    ckpt_ = project::train(dir_->path(), opts).checkpoint;
  }
  static void TearDownTestSuite() { dir_.reset(); }

  void SetUp() override { svc_ = std::make_unique<service::Service>(dir_->path(), ckpt_, service::ServiceOptions{}); }

  static std::vector<float> region_embedding(int region) {
    return temb::read(dir_->path() / "prompts" / ("region" + std::to_string(region) + ".temb")).vector;
  }

  static std::unique_ptr<testsupport::TempDir> dir_;
  static fs::path ckpt_;
  std::unique_ptr<service::Service> svc_;
};
std::unique_ptr<testsupport::TempDir> ServiceTest::dir_;
fs::path ServiceTest::ckpt_;

} // namespace

TEST_F(ServiceTest, ViewsListsAllTwentyFour) {
  const auto r = svc_->handle(get("/api/views"));
  ASSERT_EQ(r.status, 200);
  const auto j = json::parse(r.body);
  ASSERT_EQ(j.size(), 24u);
  int test = 0;
  for (const auto &v : j) {
    EXPECT_EQ(v.at("width"), 64);
    EXPECT_EQ(v.at("height"), 64);
    test += v.at("split") == "test";
  }
  EXPECT_EQ(test, 4);
  EXPECT_EQ(j[0].at("view_id"), "view_000");
}

TEST_F(ServiceTest, RenderIsDeterministicPng) {
  const auto a = svc_->handle(get("/api/render", {{"view", "view_003"}, {"mode", "rgb"}}));
  ASSERT_EQ(a.status, 200);
  EXPECT_EQ(a.content_type, "image/png");
  service::Service other(dir_->path(), ckpt_);
  const auto b = other.handle(get("/api/render", {{"view", "view_003"}, {"mode", "rgb"}}));
  EXPECT_EQ(a.body, b.body);
  const auto pca = svc_->handle(get("/api/render", {{"view", "view_003"}, {"mode", "feature_pca"}}));
  EXPECT_EQ(pca.status, 200);
  EXPECT_NE(pca.body, a.body);
  EXPECT_EQ(svc_->handle(get("/api/render", {{"view", "nope"}})).status, 404);
  EXPECT_EQ(svc_->handle(get("/api/render", {{"view", "view_003"}, {"mode", "sideways"}})).status, 400);
  EXPECT_EQ(svc_->handle(get("/api/render")).status, 400);
  EXPECT_EQ(svc_->handle(get("/api/unknown")).status, 404);
}

TEST_F(ServiceTest, PromptsFromFilesAndPosted) {
  auto list = json::parse(svc_->handle(get("/api/prompts")).body);
  ASSERT_EQ(list.size(), 2u);
  EXPECT_EQ(list[0].at("prompt_id"), "region0");

  const auto created = svc_->handle(post("/api/prompts", embedding_body("Red Blob", region_embedding(0))));
  ASSERT_EQ(created.status, 201) << created.body;
  const auto id = json::parse(created.body).at("prompt_id").get<std::string>();
  EXPECT_EQ(id.rfind("red_blob-", 0), 0u);
  EXPECT_EQ(id.size(), std::string("red_blob-").size() + 8);
  // Same content, same id.
  EXPECT_EQ(json::parse(svc_->handle(post("/api/prompts", embedding_body("Red Blob", region_embedding(0)))).body)
                .at("prompt_id"),
            id);
  list = json::parse(svc_->handle(get("/api/prompts")).body);
  EXPECT_EQ(list.size(), 3u);
}

TEST_F(ServiceTest, PromptErrors) {
  EXPECT_EQ(svc_->handle(post("/api/prompts", embedding_body("short", {1, 0, 0}))).status, 422);
  const auto text = svc_->handle(post("/api/prompts", R"({"label":"dome","text":"dome"})"));
  EXPECT_EQ(text.status, 503);
  EXPECT_EQ(json::parse(text.body).at("error"), "NoEmbedder");
  EXPECT_EQ(svc_->handle(post("/api/prompts", "not json")).status, 400);
  EXPECT_EQ(svc_->handle(post("/api/prompts", R"({"label":"x"})")).status, 400);
}

TEST_F(ServiceTest, HeatmapHeadersMatchPointDocument) {
  const auto h = svc_->handle(get("/api/heatmap", {{"view", "view_006"}, {"prompt", "region1"}}));
  ASSERT_EQ(h.status, 200) << h.body;
  EXPECT_EQ(h.content_type, "image/png");
  const auto p = svc_->handle(get("/api/point", {{"view", "view_006"}, {"prompt", "region1"}}));
  const auto pt = query::PointPrompt::from_json(p.body);
  EXPECT_EQ(h.headers.at("X-Argmax-X"), std::to_string(pt.x));
  EXPECT_EQ(h.headers.at("X-Argmax-Y"), std::to_string(pt.y));
  EXPECT_EQ(pt.view_id, "view_006");
  EXPECT_EQ(pt.source, "lseg_argmax");
  EXPECT_EQ(svc_->handle(get("/api/heatmap", {{"view", "view_006"}, {"prompt", "ghost"}})).status, 404);
}

TEST_F(ServiceTest, MaskIsCachedAndCarriesPointPrompt) {
  const auto a = svc_->handle(get("/api/mask", {{"view", "view_012"}, {"prompt", "region0"}, {"tau", "0.8"}}));
  ASSERT_EQ(a.status, 200) << a.body;
  const auto b = svc_->handle(get("/api/mask", {{"view", "view_012"}, {"prompt", "region0"}, {"tau", "0.8"}}));
  EXPECT_EQ(a.body, b.body);
  const auto pt = query::PointPrompt::from_json(a.headers.at("X-Point-Prompt"));
  EXPECT_EQ(pt.prompt_label, "region0");
  const auto all = svc_->handle(get("/api/mask", {{"view", "view_012"}, {"prompt", "region0"}, {"tau", "0"}}));
  EXPECT_NE(all.body, a.body);
  EXPECT_EQ(svc_->handle(get("/api/mask", {{"view", "view_012"}, {"prompt", "region0"}, {"tau", "1.5"}})).status,
            400);
  EXPECT_EQ(svc_->handle(get("/api/mask", {{"view", "view_012"}, {"prompt", "region0"}, {"tau", "abc"}})).status,
            400);
}

TEST_F(ServiceTest, RefinedMaskRoundTrip) {
  EXPECT_EQ(svc_->handle(get("/api/refined_mask", {{"view", "view_000"}, {"prompt", "region0"}})).status, 404);
  Mask m(64, 64);
  for (int y = 10; y < 30; ++y)
    for (int x = 5; x < 25; ++x)
      m.set(x, y, true);
  const auto png = encode_png(m);
  const std::string body(png.begin(), png.end());
  const auto stored = svc_->handle(
      post("/api/refined_mask", body, {{"view", "view_000"}, {"prompt", "region0"}, {"model", "sam2"}}));
  ASSERT_EQ(stored.status, 201) << stored.body;
  EXPECT_EQ(json::parse(stored.body).at("foreground_pixels"), 400);
  EXPECT_TRUE(fs::exists(dir_->path() / "masks/refined/view_000_region0_sam2.png"));
  const auto overlay =
      svc_->handle(get("/api/refined_mask", {{"view", "view_000"}, {"prompt", "region0"}, {"model", "sam2"}}));
  ASSERT_EQ(overlay.status, 200);
  const auto img = decode_png(std::span(reinterpret_cast<const std::uint8_t *>(overlay.body.data()), overlay.body.size()));
  EXPECT_EQ(img.width, 64);
  const auto small = encode_png(Mask(8, 8, true));
  EXPECT_EQ(svc_->handle(post("/api/refined_mask", std::string(small.begin(), small.end()),
                              {{"view", "view_000"}, {"prompt", "region0"}}))
                .status,
            422);
  EXPECT_EQ(svc_->handle(post("/api/refined_mask", "garbage", {{"view", "view_000"}, {"prompt", "region0"}})).status,
            400);
}

TEST_F(ServiceTest, CheckpointIsNeverModified) {
  const auto before = read_file(ckpt_);
  svc_->handle(get("/api/render", {{"view", "view_001"}}));
  svc_->handle(get("/api/mask", {{"view", "view_001"}, {"prompt", "region0"}}));
  EXPECT_EQ(read_file(ckpt_), before);
}

TEST_F(ServiceTest, OverHttpWithTextPromptBridge) {
  // Stand-in embedding bridge: answers every text with region 1's embedding.
  httplib::Server bridge;
  const auto e1 = region_embedding(1);
  bridge.Post("/embed", [&](const httplib::Request &req, httplib::Response &res) {
    const auto j = json::parse(req.body);
    res.set_content(json{{"label", j.at("text")}, {"embedding", e1}}.dump(), "application/json");
  });
  const int bridge_port = bridge.bind_to_any_port("127.0.0.1");
  std::thread bridge_thread([&] { bridge.listen_after_bind(); });

  service::ServiceOptions opts;
  opts.bridge_url = "http://127.0.0.1:" + std::to_string(bridge_port);
  service::Service svc(dir_->path(), ckpt_, opts);
  const int port = svc.bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread server([&] { svc.run(); });

  httplib::Client client("127.0.0.1", port);
  auto views = client.Get("/api/views");
  ASSERT_TRUE(views);
  EXPECT_EQ(views->status, 200);
  EXPECT_EQ(json::parse(views->body).size(), 24u);

  auto created = client.Post("/api/prompts", R"({"text":"blue blob"})", "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201) << created->body;
  const auto id = json::parse(created->body).at("prompt_id").get<std::string>();
  EXPECT_EQ(id.rfind("blue_blob-", 0), 0u);

  auto heat = client.Get("/api/heatmap?view=view_018&prompt=" + id);
  ASSERT_TRUE(heat);
  EXPECT_EQ(heat->status, 200);
  EXPECT_EQ(heat->get_header_value("Content-Type"), "image/png");
  EXPECT_FALSE(heat->get_header_value("X-Argmax-X").empty());

  auto missing = client.Get("/api/render?view=view_404");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);

  svc.stop();
  server.join();
  bridge.stop();
  bridge_thread.join();
}
