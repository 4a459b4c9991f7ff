#include "featsplat/service.hpp"

#include <cstdlib>
#include <cstring>
#include <mutex>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "featsplat/binary_io.hpp"
#include "featsplat/error.hpp"
#include "featsplat/log.hpp"
#include "featsplat/project.hpp"

// Last: resolv.h, pulled in by httplib, defines a `_res` macro that breaks Eigen.
#include <httplib.h>

namespace featsplat::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int status_for(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::NotFound:
  case ErrorKind::MissingFile: return 404;
  case ErrorKind::DimMismatch:
  case ErrorKind::ShapeMismatch: return 422;
  case ErrorKind::NoEmbedder: return 503;
  case ErrorKind::InvalidArgument:
  case ErrorKind::MalformedRecord:
  case ErrorKind::TruncatedFile: return 400;
  default: return 500;
  }
}

Response json_response(const json &j, int status = 200) {
  Response r;
  r.status = status;
  r.body = j.dump() + "\n";
  return r;
}

Response error_response(int status, std::string_view kind, std::string_view detail) {
  return json_response({{"error", kind}, {"detail", detail}}, status);
}

Response png_response(const std::vector<std::uint8_t> &png) {
  Response r;
  r.content_type = "image/png";
  r.body.assign(png.begin(), png.end());
  return r;
}

const std::string &param(const Request &req, const std::string &key) {
  auto it = req.params.find(key);
  if (it == req.params.end() || it->second.empty())
    throw Error(ErrorKind::InvalidArgument, "missing query parameter '" + key + "'");
  return it->second;
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", v);
  return buf;
}

} // namespace

struct Service::Impl {
  project::Project project;
  GaussianSet set;
  std::optional<std::string> bridge_url;
  httplib::Server server;
  int bound_port = 0;

  std::mutex prompts_mutex;
  std::map<std::string, TextEmbedding> prompts;

  std::mutex cache_mutex;
  std::unordered_map<std::string, std::shared_ptr<const RenderOutput>> renders;
  std::unordered_map<std::string, std::shared_ptr<const Response>> responses;

  Impl(const fs::path &root, const fs::path &checkpoint, ServiceOptions options)
      : project(project::Project::open(root)), set(load_checkpoint(checkpoint)),
        bridge_url(std::move(options.bridge_url)) {
    if (!bridge_url)
      if (const char *env = std::getenv("FEATSPLAT_BRIDGE_URL"); env && *env)
        bridge_url = env;
    const auto dir = project.layout.prompts();
    if (fs::is_directory(dir)) {
      std::vector<fs::path> files;
      for (const auto &e : fs::directory_iterator(dir))
        if (e.path().extension() == ".temb")
          files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto &f : files) {
        try {
          auto emb = temb::read(f);
          if (emb.dim() != set.feature_dim()) {
            log::warn("skipping prompt " + f.string() + ": dimension differs from the scene");
            continue;
          }
          prompts.emplace(f.stem().string(), std::move(emb));
        } catch (const Error &e) {
          log::warn("skipping prompt " + f.string() + ": " + e.what());
        }
      }
    }
  }

  std::shared_ptr<const RenderOutput> rendered(const std::string &view_id) {
    const auto &entry = project.entry(view_id);
    {
      std::lock_guard lock(cache_mutex);
      if (auto it = renders.find(entry.view_id); it != renders.end())
        return it->second;
    }
    // Computed outside the lock; renders are deterministic so a duplicate is harmless.
    auto out = std::make_shared<const RenderOutput>(render<float>(set, project.view(entry.view_id), project.render));
    std::lock_guard lock(cache_mutex);
    renders[entry.view_id] = out;
    return out;
  }

  template <typename F> Response cached(const std::string &key, F &&compute) {
    {
      std::lock_guard lock(cache_mutex);
      if (auto it = responses.find(key); it != responses.end())
        return *it->second;
    }
    auto r = std::make_shared<const Response>(compute());
    std::lock_guard lock(cache_mutex);
    responses[key] = r;
    return *r;
  }

  TextEmbedding prompt(const std::string &id) {
    std::lock_guard lock(prompts_mutex);
    auto it = prompts.find(id);
    if (it == prompts.end())
      throw Error(ErrorKind::NotFound, "unknown prompt '" + id + "'");
    return it->second;
  }

  // ---- handlers ----

  Response views() {
    json arr = json::array();
    for (const auto &v : project.manifest.views)
      arr.push_back({{"view_id", v.view_id}, {"split", v.split}, {"width", v.width}, {"height", v.height}});
    return json_response(arr);
  }

  Response render_png(const Request &req) {
    const auto view = project.entry(param(req, "view")).view_id;
    const auto mode_it = req.params.find("mode");
    const auto mode = project::parse_render_mode(mode_it == req.params.end() ? "rgb" : mode_it->second);
    return cached("render|" + view + "|" + std::string(project::render_mode_name(mode)), [&] {
      const auto out = rendered(view);
      switch (mode) {
      case project::RenderMode::FeaturePca: return png_response(encode_png(query::pca_visualize(out->feature_map())));
      case project::RenderMode::Depth: return png_response(encode_png(out->depth_image()));
      case project::RenderMode::Alpha: return png_response(encode_png(out->alpha_image()));
      default: return png_response(encode_png(out->rgb_image()));
      }
    });
  }

  Response list_prompts() {
    std::lock_guard lock(prompts_mutex);
    json arr = json::array();
    for (const auto &[id, emb] : prompts)
      arr.push_back({{"prompt_id", id}, {"label", emb.label}, {"dim", emb.dim()}});
    return json_response(arr);
  }

  TextEmbedding embed_via_bridge(const std::string &label, const std::string &text) {
    if (!bridge_url)
      throw Error(ErrorKind::NoEmbedder, "text prompts need an embedding bridge (set FEATSPLAT_BRIDGE_URL) or "
                                         "post a raw embedding instead");
    std::string base = *bridge_url, prefix;
    if (auto scheme = base.find("://"); scheme != std::string::npos)
      if (auto slash = base.find('/', scheme + 3); slash != std::string::npos) {
        prefix = base.substr(slash);
        base = base.substr(0, slash);
      }
    while (!prefix.empty() && prefix.back() == '/')
      prefix.pop_back();
    httplib::Client client(base);
    client.set_connection_timeout(5);
    client.set_read_timeout(60);
    const auto res = client.Post(prefix + "/embed", json{{"text", text}}.dump(), "application/json");
    if (!res)
      throw Error(ErrorKind::NoEmbedder, "embedding bridge unreachable at " + *bridge_url);
    if (res->status != 200)
      throw Error(ErrorKind::NoEmbedder, "embedding bridge answered " + std::to_string(res->status));
    try {
      const auto j = json::parse(res->body);
      return {label.empty() ? j.value("label", text) : label, j.at("embedding").get<std::vector<float>>()};
    } catch (const json::exception &e) {
      throw Error(ErrorKind::NoEmbedder, std::string("malformed bridge response: ") + e.what());
    }
  }

  Response post_prompt(const Request &req) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception &) {
      throw Error(ErrorKind::MalformedRecord, "prompt body must be JSON");
    }
    if (!body.is_object())
      throw Error(ErrorKind::MalformedRecord, "prompt body must be a JSON object");
    const std::string label = body.value("label", std::string());
    TextEmbedding emb;
    if (body.contains("embedding")) {
      try {
        emb = {label, body.at("embedding").get<std::vector<float>>()};
      } catch (const json::exception &) {
        throw Error(ErrorKind::MalformedRecord, "embedding must be an array of numbers");
      }
    } else if (body.contains("text") && body.at("text").is_string()) {
      emb = embed_via_bridge(label, body.at("text").get<std::string>());
    } else {
      throw Error(ErrorKind::MalformedRecord, "prompt needs 'embedding' or 'text'");
    }
    if (emb.label.empty())
      throw Error(ErrorKind::MalformedRecord, "prompt needs a label");
    if (emb.dim() != set.feature_dim())
      throw Error(ErrorKind::DimMismatch, "embedding has " + std::to_string(emb.dim()) + " values, scene features have " +
                                              std::to_string(set.feature_dim()));
    for (float v : emb.vector)
      if (!std::isfinite(v))
        throw Error(ErrorKind::MalformedRecord, "embedding contains non-finite values");
    const auto bytes = temb::encode(emb);
    const std::string id = slugify(emb.label) + "-" + hex32(crc32(bytes));
    {
      std::lock_guard lock(prompts_mutex);
      prompts.insert_or_assign(id, emb);
    }
    return json_response({{"prompt_id", id}, {"label", emb.label}, {"dim", emb.dim()}}, 201);
  }

  query::QueryHeatmap heatmap(const std::string &view, const std::string &prompt_id) {
    const auto emb = prompt(prompt_id);
    return query::cosine_heatmap(rendered(view)->feature_map(), emb);
  }

  static void put_point_headers(Response &r, const query::PointPrompt &pt) {
    r.headers["X-Argmax-X"] = std::to_string(pt.x);
    r.headers["X-Argmax-Y"] = std::to_string(pt.y);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", pt.score);
    r.headers["X-Argmax-Score"] = buf;
  }

  Response heatmap_png(const Request &req) {
    const auto view = project.entry(param(req, "view")).view_id;
    const auto pid = param(req, "prompt");
    prompt(pid);
    return cached("heatmap|" + view + "|" + pid, [&] {
      const auto heat = heatmap(view, pid);
      const auto pt = query::argmax_point(heat, view);
      auto r = png_response(encode_png(query::overlay_heatmap(rendered(view)->rgb_image(), heat)));
      put_point_headers(r, pt);
      return r;
    });
  }

  static double parse_tau(const Request &req) {
    auto it = req.params.find("tau");
    if (it == req.params.end() || it->second.empty())
      return query::kDefaultTau;
    char *end = nullptr;
    const double tau = std::strtod(it->second.c_str(), &end);
    if (end == it->second.c_str() || *end != '\0')
      throw Error(ErrorKind::InvalidArgument, "tau must be a number");
    return tau;
  }

  Response mask_png(const Request &req) {
    const auto view = project.entry(param(req, "view")).view_id;
    const auto pid = param(req, "prompt");
    const double tau = parse_tau(req);
    prompt(pid);
    char key[64];
    std::snprintf(key, sizeof(key), "%.17g", tau);
    return cached("mask|" + view + "|" + pid + "|" + key, [&] {
      const auto heat = heatmap(view, pid);
      const auto mask = query::threshold_mask(heat, tau);
      const auto pt = query::argmax_point(heat, view);
      auto r = png_response(encode_png(query::overlay_mask(rendered(view)->rgb_image(), mask)));
      put_point_headers(r, pt);
      json compact = json::parse(pt.to_json());
      r.headers["X-Point-Prompt"] = compact.dump();
      return r;
    });
  }

  Response point_json(const Request &req) {
    const auto view = project.entry(param(req, "view")).view_id;
    const auto pid = param(req, "prompt");
    prompt(pid);
    return cached("point|" + view + "|" + pid, [&] {
      Response r;
      r.body = query::argmax_point(heatmap(view, pid), view).to_json();
      return r;
    });
  }

  fs::path refined_path(const Request &req, const std::string &view, const std::string &pid) {
    std::string name = view + "_" + slugify(pid);
    if (auto it = req.params.find("model"); it != req.params.end() && !it->second.empty())
      name += "_" + slugify(it->second);
    return project.layout.masks() / "refined" / (name + ".png");
  }

  Response post_refined(const Request &req) {
    const auto &entry = project.entry(param(req, "view"));
    const auto pid = param(req, "prompt");
    prompt(pid);
    if (req.body.empty())
      throw Error(ErrorKind::MalformedRecord, "refined mask body must be a PNG");
    const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t *>(req.body.data()),
                                              req.body.size());
    const Mask mask = decode_mask_png(bytes);
    if (mask.width != entry.width || mask.height != entry.height)
      throw Error(ErrorKind::ShapeMismatch, "refined mask is " + std::to_string(mask.width) + "x" +
                                                std::to_string(mask.height) + ", view is " +
                                                std::to_string(entry.width) + "x" + std::to_string(entry.height));
    const auto path = refined_path(req, entry.view_id, pid);
    fs::create_directories(path.parent_path());
    write_file_atomic(path, encode_png(mask));
    return json_response({{"stored", fs::relative(path, project.layout.root).generic_string()},
                          {"foreground_pixels", mask.count()}},
                         201);
  }

  Response get_refined(const Request &req) {
    const auto view = project.entry(param(req, "view")).view_id;
    const auto pid = param(req, "prompt");
    const auto path = refined_path(req, view, pid);
    if (!fs::exists(path))
      throw Error(ErrorKind::NotFound, "no refined mask stored for this view and prompt");
    const Mask mask = read_mask_png(path);
    return png_response(encode_png(query::overlay_mask(rendered(view)->rgb_image(), mask)));
  }

  Response dispatch(const Request &req) {
    const bool get = req.method == "GET", post = req.method == "POST";
    if (req.path == "/api/views" && get)
      return views();
    if (req.path == "/api/render" && get)
      return render_png(req);
    if (req.path == "/api/prompts" && get)
      return list_prompts();
    if (req.path == "/api/prompts" && post)
      return post_prompt(req);
    if (req.path == "/api/heatmap" && get)
      return heatmap_png(req);
    if (req.path == "/api/mask" && get)
      return mask_png(req);
    if (req.path == "/api/point" && get)
      return point_json(req);
    if (req.path == "/api/refined_mask" && post)
      return post_refined(req);
    if (req.path == "/api/refined_mask" && get)
      return get_refined(req);
    return error_response(404, "NotFound", "no route for " + req.method + " " + req.path);
  }
};

Service::Service(const fs::path &project_root, const fs::path &checkpoint, ServiceOptions options)
    : impl_(std::make_unique<Impl>(project_root, checkpoint, std::move(options))) {
  auto adapt = [this](const httplib::Request &hreq, httplib::Response &hres) {
    Request req{hreq.method, hreq.path, {}, hreq.body};
    for (const auto &[k, v] : hreq.params)
      req.params.emplace(k, v);
    const auto r = handle(req);
    hres.status = r.status;
    for (const auto &[k, v] : r.headers)
      hres.set_header(k, v);
    hres.set_content(r.body, r.content_type);
  };
  impl_->server.Get(R"(/api/.*)", adapt);
  impl_->server.Post(R"(/api/.*)", adapt);
  impl_->server.Get("/", [](const httplib::Request &, httplib::Response &res) {
    res.set_content("featsplat service: see /api/views\n", "text/plain");
  });
}

Service::~Service() { stop(); }

Response Service::handle(const Request &request) {
  try {
    return impl_->dispatch(request);
  } catch (const Error &e) {
    return error_response(status_for(e.kind()), to_string(e.kind()), e.detail());
  } catch (const std::exception &e) {
    return error_response(500, "Internal", e.what());
  }
}

int Service::bind(const std::string &host, int port) {
  if (port == 0) {
    impl_->bound_port = impl_->server.bind_to_any_port(host);
  } else {
    if (!impl_->server.bind_to_port(host, port))
      throw Error(ErrorKind::Io, "cannot bind " + host + ":" + std::to_string(port));
    impl_->bound_port = port;
  }
  if (impl_->bound_port <= 0)
    throw Error(ErrorKind::Io, "cannot bind " + host);
  return impl_->bound_port;
}

void Service::run() { impl_->server.listen_after_bind(); }

void Service::listen(const std::string &host, int port) {
  bind(host, port);
  log::info("serving on http://" + host + ":" + std::to_string(impl_->bound_port));
  run();
}

void Service::stop() {
  if (impl_ && impl_->server.is_running())
    impl_->server.stop();
}

int Service::port() const { return impl_->bound_port; }

} // namespace featsplat::service
