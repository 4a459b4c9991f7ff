#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

namespace featsplat::service {

struct ServiceOptions {
  /// Base URL of the text-embedding bridge (POST <url>/embed). Defaults to $FEATSPLAT_BRIDGE_URL.
  std::optional<std::string> bridge_url;
};

/// Transport-independent request/response, so handlers are testable without sockets.
struct Request {
  std::string method; // GET or POST
  std::string path;
  std::map<std::string, std::string> params;
  std::string body;
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

/// HTTP front end over one project and one immutable checkpoint.
class Service {
public:
  Service(const std::filesystem::path &project_root, const std::filesystem::path &checkpoint,
          ServiceOptions options = {});
  ~Service();
  Service(const Service &) = delete;
  Service &operator=(const Service &) = delete;

  Response handle(const Request &request);

  /// Binds and serves until stop(). Port 0 picks a free port, readable through port() once bound.
  void listen(const std::string &host, int port);
  /// Binds without serving; returns the bound port. Pair with run().
  int bind(const std::string &host, int port);
  void run();
  void stop();
  int port() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace featsplat::service
