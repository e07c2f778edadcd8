#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>

namespace sprag {

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::map<std::string, std::string> headers;
};

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

// Outbound connections attempted by post_json since process start. Stub mode
// must leave this at zero.
std::uint64_t network_connection_attempts();

// POSTs a JSON body. Connection-level failures throw Error(Transport); any HTTP
// status is returned to the caller.
HttpReply post_json(const std::string& url, const std::string& body,
                    const std::map<std::string, std::string>& headers,
                    std::chrono::milliseconds timeout);

using HttpHandler = std::function<HttpReply(const HttpRequest&)>;

// Thin adapter over an embedded HTTP server. All routing lives in the handler.
class HttpServer {
 public:
  explicit HttpServer(HttpHandler handler, std::string static_dir = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // port 0 picks a free port; returns the bound port or -1.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  bool listen_after_bind();
  // Blocks until a listen_after_bind() running on another thread accepts or exits.
  void wait_until_ready() const;
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sprag
