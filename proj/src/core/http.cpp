#include "http.hpp"

#include <atomic>

#include <fmt/format.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "error.hpp"

namespace sprag {
namespace {

std::atomic<std::uint64_t> g_connection_attempts{0};

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    fail(ErrorCode::Config, fmt::format("url '{}' has no scheme", url));
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

std::uint64_t network_connection_attempts() { return g_connection_attempts.load(); }

HttpReply post_json(const std::string& url, const std::string& body,
                    const std::map<std::string, std::string>& headers,
                    std::chrono::milliseconds timeout) {
  const auto parsed = split_url(url);
  httplib::Client client(parsed.origin);
  if (!client.is_valid()) fail(ErrorCode::Config, fmt::format("invalid url '{}'", url));
  const auto secs = timeout.count() / 1000;
  const auto usecs = (timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);

  ++g_connection_attempts;
  auto res = client.Post(parsed.path, h, body, "application/json");
  if (!res) {
    fail(ErrorCode::Transport,
         fmt::format("POST {} failed: {}", url, httplib::to_string(res.error())));
  }
  HttpReply reply;
  reply.status = res->status;
  reply.body = res->body;
  reply.content_type = res->get_header_value("Content-Type");
  for (const auto& [k, v] : res->headers) reply.headers[k] = v;
  return reply;
}

struct HttpServer::Impl {
  httplib::Server server;
  HttpHandler handler;
};

HttpServer::HttpServer(HttpHandler handler, std::string static_dir) : impl_(std::make_unique<Impl>()) {
  impl_->handler = std::move(handler);
  if (!static_dir.empty()) impl_->server.set_mount_point("/", static_dir);

  auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    HttpRequest request;
    request.method = req.method;
    request.path = req.path;
    request.body = req.body;
    for (const auto& [k, v] : req.params) request.query.emplace(k, v);
    HttpReply reply;
    try {
      reply = impl_->handler(request);
    } catch (const std::exception&) {
      reply.status = 500;
      reply.body = R"({"error":{"code":"internal","message":"unhandled error"}})";
    }
    res.status = reply.status;
    for (const auto& [k, v] : reply.headers) res.set_header(k, v);
    res.set_content(reply.body, reply.content_type);
  };
  const char* pattern = "/api/.*";
  impl_->server.Get(pattern, dispatch);
  impl_->server.Post(pattern, dispatch);
  impl_->server.Options(pattern, dispatch);
  impl_->server.Put(pattern, dispatch);
  impl_->server.Delete(pattern, dispatch);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen_after_bind() { return impl_->server.listen_after_bind(); }

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

bool HttpServer::running() const { return impl_->server.is_running(); }

}  // namespace sprag
