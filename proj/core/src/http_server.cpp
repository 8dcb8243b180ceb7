#include <httplib.h>

#include "guesswhich/service.hpp"

namespace gw {

struct HttpServer::Impl {
  GameService& service;
  httplib::Server server;

  explicit Impl(GameService& s) : service(s) {}

  void route(const httplib::Request& req, httplib::Response& res) {
    HttpRequest r;
    r.method = req.method;
    r.path = req.path;
    r.body = req.body;
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    const HttpResponse out = service.handle(r);
    res.status = out.status;
    if (out.status != 204) res.set_content(out.body, out.content_type);
  }
};

HttpServer::HttpServer(GameService& service, std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>(service)) {
  // SO_REUSEADDR only: the library default of SO_REUSEPORT would let a second
  // server share an occupied port instead of failing to bind
  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  auto handler = [this](const httplib::Request& req, httplib::Response& res) { impl_->route(req, res); };
  impl_->server.Get(".*", handler);
  impl_->server.Post(".*", handler);
  impl_->server.Put(".*", handler);
  impl_->server.Delete(".*", handler);
  if (!static_dir.empty() && std::filesystem::is_directory(static_dir)) {
    impl_->server.set_mount_point("/ui", static_dir.string());
  }
}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::bind(const std::string& host, int port) { return impl_->server.bind_to_port(host, port); }

int HttpServer::bind_any(const std::string& host) {
  const int port = impl_->server.bind_to_any_port(host);
  return port > 0 ? port : -1;
}

void HttpServer::listen_after_bind() {
  impl_->server.listen_after_bind();
}

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

bool HttpServer::running() const { return impl_->server.is_running(); }

}  // namespace gw
