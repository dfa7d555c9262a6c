#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <iostream>
#include <list>
#include <regex>

#include "fdvv/error.hpp"
#include "fdvv/service.hpp"

namespace fdvv::service {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

struct Server::Impl {
  Api& api;
  ServerOptions options;
  asio::io_context io;
  std::optional<tcp::acceptor> acceptor;
  std::thread accept_thread;
  std::mutex mu;
  std::list<std::shared_ptr<tcp::socket>> sockets;
  std::list<std::thread> workers;
  std::atomic<bool> running{false};

  Impl(Api& a, ServerOptions o) : api(a), options(std::move(o)) {}

  void accept_loop() {
    while (running) {
      auto socket = std::make_shared<tcp::socket>(io);
      beast::error_code ec;
      acceptor->accept(*socket, ec);
      if (ec) {
        if (!running) return;
        continue;
      }
      std::lock_guard lock(mu);
      sockets.push_back(socket);
      workers.emplace_back([this, socket] { serve(socket); });
    }
  }

  void serve(std::shared_ptr<tcp::socket> socket) {
    try {
      beast::flat_buffer buffer;
      for (;;) {
        http::request<http::string_body> req;
        beast::error_code ec;
        http::read(*socket, buffer, req, ec);
        if (ec) break;
        if (websocket::is_upgrade(req)) {
          websocket_session(*socket, std::move(req));
          break;
        }
        auto res = respond(req);
        http::write(*socket, res, ec);
        if (ec || !req.keep_alive()) break;
      }
    } catch (const std::exception& e) {
      if (running) std::cerr << "connection error: " << e.what() << '\n';
    }
    beast::error_code ignored;
    socket->shutdown(tcp::socket::shutdown_both, ignored);
    std::lock_guard lock(mu);
    sockets.remove(socket);
  }

  http::response<http::string_body> respond(const http::request<http::string_body>& req) {
    const auto r = api.handle(std::string(req.method_string()), std::string(req.target()), req.body());
    http::response<http::string_body> res{static_cast<http::status>(r.status), req.version()};
    res.set(http::field::content_type, "application/json");
    res.set(http::field::access_control_allow_origin, "*");
    res.keep_alive(req.keep_alive());
    res.body() = r.body.dump();
    res.prepare_payload();
    return res;
  }

  // Streams one JSON record per rendered tick, then a summary message. Further
  // {"trajectory": ...} messages start another press with fresh engine state.
  void websocket_session(tcp::socket& socket, http::request<http::string_body> req) {
    static const std::regex path_re("/ws/sessions/([A-Za-z0-9_.-]+)");
    std::smatch m;
    const std::string target(req.target());
    std::optional<SessionSpec> spec;
    if (std::regex_match(target, m, path_re)) spec = api.session(m[1].str());
    if (!spec) {
      http::response<http::string_body> res{http::status::not_found, req.version()};
      res.set(http::field::content_type, "application/json");
      res.body() = json{{"error", "unknown session"}}.dump();
      res.prepare_payload();
      http::write(socket, res);
      return;
    }
    websocket::stream<tcp::socket&> ws(socket);
    ws.accept(req);
    ws.text(true);

    auto stream_press = [&](const PressTrajectory& trajectory) {
      const auto trace = run_press(spec->table, trajectory, spec->config, VirtualPlant(spec->plant),
                                   spec->target ? &*spec->target : nullptr, spec->presets);
      for (const auto& t : trace.ticks) {
        auto rec = tick_to_json(t);
        rec["type"] = "tick";
        ws.write(asio::buffer(rec.dump()));
      }
      json summary = {{"type", "summary"}, {"ticks", trace.ticks.size()}};
      if (trace.summary) {
        summary["target_velocity_mm_s"] = trace.summary->target_velocity_mm_s;
        summary["mean_abs_error_cN"] = trace.summary->mean_abs_error_cN;
        summary["sd_abs_error_cN"] = trace.summary->sd_abs_error_cN;
        summary["max_abs_error_cN"] = trace.summary->max_abs_error_cN;
      }
      ws.write(asio::buffer(summary.dump()));
    };

    if (spec->trajectory) stream_press(*spec->trajectory);
    for (;;) {
      beast::flat_buffer buf;
      beast::error_code ec;
      ws.read(buf, ec);
      if (ec) return;
      json reply;
      try {
        const auto msg = json::parse(beast::buffers_to_string(buf.data()));
        if (!msg.contains("trajectory")) throw ValidationError("message needs a 'trajectory'");
        stream_press(trajectory_from_request(msg.at("trajectory"), spec->table.travel_range_mm));
        continue;
      } catch (const std::exception& e) {
        reply = {{"type", "error"}, {"error", e.what()}};
      }
      ws.write(asio::buffer(reply.dump()), ec);
      if (ec) return;
    }
  }
};

Server::Server(Api& api, ServerOptions options) : impl_(std::make_unique<Impl>(api, std::move(options))) {}

Server::~Server() { stop(); }

void Server::start() {
  auto& i = *impl_;
  const tcp::endpoint endpoint(asio::ip::make_address(i.options.host), i.options.port);
  i.acceptor.emplace(i.io);
  i.acceptor->open(endpoint.protocol());
  i.acceptor->set_option(asio::socket_base::reuse_address(true));
  i.acceptor->bind(endpoint);
  i.acceptor->listen();
  port_ = i.acceptor->local_endpoint().port();
  i.running = true;
  i.accept_thread = std::thread([&i] { i.accept_loop(); });
}

void Server::stop() {
  auto& i = *impl_;
  if (!i.running.exchange(false)) return;
  beast::error_code ec;
  i.acceptor->cancel(ec);
  i.acceptor->close(ec);
  // A blocking accept is not always woken by close(); poke it with a connection.
  {
    tcp::socket poke(i.io);
    poke.connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port_), ec);
  }
  if (i.accept_thread.joinable()) i.accept_thread.join();
  std::list<std::thread> workers;
  {
    std::lock_guard lock(i.mu);
    for (auto& s : i.sockets) s->shutdown(tcp::socket::shutdown_both, ec);
    workers.swap(i.workers);
  }
  for (auto& t : workers) t.join();
}

}  // namespace fdvv::service
