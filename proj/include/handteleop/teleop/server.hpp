// Copyright 2026 The handteleop Authors
// SPDX-License-Identifier: Apache-2.0

// HTTP + WebSocket front end for TeleopSession, on Boost.Beast.
//
//   GET /model         model descriptor
//   GET /model/schema  JSON Schema for the descriptor
//   GET /health        liveness and session count
//   any path, Upgrade: websocket  one TeleopSession per connection

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "handteleop/hand_model.hpp"
#include "handteleop/retarget.hpp"
#include "handteleop/teleop/session.hpp"

namespace handteleop::teleop {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

struct ServerConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8765;  // 0 picks a free port
  int io_threads = 1;
  int solver_threads = 2;
  std::chrono::milliseconds heartbeat_interval{2000};
  std::chrono::milliseconds reap_after{30000};
  RetargetParams defaults;
};

struct ServerShared {
  std::shared_ptr<const HandModel> model;
  ServerConfig config;
  std::string descriptor;  // serialized once
  std::string schema;
  asio::thread_pool* solvers = nullptr;
  std::atomic<std::size_t> sessions{0};
  std::atomic<std::uint64_t> next_session{1};
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
};

namespace detail {

class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(tcp::socket&& socket, std::shared_ptr<ServerShared> shared)
      : ws_(std::move(socket)),
        timer_(ws_.get_executor()),
        shared_(std::move(shared)),
        session_(shared_->model, shared_->config.defaults, "s" + std::to_string(shared_->next_session++)) {
    ++shared_->sessions;
  }

  ~WsConnection() { --shared_->sessions; }

  void start(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&WsConnection::on_accept, shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    last_rx_ = std::chrono::steady_clock::now();
    arm_heartbeat();
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsConnection::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      closed_ = true;
      timer_.cancel();
      return;
    }
    last_rx_ = std::chrono::steady_clock::now();
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    json msg;
    try {
      msg = json::parse(text);
    } catch (const json::exception& e) {
      send(error_message("bad_json", e.what()));
      do_read();
      return;
    }
    if (mailbox_.offer(msg)) solve({std::move(msg), 0});
    do_read();
  }

  // Runs the session on the solver pool; the reply and the hand-off to the
  // next queued message happen back on the connection strand.
  void solve(CoalescingMailbox::Item item) {
    asio::post(*shared_->solvers, [self = shared_from_this(), item = std::move(item)]() mutable {
      json reply = self->session_.handle(item.msg, item.dropped);
      asio::post(self->ws_.get_executor(), [self, reply = std::move(reply)]() mutable {
        if (!reply.is_null()) self->send(reply);
        if (auto next = self->mailbox_.finish()) self->solve(std::move(*next));
      });
    });
  }

  void send(const json& msg) {
    if (closed_) return;
    outbox_.push_back(msg.dump());
    if (outbox_.size() == 1) do_write();
  }

  void do_write() {
    ws_.text(true);
    ws_.async_write(asio::buffer(outbox_.front()),
                    beast::bind_front_handler(&WsConnection::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) {
      closed_ = true;
      outbox_.clear();
      return;
    }
    outbox_.pop_front();
    if (!outbox_.empty()) do_write();
  }

  void arm_heartbeat() {
    timer_.expires_after(shared_->config.heartbeat_interval);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closed_) return;
      const auto now = std::chrono::steady_clock::now();
      if (now - self->last_rx_ >= self->shared_->config.reap_after) {
        self->reap();
        return;
      }
      const auto uptime = std::chrono::duration_cast<std::chrono::milliseconds>(now - self->shared_->started).count();
      self->send({{"type", "heartbeat"}, {"session_id", self->session_.id()}, {"server_ms", uptime}});
      self->arm_heartbeat();
    });
  }

  void reap() {
    closed_ = true;
    ws_.async_close(websocket::close_reason(websocket::close_code::going_away, "idle timeout"),
                    [self = shared_from_this()](beast::error_code) {});
  }

  websocket::stream<beast::tcp_stream> ws_;
  asio::steady_timer timer_;
  beast::flat_buffer buffer_;
  std::shared_ptr<ServerShared> shared_;
  TeleopSession session_;
  CoalescingMailbox mailbox_;
  std::deque<std::string> outbox_;
  std::chrono::steady_clock::time_point last_rx_;
  bool closed_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket&& socket, std::shared_ptr<ServerShared> shared)
      : stream_(std::move(socket)), shared_(std::move(shared)) {}

  void start() {
    asio::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpConnection::do_read, shared_from_this()));
  }

 private:
  void do_read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpConnection::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) return;
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      std::make_shared<WsConnection>(stream_.release_socket(), shared_)->start(std::move(req_));
      return;
    }
    respond();
  }

  void respond() {
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->keep_alive(req_.keep_alive());
    res->set(http::field::server, "handteleop");
    res->set(http::field::access_control_allow_origin, "*");
    res->set(http::field::content_type, "application/json");
    const std::string target(req_.target());
    const std::string path = target.substr(0, target.find('?'));
    if (req_.method() != http::verb::get) {
      res->result(http::status::method_not_allowed);
      res->body() = json{{"error", "only GET is supported"}}.dump();
    } else if (path == "/model") {
      res->result(http::status::ok);
      res->body() = shared_->descriptor;
    } else if (path == "/model/schema") {
      res->result(http::status::ok);
      res->set(http::field::content_type, "application/schema+json");
      res->body() = shared_->schema;
    } else if (path == "/health") {
      res->result(http::status::ok);
      const auto up = std::chrono::duration<double>(std::chrono::steady_clock::now() - shared_->started).count();
      res->body() = json{{"status", "ok"},
                         {"sessions", shared_->sessions.load()},
                         {"uptime_s", up},
                         {"dof", shared_->model->dof()},
                         {"protocol_version", kProtocolVersion}}
                        .dump();
    } else {
      res->result(http::status::not_found);
      res->body() = json{{"error", "no route for " + path}}.dump();
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec || !res->keep_alive()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->do_read();
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  std::shared_ptr<ServerShared> shared_;
};

}  // namespace detail

class TeleopServer {
 public:
  TeleopServer(std::shared_ptr<const HandModel> model, ServerConfig config)
      : ioc_(std::max(1, config.io_threads)), solvers_(static_cast<std::size_t>(std::max(1, config.solver_threads))),
        acceptor_(asio::make_strand(ioc_)), shared_(std::make_shared<ServerShared>()) {
    if (!model) throw ValidationError("server needs a model");
    config.defaults.validate();
    if (config.heartbeat_interval.count() <= 0 || config.reap_after.count() <= 0)
      throw ValidationError("heartbeat and reap intervals must be positive");
    shared_->model = std::move(model);
    shared_->config = std::move(config);
    shared_->descriptor = model_descriptor(*shared_->model).dump();
    shared_->schema = model_descriptor_schema().dump();
    shared_->solvers = &solvers_;
  }

  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  ~TeleopServer() { stop(); }

  /// Binds and starts serving on background threads.
  void start() {
    const auto& cfg = shared_->config;
    boost::system::error_code ec;
    const auto address = asio::ip::make_address(cfg.host, ec);
    if (ec) throw ValidationError("bad listen address '" + cfg.host + "'");
    const tcp::endpoint ep(address, cfg.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(asio::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen(asio::socket_base::max_listen_connections);
    port_ = acceptor_.local_endpoint().port();
    do_accept();
    for (int i = 0; i < std::max(1, cfg.io_threads); ++i) threads_.emplace_back([this] { ioc_.run(); });
  }

  /// Blocks until stop() is called from elsewhere (e.g. a signal handler).
  void wait() {
    for (auto& t : threads_)
      if (t.joinable()) t.join();
  }

  void stop() {
    if (stopped_.exchange(true)) return;
    ioc_.stop();
    for (auto& t : threads_)
      if (t.joinable() && t.get_id() != std::this_thread::get_id()) t.join();
    solvers_.stop();
    solvers_.join();
  }

  std::uint16_t port() const { return port_; }
  std::size_t session_count() const { return shared_->sessions.load(); }
  asio::io_context& io_context() { return ioc_; }

 private:
  void do_accept() {
    acceptor_.async_accept(asio::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (!ec) std::make_shared<detail::HttpConnection>(std::move(socket), shared_)->start();
      if (acceptor_.is_open()) do_accept();
    });
  }

  asio::io_context ioc_;
  asio::thread_pool solvers_;
  tcp::acceptor acceptor_;
  std::shared_ptr<ServerShared> shared_;
  std::vector<std::thread> threads_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopped_{false};
};

}  // namespace handteleop::teleop
