#include "asyncnarrate/ws_server.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <iostream>
#include <mutex>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast.hpp>

namespace asyncnarrate {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, const WsServer::Options& options, ConnectionRegistry& registry)
      : ws_(std::move(socket)), options_(options), registry_(registry) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

  void shutdown() {
    std::shared_ptr<NarrationPipeline> p;
    std::shared_ptr<ConnectionContext> c;
    {
      std::lock_guard lock(mutex_);
      p = pipeline_;
      c = conn_;
    }
    if (p) p->shutdown();
    if (c) close_connection(*c);
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    PipelineDeps deps = options_.make_deps ? options_.make_deps() : PipelineDeps{};
    {
      std::lock_guard lock(mutex_);
      conn_ = registry_.open(std::make_shared<SessionContext>(), options_.connection);
      pipeline_ = std::make_shared<NarrationPipeline>(options_.pipeline, std::move(deps), conn_);
    }
    std::weak_ptr<WsSession> weak = shared_from_this();
    auto executor = ws_.get_executor();
    conn_->set_notifier([weak, executor] {
      net::post(executor, [weak] {
        if (auto self = weak.lock()) self->pump();
      });
    });
    // Initial state so the client knows where it stands.
    conn_->send_control(ControlMessage::state(conn_->session().state()));
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      finish();
      return;
    }
    RawMessage raw{ws_.got_text() ? Channel::Text : Channel::Binary, beast::buffers_to_string(buffer_.data())};
    buffer_.consume(buffer_.size());
    pipeline_->handle(raw);
    do_read();
  }

  void pump() {
    if (writing_ || closed_) return;
    auto out = conn_->next_outbound();
    if (!out) return;
    writing_ = true;
    out_ = std::move(out->data);
    ws_.text(out->channel == Channel::Text);
    ws_.binary(out->channel == Channel::Binary);
    ws_.async_write(net::buffer(out_), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    writing_ = false;
    if (ec) {
      finish();
      return;
    }
    pump();
  }

  void finish() {
    if (closed_) return;
    closed_ = true;
    // Joining pipeline threads here is fine: none of them wait on the
    // io_context.
    shutdown();
  }

  websocket::stream<beast::tcp_stream> ws_;
  const WsServer::Options& options_;
  ConnectionRegistry& registry_;
  beast::flat_buffer buffer_;
  std::string out_;
  bool writing_ = false;
  bool closed_ = false;
  std::shared_ptr<ConnectionContext> conn_;
  std::mutex mutex_;
  std::shared_ptr<NarrationPipeline> pipeline_;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  using OnUpgrade = std::function<void(tcp::socket, http::request<http::string_body>)>;

  HttpSession(tcp::socket socket, OnUpgrade on_upgrade)
      : stream_(std::move(socket)), on_upgrade_(std::move(on_upgrade)) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

 private:
  void on_read(beast::error_code ec, std::size_t) {
    if (ec) return;
    if (websocket::is_upgrade(req_) && req_.target() == "/ws") {
      stream_.expires_never();
      on_upgrade_(stream_.release_socket(), std::move(req_));
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->keep_alive(false);
    res->set(http::field::content_type, "text/plain");
    if (req_.method() == http::verb::get && req_.target() == "/healthz") {
      res->result(http::status::ok);
      res->body() = "ok\n";
    } else {
      res->result(http::status::not_found);
      res->body() = "not found\n";
    }
    res->prepare_payload();
    auto self = shared_from_this();
    http::async_write(stream_, *res, [self, res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  OnUpgrade on_upgrade_;
};

}  // namespace

struct WsServer::Impl {
  Options options;
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  ConnectionRegistry registry;
  std::vector<std::thread> threads;
  std::mutex mutex;
  std::condition_variable stopped_cv;
  bool stopped = false;
  std::vector<std::weak_ptr<WsSession>> sessions;

  void do_accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      auto http_session = std::make_shared<HttpSession>(
          std::move(socket), [this](tcp::socket s, http::request<http::string_body> req) {
            auto ws = std::make_shared<WsSession>(std::move(s), options, registry);
            {
              std::lock_guard lock(mutex);
              sessions.erase(std::remove_if(sessions.begin(), sessions.end(),
                                            [](const auto& w) { return w.expired(); }),
                             sessions.end());
              sessions.push_back(ws);
            }
            ws->run(std::move(req));
          });
      http_session->run();
      do_accept();
    });
  }
};

WsServer::WsServer(Options options) : impl_(std::make_unique<Impl>()) { impl_->options = std::move(options); }

WsServer::~WsServer() { stop(); }

ConnectionRegistry& WsServer::registry() { return impl_->registry; }

unsigned short WsServer::start() {
  auto& im = *impl_;
  tcp::endpoint ep(net::ip::make_address(im.options.host), im.options.port);
  im.acceptor.open(ep.protocol());
  im.acceptor.set_option(net::socket_base::reuse_address(true));
  im.acceptor.bind(ep);
  im.acceptor.listen(net::socket_base::max_listen_connections);
  const auto port = im.acceptor.local_endpoint().port();
  im.do_accept();
  for (int i = 0; i < std::max(1, im.options.io_threads); ++i) {
    im.threads.emplace_back([&im] { im.ioc.run(); });
  }
  return port;
}

void WsServer::stop() {
  if (!impl_) return;
  auto& im = *impl_;
  std::vector<std::shared_ptr<WsSession>> live;
  {
    std::lock_guard lock(im.mutex);
    if (im.stopped) return;
    im.stopped = true;
    for (auto& w : im.sessions) {
      if (auto s = w.lock()) live.push_back(std::move(s));
    }
  }
  for (auto& s : live) s->shutdown();
  live.clear();
  beast::error_code ignored;
  im.acceptor.close(ignored);
  im.ioc.stop();
  for (auto& t : im.threads) {
    if (t.joinable()) t.join();
  }
  im.stopped_cv.notify_all();
}

void WsServer::wait() {
  std::unique_lock lock(impl_->mutex);
  impl_->stopped_cv.wait(lock, [&] { return impl_->stopped; });
}

}  // namespace asyncnarrate
