#include <doctest.h>

#include <boost/asio.hpp>
#include <boost/beast.hpp>

#include "asyncnarrate/ws_server.hpp"
#include "helpers.hpp"

using namespace asyncnarrate;
using namespace std::chrono_literals;

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

const char* kTrace = R"({"scenario":"math","expected_answer":"4","query":"two plus two"}
{"t_ms":0,"kind":"content","text":"Reading the question about adding two numbers together carefully."}
{"t_ms":100,"kind":"thinking","text":"Two plus two makes four, which we double check by counting on fingers slowly."}
{"t_ms":200,"kind":"answer","text":"4"}
{"t_ms":250,"kind":"complete"}
)";

struct Server {
  std::unique_ptr<WsServer> server;
  unsigned short port = 0;

  Server() {
    auto lib = std::make_shared<TraceLibrary>();
    lib->add(parse_trace(kTrace));
    WsServer::Options o;
    o.port = 0;
    o.make_deps = [lib] {
      PipelineDeps d;
      d.traces = lib;
      return d;
    };
    server = std::make_unique<WsServer>(o);
    port = server->start();
  }
};

struct Client {
  net::io_context ioc;
  websocket::stream<tcp::socket> ws{ioc};
  std::vector<json> controls;
  std::size_t frames = 0;
  std::size_t frame_bytes = 0;

  explicit Client(unsigned short port) {
    tcp::resolver resolver(ioc);
    net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws.handshake("127.0.0.1", "/ws");
  }
  ~Client() {
    beast::error_code ec;
    ws.close(websocket::close_code::normal, ec);
  }

  void send(const json& j) {
    ws.text(true);
    ws.write(net::buffer(j.dump()));
  }

  // Reads until pred holds; false on timeout.
  bool read_until(const std::function<bool()>& pred, std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (!pred()) {
      if (std::chrono::steady_clock::now() >= deadline) return false;
      beast::flat_buffer buf;
      ws.next_layer().non_blocking(false);
      // Bound each read so a silent server cannot hang the test.
      ::timeval tv{0, 50000};
      ::setsockopt(ws.next_layer().native_handle(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
      beast::error_code ec;
      ws.read(buf, ec);
      if (ec) {
        if (ec == net::error::would_block || ec == net::error::try_again || ec == net::error::timed_out) continue;
        return false;
      }
      if (ws.got_text()) {
        controls.push_back(json::parse(beast::buffers_to_string(buf.data())));
      } else {
        ++frames;
        frame_bytes += buf.size();
      }
    }
    return true;
  }

  std::optional<json> last_of(const std::string& type) const {
    for (auto it = controls.rbegin(); it != controls.rend(); ++it) {
      if ((*it)["type"] == type) return *it;
    }
    return std::nullopt;
  }
  std::size_t count_of(const std::string& type) const {
    return std::count_if(controls.begin(), controls.end(), [&](const json& j) { return j["type"] == type; });
  }
};

int http_get(unsigned short port, const std::string& target, std::string* body = nullptr) {
  net::io_context ioc;
  beast::tcp_stream stream(ioc);
  tcp::resolver resolver(ioc);
  stream.connect(resolver.resolve("127.0.0.1", std::to_string(port)));
  http::request<http::empty_body> req{http::verb::get, target, 11};
  req.set(http::field::host, "127.0.0.1");
  http::write(stream, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(stream, buf, res);
  if (body) *body = res.body();
  return static_cast<int>(res.result_int());
}

}  // namespace

TEST_CASE("health and unknown paths") {
  Server s;
  std::string body;
  CHECK(http_get(s.port, "/healthz", &body) == 200);
  CHECK(body == "ok\n");
  CHECK(http_get(s.port, "/nope") == 404);
  CHECK(http_get(s.port, "/ws") == 404);  // not an upgrade
}

TEST_CASE("a task streams events and binary audio frames") {
  Server s;
  Client c(s.port);
  REQUIRE(c.read_until([&] { return c.count_of("state") >= 1; }, 2s));
  CHECK(c.controls.front()["value"] == "listening");

  c.send({{"type", "start_task"}, {"scenario", "math"}, {"query", "two plus two"}});
  REQUIRE(c.read_until([&] { return c.count_of("complete") == 1 && c.frames >= 5; }, 5s));
  CHECK(c.count_of("reasoning_event") == 3);
  CHECK(c.count_of("ttfa_report") == 1);
  CHECK(c.count_of("narration_text") >= 1);
  CHECK(c.frame_bytes == c.frames * 640);  // 20 ms of 16 kHz PCM16 each
  auto ev = c.controls[1];
  CHECK(ev["type"] == "state");
  CHECK(ev["value"] == "processing");
  CHECK(s.server->registry().active_count() == 1);
}

TEST_CASE("interrupt returns to listening within 250 ms") {
  Server s;
  Client c(s.port);
  c.send({{"type", "start_task"}, {"scenario", "math"}, {"query", "two plus two"}});
  REQUIRE(c.read_until(
      [&] {
        auto st = c.last_of("state");
        return st && (*st)["value"] == "speaking";
      },
      3s));
  const auto t0 = std::chrono::steady_clock::now();
  c.send({{"type", "interrupt"}, {"client_t_ms", 1.0}});
  REQUIRE(c.read_until(
      [&] {
        auto st = c.last_of("state");
        return st && (*st)["value"] == "listening";
      },
      1s));
  CHECK(testutil::ms_since(t0) <= 250);
}

TEST_CASE("bad traffic gets error messages and the connection survives") {
  Server s;
  Client c(s.port);
  c.ws.text(true);
  c.ws.write(net::buffer(std::string("{\"type\":\"teleport\"}")));
  c.ws.binary(true);
  c.ws.write(net::buffer(std::string(100, '\0')));
  REQUIRE(c.read_until([&] { return c.count_of("error") == 2; }, 2s));
  CHECK(c.controls[1]["code"] == "TransportError{BadControl}");
  CHECK(c.controls[2]["code"] == "TransportError{BadFrameLength}");
  c.send({{"type", "start_task"}, {"scenario", "math"}, {"query", "x"}});
  CHECK(c.read_until([&] { return c.count_of("complete") == 1; }, 5s));
}

TEST_CASE("closing the socket releases the connection") {
  Server s;
  {
    Client c(s.port);
    REQUIRE(c.read_until([&] { return c.count_of("state") >= 1; }, 2s));
    CHECK(s.server->registry().active_count() == 1);
  }
  const auto t0 = std::chrono::steady_clock::now();
  while (s.server->registry().active_count() != 0 && testutil::ms_since(t0) < 2000) std::this_thread::sleep_for(5ms);
  CHECK(s.server->registry().active_count() == 0);
  CHECK(s.server->registry().allocated_audio_queues() == 0);
}
