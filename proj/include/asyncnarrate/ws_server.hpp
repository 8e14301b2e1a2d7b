#pragma once

// WebSocket front end: GET /ws upgrades to a narration session, GET /healthz
// answers "ok". One NarrationPipeline per connection.

#include <functional>
#include <memory>
#include <string>

#include "asyncnarrate/pipeline.hpp"
#include "asyncnarrate/transport.hpp"

namespace asyncnarrate {

class WsServer {
 public:
  struct Options {
    std::string host = "127.0.0.1";
    unsigned short port = 8765;  // 0 picks a free port
    int io_threads = 1;
    PipelineConfig pipeline;
    ConnectionContext::Config connection;
    // Fresh dependencies for each connection.
    std::function<PipelineDeps()> make_deps;
  };

  explicit WsServer(Options options);
  ~WsServer();
  WsServer(const WsServer&) = delete;
  WsServer& operator=(const WsServer&) = delete;

  // Binds and starts serving; returns the bound port.
  unsigned short start();
  void stop();
  // Blocks until stop() is called from another thread or a signal handler.
  void wait();

  ConnectionRegistry& registry();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace asyncnarrate
