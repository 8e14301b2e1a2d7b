#pragma once

// Dual-channel connection endpoint: JSON control messages on the text
// channel, 20 ms PCM frames on the binary channel.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "asyncnarrate/error.hpp"
#include "asyncnarrate/session.hpp"
#include "asyncnarrate/stream_protocol.hpp"

namespace asyncnarrate {

using json = nlohmann::json;

enum class ControlType {
  StartTask,
  UserText,
  Interrupt,
  ConfigUpdate,
  State,
  ReasoningEventMsg,
  NarrationText,
  TranscriptPartial,
  TranscriptFinal,
  TtfaReport,
  Complete,
  Error,
};

std::string_view to_string(ControlType type);
std::optional<ControlType> control_type_from_string(std::string_view s);
// start_task, user_text, interrupt, config_update
bool is_client_type(ControlType type);

struct ControlMessage {
  ControlType type = ControlType::Error;
  json body = json::object();  // type-specific fields, without "type"

  std::string serialize() const;

  static ControlMessage state(PipelineState s);
  static ControlMessage reasoning_event(const ReasoningEvent& ev);
  static ControlMessage narration_text(std::string_view text, std::uint64_t seq);
  static ControlMessage transcript(bool final, std::string_view text);
  static ControlMessage ttfa_report(double ms);
  static ControlMessage complete();
  static ControlMessage error(std::string_view code, std::string_view detail);

  static ControlMessage start_task(std::string_view scenario, std::string_view query);
  static ControlMessage user_text(std::string_view text);
  static ControlMessage interrupt(std::optional<double> client_t_ms = std::nullopt);
};

// Parses and schema-checks a client->server control message.
// Throws TransportError{BadControl}.
ControlMessage parse_control(std::string_view text);

inline constexpr int kFrameMs = 20;
bool is_supported_rate(int sample_rate);
inline constexpr std::size_t samples_per_frame(int sample_rate) {
  return static_cast<std::size_t>(sample_rate / 50);
}

struct AudioFrame {
  std::vector<std::int16_t> samples;
  int sample_rate = 16000;

  // Little-endian 16-bit PCM.
  std::string to_bytes() const;
  // Throws TransportError{BadFrameLength} unless bytes hold exactly 20 ms.
  static AudioFrame from_bytes(std::string_view bytes, int sample_rate);
};

enum class Channel { Text, Binary };

struct RawMessage {
  Channel channel = Channel::Text;
  std::string data;
};

using Inbound = std::variant<ControlMessage, AudioFrame>;

// Classification depends only on the channel, never on content.
Inbound dispatch_inbound(const RawMessage& raw, int sample_rate);

struct Outbound {
  Channel channel = Channel::Text;
  std::string data;
  double at = 0.0;  // session clock, set when taken by the writer
};

struct ConnectionTallies {
  std::uint64_t messages_in = 0;
  std::uint64_t frames_in = 0;
  std::uint64_t messages_out = 0;
  std::uint64_t frames_out = 0;
  std::uint64_t frames_dropped = 0;
  std::optional<double> first_audio_out_at;
  std::optional<double> last_audio_out_at;
};

class ConnectionRegistry;

class ConnectionContext {
 public:
  struct Config {
    std::size_t audio_queue_frames = 200;
  };

  ConnectionContext(std::string id, std::shared_ptr<SessionContext> session, Config config);
  ~ConnectionContext();
  ConnectionContext(const ConnectionContext&) = delete;
  ConnectionContext& operator=(const ConnectionContext&) = delete;

  const std::string& id() const noexcept { return id_; }
  SessionContext& session() noexcept { return *session_; }
  std::shared_ptr<SessionContext> session_ptr() const { return session_; }
  double opened_at() const noexcept { return opened_at_; }
  std::optional<double> closed_at() const;

  // Both throw TransportError{Closed} after close.
  void send_control(const ControlMessage& msg);
  // Bounded; on overflow the oldest queued frame is dropped.
  void send_audio(const AudioFrame& frame);
  std::size_t flush_audio();
  std::size_t audio_queue_length() const;
  std::size_t control_queue_length() const;

  // Writer side. Control is preferred over audio; cross-channel order is
  // unspecified, per-channel order is preserved.
  std::optional<Outbound> next_outbound();
  std::optional<Outbound> wait_outbound(std::chrono::milliseconds timeout);
  // Called (outside the lock) whenever something is enqueued.
  void set_notifier(std::function<void()> notifier);

  void note_inbound(const Inbound& in);

  // Idempotent.
  void close();
  bool is_open() const;
  bool audio_queue_allocated() const;

  ConnectionTallies tallies() const;

 private:
  friend class ConnectionRegistry;

  void notify();

  std::string id_;
  std::shared_ptr<SessionContext> session_;
  Config config_;
  double opened_at_ = 0.0;
  std::optional<double> closed_at_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::string> control_;
  std::unique_ptr<std::deque<std::string>> audio_;
  ConnectionTallies tallies_;
  bool open_ = true;
  std::function<void()> notifier_;
  std::function<void(const std::string&)> on_close_;
};

// Active-connection registry; safe for concurrent use.
class ConnectionRegistry {
 public:
  ConnectionRegistry();
  ~ConnectionRegistry();

  std::shared_ptr<ConnectionContext> open(std::shared_ptr<SessionContext> session,
                                          ConnectionContext::Config config = {});
  std::size_t active_count() const;
  // Audio queues still held by any connection opened through this registry.
  std::size_t allocated_audio_queues() const;

 private:
  struct State;
  std::shared_ptr<State> state_;
};

// Removes from the registry, rejects further sends, destroys queues.
void close_connection(ConnectionContext& ctx);

// In-process client used by tests and the bench: drains the connection the
// way the socket writer would and records what it saw.
class LoopbackPeer {
 public:
  struct Received {
    Channel channel;
    std::string data;
    double at;
  };

  explicit LoopbackPeer(std::shared_ptr<ConnectionContext> conn);
  ~LoopbackPeer();
  LoopbackPeer(const LoopbackPeer&) = delete;
  LoopbackPeer& operator=(const LoopbackPeer&) = delete;

  void stop();

  std::vector<Received> received() const;
  std::vector<json> controls() const;
  std::vector<json> controls_of(std::string_view type) const;
  std::size_t frame_count() const;
  // Concatenated PCM bytes of every frame received.
  std::string audio_bytes() const;

  // Waits until pred() holds (checked after every received item).
  bool wait_until(const std::function<bool(const LoopbackPeer&)>& pred,
                  std::chrono::milliseconds timeout) const;

 private:
  void run();

  std::shared_ptr<ConnectionContext> conn_;
  mutable std::mutex mutex_;
  mutable std::condition_variable cv_;
  std::vector<Received> received_;
  std::atomic<bool> stop_{false};
  std::thread thread_;
};

}  // namespace asyncnarrate
