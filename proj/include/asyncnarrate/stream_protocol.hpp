#pragma once

// Backend-to-agent event stream: prefix-tagged text lines closed by COMPLETE.
//
//   Thinking: <payload>    intermediate reasoning step
//   Content: <payload>     status update
//   Answer: <payload>      final response (may span several lines)
//   COMPLETE               terminal signal
//
// Accepted stream shape: (Thinking | Content)* Answer+ Complete.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "asyncnarrate/error.hpp"

namespace asyncnarrate {

enum class EventKind { Thinking, Content, Answer, Complete };

std::string_view to_string(EventKind kind);
// Lower-case name used in JSON ("thinking", "content", ...).
std::string_view json_name(EventKind kind);
std::optional<EventKind> kind_from_json_name(std::string_view name);

struct ReasoningEvent {
  EventKind kind = EventKind::Thinking;
  std::string payload;
  std::uint64_t seq = 0;
  double t_ms = 0.0;

  friend bool operator==(const ReasoningEvent&, const ReasoningEvent&) = default;
};

bool contains_line_break(std::string_view text);

// Throws ProtocolError{LineBreak} for payloads with CR/LF and
// ProtocolError{InvalidEvent} for a Complete carrying a payload.
std::string encode_event(const ReasoningEvent& event);

// Inverse of encode_event on the wire fields; seq and t_ms are left zero
// for the receiver to stamp.
ReasoningEvent parse_event(std::string_view line);

struct StreamGrammarState {
  bool seen_answer = false;
  bool closed = false;
  std::optional<std::uint64_t> last_seq;
};

// Incremental validator; feed events in arrival order.
class StreamValidator {
 public:
  void accept(const ReasoningEvent& event);
  // Throws GrammarError{Incomplete} unless COMPLETE was seen.
  void finish() const;

  const StreamGrammarState& state() const noexcept { return state_; }

 private:
  StreamGrammarState state_;
};

void validate_stream(std::span<const ReasoningEvent> events);

}  // namespace asyncnarrate
