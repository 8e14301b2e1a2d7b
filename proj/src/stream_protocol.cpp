#include "asyncnarrate/stream_protocol.hpp"

#include <array>

namespace asyncnarrate {

namespace {

struct Prefix {
  EventKind kind;
  std::string_view text;
};

constexpr std::array<Prefix, 3> kPrefixes{{
    {EventKind::Thinking, "Thinking: "},
    {EventKind::Content, "Content: "},
    {EventKind::Answer, "Answer: "},
}};

constexpr std::string_view kComplete = "COMPLETE";

}  // namespace

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Thinking: return "Thinking";
    case EventKind::Content: return "Content";
    case EventKind::Answer: return "Answer";
    case EventKind::Complete: return "Complete";
  }
  return "?";
}

std::string_view json_name(EventKind kind) {
  switch (kind) {
    case EventKind::Thinking: return "thinking";
    case EventKind::Content: return "content";
    case EventKind::Answer: return "answer";
    case EventKind::Complete: return "complete";
  }
  return "?";
}

std::optional<EventKind> kind_from_json_name(std::string_view name) {
  if (name == "thinking") return EventKind::Thinking;
  if (name == "content") return EventKind::Content;
  if (name == "answer") return EventKind::Answer;
  if (name == "complete") return EventKind::Complete;
  return std::nullopt;
}

bool contains_line_break(std::string_view text) {
  return text.find_first_of("\r\n") != std::string_view::npos;
}

std::string encode_event(const ReasoningEvent& event) {
  if (contains_line_break(event.payload)) {
    throw ProtocolError(ProtocolErrc::LineBreak, "payload of seq " + std::to_string(event.seq));
  }
  if (event.kind == EventKind::Complete) {
    if (!event.payload.empty()) {
      throw ProtocolError(ProtocolErrc::InvalidEvent, "COMPLETE carries no payload");
    }
    return std::string(kComplete);
  }
  for (const auto& p : kPrefixes) {
    if (p.kind == event.kind) {
      std::string line(p.text);
      line += event.payload;
      return line;
    }
  }
  throw ProtocolError(ProtocolErrc::InvalidEvent);
}

ReasoningEvent parse_event(std::string_view line) {
  if (line.empty()) throw ProtocolError(ProtocolErrc::Empty);
  if (line == kComplete) return ReasoningEvent{EventKind::Complete, {}, 0, 0.0};
  for (const auto& p : kPrefixes) {
    if (line.starts_with(p.text)) {
      auto payload = line.substr(p.text.size());
      if (contains_line_break(payload)) throw ProtocolError(ProtocolErrc::LineBreak);
      return ReasoningEvent{p.kind, std::string(payload), 0, 0.0};
    }
  }
  std::string head(line.substr(0, 32));
  throw ProtocolError(ProtocolErrc::UnknownPrefix, head);
}

void StreamValidator::accept(const ReasoningEvent& event) {
  if (state_.closed) throw GrammarError(GrammarErrc::AfterClose);
  if (state_.last_seq && event.seq <= *state_.last_seq) {
    throw GrammarError(GrammarErrc::SeqOrder,
                       std::to_string(event.seq) + " after " + std::to_string(*state_.last_seq));
  }
  switch (event.kind) {
    case EventKind::Thinking:
    case EventKind::Content:
      if (state_.seen_answer) throw GrammarError(GrammarErrc::AfterAnswer);
      break;
    case EventKind::Answer:
      state_.seen_answer = true;
      break;
    case EventKind::Complete:
      if (!state_.seen_answer) throw GrammarError(GrammarErrc::PrematureComplete);
      state_.closed = true;
      break;
  }
  state_.last_seq = event.seq;
}

void StreamValidator::finish() const {
  if (!state_.closed) throw GrammarError(GrammarErrc::Incomplete);
}

void validate_stream(std::span<const ReasoningEvent> events) {
  StreamValidator v;
  for (const auto& e : events) v.accept(e);
  v.finish();
}

}  // namespace asyncnarrate
