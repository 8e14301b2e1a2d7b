#pragma once

// Reasoning backends: scripted-trace replay and the external streaming
// adapter. Both deliver ReasoningEvents with seq 0..n-1 into a sink.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "asyncnarrate/cancel.hpp"
#include "asyncnarrate/error.hpp"
#include "asyncnarrate/stream_protocol.hpp"

namespace asyncnarrate {

enum class Scenario { Math, Travel, Research };
std::string_view to_string(Scenario s);
std::optional<Scenario> scenario_from_string(std::string_view s);

struct TraceStep {
  double t_ms = 0.0;
  EventKind kind = EventKind::Thinking;
  std::string text;
};

struct ScriptedTrace {
  Scenario scenario = Scenario::Math;
  std::string query;
  std::string expected_answer;
  std::vector<TraceStep> steps;
  std::string source;  // file it was loaded from, if any

  double total_duration_ms() const { return steps.empty() ? 0.0 : steps.back().t_ms; }
  // Steps as events with seq = index and t_ms = scheduled offset.
  std::vector<ReasoningEvent> events() const;
};

// Parses the JSON Lines trace format. Throws TraceError.
ScriptedTrace parse_trace(std::string_view text);
ScriptedTrace load_trace(const std::filesystem::path& path);

// Every *.jsonl under root/<scenario>/, sorted by file name.
class TraceLibrary {
 public:
  TraceLibrary() = default;
  static TraceLibrary load_directory(const std::filesystem::path& root);

  void add(ScriptedTrace trace);
  const std::vector<ScriptedTrace>& traces(Scenario s) const;
  // Trace whose query matches exactly, else the first one for the scenario.
  const ScriptedTrace* find(Scenario s, std::string_view query) const;
  bool empty() const;

 private:
  std::map<Scenario, std::vector<ScriptedTrace>> by_scenario_;
};

enum class BackendMode { Scripted, External };

struct BackendHandle {
  std::string name = "scripted";
  BackendMode mode = BackendMode::Scripted;
  double time_scale = 1.0;  // 0 replays without delay
};

// Returns false when the consumer is gone (session closed).
using EventSink = std::function<bool(const ReasoningEvent&)>;

enum class BackendOutcome { Completed, Cancelled, Error };
std::string_view to_string(BackendOutcome o);

struct BackendRun {
  BackendOutcome outcome = BackendOutcome::Completed;
  std::size_t delivered = 0;
  std::string detail;
};

// Delivers each step at offset * time_scale from the call, measured against
// absolute deadlines so jitter does not accumulate.
BackendRun run_backend(const BackendHandle& handle, const ScriptedTrace& trace, const EventSink& sink,
                       const CancelToken& cancel = {});

// Streams newline-delimited protocol lines from `endpoint` (http://host:port/path,
// query passed as ?query=...). Throws BackendError{Unreachable} or
// BackendError{Protocol}; returns Cancelled if the token fires or the sink
// rejects.
BackendRun external_request(const std::string& endpoint, std::string_view query, const EventSink& sink,
                            const CancelToken& cancel = {});

struct ParsedUrl {
  std::string scheme;
  std::string host;
  int port = 80;
  std::string path = "/";
};
std::optional<ParsedUrl> parse_http_url(std::string_view url);

}  // namespace asyncnarrate
