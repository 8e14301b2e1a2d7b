#include "asyncnarrate/backends.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

namespace asyncnarrate {

using json = nlohmann::json;

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::Math: return "math";
    case Scenario::Travel: return "travel";
    case Scenario::Research: return "research";
  }
  return "?";
}

std::optional<Scenario> scenario_from_string(std::string_view s) {
  if (s == "math") return Scenario::Math;
  if (s == "travel") return Scenario::Travel;
  if (s == "research") return Scenario::Research;
  return std::nullopt;
}

std::string_view to_string(BackendOutcome o) {
  switch (o) {
    case BackendOutcome::Completed: return "completed";
    case BackendOutcome::Cancelled: return "cancelled";
    case BackendOutcome::Error: return "error";
  }
  return "?";
}

std::vector<ReasoningEvent> ScriptedTrace::events() const {
  std::vector<ReasoningEvent> out;
  out.reserve(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out.push_back({steps[i].kind, steps[i].text, i, steps[i].t_ms});
  }
  return out;
}

namespace {

[[noreturn]] void schema(const std::string& why, std::size_t line) {
  throw TraceError(TraceErrc::Schema, "line " + std::to_string(line) + ": " + why);
}

}  // namespace

ScriptedTrace parse_trace(std::string_view text) {
  ScriptedTrace trace;
  bool have_header = false;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }

    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) schema("not a JSON object", line_no);

    if (!have_header) {
      if (!j.contains("scenario") || !j["scenario"].is_string()) schema("header needs 'scenario'", line_no);
      if (!j.contains("expected_answer") || !j["expected_answer"].is_string()) {
        schema("header needs 'expected_answer'", line_no);
      }
      auto sc = scenario_from_string(j["scenario"].get<std::string>());
      if (!sc) schema("unknown scenario", line_no);
      trace.scenario = *sc;
      trace.expected_answer = j["expected_answer"].get<std::string>();
      trace.query = j.value("query", "");
      have_header = true;
      continue;
    }

    if (!j.contains("t_ms") || !j["t_ms"].is_number()) schema("step needs numeric 't_ms'", line_no);
    if (!j.contains("kind") || !j["kind"].is_string()) schema("step needs 'kind'", line_no);
    auto kind = kind_from_json_name(j["kind"].get<std::string>());
    if (!kind) schema("unknown kind", line_no);
    TraceStep step;
    step.t_ms = j["t_ms"].get<double>();
    step.kind = *kind;
    if (step.t_ms < 0) schema("negative t_ms", line_no);
    if (*kind != EventKind::Complete) {
      if (!j.contains("text") || !j["text"].is_string()) schema("step needs 'text'", line_no);
      step.text = j["text"].get<std::string>();
      if (contains_line_break(step.text)) schema("text contains a line break", line_no);
    }
    if (!trace.steps.empty() && step.t_ms < trace.steps.back().t_ms) {
      schema("steps out of time order", line_no);
    }
    trace.steps.push_back(std::move(step));
  }

  if (!have_header) throw TraceError(TraceErrc::Schema, "empty trace");
  if (trace.steps.empty()) throw TraceError(TraceErrc::Schema, "trace has no steps");

  try {
    auto evs = trace.events();
    validate_stream(evs);
  } catch (const GrammarError& e) {
    throw TraceError(TraceErrc::Grammar, e.what());
  }
  return trace;
}

ScriptedTrace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceError(TraceErrc::Io, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  auto trace = parse_trace(ss.str());
  trace.source = path.string();
  return trace;
}

TraceLibrary TraceLibrary::load_directory(const std::filesystem::path& root) {
  TraceLibrary lib;
  for (auto s : {Scenario::Math, Scenario::Travel, Scenario::Research}) {
    auto dir = root / std::string(to_string(s));
    if (!std::filesystem::is_directory(dir)) continue;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) lib.add(load_trace(f));
  }
  return lib;
}

void TraceLibrary::add(ScriptedTrace trace) {
  by_scenario_[trace.scenario].push_back(std::move(trace));
}

const std::vector<ScriptedTrace>& TraceLibrary::traces(Scenario s) const {
  static const std::vector<ScriptedTrace> kNone;
  auto it = by_scenario_.find(s);
  return it == by_scenario_.end() ? kNone : it->second;
}

const ScriptedTrace* TraceLibrary::find(Scenario s, std::string_view query) const {
  const auto& list = traces(s);
  if (list.empty()) return nullptr;
  for (const auto& t : list) {
    if (!query.empty() && t.query == query) return &t;
  }
  return &list.front();
}

bool TraceLibrary::empty() const {
  for (const auto& [s, v] : by_scenario_) {
    if (!v.empty()) return false;
  }
  return true;
}

BackendRun run_backend(const BackendHandle& handle, const ScriptedTrace& trace, const EventSink& sink,
                       const CancelToken& cancel) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const double scale = std::max(0.0, handle.time_scale);
  BackendRun run;
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& step = trace.steps[i];
    if (scale > 0) {
      auto due = start + std::chrono::duration_cast<clock::duration>(
                             std::chrono::duration<double, std::milli>(step.t_ms * scale));
      if (!cancel.sleep_until(due)) {
        run.outcome = BackendOutcome::Cancelled;
        return run;
      }
    }
    if (cancel.cancelled()) {
      run.outcome = BackendOutcome::Cancelled;
      return run;
    }
    ReasoningEvent ev{step.kind, step.text, i,
                      std::chrono::duration<double, std::milli>(clock::now() - start).count()};
    if (!sink(ev)) {
      run.outcome = BackendOutcome::Cancelled;
      run.detail = "sink rejected";
      return run;
    }
    ++run.delivered;
  }
  return run;
}

std::optional<ParsedUrl> parse_http_url(std::string_view url) {
  static const std::regex re(R"(^(http)://([^:/?#]+)(?::(\d+))?(/[^?#]*)?$)", std::regex::icase);
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(url.begin(), url.end(), m, re)) return std::nullopt;
  ParsedUrl out;
  out.scheme = m[1].str();
  out.host = m[2].str();
  out.port = m[3].matched ? std::stoi(m[3].str()) : 80;
  out.path = m[4].matched && m[4].length() > 0 ? m[4].str() : "/";
  return out;
}

BackendRun external_request(const std::string& endpoint, std::string_view query, const EventSink& sink,
                            const CancelToken& cancel) {
  auto url = parse_http_url(endpoint);
  if (!url) throw BackendError(BackendErrc::Unreachable, "bad endpoint '" + endpoint + "'");

  httplib::Client cli(url->host, url->port);
  cli.set_connection_timeout(std::chrono::seconds(2));
  cli.set_read_timeout(std::chrono::seconds(60));
  cli.set_url_encode(false);

  const auto start = std::chrono::steady_clock::now();
  StreamValidator validator;
  std::string pending;
  std::uint64_t seq = 0;
  BackendRun run;
  std::optional<std::string> protocol_error;
  bool rejected = false;

  auto handle_line = [&](std::string_view line) -> bool {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) return true;
    try {
      auto ev = parse_event(line);
      ev.seq = seq++;
      ev.t_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      validator.accept(ev);
      if (!sink(ev)) {
        rejected = true;
        return false;
      }
      ++run.delivered;
    } catch (const std::exception& e) {
      protocol_error = e.what();
      return false;
    }
    return true;
  };

  std::string target = url->path + "?query=" + httplib::detail::encode_query_param(std::string(query));
  auto res = cli.Get(target, [&](const char* data, std::size_t len) {
    if (cancel.cancelled()) return false;
    pending.append(data, len);
    std::size_t pos;
    while ((pos = pending.find('\n')) != std::string::npos) {
      std::string line = pending.substr(0, pos);
      pending.erase(0, pos + 1);
      if (!handle_line(line)) return false;
    }
    return true;
  });

  if (protocol_error) throw BackendError(BackendErrc::Protocol, *protocol_error);
  if (rejected || cancel.cancelled()) {
    run.outcome = BackendOutcome::Cancelled;
    return run;
  }
  if (!res) {
    throw BackendError(BackendErrc::Unreachable, httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw BackendError(BackendErrc::Unreachable, "HTTP " + std::to_string(res->status));
  }
  if (!pending.empty() && !handle_line(pending)) {
    if (protocol_error) throw BackendError(BackendErrc::Protocol, *protocol_error);
    run.outcome = BackendOutcome::Cancelled;
    return run;
  }
  if (!validator.state().closed) {
    throw BackendError(BackendErrc::Protocol, "stream ended without COMPLETE");
  }
  return run;
}

}  // namespace asyncnarrate
