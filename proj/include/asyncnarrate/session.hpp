#pragma once

// Per-connection conversational ledger and pipeline state machine.

#include <chrono>
#include <cstddef>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "asyncnarrate/error.hpp"

namespace asyncnarrate {

// Monotonic clock with a session-local origin; all session timestamps are
// milliseconds since that origin.
class SessionClock {
 public:
  using clock = std::chrono::steady_clock;

  SessionClock() : origin_(clock::now()) {}

  double now_ms() const { return to_ms(clock::now()); }
  double to_ms(clock::time_point t) const {
    return std::chrono::duration<double, std::milli>(t - origin_).count();
  }
  clock::time_point at(double ms) const {
    return origin_ + std::chrono::duration_cast<clock::duration>(
                         std::chrono::duration<double, std::milli>(ms));
  }
  clock::time_point origin() const { return origin_; }

 private:
  clock::time_point origin_;
};

enum class Origin { Backend, Explainer, User, System };
std::string_view to_string(Origin origin);

struct SessionEvent {
  Origin origin = Origin::System;
  std::string kind;
  std::string payload;
  double at = 0.0;

  friend bool operator==(const SessionEvent&, const SessionEvent&) = default;
};

enum class PipelineState { Listening, Processing, Speaking };
std::string_view to_string(PipelineState state);

enum class Trigger { TaskStarted, FirstAudioQueued, PlaybackDrained, StopSignal, CompleteSignal };
std::string_view to_string(Trigger trigger);

// Pure transition table. `task_active` only matters for PlaybackDrained.
std::optional<PipelineState> next_state(PipelineState from, Trigger trigger, bool task_active);

struct TaskDescriptor {
  std::string scenario;
  std::string query;
};

// `[origin/kind] payload`
std::string render_event(const SessionEvent& ev);

class SessionContext {
 public:
  using Subscriber = std::function<void(const SessionEvent&)>;
  using StateListener = std::function<void(PipelineState)>;

  SessionContext() = default;
  SessionContext(const SessionContext&) = delete;
  SessionContext& operator=(const SessionContext&) = delete;

  const SessionClock& clock() const noexcept { return clock_; }
  double now_ms() const { return clock_.now_ms(); }

  // Inserted after every stored event with at <= ev.at, so ties keep append
  // order. Throws StateError{Closed} once the session is closed.
  void append_event(SessionEvent ev);
  // Convenience: stamps `at` from the session clock.
  void append(Origin origin, std::string kind, std::string payload = {});

  PipelineState transition(Trigger trigger);
  PipelineState state() const;

  void set_task(std::optional<TaskDescriptor> task);
  std::optional<TaskDescriptor> task() const;

  std::string snapshot_context(std::size_t budget) const;
  std::vector<SessionEvent> events() const;
  std::size_t event_count() const;

  void subscribe(Subscriber s);
  void on_state_change(StateListener l);

  void close();
  bool closed() const;

 private:
  SessionClock clock_;
  mutable std::mutex mutex_;
  std::vector<SessionEvent> events_;
  PipelineState state_ = PipelineState::Listening;
  std::optional<TaskDescriptor> task_;
  std::vector<Subscriber> subscribers_;
  std::vector<StateListener> state_listeners_;
  bool closed_ = false;
};

}  // namespace asyncnarrate
