#include "asyncnarrate/session.hpp"

#include <algorithm>

namespace asyncnarrate {

std::string_view to_string(Origin origin) {
  switch (origin) {
    case Origin::Backend: return "backend";
    case Origin::Explainer: return "explainer";
    case Origin::User: return "user";
    case Origin::System: return "system";
  }
  return "?";
}

std::string_view to_string(PipelineState state) {
  switch (state) {
    case PipelineState::Listening: return "listening";
    case PipelineState::Processing: return "processing";
    case PipelineState::Speaking: return "speaking";
  }
  return "?";
}

std::string_view to_string(Trigger trigger) {
  switch (trigger) {
    case Trigger::TaskStarted: return "TaskStarted";
    case Trigger::FirstAudioQueued: return "FirstAudioQueued";
    case Trigger::PlaybackDrained: return "PlaybackDrained";
    case Trigger::StopSignal: return "StopSignal";
    case Trigger::CompleteSignal: return "CompleteSignal";
  }
  return "?";
}

std::optional<PipelineState> next_state(PipelineState from, Trigger trigger, bool task_active) {
  using S = PipelineState;
  using T = Trigger;
  switch (from) {
    case S::Listening:
      if (trigger == T::TaskStarted) return S::Processing;
      break;
    case S::Processing:
      if (trigger == T::FirstAudioQueued) return S::Speaking;
      if (trigger == T::CompleteSignal || trigger == T::StopSignal) return S::Listening;
      break;
    case S::Speaking:
      if (trigger == T::StopSignal) return S::Listening;
      if (trigger == T::PlaybackDrained) return task_active ? S::Processing : S::Listening;
      break;
  }
  return std::nullopt;
}

std::string render_event(const SessionEvent& ev) {
  std::string line = "[";
  line += to_string(ev.origin);
  line += '/';
  line += ev.kind;
  line += "] ";
  line += ev.payload;
  return line;
}

void SessionContext::append_event(SessionEvent ev) {
  std::lock_guard lock(mutex_);
  if (closed_) throw StateError(StateErrc::Closed);
  auto pos = std::upper_bound(events_.begin(), events_.end(), ev.at,
                              [](double at, const SessionEvent& e) { return at < e.at; });
  auto it = events_.insert(pos, std::move(ev));
  for (const auto& s : subscribers_) s(*it);
}

void SessionContext::append(Origin origin, std::string kind, std::string payload) {
  append_event(SessionEvent{origin, std::move(kind), std::move(payload), clock_.now_ms()});
}

PipelineState SessionContext::transition(Trigger trigger) {
  std::lock_guard lock(mutex_);
  if (closed_) throw StateError(StateErrc::Closed);
  auto next = next_state(state_, trigger, task_.has_value());
  if (!next) {
    throw StateError(StateErrc::IllegalTransition,
                     std::string(to_string(state_)) + " + " + std::string(to_string(trigger)));
  }
  state_ = *next;
  SessionEvent ev{Origin::System, "state_change", std::string(to_string(state_)), clock_.now_ms()};
  auto pos = std::upper_bound(events_.begin(), events_.end(), ev.at,
                              [](double at, const SessionEvent& e) { return at < e.at; });
  auto it = events_.insert(pos, std::move(ev));
  for (const auto& s : subscribers_) s(*it);
  for (const auto& l : state_listeners_) l(state_);
  return state_;
}

PipelineState SessionContext::state() const {
  std::lock_guard lock(mutex_);
  return state_;
}

void SessionContext::set_task(std::optional<TaskDescriptor> task) {
  std::lock_guard lock(mutex_);
  task_ = std::move(task);
}

std::optional<TaskDescriptor> SessionContext::task() const {
  std::lock_guard lock(mutex_);
  return task_;
}

std::string SessionContext::snapshot_context(std::size_t budget) const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> picked;
  std::size_t used = 0;
  for (auto it = events_.rbegin(); it != events_.rend(); ++it) {
    std::string line = render_event(*it);
    std::size_t cost = line.size() + (picked.empty() ? 0 : 1);
    if (used + cost > budget) break;
    used += cost;
    picked.push_back(std::move(line));
  }
  std::string out;
  out.reserve(used);
  for (auto it = picked.rbegin(); it != picked.rend(); ++it) {
    if (!out.empty()) out += '\n';
    out += *it;
  }
  return out;
}

std::vector<SessionEvent> SessionContext::events() const {
  std::lock_guard lock(mutex_);
  return events_;
}

std::size_t SessionContext::event_count() const {
  std::lock_guard lock(mutex_);
  return events_.size();
}

void SessionContext::subscribe(Subscriber s) {
  std::lock_guard lock(mutex_);
  subscribers_.push_back(std::move(s));
}

void SessionContext::on_state_change(StateListener l) {
  std::lock_guard lock(mutex_);
  state_listeners_.push_back(std::move(l));
}

void SessionContext::close() {
  std::lock_guard lock(mutex_);
  closed_ = true;
}

bool SessionContext::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

}  // namespace asyncnarrate
