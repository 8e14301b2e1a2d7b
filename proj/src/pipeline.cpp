#include "asyncnarrate/pipeline.hpp"

#include <algorithm>
#include <cmath>

namespace asyncnarrate {

using namespace std::chrono_literals;
using steady = std::chrono::steady_clock;

std::string_view to_string(Topology t) {
  switch (t) {
    case Topology::Async: return "async";
    case Topology::Monolithic: return "monolithic";
    case Topology::ExplainerOnly: return "explainer_only";
  }
  return "?";
}

std::optional<Topology> topology_from_string(std::string_view s) {
  if (s == "async") return Topology::Async;
  if (s == "monolithic") return Topology::Monolithic;
  if (s == "explainer_only" || s == "explainer-only") return Topology::ExplainerOnly;
  return std::nullopt;
}

namespace {

steady::duration scaled(double ms, double scale) {
  return std::chrono::duration_cast<steady::duration>(std::chrono::duration<double, std::milli>(ms * scale));
}

}  // namespace

NarrationPipeline::NarrationPipeline(PipelineConfig config, PipelineDeps deps,
                                     std::shared_ptr<ConnectionContext> conn)
    : config_(std::move(config)),
      deps_(std::move(deps)),
      conn_(std::move(conn)),
      request_q_(config_.stage_queue_capacity),
      quick_q_(config_.stage_queue_capacity),
      final_q_(config_.stage_queue_capacity),
      player_q_(config_.stage_queue_capacity),
      style_(config_.style),
      anchors_(config_.anchors) {
  if (!is_supported_rate(config_.voice.sample_rate)) {
    throw ConfigError(ConfigErrc::Rate, std::to_string(config_.voice.sample_rate));
  }
  if (config_.time_scale < 0 || !std::isfinite(config_.time_scale)) {
    throw ConfigError(ConfigErrc::Value, "time_scale must be >= 0");
  }
  config_.vad.sample_rate = config_.voice.sample_rate;
  vad_ = VadState(config_.vad);
  if (!deps_.quick_synth) deps_.quick_synth = std::make_shared<SimulatedSynthesizer>(5.0, config_.time_scale);
  if (!deps_.final_synth) deps_.final_synth = std::make_shared<SimulatedSynthesizer>(40.0, config_.time_scale);
  if (!deps_.traces) deps_.traces = std::make_shared<TraceLibrary>();
  epoch_ = stop_source_.generation();

  std::weak_ptr<ConnectionContext> weak = conn_;
  conn_->session().on_state_change([weak](PipelineState s) {
    if (auto c = weak.lock()) {
      try {
        c->send_control(ControlMessage::state(s));
      } catch (const TransportError&) {
      }
    }
  });

  request_thread_ = std::thread([this] { request_loop(); });
  inference_thread_ = std::thread([this] { inference_loop(); });
  quick_thread_ = std::thread([this] { synth_loop(true); });
  final_thread_ = std::thread([this] { synth_loop(false); });
  player_thread_ = std::thread([this] { player_loop(); });
}

NarrationPipeline::~NarrationPipeline() { shutdown(); }

void NarrationPipeline::shutdown() {
  if (!running_.exchange(false)) return;
  stop_backend();
  stop_source_.close();
  request_q_.close();
  quick_q_.close();
  final_q_.close();
  player_q_.close();
  {
    std::lock_guard lock(inference_mutex_);
  }
  inference_cv_.notify_all();
  {
    std::lock_guard lock(audio_mutex_);
  }
  audio_cv_.notify_all();
  for (auto* t : {&request_thread_, &inference_thread_, &quick_thread_, &final_thread_, &player_thread_}) {
    if (t->joinable()) t->join();
  }
  // start_task may have spawned a backend after the first stop_backend.
  stop_backend();
}

// ---------------------------------------------------------------------------
// intake

void NarrationPipeline::handle(const RawMessage& raw) {
  Inbound in;
  try {
    in = dispatch_inbound(raw, config_.voice.sample_rate);
  } catch (const TransportError& e) {
    send(ControlMessage::error(to_string(e.code()), e.what()));
    return;
  }
  conn_->note_inbound(in);
  std::visit([this](const auto& m) { handle(m); }, in);
}

void NarrationPipeline::handle(const ControlMessage& msg) {
  if (!running_) return;
  switch (msg.type) {
    case ControlType::Interrupt: {
      std::optional<double> client_t;
      if (msg.body.contains("client_t_ms") && msg.body["client_t_ms"].is_number()) {
        client_t = msg.body["client_t_ms"].get<double>();
      }
      auto origin = StopOrigin::ClientButton;
      if (msg.body.value("origin", std::string()) == "audio") origin = StopOrigin::ClientAudio;
      interrupt(origin, client_t);
      return;
    }
    case ControlType::UserText:
      // Typing while the narrator talks is a barge-in.
      if (session().state() == PipelineState::Speaking) interrupt(StopOrigin::ClientButton);
      push_request(msg);
      return;
    case ControlType::StartTask: {
      ControlMessage stamped = msg;
      stamped.body["_received_at"] = session().now_ms();
      push_request(std::move(stamped));
      return;
    }
    case ControlType::ConfigUpdate:
      push_request(msg);
      return;
    default:
      send(ControlMessage::error("ProtocolError{InvalidEvent}", "unexpected message type"));
  }
}

void NarrationPipeline::handle(const AudioFrame& frame) {
  VadDecision d;
  try {
    d = vad_step(vad_, frame);
  } catch (const ConfigError& e) {
    send(ControlMessage::error(to_string(e.code()), e.what()));
    return;
  }
  if (d == VadDecision::SpeechOnset && session().state() != PipelineState::Listening) {
    interrupt(StopOrigin::ServerVad);
  }
}

StopOutcome NarrationPipeline::interrupt(StopOrigin origin, std::optional<double> client_t_ms) {
  std::lock_guard lock(control_mutex_);
  StopSignal signal{origin, session().now_ms(), client_t_ms};
  StopOutcome outcome;
  try {
    outcome = apply_stop(signal, *this);
  } catch (const StateError&) {
    // Nothing is playing or pending; a stop in Listening changes nothing.
    return StopOutcome::NoOp;
  }
  if (outcome == StopOutcome::Applied) {
    std::lock_guard info(info_mutex_);
    last_stop_at_ = signal.raised_at;
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// StopTarget

void NarrationPipeline::cancel_synthesis() {
  epoch_ = stop_source_.advance();
  narration_enabled_ = false;
  auto drop = [](const SynthJob&) { return true; };
  quick_q_.remove_if(drop);
  final_q_.remove_if(drop);
  {
    std::lock_guard lock(inference_mutex_);
  }
  inference_cv_.notify_all();
  {
    std::lock_guard lock(audio_mutex_);
  }
  audio_cv_.notify_all();
}

std::size_t NarrationPipeline::discard_queued_audio() {
  const auto removed =
      player_q_.remove_if([](const PlayerItem& item) { return std::holds_alternative<SegmentPtr>(item); });
  pending_ -= static_cast<int>(removed);
  player_q_.wake();
  return conn_->flush_audio();
}

void NarrationPipeline::begin_protection_fade(double window_ms) {
  if (!playing_) return;
  {
    std::lock_guard lock(audio_mutex_);
    fade_window_ms_ = window_ms;
    fade_active_ = true;
  }
  audio_cv_.notify_all();
}

// ---------------------------------------------------------------------------
// request stage

void NarrationPipeline::request_loop() {
  std::string utterance;
  auto deadline = steady::time_point::max();

  while (running_) {
    auto timeout = utterance.empty() ? steady::duration(50ms)
                                     : std::max(steady::duration::zero(), deadline - steady::now());
    auto msg = request_q_.pop(timeout);
    if (!msg) {
      if (!utterance.empty() && steady::now() >= deadline) {
        finish_user_turn(utterance);
        utterance.clear();
      }
      utterance_open_ = !utterance.empty();
      continue;
    }
    struct Done {
      NarrationPipeline* self;
      const std::string& utterance;
      ~Done() {
        self->utterance_open_ = !utterance.empty();
        --self->requests_;
      }
    } done{this, utterance};

    if (msg->type == ControlType::UserText) {
      auto text = msg->body.value("text", std::string());
      if (text.empty()) continue;
      if (!utterance.empty()) utterance += ' ';
      utterance += text;
      send(ControlMessage::transcript(false, utterance));
      const double p = completion_probability(utterance, deps_.classifier.get());
      deadline = steady::now() + scaled(pause_for(p, anchors_), config_.time_scale);
      if (config_.time_scale == 0.0) {
        finish_user_turn(utterance);
        utterance.clear();
      }
      continue;
    }

    // Anything else ends a pending utterance first.
    if (!utterance.empty()) {
      finish_user_turn(utterance);
      utterance.clear();
    }
    if (msg->type == ControlType::StartTask) {
      start_task(msg->body.value("scenario", std::string()), msg->body.value("query", std::string()),
                 msg->body.value("_received_at", session().now_ms()));
    } else if (msg->type == ControlType::ConfigUpdate) {
      apply_config(*msg);
    }
  }
}

void NarrationPipeline::push_request(ControlMessage msg) {
  ++requests_;
  if (!request_q_.push(std::move(msg))) --requests_;
}

void NarrationPipeline::finish_user_turn(const std::string& utterance) {
  send(ControlMessage::transcript(true, utterance));
  std::uint64_t epoch;
  {
    std::lock_guard lock(control_mutex_);
    try {
      session().append(Origin::User, "user_text", utterance);
    } catch (const StateError&) {
      return;
    }
    if (session().state() == PipelineState::Listening) try_transition(Trigger::TaskStarted);
    narration_enabled_ = true;
    epoch = epoch_;
  }
  {
    std::lock_guard lock(inference_mutex_);
    user_lane_.push_back(QuestionItem{utterance, epoch});
    ++pending_;
  }
  inference_cv_.notify_all();
}

void NarrationPipeline::apply_config(const ControlMessage& msg) {
  if (msg.body.contains("anchors")) {
    std::vector<Anchor> anchors;
    for (const auto& a : msg.body["anchors"]) anchors.push_back({a[0].get<double>(), a[1].get<double>()});
    try {
      AnchorTable table(std::move(anchors));
      anchors_ = table;
    } catch (const ConfigError& e) {
      send(ControlMessage::error(to_string(e.code()), e.what()));
      return;
    }
  }
  if (msg.body.contains("style")) {
    if (auto s = style_from_string(msg.body["style"].get<std::string>())) {
      std::lock_guard lock(info_mutex_);
      style_ = *s;
    }
  }
}

void NarrationPipeline::start_task(const std::string& scenario, const std::string& query, double received_at) {
  if (session().state() != PipelineState::Listening) interrupt(StopOrigin::ClientButton);
  stop_backend();

  std::uint64_t id;
  {
    std::lock_guard lock(control_mutex_);
    {
      // Leftovers from the previous task are never narrated.
      std::lock_guard il(inference_mutex_);
      for (const auto& item : backend_lane_) {
        if (std::holds_alternative<BackendItem>(item)) --pending_;
      }
      backend_lane_.clear();
    }
    id = ++task_id_;
    {
      std::lock_guard info(info_mutex_);
      narrations_.clear();
      task_received_at_ = received_at;
      ttfa_pending_ = true;
      backend_result_.reset();
    }
    try {
      session().set_task(TaskDescriptor{scenario, query});
      session().append(Origin::User, "start_task", query);
    } catch (const StateError&) {
      return;
    }
    // A stop's fade may still be draining; the new task proceeds regardless.
    if (session().state() == PipelineState::Listening) try_transition(Trigger::TaskStarted);
    narration_enabled_ = true;
  }
  inference_cv_.notify_all();

  std::lock_guard lock(backend_mutex_);
  if (!running_) return;
  backend_cancel_ = std::make_unique<CancelSource>();
  backend_thread_ = std::thread([this, id, scenario, query] { run_backend_task(id, scenario, query); });
}

void NarrationPipeline::stop_backend() {
  std::lock_guard lock(backend_mutex_);
  if (backend_cancel_) backend_cancel_->close();
  if (backend_thread_.joinable()) backend_thread_.join();
  backend_cancel_.reset();
}

// ---------------------------------------------------------------------------
// backend

void NarrationPipeline::run_backend_task(std::uint64_t task_id, std::string scenario, std::string query) {
  CancelToken token;
  {
    // backend_mutex_ is held by start_task until this thread is created; the
    // source outlives the thread (stop_backend joins before resetting it).
    token = backend_cancel_->token();
  }
  std::vector<ReasoningEvent> held;
  auto sink = [&](const ReasoningEvent& ev) { return on_backend_event(task_id, scenario, ev, held); };

  BackendRun run;
  try {
    if (!config_.backend_endpoint.empty()) {
      run = external_request(config_.backend_endpoint, query, sink, token);
    } else {
      auto sc = scenario_from_string(scenario);
      const ScriptedTrace* trace = sc ? deps_.traces->find(*sc, query) : nullptr;
      if (!trace) throw TraceError(TraceErrc::Io, "no trace for scenario '" + scenario + "'");

      if (config_.topology == Topology::ExplainerOnly) {
        // One combined inference: nothing until the delay has passed, then
        // the whole answer at once.
        const auto start = steady::now();
        const double ratio = config_.explainer_only_ratio.count(*sc) ? config_.explainer_only_ratio.at(*sc) : 0.5;
        if (!token.sleep_until(start + scaled(ratio * trace->total_duration_ms(), config_.time_scale))) {
          run.outcome = BackendOutcome::Cancelled;
        } else {
          for (auto ev : trace->events()) {
            ev.t_ms = std::chrono::duration<double, std::milli>(steady::now() - start).count();
            if (token.cancelled() || !sink(ev)) {
              run.outcome = BackendOutcome::Cancelled;
              break;
            }
            ++run.delivered;
          }
        }
      } else {
        BackendHandle handle{"scripted", BackendMode::Scripted, config_.time_scale};
        run = run_backend(handle, *trace, sink, token);
      }
    }
  } catch (const std::exception& e) {
    run.outcome = BackendOutcome::Error;
    run.detail = e.what();
    std::string code = "BackendError";
    if (auto* be = dynamic_cast<const BackendError*>(&e)) code = std::string(to_string(be->code()));
    if (auto* te = dynamic_cast<const TraceError*>(&e)) code = std::string(to_string(te->code()));
    send(ControlMessage::error(code, e.what()));
    if (task_id == task_id_) {
      {
        std::lock_guard lock(control_mutex_);
        try_transition(Trigger::StopSignal);
      }
      push_backend_item(Marker{MarkerKind::TaskEnd, task_id});
    }
  }
  std::lock_guard info(info_mutex_);
  if (task_id == task_id_) backend_result_ = run;
}

bool NarrationPipeline::on_backend_event(std::uint64_t task_id, const std::string& scenario, ReasoningEvent ev,
                                         std::vector<ReasoningEvent>& held) {
  if (!running_ || task_id != task_id_) return false;
  try {
    session().append(Origin::Backend, std::string(json_name(ev.kind)), ev.payload);
  } catch (const StateError&) {
    return false;
  }
  send(ev.kind == EventKind::Complete ? ControlMessage::complete() : ControlMessage::reasoning_event(ev));

  // After a stop, events still reach the ledger (and so the answers to the
  // user's questions) but are not narrated until the next turn.
  const std::uint64_t epoch = epoch_;
  if (!narration_enabled_) held.clear();
  if (ev.kind != EventKind::Complete) {
    if (!narration_enabled_) return true;
    if (config_.topology == Topology::Monolithic) {
      held.push_back(std::move(ev));
    } else {
      push_backend_item(BackendItem{std::move(ev), epoch, scenario});
    }
    return true;
  }
  for (auto& h : held) push_backend_item(BackendItem{std::move(h), epoch, scenario});
  held.clear();
  push_backend_item(Marker{MarkerKind::TaskEnd, task_id});
  return true;
}

void NarrationPipeline::push_backend_item(InferenceItem item) {
  {
    std::lock_guard lock(inference_mutex_);
    if (std::holds_alternative<BackendItem>(item)) ++pending_;
    backend_lane_.push_back(std::move(item));
  }
  inference_cv_.notify_all();
}

// ---------------------------------------------------------------------------
// inference stage

void NarrationPipeline::inference_loop() {
  while (running_) {
    std::optional<QuestionItem> question;
    std::optional<InferenceItem> item;
    {
      std::unique_lock lock(inference_mutex_);
      // While narration is paused by a stop, only markers and stale items
      // move; fresh events wait for the next turn.
      auto backend_ready = [&] {
        if (backend_lane_.empty()) return false;
        if (narration_enabled_) return true;
        const auto& front = backend_lane_.front();
        if (std::holds_alternative<Marker>(front)) return true;
        return std::get<BackendItem>(front).epoch != epoch_;
      };
      inference_cv_.wait_for(lock, 50ms, [&] { return !running_ || !user_lane_.empty() || backend_ready(); });
      if (!running_) return;
      if (!user_lane_.empty()) {
        question = std::move(user_lane_.front());
        user_lane_.pop_front();
      } else if (backend_ready()) {
        item = std::move(backend_lane_.front());
        backend_lane_.pop_front();
      } else {
        continue;
      }
    }

    Style style;
    {
      std::lock_guard info(info_mutex_);
      style = style_;
    }

    if (question) {
      try {
        auto ctx = session().snapshot_context(config_.context_budget);
        auto seg = deps_.explainer.answer_user(question->text, ctx, style);
        enqueue_segment(std::move(seg), question->epoch);
        player_q_.push(Marker{MarkerKind::TurnEnd, task_id_});
      } catch (const std::exception& e) {
        --pending_;
        send(ControlMessage::error("ExplainError", e.what()));
      }
      continue;
    }

    if (auto* m = std::get_if<Marker>(&*item)) {
      player_q_.push(*m);
      continue;
    }
    auto& bi = std::get<BackendItem>(*item);
    if (bi.epoch != epoch_) {
      --pending_;
      continue;
    }
    try {
      deps_.explainer.set_scenario_label(scenario_label(bi.scenario));
      auto ctx = session().snapshot_context(config_.context_budget);
      auto seg = deps_.explainer.explain_event(bi.event, ctx, style);
      enqueue_segment(std::move(seg), bi.epoch);
    } catch (const std::exception& e) {
      --pending_;
      send(ControlMessage::error("ExplainError", e.what()));
    }
  }
}

void NarrationPipeline::enqueue_segment(NarrationSegment narration, std::uint64_t epoch) {
  narration.created_at = session().now_ms();
  try {
    session().append(Origin::Explainer, "narration", narration.text);
  } catch (const StateError&) {
    --pending_;
    return;
  }
  ControlMessage msg{ControlType::NarrationText, {{"text", narration.text}}};
  msg.body["seq"] = narration.source_seq ? json(*narration.source_seq) : json(nullptr);
  send(msg);
  {
    std::lock_guard info(info_mutex_);
    narrations_.push_back(narration);
  }

  auto seg = std::make_shared<Segment>();
  auto [quick, rest] = split_quick_clause(narration.text);
  seg->narration = std::move(narration);
  seg->quick_text = std::move(quick);
  seg->final_text = std::move(rest);
  seg->epoch = epoch;
  seg->token = stop_source_.token_for(epoch);

  quick_q_.push(SynthJob{seg});
  if (!seg->final_text.empty()) final_q_.push(SynthJob{seg});
  player_q_.push(seg);
}

// ---------------------------------------------------------------------------
// synthesis stages

void NarrationPipeline::synth_loop(bool quick) {
  auto& q = quick ? quick_q_ : final_q_;
  auto& synth = quick ? *deps_.quick_synth : *deps_.final_synth;
  while (running_) {
    auto job = q.pop(50ms);
    if (!job) continue;
    auto& seg = *job->segment;
    const auto& text = quick ? seg.quick_text : seg.final_text;

    ClipSlot result;
    if (stale(seg)) {
      result.status = ClipSlot::Status::Cancelled;
    } else {
      try {
        auto clip = synthesize_clip(synth, text, config_.voice, seg.token);
        if (clip) {
          result.status = ClipSlot::Status::Ready;
          result.clip = std::move(*clip);
        } else {
          result.status = ClipSlot::Status::Cancelled;
        }
      } catch (const SynthError& e) {
        result.status = ClipSlot::Status::Failed;
        result.error = e.what();
      }
    }
    {
      std::lock_guard lock(audio_mutex_);
      (quick ? seg.quick : seg.final) = std::move(result);
    }
    audio_cv_.notify_all();
  }
}

// ---------------------------------------------------------------------------
// player

bool NarrationPipeline::wait_player(steady::time_point deadline, const std::function<bool()>& wake_if) {
  std::unique_lock lock(audio_mutex_);
  return audio_cv_.wait_until(lock, deadline, [&] { return !running_ || wake_if(); });
}

void NarrationPipeline::player_loop() {
  while (running_) {
    if (fade_active_) {
      // A stop landed between segments: nothing left to fade.
      std::lock_guard lock(control_mutex_);
      if (!playing_) fade_active_ = false;
    }
    auto item = player_q_.pop(20ms);
    if (!item) continue;
    if (auto* m = std::get_if<Marker>(&*item)) {
      handle_marker(*m);
      continue;
    }
    auto seg = std::get<SegmentPtr>(*item);
    if (!stale(*seg)) play_segment(seg);
    --pending_;
    after_segment();
  }
}

void NarrationPipeline::play_segment(const SegmentPtr& seg) {
  using Status = ClipSlot::Status;
  const auto far = steady::now() + 24h;

  wait_player(far, [&] { return seg->quick.status != Status::Pending || stale(*seg); });
  if (!running_ || stale(*seg)) return;

  std::vector<std::int16_t> buffer;
  std::string quick_error;
  Status quick_status;
  {
    std::lock_guard lock(audio_mutex_);
    quick_status = seg->quick.status;
    quick_error = seg->quick.error;
    if (quick_status == Status::Ready) buffer = seg->quick.clip.samples;
  }
  if (quick_status == Status::Failed) {
    fail_to_listening("SynthError", quick_error);
    return;
  }
  if (quick_status != Status::Ready) return;

  const int rate = config_.voice.sample_rate;
  const std::size_t per = samples_per_frame(rate);
  const std::size_t overlap = overlap_samples(config_.crossfade_ms, rate);
  const auto interval = scaled(kFrameMs, config_.time_scale);
  const std::size_t quick_len = buffer.size();
  bool final_pending = !seg->final_text.empty();
  std::string final_error;
  std::size_t cursor = 0;

  {
    std::lock_guard lock(control_mutex_);
    if (stale(*seg)) return;
    playing_ = true;
  }
  struct PlayingGuard {
    NarrationPipeline* self;
    ~PlayingGuard() {
      std::lock_guard lock(self->control_mutex_);
      self->playing_ = false;
    }
  } guard{this};

  if (next_due_ < steady::now()) next_due_ = steady::now();

  while (running_) {
    if (final_pending) {
      std::unique_lock lock(audio_mutex_);
      if (seg->final.status == Status::Ready) {
        AudioClip head = seg->final.clip;
        lock.unlock();
        AudioClip tail{std::move(buffer), rate};
        if (tail.size() >= overlap && head.size() >= overlap) {
          buffer = crossfade(tail, head, config_.crossfade_ms).samples;
        } else {
          buffer = std::move(tail.samples);
          buffer.insert(buffer.end(), head.samples.begin(), head.samples.end());
        }
        final_pending = false;
      } else if (seg->final.status == Status::Failed) {
        final_error = seg->final.error;
        final_pending = false;
      }
    }

    // While the remainder is outstanding, the overlap region of the quick
    // clip is held back so the splice can rewrite it.
    const std::size_t limit = final_pending ? (quick_len > overlap ? quick_len - overlap : 0) : buffer.size();
    if (!final_pending && cursor >= buffer.size()) break;
    if (final_pending && cursor + per > limit) {
      wait_player(far, [&] { return seg->final.status != Status::Pending || stale(*seg) || fade_active_; });
      if (!running_) return;
      if (fade_active_ || stale(*seg)) {
        run_fade({buffer.begin() + static_cast<std::ptrdiff_t>(std::min(cursor, buffer.size())), buffer.end()});
        return;
      }
      continue;
    }

    if (config_.time_scale > 0) {
      wait_player(next_due_, [&] { return fade_active_.load() || stale(*seg); });
      if (!running_) return;
    }

    {
      std::unique_lock lock(control_mutex_);
      if (fade_active_ || stale(*seg)) {
        lock.unlock();
        run_fade({buffer.begin() + static_cast<std::ptrdiff_t>(std::min(cursor, buffer.size())), buffer.end()});
        return;
      }
      AudioFrame frame;
      frame.sample_rate = rate;
      frame.samples.assign(per, 0);
      const std::size_t n = std::min(per, buffer.size() - cursor);
      std::copy_n(buffer.begin() + static_cast<std::ptrdiff_t>(cursor), n, frame.samples.begin());

      if (session().state() == PipelineState::Processing) try_transition(Trigger::FirstAudioQueued);
      send_frame(frame);

      std::optional<double> ttfa;
      {
        std::lock_guard info(info_mutex_);
        if (ttfa_pending_ && task_received_at_) {
          ttfa_pending_ = false;
          ttfa = session().now_ms() - *task_received_at_;
        }
      }
      if (ttfa) send(ControlMessage::ttfa_report(*ttfa));
    }
    cursor += per;
    next_due_ += interval;
  }

  if (!final_error.empty()) fail_to_listening("SynthError", final_error);
}

void NarrationPipeline::run_fade(std::vector<std::int16_t> tail) {
  double window_ms;
  {
    std::lock_guard lock(audio_mutex_);
    window_ms = fade_window_ms_;
  }
  if (fade_active_) {
    const int rate = config_.voice.sample_rate;
    const std::size_t n = static_cast<std::size_t>(std::llround(window_ms * rate / 1000.0));
    tail.resize(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = n > 1 ? static_cast<double>(n - 1 - i) / static_cast<double>(n - 1) : 0.0;
      tail[i] = static_cast<std::int16_t>(std::lround(tail[i] * g));
    }
    auto frames = slice_frames(tail, rate);
    const auto interval = scaled(kFrameMs, config_.time_scale);
    auto due = steady::now();
    for (const auto& f : frames) {
      if (!running_) break;
      if (config_.time_scale > 0) std::this_thread::sleep_until(due);
      send_frame(f);
      due += interval;
    }
    next_due_ = due;
  }
  std::lock_guard lock(control_mutex_);
  fade_active_ = false;
}

void NarrationPipeline::handle_marker(const Marker& m) {
  std::lock_guard lock(control_mutex_);
  if (m.kind == MarkerKind::TaskEnd && m.task_id == task_id_) {
    session().set_task(std::nullopt);
  }
  if (!player_q_.empty()) return;
  const auto state = session().state();
  if (state == PipelineState::Speaking) {
    try_transition(Trigger::PlaybackDrained);
  } else if (state == PipelineState::Processing && !session().task()) {
    try_transition(Trigger::CompleteSignal);
  }
}

void NarrationPipeline::after_segment() {
  std::lock_guard lock(control_mutex_);
  if (!player_q_.empty()) return;
  if (session().state() == PipelineState::Speaking) try_transition(Trigger::PlaybackDrained);
}

void NarrationPipeline::fail_to_listening(const std::string& code, const std::string& detail) {
  send(ControlMessage::error(code, detail));
  std::lock_guard lock(control_mutex_);
  cancel_synthesis();
  // Unlike a stop, frames already handed to the transport still play out.
  const auto removed =
      player_q_.remove_if([](const PlayerItem& item) { return std::holds_alternative<SegmentPtr>(item); });
  pending_ -= static_cast<int>(removed);
  player_q_.wake();
  if (session().state() != PipelineState::Listening) try_transition(Trigger::StopSignal);
}

// ---------------------------------------------------------------------------
// helpers

bool NarrationPipeline::send(const ControlMessage& msg) {
  try {
    conn_->send_control(msg);
    return true;
  } catch (const TransportError&) {
    return false;
  }
}

bool NarrationPipeline::send_frame(const AudioFrame& frame) {
  try {
    conn_->send_audio(frame);
    return true;
  } catch (const TransportError&) {
    return false;
  }
}

bool NarrationPipeline::try_transition(Trigger t) {
  try {
    session().transition(t);
    return true;
  } catch (const StateError&) {
    return false;
  }
}

std::vector<NarrationSegment> NarrationPipeline::narrations() const {
  std::lock_guard info(info_mutex_);
  return narrations_;
}

std::optional<double> NarrationPipeline::task_received_at() const {
  std::lock_guard info(info_mutex_);
  return task_received_at_;
}

std::optional<double> NarrationPipeline::last_stop_at() const {
  std::lock_guard info(info_mutex_);
  return last_stop_at_;
}

std::optional<BackendRun> NarrationPipeline::backend_result() const {
  std::lock_guard info(info_mutex_);
  return backend_result_;
}

bool NarrationPipeline::playing() const { return playing_.load(); }

bool NarrationPipeline::wait_idle(std::chrono::milliseconds timeout) const {
  const auto deadline = steady::now() + timeout;
  auto& s = conn_->session();
  while (steady::now() < deadline) {
    if (requests_ == 0 && !utterance_open_ && !s.task() && pending_ == 0 && player_q_.empty() && !playing_ && !fade_active_ &&
        s.state() == PipelineState::Listening) {
      return true;
    }
    std::this_thread::sleep_for(2ms);
  }
  return false;
}

}  // namespace asyncnarrate
