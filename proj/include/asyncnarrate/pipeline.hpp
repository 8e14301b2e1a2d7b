#pragma once

// Per-session narration pipeline.
//
//   request intake -> explainer inference -> quick synth -> player -> connection
//                                         -> final synth  ->
//
// Quick and final synthesis run concurrently on the same segment: the quick
// stage voices the first clause, the final stage the remainder, and the
// player splices them with an equal-power crossfade. A stop advances the
// pipeline epoch; every stage drops work stamped with an older epoch.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "asyncnarrate/audio.hpp"
#include "asyncnarrate/backends.hpp"
#include "asyncnarrate/cancel.hpp"
#include "asyncnarrate/explainer.hpp"
#include "asyncnarrate/session.hpp"
#include "asyncnarrate/stage_queue.hpp"
#include "asyncnarrate/transport.hpp"
#include "asyncnarrate/turn.hpp"

namespace asyncnarrate {

// async: narrate events as they arrive. monolithic: buffer until COMPLETE.
// explainer_only: no backend stream; the whole answer appears after a
// combined-inference delay.
enum class Topology { Async, Monolithic, ExplainerOnly };
std::string_view to_string(Topology t);
std::optional<Topology> topology_from_string(std::string_view s);

struct PipelineConfig {
  Topology topology = Topology::Async;
  double time_scale = 1.0;  // scales backend schedule, synth latency, pacing, pauses
  VoiceConfig voice;
  double crossfade_ms = 50.0;
  Style style = Style::Concise;
  AnchorTable anchors;
  VadConfig vad;
  std::size_t context_budget = 2000;
  std::size_t stage_queue_capacity = 64;
  // First-token delay of the explainer-only baseline, as a fraction of the
  // scripted trace's total duration.
  std::map<Scenario, double> explainer_only_ratio{
      {Scenario::Math, 0.49}, {Scenario::Travel, 0.45}, {Scenario::Research, 0.51}};
  std::string backend_endpoint;  // external backend when non-empty
};

struct PipelineDeps {
  std::shared_ptr<const TraceLibrary> traces;
  Explainer explainer;
  std::shared_ptr<Synthesizer> quick_synth;
  std::shared_ptr<Synthesizer> final_synth;
  std::shared_ptr<CompletionClassifier> classifier;
};

class NarrationPipeline : public StopTarget {
 public:
  NarrationPipeline(PipelineConfig config, PipelineDeps deps, std::shared_ptr<ConnectionContext> conn);
  ~NarrationPipeline() override;
  NarrationPipeline(const NarrationPipeline&) = delete;
  NarrationPipeline& operator=(const NarrationPipeline&) = delete;

  // Request intake. Interrupts (and typed text during playback) take the
  // priority path and are applied on the calling thread.
  void handle(const RawMessage& raw);
  void handle(const ControlMessage& msg);
  void handle(const AudioFrame& frame);

  StopOutcome interrupt(StopOrigin origin, std::optional<double> client_t_ms = std::nullopt);

  void shutdown();

  SessionContext& session() { return conn_->session(); }
  const PipelineConfig& config() const noexcept { return config_; }

  // Narrations produced for the current (or last) task, in playback order.
  std::vector<NarrationSegment> narrations() const;
  std::optional<double> task_received_at() const;
  std::optional<double> last_stop_at() const;
  std::optional<BackendRun> backend_result() const;
  // Waits until no task is active, nothing is pending and state is Listening.
  bool wait_idle(std::chrono::milliseconds timeout) const;
  bool playing() const;

  // StopTarget
  SessionContext& stop_session() override { return session(); }
  bool stop_in_progress() const override { return fade_active_.load(); }
  void cancel_synthesis() override;
  void begin_protection_fade(double window_ms) override;
  std::size_t discard_queued_audio() override;

 private:
  struct ClipSlot {
    enum class Status { Pending, Ready, Failed, Cancelled } status = Status::Pending;
    AudioClip clip;
    std::string error;
  };

  struct Segment {
    NarrationSegment narration;
    std::string quick_text;
    std::string final_text;
    std::uint64_t epoch = 0;
    CancelToken token;
    ClipSlot quick;
    ClipSlot final;
  };
  using SegmentPtr = std::shared_ptr<Segment>;

  struct SynthJob {
    SegmentPtr segment;
  };

  enum class MarkerKind { TaskEnd, TurnEnd };
  struct Marker {
    MarkerKind kind;
    std::uint64_t task_id;
  };

  struct BackendItem {
    ReasoningEvent event;
    std::uint64_t epoch;
    std::string scenario;
  };
  struct QuestionItem {
    std::string text;
    std::uint64_t epoch;
  };
  using InferenceItem = std::variant<BackendItem, Marker>;
  using PlayerItem = std::variant<SegmentPtr, Marker>;

  void request_loop();
  void inference_loop();
  void synth_loop(bool quick);
  void player_loop();

  void start_task(const std::string& scenario, const std::string& query, double received_at);
  void run_backend_task(std::uint64_t task_id, std::string scenario, std::string query);
  bool on_backend_event(std::uint64_t task_id, const std::string& scenario, ReasoningEvent ev,
                        std::vector<ReasoningEvent>& held);
  void push_request(ControlMessage msg);
  void finish_user_turn(const std::string& utterance);
  void apply_config(const ControlMessage& msg);

  void enqueue_segment(NarrationSegment narration, std::uint64_t epoch);
  void play_segment(const SegmentPtr& seg);
  void run_fade(std::vector<std::int16_t> tail);
  void handle_marker(const Marker& m);
  void after_segment();
  void fail_to_listening(const std::string& code, const std::string& detail);

  bool send(const ControlMessage& msg);
  bool send_frame(const AudioFrame& frame);
  bool try_transition(Trigger t);
  bool wait_player(std::chrono::steady_clock::time_point deadline, const std::function<bool()>& wake_if);
  void stop_backend();
  void push_backend_item(InferenceItem item);
  bool stale(const Segment& seg) const { return seg.epoch != epoch_.load(); }

  PipelineConfig config_;
  PipelineDeps deps_;
  std::shared_ptr<ConnectionContext> conn_;

  // Serializes state changes, stops and epoch-checked frame sends.
  mutable std::mutex control_mutex_;

  CancelSource stop_source_;
  std::atomic<std::uint64_t> epoch_{0};
  std::atomic<bool> running_{true};
  std::atomic<bool> narration_enabled_{false};
  std::atomic<bool> fade_active_{false};
  std::atomic<bool> playing_{false};
  std::atomic<int> pending_{0};  // inference items not yet retired by the player
  std::atomic<std::uint64_t> task_id_{0};
  std::atomic<int> requests_{0};  // intake messages not yet processed
  std::atomic<bool> utterance_open_{false};

  StageQueue<ControlMessage> request_q_;

  // Inference input: user questions take priority over backend events.
  std::mutex inference_mutex_;
  std::condition_variable inference_cv_;
  std::deque<QuestionItem> user_lane_;
  std::deque<InferenceItem> backend_lane_;

  StageQueue<SynthJob> quick_q_;
  StageQueue<SynthJob> final_q_;
  StageQueue<PlayerItem> player_q_;

  // Player wake-ups: clip slots, fades, shutdown.
  mutable std::mutex audio_mutex_;
  std::condition_variable audio_cv_;
  double fade_window_ms_ = kProtectionWindowMs;
  std::chrono::steady_clock::time_point next_due_{};

  mutable std::mutex info_mutex_;
  std::vector<NarrationSegment> narrations_;
  std::optional<double> task_received_at_;
  std::optional<double> last_stop_at_;
  std::optional<BackendRun> backend_result_;
  bool ttfa_pending_ = false;
  Style style_;
  AnchorTable anchors_;

  VadState vad_;

  std::mutex backend_mutex_;
  std::unique_ptr<CancelSource> backend_cancel_;
  std::thread backend_thread_;

  std::thread request_thread_;
  std::thread inference_thread_;
  std::thread quick_thread_;
  std::thread final_thread_;
  std::thread player_thread_;
};

}  // namespace asyncnarrate
