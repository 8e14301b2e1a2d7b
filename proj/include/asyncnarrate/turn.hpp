#pragma once

// Turn detection (completion probability -> pause) and barge-in: energy VAD,
// stop signals and the stop contract every pipeline must honor.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "asyncnarrate/error.hpp"
#include "asyncnarrate/session.hpp"
#include "asyncnarrate/transport.hpp"

namespace asyncnarrate {

inline constexpr std::size_t kMaxClassifierTokens = 128;

// Keeps the last `max_tokens` whitespace-separated tokens.
std::string truncate_tokens(std::string_view text, std::size_t max_tokens = kMaxClassifierTokens);

class CompletionClassifier {
 public:
  virtual ~CompletionClassifier() = default;
  // Receives text already truncated to 128 tokens.
  virtual double probability(std::string_view text) = 0;
};

// Heuristic default: 0.5, +0.45 on terminal . ! ?, -0.35 when the last word
// is a continuation word; clamped to [0.02, 0.98]. Empty text -> 0.02.
double completion_probability(std::string_view text, CompletionClassifier* classifier = nullptr);
bool is_continuation_word(std::string_view word);

struct Anchor {
  double probability;
  double pause_ms;
  friend bool operator==(const Anchor&, const Anchor&) = default;
};

class AnchorTable {
 public:
  // [(0.0, 1200), (0.5, 600), (1.0, 150)]
  AnchorTable();
  // Throws ConfigError{Anchors} unless probabilities strictly increase from
  // 0.0 to 1.0 and pauses are non-negative and non-increasing.
  explicit AnchorTable(std::vector<Anchor> anchors);

  const std::vector<Anchor>& anchors() const noexcept { return anchors_; }
  static void validate(const std::vector<Anchor>& anchors);

 private:
  std::vector<Anchor> anchors_;
};

// Piecewise-linear; exact at anchors. p is clamped to [0, 1].
double pause_for(double p, const AnchorTable& table);

struct VadConfig {
  double rms_threshold = 0.02;
  int trigger_frames = 3;
  int hangover_frames = 10;
  int sample_rate = 16000;
};

struct VadState {
  VadConfig config;
  int consecutive_speech = 0;
  int hangover_left = 0;
  bool in_speech = false;

  VadState() = default;
  explicit VadState(VadConfig c);  // throws ConfigError{Value}
};

enum class VadDecision { Silence, Speech, SpeechOnset };
std::string_view to_string(VadDecision d);

// Throws ConfigError{Rate} when the frame rate differs from the config.
VadDecision vad_step(VadState& state, const AudioFrame& frame);

enum class StopOrigin { ClientAudio, ClientButton, ServerVad };
std::string_view to_string(StopOrigin o);

struct StopSignal {
  StopOrigin origin = StopOrigin::ClientButton;
  double raised_at = 0.0;
  std::optional<double> client_t_ms;
};

inline constexpr double kProtectionWindowMs = 100.0;

// What apply_stop needs from a running pipeline.
class StopTarget {
 public:
  virtual ~StopTarget() = default;
  virtual SessionContext& stop_session() = 0;
  // True while a previous stop's protection fade is still running.
  virtual bool stop_in_progress() const = 0;
  // Cancels queued jobs at once and signals in-flight synthesis.
  virtual void cancel_synthesis() = 0;
  // Fades whatever is playing over `window_ms`, then halts playback.
  virtual void begin_protection_fade(double window_ms) = 0;
  // Discards queued-but-unplayed audio; returns frames dropped.
  virtual std::size_t discard_queued_audio() = 0;
};

enum class StopOutcome { Applied, NoOp };

// Runs the stop contract: cancel, fade, clear, -> Listening, log interrupt.
// A stop arriving while a previous one is still fading is a no-op; a stop in
// Listening otherwise throws StateError{IllegalTransition}.
StopOutcome apply_stop(const StopSignal& signal, StopTarget& target);

}  // namespace asyncnarrate
