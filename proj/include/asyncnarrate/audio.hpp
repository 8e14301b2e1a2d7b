#pragma once

// PCM clips, the deterministic pseudo-speech synthesizer, equal-power
// crossfade splicing and the synthesizer adapter contract.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "asyncnarrate/cancel.hpp"
#include "asyncnarrate/error.hpp"
#include "asyncnarrate/transport.hpp"

namespace asyncnarrate {

struct AudioClip {
  std::vector<std::int16_t> samples;
  int sample_rate = 16000;

  double duration_ms() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) * 1000.0 / sample_rate : 0.0;
  }
  std::size_t size() const noexcept { return samples.size(); }
};

inline constexpr double kFullScale = 32768.0;

// Normalized RMS (full scale = 1.0).
double rms(std::span<const std::int16_t> samples);

std::size_t word_count(std::string_view text);

// Per-word sine bursts followed by 10 ms of silence; duration is
// round(words * 60000 / wpm) ms. Throws SynthError{Empty}.
AudioClip simulated_tts(std::string_view text, double speaking_rate_wpm = 180.0, int sample_rate = 16000);

struct CrossfadeGains {
  double out;
  double in;
};

// Equal-power law at overlap sample i of n: (cos(pi*i/2n), sin(pi*i/2n)).
CrossfadeGains crossfade_gains(std::size_t i, std::size_t n);
std::size_t overlap_samples(double overlap_ms, int sample_rate);

// Output length = tail + head - overlap. Throws SynthError{RateMismatch} or
// SynthError{TooShort}.
AudioClip crossfade(const AudioClip& tail, const AudioClip& head, double overlap_ms = 50.0);

// 20 ms frames; the last partial frame is zero-padded.
std::vector<AudioFrame> slice_frames(std::span<const std::int16_t> samples, int sample_rate);

// First clause: up to and including the first word ending in ',' or '.'
// (also '!', '?', ';'), capped at max_words. Returns {quick, remainder}.
std::pair<std::string, std::string> split_quick_clause(std::string_view text, std::size_t max_words = 12);

struct VoiceConfig {
  int sample_rate = 16000;
  double speaking_rate_wpm = 180.0;
};

using ChunkSink = std::function<void(std::span<const std::int16_t>)>;

// Adapter contract: stream the audio for `text` in order through `sink`.
// Returns false if cancelled (must notice within 20 ms); throws SynthError.
class Synthesizer {
 public:
  virtual ~Synthesizer() = default;
  virtual bool synthesize(std::string_view text, const VoiceConfig& voice, const CancelToken& cancel,
                          const ChunkSink& sink) = 0;
};

// Collects a full clip; nullopt if cancelled.
std::optional<AudioClip> synthesize_clip(Synthesizer& synth, std::string_view text, const VoiceConfig& voice,
                                         const CancelToken& cancel);

// simulated_tts behind a fixed latency (scaled by time_scale).
class SimulatedSynthesizer : public Synthesizer {
 public:
  SimulatedSynthesizer(double latency_ms = 5.0, double time_scale = 1.0)
      : latency_ms_(latency_ms), time_scale_(time_scale) {}

  bool synthesize(std::string_view text, const VoiceConfig& voice, const CancelToken& cancel,
                  const ChunkSink& sink) override;

  double latency_ms() const noexcept { return latency_ms_; }

 private:
  double latency_ms_;
  double time_scale_;
};

}  // namespace asyncnarrate
