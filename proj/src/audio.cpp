#include "asyncnarrate/audio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

namespace asyncnarrate {

namespace {

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

std::uint32_t fnv1a(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

std::int16_t to_pcm(double v) {
  double s = std::round(v * 32767.0);
  return static_cast<std::int16_t>(std::clamp(s, -32768.0, 32767.0));
}

}  // namespace

double rms(std::span<const std::int16_t> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (auto s : samples) {
    double x = s / kFullScale;
    acc += x * x;
  }
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

std::size_t word_count(std::string_view text) { return split_words(text).size(); }

AudioClip simulated_tts(std::string_view text, double speaking_rate_wpm, int sample_rate) {
  auto words = split_words(text);
  if (words.empty()) throw SynthError(SynthErrc::Empty);
  if (speaking_rate_wpm <= 0 || sample_rate <= 0) throw SynthError(SynthErrc::Failed, "bad voice config");

  const auto duration_ms = static_cast<std::int64_t>(
      std::llround(static_cast<double>(words.size()) * 60000.0 / speaking_rate_wpm));
  const auto total = static_cast<std::size_t>(duration_ms * sample_rate / 1000);
  const std::size_t gap = static_cast<std::size_t>(sample_rate / 100);   // 10 ms
  const std::size_t ramp = static_cast<std::size_t>(sample_rate / 200);  // 5 ms
  constexpr double kAmplitude = 0.5;

  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.assign(total, 0);

  const std::size_t base = total / words.size();
  const std::size_t extra = total % words.size();
  std::size_t offset = 0;
  for (std::size_t w = 0; w < words.size(); ++w) {
    const std::size_t slot = base + (w < extra ? 1 : 0);
    const std::size_t burst = slot > gap ? slot - gap : 0;
    const double freq = 140.0 + static_cast<double>(fnv1a(words[w]) % 160u);
    const std::size_t r = std::min(ramp, burst / 2);
    for (std::size_t n = 0; n < burst; ++n) {
      double env = 1.0;
      if (r > 0 && n < r) {
        env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(n) / static_cast<double>(r));
      } else if (r > 0 && n >= burst - r) {
        env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(burst - 1 - n) / static_cast<double>(r));
      }
      double phase = 2.0 * std::numbers::pi * freq * static_cast<double>(n) / sample_rate;
      clip.samples[offset + n] = to_pcm(kAmplitude * env * std::sin(phase));
    }
    offset += slot;
  }
  return clip;
}

CrossfadeGains crossfade_gains(std::size_t i, std::size_t n) {
  if (n == 0) return {0.0, 1.0};
  const double x = std::numbers::pi * static_cast<double>(i) / (2.0 * static_cast<double>(n));
  return {std::cos(x), std::sin(x)};
}

std::size_t overlap_samples(double overlap_ms, int sample_rate) {
  return static_cast<std::size_t>(std::llround(overlap_ms * sample_rate / 1000.0));
}

AudioClip crossfade(const AudioClip& tail, const AudioClip& head, double overlap_ms) {
  if (tail.sample_rate != head.sample_rate) throw SynthError(SynthErrc::RateMismatch);
  const std::size_t n = overlap_samples(overlap_ms, tail.sample_rate);
  if (tail.size() < n || head.size() < n) throw SynthError(SynthErrc::TooShort);

  AudioClip out;
  out.sample_rate = tail.sample_rate;
  out.samples.reserve(tail.size() + head.size() - n);
  const std::size_t keep = tail.size() - n;
  out.samples.insert(out.samples.end(), tail.samples.begin(), tail.samples.begin() + static_cast<std::ptrdiff_t>(keep));
  for (std::size_t i = 0; i < n; ++i) {
    auto g = crossfade_gains(i, n);
    double v = g.out * (tail.samples[keep + i] / kFullScale) + g.in * (head.samples[i] / kFullScale);
    out.samples.push_back(static_cast<std::int16_t>(std::clamp(std::round(v * kFullScale), -32768.0, 32767.0)));
  }
  out.samples.insert(out.samples.end(), head.samples.begin() + static_cast<std::ptrdiff_t>(n), head.samples.end());
  return out;
}

std::vector<AudioFrame> slice_frames(std::span<const std::int16_t> samples, int sample_rate) {
  const std::size_t per = samples_per_frame(sample_rate);
  std::vector<AudioFrame> frames;
  for (std::size_t i = 0; i < samples.size(); i += per) {
    AudioFrame f;
    f.sample_rate = sample_rate;
    f.samples.assign(per, 0);
    const std::size_t take = std::min(per, samples.size() - i);
    std::copy_n(samples.begin() + static_cast<std::ptrdiff_t>(i), take, f.samples.begin());
    frames.push_back(std::move(f));
  }
  return frames;
}

std::pair<std::string, std::string> split_quick_clause(std::string_view text, std::size_t max_words) {
  auto words = split_words(text);
  if (words.empty()) return {};
  std::size_t cut = std::min(words.size(), std::max<std::size_t>(1, max_words));
  for (std::size_t i = 0; i < cut; ++i) {
    char last = words[i].back();
    if (last == ',' || last == '.' || last == '!' || last == '?' || last == ';') {
      cut = i + 1;
      break;
    }
  }
  auto join = [&](std::size_t from, std::size_t to) {
    std::string s;
    for (std::size_t i = from; i < to; ++i) {
      if (!s.empty()) s += ' ';
      s += words[i];
    }
    return s;
  };
  return {join(0, cut), join(cut, words.size())};
}

std::optional<AudioClip> synthesize_clip(Synthesizer& synth, std::string_view text, const VoiceConfig& voice,
                                         const CancelToken& cancel) {
  AudioClip clip;
  clip.sample_rate = voice.sample_rate;
  bool done = synth.synthesize(text, voice, cancel, [&](std::span<const std::int16_t> chunk) {
    clip.samples.insert(clip.samples.end(), chunk.begin(), chunk.end());
  });
  if (!done) return std::nullopt;
  return clip;
}

bool SimulatedSynthesizer::synthesize(std::string_view text, const VoiceConfig& voice, const CancelToken& cancel,
                                      const ChunkSink& sink) {
  auto clip = simulated_tts(text, voice.speaking_rate_wpm, voice.sample_rate);
  const double wait = latency_ms_ * time_scale_;
  if (wait > 0 && !cancel.sleep_for(std::chrono::duration<double, std::milli>(wait))) return false;
  if (cancel.cancelled()) return false;
  const std::size_t per = samples_per_frame(voice.sample_rate);
  std::span<const std::int16_t> all(clip.samples);
  for (std::size_t i = 0; i < all.size(); i += per) {
    if (cancel.cancelled()) return false;
    sink(all.subspan(i, std::min(per, all.size() - i)));
  }
  return true;
}

}  // namespace asyncnarrate
