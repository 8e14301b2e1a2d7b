#include "asyncnarrate/turn.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace asyncnarrate {

namespace {

std::vector<std::string_view> tokens(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

std::string truncate_tokens(std::string_view text, std::size_t max_tokens) {
  auto toks = tokens(text);
  std::size_t from = toks.size() > max_tokens ? toks.size() - max_tokens : 0;
  std::string out;
  for (std::size_t i = from; i < toks.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += toks[i];
  }
  return out;
}

bool is_continuation_word(std::string_view word) {
  static const std::set<std::string, std::less<>> kWords{
      "a",    "about", "after", "an",   "and",  "as",    "at",    "because", "before", "but",
      "by",   "for",   "from",  "if",   "in",   "into",  "like",  "of",      "on",     "or",
      "so",   "than",  "that",  "the",  "then", "to",    "uh",    "um",      "until",  "which",
      "while", "with", "er",    "hmm",  "whether", "our", "my",   "your",    "their",  "its"};
  std::string w;
  for (char c : word) {
    if (std::isalpha(static_cast<unsigned char>(c))) w += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return kWords.count(w) > 0;
}

double completion_probability(std::string_view text, CompletionClassifier* classifier) {
  std::string truncated = truncate_tokens(text);
  if (truncated.empty()) return 0.02;
  if (classifier) return std::clamp(classifier->probability(truncated), 0.0, 1.0);

  double p = 0.5;
  const char last = truncated.back();
  if (last == '.' || last == '!' || last == '?') p += 0.45;
  auto toks = tokens(truncated);
  if (!toks.empty() && is_continuation_word(toks.back())) p -= 0.35;
  return std::clamp(p, 0.02, 0.98);
}

AnchorTable::AnchorTable() : anchors_{{0.0, 1200.0}, {0.5, 600.0}, {1.0, 150.0}} {}

AnchorTable::AnchorTable(std::vector<Anchor> anchors) : anchors_(std::move(anchors)) {
  validate(anchors_);
}

void AnchorTable::validate(const std::vector<Anchor>& a) {
  if (a.size() < 2) throw ConfigError(ConfigErrc::Anchors, "need at least two anchors");
  if (a.front().probability != 0.0) throw ConfigError(ConfigErrc::Anchors, "first anchor must be p=0.0");
  if (a.back().probability != 1.0) throw ConfigError(ConfigErrc::Anchors, "last anchor must be p=1.0");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i].pause_ms) || a[i].pause_ms < 0) {
      throw ConfigError(ConfigErrc::Anchors, "pause must be >= 0");
    }
    if (i > 0) {
      if (!(a[i].probability > a[i - 1].probability)) {
        throw ConfigError(ConfigErrc::Anchors, "probabilities must strictly increase");
      }
      if (a[i].pause_ms > a[i - 1].pause_ms) {
        throw ConfigError(ConfigErrc::Anchors, "pause must not increase with probability");
      }
    }
  }
}

double pause_for(double p, const AnchorTable& table) {
  const auto& a = table.anchors();
  p = std::clamp(std::isnan(p) ? 0.0 : p, 0.0, 1.0);
  for (std::size_t i = 0; i + 1 < a.size(); ++i) {
    if (p == a[i].probability) return a[i].pause_ms;
    if (p < a[i + 1].probability) {
      const double f = (p - a[i].probability) / (a[i + 1].probability - a[i].probability);
      return a[i].pause_ms + f * (a[i + 1].pause_ms - a[i].pause_ms);
    }
  }
  return a.back().pause_ms;
}

VadState::VadState(VadConfig c) : config(c) {
  if (c.trigger_frames < 1) throw ConfigError(ConfigErrc::Value, "trigger_frames must be >= 1");
  if (!(c.rms_threshold > 0)) throw ConfigError(ConfigErrc::Value, "rms_threshold must be > 0");
  if (c.hangover_frames < 0) throw ConfigError(ConfigErrc::Value, "hangover_frames must be >= 0");
}

std::string_view to_string(VadDecision d) {
  switch (d) {
    case VadDecision::Silence: return "silence";
    case VadDecision::Speech: return "speech";
    case VadDecision::SpeechOnset: return "onset";
  }
  return "?";
}

VadDecision vad_step(VadState& st, const AudioFrame& frame) {
  if (frame.sample_rate != st.config.sample_rate) {
    throw ConfigError(ConfigErrc::Rate, std::to_string(frame.sample_rate) + " != " +
                                            std::to_string(st.config.sample_rate));
  }
  double acc = 0.0;
  for (auto s : frame.samples) {
    double x = s / 32768.0;
    acc += x * x;
  }
  const double level = frame.samples.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(frame.samples.size()));

  if (level >= st.config.rms_threshold) {
    ++st.consecutive_speech;
    if (st.in_speech) {
      st.hangover_left = st.config.hangover_frames;
      return VadDecision::Speech;
    }
    if (st.consecutive_speech >= st.config.trigger_frames) {
      st.in_speech = true;
      st.hangover_left = st.config.hangover_frames;
      return VadDecision::SpeechOnset;
    }
    return VadDecision::Silence;
  }

  st.consecutive_speech = 0;
  if (st.in_speech) {
    if (st.hangover_left > 0) {
      --st.hangover_left;
      return VadDecision::Speech;
    }
    st.in_speech = false;
  }
  return VadDecision::Silence;
}

std::string_view to_string(StopOrigin o) {
  switch (o) {
    case StopOrigin::ClientAudio: return "client_audio";
    case StopOrigin::ClientButton: return "client_button";
    case StopOrigin::ServerVad: return "server_vad";
  }
  return "?";
}

StopOutcome apply_stop(const StopSignal& signal, StopTarget& target) {
  if (target.stop_in_progress()) return StopOutcome::NoOp;
  auto& session = target.stop_session();
  const auto state = session.state();
  if (state == PipelineState::Listening) {
    throw StateError(StateErrc::IllegalTransition, "listening + StopSignal");
  }
  target.cancel_synthesis();
  target.discard_queued_audio();
  target.begin_protection_fade(kProtectionWindowMs);
  session.transition(Trigger::StopSignal);
  session.append(Origin::User, "interrupt", std::string(to_string(signal.origin)));
  return StopOutcome::Applied;
}

}  // namespace asyncnarrate
