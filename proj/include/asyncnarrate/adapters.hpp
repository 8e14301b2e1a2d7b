#pragma once

// HTTP adapters for externally hosted models. Each endpoint takes a JSON
// POST:
//   explainer    {"op":"explain","kind","payload","context","style"} -> {"text"}
//                {"op":"answer","question","context","style"}       -> {"text"}
//   classifier   {"text"}                                           -> {"probability"}
//   synthesizer  {"text","sample_rate","speaking_rate_wpm"}         -> raw 16-bit LE PCM

#include <string>

#include "asyncnarrate/audio.hpp"
#include "asyncnarrate/explainer.hpp"
#include "asyncnarrate/turn.hpp"

namespace asyncnarrate {

class HttpNarrationModel : public NarrationModel {
 public:
  explicit HttpNarrationModel(std::string endpoint);
  std::string explain(const ReasoningEvent& ev, std::string_view context, Style style) override;
  std::string answer(std::string_view question, std::string_view context, Style style) override;

 private:
  std::string endpoint_;
};

// Falls back to the heuristic when the endpoint fails.
class HttpCompletionClassifier : public CompletionClassifier {
 public:
  explicit HttpCompletionClassifier(std::string endpoint);
  double probability(std::string_view text) override;

 private:
  std::string endpoint_;
};

// Throws SynthError{Failed} on transport errors or odd-length bodies.
class HttpSynthesizer : public Synthesizer {
 public:
  explicit HttpSynthesizer(std::string endpoint);
  bool synthesize(std::string_view text, const VoiceConfig& voice, const CancelToken& cancel,
                  const ChunkSink& sink) override;

 private:
  std::string endpoint_;
};

}  // namespace asyncnarrate
