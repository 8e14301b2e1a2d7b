#pragma once

// Turns backend reasoning events into spoken-style narration and answers
// user questions from the session context.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "asyncnarrate/error.hpp"
#include "asyncnarrate/stream_protocol.hpp"

namespace asyncnarrate {

enum class Style { Concise, Detailed };
std::string_view to_string(Style s);
std::optional<Style> style_from_string(std::string_view s);

inline constexpr std::size_t kConciseLimit = 400;

struct NarrationSegment {
  std::string text;
  std::optional<std::uint64_t> source_seq;  // none for answers to the user
  std::optional<EventKind> source_kind;
  Style style = Style::Concise;
  double created_at = 0.0;
};

// One template per (kind, style); placeholders {payload} and {scenario}.
// File format, one per line, '#' comments:
//   thinking/concise: Right now the solver is working on: {payload}.
class TemplateSet {
 public:
  static TemplateSet defaults();
  static TemplateSet parse(std::string_view text);
  static TemplateSet load(const std::filesystem::path& path);

  const std::string& get(EventKind kind, Style style) const;
  void set(EventKind kind, Style style, std::string tmpl);

 private:
  std::map<std::pair<EventKind, Style>, std::string> templates_;
};

// Tokens that narration must carry through verbatim: numbers (digits with
// internal . , : / separators) and capitalized words that are not the first
// word of a sentence.
std::vector<std::string> protected_tokens(std::string_view text);

// Optional generative backend; both calls may be slow and are bounded by a
// deadline on the explainer side.
class NarrationModel {
 public:
  virtual ~NarrationModel() = default;
  virtual std::string explain(const ReasoningEvent& ev, std::string_view context, Style style) = 0;
  virtual std::string answer(std::string_view question, std::string_view context, Style style) = 0;
};

inline constexpr std::string_view kAnswerFallback =
    "Let me get back to that \xE2\x80\x94 the solver is still working.";

class Explainer {
 public:
  struct Options {
    std::string scenario_label = "solver";
    std::chrono::milliseconds deadline{1500};
  };

  Explainer() : Explainer(TemplateSet::defaults(), Options{}) {}
  Explainer(TemplateSet templates, Options options, std::shared_ptr<NarrationModel> model = nullptr);

  // Throws ExplainError{NotNarratable} for Complete.
  NarrationSegment explain_event(const ReasoningEvent& ev, std::string_view context, Style style) const;
  // Throws ExplainError{EmptyQuery}.
  NarrationSegment answer_user(std::string_view question, std::string_view context, Style style) const;

  void set_scenario_label(std::string label) { options_.scenario_label = std::move(label); }
  const Options& options() const noexcept { return options_; }

 private:
  std::string render_template(const ReasoningEvent& ev, Style style) const;
  std::string template_answer(std::string_view question, std::string_view context, Style style) const;

  TemplateSet templates_;
  Options options_;
  std::shared_ptr<NarrationModel> model_;
};

// Human label used for {scenario}: "math solver", "travel planner", ...
std::string scenario_label(std::string_view scenario);

}  // namespace asyncnarrate
