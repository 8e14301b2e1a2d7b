#include "asyncnarrate/explainer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <thread>

namespace asyncnarrate {

std::string_view to_string(Style s) { return s == Style::Concise ? "concise" : "detailed"; }

std::optional<Style> style_from_string(std::string_view s) {
  if (s == "concise") return Style::Concise;
  if (s == "detailed") return Style::Detailed;
  return std::nullopt;
}

std::string scenario_label(std::string_view scenario) {
  if (scenario == "math") return "math solver";
  if (scenario == "travel") return "travel planner";
  if (scenario == "research") return "research assistant";
  return "solver";
}

namespace {

constexpr std::string_view kDefaultTemplates = R"(# kind/style: template
thinking/concise: Right now the solver is working on: {payload}.
thinking/detailed: The {scenario} is reasoning through its next step. It is working on: {payload}.
content/concise: Status update: {payload}.
content/detailed: Here is a status update from the {scenario}: {payload}.
answer/concise: The answer is: {payload}.
answer/detailed: The {scenario} has reached its answer: {payload}.
)";

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

const std::set<std::string>& question_stopwords() {
  static const std::set<std::string> kWords{
      "a",    "about", "an",   "and",  "are",   "can",  "did",   "do",    "does", "for",
      "how",  "i",     "in",   "is",   "it",    "last", "latest", "me",   "of",   "on",
      "or",   "say",   "step", "tell", "that",  "the",  "this",  "to",    "was",  "we",
      "were", "what",  "when", "where", "which", "who",  "why",   "with",  "you",  "your",
      "now",  "right", "just", "doing", "working"};
  return kWords;
}

std::vector<std::string> words_lower(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (is_word_char(c)) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

template <class F>
std::optional<std::string> run_with_deadline(F&& fn, std::chrono::milliseconds deadline) {
  std::packaged_task<std::string()> task(std::forward<F>(fn));
  auto fut = task.get_future();
  std::thread(std::move(task)).detach();
  if (fut.wait_for(deadline) != std::future_status::ready) return std::nullopt;
  try {
    return fut.get();
  } catch (...) {
    return std::nullopt;
  }
}

}  // namespace

TemplateSet TemplateSet::defaults() { return parse(kDefaultTemplates); }

TemplateSet TemplateSet::parse(std::string_view text) {
  TemplateSet set;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto colon = t.find(':');
    auto slash = t.find('/');
    if (colon == std::string::npos || slash == std::string::npos || slash > colon) {
      throw ConfigError(ConfigErrc::Value, "template line '" + t + "'");
    }
    auto kind = kind_from_json_name(trim(t.substr(0, slash)));
    auto style = style_from_string(trim(t.substr(slash + 1, colon - slash - 1)));
    if (!kind || *kind == EventKind::Complete || !style) {
      throw ConfigError(ConfigErrc::Value, "template key in '" + t + "'");
    }
    set.set(*kind, *style, trim(t.substr(colon + 1)));
  }
  for (auto k : {EventKind::Thinking, EventKind::Content, EventKind::Answer}) {
    for (auto s : {Style::Concise, Style::Detailed}) {
      if (!set.templates_.count({k, s})) {
        throw ConfigError(ConfigErrc::Value, "missing template " + std::string(json_name(k)) + "/" +
                                                 std::string(to_string(s)));
      }
    }
  }
  return set;
}

TemplateSet TemplateSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(ConfigErrc::Value, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string& TemplateSet::get(EventKind kind, Style style) const {
  return templates_.at({kind, style});
}

void TemplateSet::set(EventKind kind, Style style, std::string tmpl) {
  templates_[{kind, style}] = std::move(tmpl);
}

std::vector<std::string> protected_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  bool sentence_start = true;
  while (i < text.size()) {
    char c = text[i];
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < text.size()) {
        if (std::isdigit(static_cast<unsigned char>(text[j]))) {
          ++j;
        } else if ((text[j] == '.' || text[j] == ',' || text[j] == ':' || text[j] == '/') &&
                   j + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[j + 1]))) {
          ++j;
        } else {
          break;
        }
      }
      out.emplace_back(text.substr(i, j - i));
      i = j;
      sentence_start = false;
    } else if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < text.size() && is_word_char(text[j])) ++j;
      if (std::isupper(static_cast<unsigned char>(c)) && !sentence_start) {
        out.emplace_back(text.substr(i, j - i));
      }
      i = j;
      sentence_start = false;
    } else {
      if (c == '.' || c == '!' || c == '?') sentence_start = true;
      ++i;
    }
  }
  return out;
}

Explainer::Explainer(TemplateSet templates, Options options, std::shared_ptr<NarrationModel> model)
    : templates_(std::move(templates)), options_(std::move(options)), model_(std::move(model)) {}

std::string Explainer::render_template(const ReasoningEvent& ev, Style style) const {
  std::string payload = trim(ev.payload);
  while (!payload.empty() && payload.back() == '.') payload.pop_back();
  std::string text = templates_.get(ev.kind, style);
  replace_all(text, "{scenario}", options_.scenario_label);
  replace_all(text, "{payload}", payload);

  if (style == Style::Concise && text.size() > kConciseLimit) {
    // Keep the protected tokens; drop the connective prose.
    std::string head = templates_.get(ev.kind, style);
    if (auto p = head.find("{payload}"); p != std::string::npos) head = head.substr(0, p);
    replace_all(head, "{scenario}", options_.scenario_label);
    std::string compact = trim(head) + " key points ";
    std::set<std::string> seen;
    bool first = true;
    for (const auto& tok : protected_tokens(payload)) {
      if (!seen.insert(tok).second) continue;
      std::string piece = (first ? "" : ", ") + tok;
      if (compact.size() + piece.size() + 1 > kConciseLimit) break;
      compact += piece;
      first = false;
    }
    compact += '.';
    text = std::move(compact);
  }
  return text;
}

NarrationSegment Explainer::explain_event(const ReasoningEvent& ev, std::string_view context,
                                          Style style) const {
  if (ev.kind == EventKind::Complete) throw ExplainError(ExplainErrc::NotNarratable);
  NarrationSegment seg;
  seg.source_seq = ev.seq;
  seg.source_kind = ev.kind;
  seg.style = style;
  if (model_) {
    auto model = model_;
    std::string ctx(context);
    auto out = run_with_deadline([model, ev, ctx, style] { return model->explain(ev, ctx, style); },
                                 options_.deadline);
    if (out && !trim(*out).empty()) {
      seg.text = trim(*out);
      return seg;
    }
  }
  seg.text = render_template(ev, style);
  return seg;
}

std::string Explainer::template_answer(std::string_view question, std::string_view context,
                                       Style style) const {
  std::vector<std::string> keywords;
  for (auto& w : words_lower(question)) {
    if (!question_stopwords().count(w)) keywords.push_back(std::move(w));
  }

  std::vector<std::string> steps;  // backend payloads, oldest first
  std::istringstream in{std::string(context)};
  std::string line;
  while (std::getline(in, line)) {
    constexpr std::string_view kBackend = "[backend/";
    if (!line.starts_with(kBackend)) continue;
    auto close = line.find("] ");
    if (close == std::string::npos) continue;
    steps.push_back(line.substr(close + 2));
  }

  const std::string& who = options_.scenario_label;
  if (steps.empty()) return "The " + who + " has not reported any steps yet.";

  std::size_t best = steps.size() - 1;
  std::size_t best_score = 0;
  for (std::size_t i = steps.size(); i-- > 0;) {
    auto ws = words_lower(steps[i]);
    std::set<std::string> have(ws.begin(), ws.end());
    std::size_t score = 0;
    for (const auto& k : keywords) score += have.count(k);
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  std::string payload = trim(steps[best]);
  while (!payload.empty() && payload.back() == '.') payload.pop_back();
  if (style == Style::Concise) return "The most recent related step was: " + payload + ".";
  return "You asked: " + trim(question) + " The " + who + "'s most recent related step was: " + payload + ".";
}

NarrationSegment Explainer::answer_user(std::string_view question, std::string_view context,
                                        Style style) const {
  if (trim(question).empty()) throw ExplainError(ExplainErrc::EmptyQuery);
  NarrationSegment seg;
  seg.style = style;
  if (model_) {
    auto model = model_;
    std::string q(question), ctx(context);
    auto out = run_with_deadline([model, q, ctx, style] { return model->answer(q, ctx, style); },
                                 options_.deadline);
    seg.text = out && !trim(*out).empty() ? trim(*out) : std::string(kAnswerFallback);
    return seg;
  }
  seg.text = template_answer(question, context, style);
  return seg;
}

}  // namespace asyncnarrate
