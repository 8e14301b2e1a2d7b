#include <doctest.h>

#include <thread>

#include "asyncnarrate/explainer.hpp"
#include "helpers.hpp"

using namespace asyncnarrate;
using namespace std::chrono_literals;

namespace {

ReasoningEvent ev(EventKind k, std::string payload, std::uint64_t seq = 0) { return {k, std::move(payload), seq, 0.0}; }

class SlowModel : public NarrationModel {
 public:
  explicit SlowModel(std::chrono::milliseconds delay, std::string reply = "model says hi")
      : delay_(delay), reply_(std::move(reply)) {}
  std::string explain(const ReasoningEvent&, std::string_view, Style) override {
    std::this_thread::sleep_for(delay_);
    return reply_;
  }
  std::string answer(std::string_view, std::string_view, Style) override {
    std::this_thread::sleep_for(delay_);
    return reply_;
  }

 private:
  std::chrono::milliseconds delay_;
  std::string reply_;
};

}  // namespace

TEST_CASE("template narration of a thinking step") {
  Explainer ex;
  auto seg = ex.explain_event(ev(EventKind::Thinking, "compute 5*3=15", 7), "", Style::Concise);
  CHECK(seg.text == "Right now the solver is working on: compute 5*3=15.");
  CHECK(seg.source_seq == 7u);
  CHECK(seg.source_kind == EventKind::Thinking);
  CHECK(seg.style == Style::Concise);
}

TEST_CASE("answer narration carries the answer and complete is not narratable") {
  Explainer ex;
  for (auto style : {Style::Concise, Style::Detailed}) {
    auto seg = ex.explain_event(ev(EventKind::Answer, "42"), "", style);
    CHECK(seg.text.find("42") != std::string::npos);
  }
  try {
    ex.explain_event(ev(EventKind::Complete, ""), "", Style::Concise);
    FAIL("expected NotNarratable");
  } catch (const ExplainError& e) {
    CHECK(e.code() == ExplainErrc::NotNarratable);
  }
}

TEST_CASE("detailed style names the scenario") {
  Explainer ex;
  ex.set_scenario_label(scenario_label("travel"));
  auto seg = ex.explain_event(ev(EventKind::Content, "checking flights"), "", Style::Detailed);
  CHECK(seg.text == "Here is a status update from the travel planner: checking flights.");
}

TEST_CASE("protected_tokens") {
  CHECK(protected_tokens("The total is 6,480 NOK for 3 nights in Oslo.") ==
        std::vector<std::string>{"6,480", "NOK", "3", "Oslo"});
  CHECK(protected_tokens("Leave at 10:30 on 5/12. Then rest.") ==
        std::vector<std::string>{"10:30", "5/12"});
  CHECK(protected_tokens("").empty());
}

TEST_CASE("concise narration stays within the limit and keeps protected tokens") {
  std::string payload;
  for (int i = 0; i < 40; ++i) payload += "then we carefully consider option " + std::to_string(i * 7) + " and ";
  payload += "settle on Bergen";
  Explainer ex;
  auto seg = ex.explain_event(ev(EventKind::Thinking, payload), "", Style::Concise);
  CHECK(seg.text.size() <= kConciseLimit);
  for (const char* tok : {"0", "7", "14", "21"}) CHECK(seg.text.find(tok) != std::string::npos);
  auto detailed = ex.explain_event(ev(EventKind::Thinking, payload), "", Style::Detailed);
  CHECK(detailed.text.size() > kConciseLimit);
}

TEST_CASE("answer_user picks the related step from context") {
  Explainer ex;
  std::string ctx =
      "[backend/thinking] sum the digits\n"
      "[backend/thinking] check the parity of the result\n"
      "[user/user_text] what are you doing";
  auto seg = ex.answer_user("what was the step about digits?", ctx, Style::Concise);
  CHECK(seg.text.find("sum the digits") != std::string::npos);
  CHECK_FALSE(seg.source_seq.has_value());

  // Without keyword overlap the most recent step wins.
  auto recent = ex.answer_user("what now?", ctx, Style::Concise);
  CHECK(recent.text.find("check the parity") != std::string::npos);

  auto none = ex.answer_user("anything?", "", Style::Concise);
  CHECK(none.text.find("not reported") != std::string::npos);

  try {
    ex.answer_user("   ", ctx, Style::Concise);
    FAIL("expected EmptyQuery");
  } catch (const ExplainError& e) {
    CHECK(e.code() == ExplainErrc::EmptyQuery);
  }
}

TEST_CASE("model output is used when it arrives in time") {
  Explainer ex(TemplateSet::defaults(), {"solver", 500ms}, std::make_shared<SlowModel>(0ms, "fast reply"));
  CHECK(ex.explain_event(ev(EventKind::Thinking, "x"), "", Style::Concise).text == "fast reply");
  CHECK(ex.answer_user("q", "", Style::Concise).text == "fast reply");
}

TEST_CASE("a stalled model falls back within the deadline") {
  Explainer ex(TemplateSet::defaults(), {"solver", 100ms}, std::make_shared<SlowModel>(1000ms));
  auto t0 = std::chrono::steady_clock::now();
  auto seg = ex.answer_user("what is happening?", "", Style::Concise);
  CHECK(testutil::ms_since(t0) < 400);
  CHECK(seg.text == kAnswerFallback);

  t0 = std::chrono::steady_clock::now();
  auto narr = ex.explain_event(ev(EventKind::Thinking, "compute 5*3=15"), "", Style::Concise);
  CHECK(testutil::ms_since(t0) < 400);
  CHECK(narr.text == "Right now the solver is working on: compute 5*3=15.");
}

TEST_CASE("template files") {
  auto set = TemplateSet::load(testutil::fixtures() / "templates" / "default.txt");
  CHECK(set.get(EventKind::Thinking, Style::Concise) == "Right now the solver is working on: {payload}.");
  CHECK_THROWS_AS(TemplateSet::parse("thinking/concise: only one"), ConfigError);
  CHECK_THROWS_AS(TemplateSet::parse("complete/concise: x"), ConfigError);
  CHECK_THROWS_AS(TemplateSet::parse("no separator here"), ConfigError);
}
