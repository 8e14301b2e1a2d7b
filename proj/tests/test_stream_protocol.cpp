#include <doctest.h>

#include <random>
#include <regex>

#include "asyncnarrate/stream_protocol.hpp"

using namespace asyncnarrate;

namespace {

ReasoningEvent ev(EventKind k, std::string p = {}, std::uint64_t seq = 0) { return {k, std::move(p), seq, 0.0}; }

template <class F>
auto code_of(F&& f) {
  try {
    f();
  } catch (const GrammarError& e) {
    return std::optional<GrammarErrc>(e.code());
  }
  return std::optional<GrammarErrc>();
}

}  // namespace

TEST_CASE("encode_event uses exact prefixes") {
  CHECK(encode_event(ev(EventKind::Thinking, "add 5 and 3")) == "Thinking: add 5 and 3");
  CHECK(encode_event(ev(EventKind::Content, "status")) == "Content: status");
  CHECK(encode_event(ev(EventKind::Answer, "")) == "Answer: ");
  CHECK(encode_event(ev(EventKind::Complete)) == "COMPLETE");
}

TEST_CASE("encode_event rejects payloads that would break framing") {
  CHECK_THROWS_AS(encode_event(ev(EventKind::Thinking, "a\nb")), ProtocolError);
  CHECK_THROWS_AS(encode_event(ev(EventKind::Answer, "a\rb")), ProtocolError);
  CHECK_THROWS_AS(encode_event(ev(EventKind::Complete, "x")), ProtocolError);
}

TEST_CASE("parse_event") {
  auto a = parse_event("Answer: 42");
  CHECK(a.kind == EventKind::Answer);
  CHECK(a.payload == "42");
  auto c = parse_event("COMPLETE");
  CHECK(c.kind == EventKind::Complete);
  CHECK(c.payload.empty());
  CHECK(parse_event("Thinking: ").payload.empty());

  auto code = [](std::string_view line) {
    try {
      parse_event(line);
    } catch (const ProtocolError& e) {
      return e.code();
    }
    FAIL("no error for " << line);
    return ProtocolErrc::InvalidEvent;
  };
  CHECK(code("Foo: bar") == ProtocolErrc::UnknownPrefix);
  CHECK(code("") == ProtocolErrc::Empty);
  CHECK(code("Thinking:x") == ProtocolErrc::UnknownPrefix);  // colon-space is part of the prefix
  CHECK(code("thinking: x") == ProtocolErrc::UnknownPrefix);
  CHECK(code("COMPLETE ") == ProtocolErrc::UnknownPrefix);
}

TEST_CASE("parse after encode is the identity on random events") {
  std::mt19937 rng(7);
  const std::vector<std::string> alphabet{"a", "Z", "0", "9", " ", ":", ": ", "Thinking: ", "COMPLETE", "\xC3\xA9",
                                          "\xE2\x80\x94", "\t", "{", "\"", "\\", "%"};
  for (int i = 0; i < 2000; ++i) {
    auto kind = static_cast<EventKind>(rng() % 4);
    std::string payload;
    if (kind != EventKind::Complete) {
      int n = static_cast<int>(rng() % 12);
      for (int j = 0; j < n; ++j) payload += alphabet[rng() % alphabet.size()];
    }
    auto e = ev(kind, payload);
    CHECK(parse_event(encode_event(e)) == e);
  }
}

TEST_CASE("validate_stream examples") {
  using K = EventKind;
  CHECK_NOTHROW(validate_stream(std::vector{ev(K::Thinking, "", 0), ev(K::Thinking, "", 1), ev(K::Answer, "", 2),
                                            ev(K::Complete, "", 3)}));
  CHECK_NOTHROW(validate_stream(std::vector{ev(K::Thinking, "", 0), ev(K::Answer, "", 1), ev(K::Answer, "", 2),
                                            ev(K::Complete, "", 3)}));
  CHECK(code_of([] { validate_stream(std::vector{ev(K::Complete)}); }) == GrammarErrc::PrematureComplete);
  CHECK(code_of([] {
          validate_stream(std::vector{ev(K::Answer, "", 0), ev(K::Complete, "", 1), ev(K::Thinking, "", 2)});
        }) == GrammarErrc::AfterClose);
  CHECK(code_of([] { validate_stream(std::vector{ev(K::Thinking, "", 1), ev(K::Answer, "", 1)}); }) ==
        GrammarErrc::SeqOrder);
  CHECK(code_of([] { validate_stream(std::vector{ev(K::Answer, "", 0), ev(K::Thinking, "", 1)}); }) ==
        GrammarErrc::AfterAnswer);
  CHECK(code_of([] { validate_stream(std::vector{ev(K::Thinking, "", 0), ev(K::Answer, "", 1)}); }) ==
        GrammarErrc::Incomplete);
}

TEST_CASE("validator agrees with a regular-expression oracle on short sequences") {
  // Oracle: T=Thinking C=Content A=Answer X=Complete
  const std::regex grammar("[TC]*A+X");
  const char letters[] = {'T', 'C', 'A', 'X'};
  int checked = 0;
  for (int len = 0; len <= 5; ++len) {
    int total = 1;
    for (int i = 0; i < len; ++i) total *= 4;
    for (int code = 0; code < total; ++code) {
      std::vector<ReasoningEvent> seq;
      std::string word;
      int c = code;
      for (int i = 0; i < len; ++i) {
        int k = c % 4;
        c /= 4;
        seq.push_back(ev(static_cast<EventKind>(k), "", static_cast<std::uint64_t>(i)));
        word += letters[k];
      }
      bool accepted = true;
      try {
        validate_stream(seq);
      } catch (const GrammarError&) {
        accepted = false;
      }
      CHECK_MESSAGE(accepted == std::regex_match(word, grammar), word);
      ++checked;
    }
  }
  CHECK(checked == 1 + 4 + 16 + 64 + 256 + 1024);
}
