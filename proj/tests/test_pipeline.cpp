#include <doctest.h>

#include <thread>

#include "asyncnarrate/bench.hpp"
#include "asyncnarrate/pipeline.hpp"
#include "helpers.hpp"

using namespace asyncnarrate;
using namespace std::chrono_literals;

namespace {

const char* kMathTrace = R"({"scenario":"math","expected_answer":"9","query":"sum the digits of 1234 minus 1"}
{"t_ms":0,"kind":"content","text":"Reading the question."}
{"t_ms":200,"kind":"thinking","text":"Sum the digits: 1 plus 2 plus 3 plus 4 is 10."}
{"t_ms":400,"kind":"thinking","text":"Subtract 1 from 10 to get 9."}
{"t_ms":560,"kind":"answer","text":"The result is 9."}
{"t_ms":600,"kind":"complete"}
)";

// First event only after 1.5 s, so the pipeline sits in Processing.
const char* kLateTrace = R"({"scenario":"math","expected_answer":"2","query":"late"}
{"t_ms":1500,"kind":"thinking","text":"one plus one"}
{"t_ms":1550,"kind":"answer","text":"2"}
{"t_ms":1600,"kind":"complete"}
)";

// Long enough that playback is still going when we barge in.
const char* kLongTrace = R"({"scenario":"travel","expected_answer":"Oslo","query":"long"}
{"t_ms":0,"kind":"content","text":"Collecting options for a long weekend trip with several stops along the coast and inland."}
{"t_ms":100,"kind":"thinking","text":"Compare the train to Bergen with the flight, considering price, time and scenery for each leg."}
{"t_ms":200,"kind":"answer","text":"Go to Oslo first and then take the train west."}
{"t_ms":300,"kind":"complete"}
)";

class FailingSynth : public Synthesizer {
 public:
  bool synthesize(std::string_view, const VoiceConfig&, const CancelToken&, const ChunkSink&) override {
    throw SynthError(SynthErrc::Failed, "remainder voice unavailable");
  }
};

struct Harness {
  std::shared_ptr<TraceLibrary> lib = std::make_shared<TraceLibrary>();
  std::shared_ptr<ConnectionContext> conn;
  std::unique_ptr<LoopbackPeer> peer;
  std::unique_ptr<NarrationPipeline> pipeline;

  explicit Harness(PipelineConfig cfg, std::vector<std::string> traces, PipelineDeps deps = {}) {
    for (const auto& t : traces) lib->add(parse_trace(t));
    deps.traces = lib;
    ConnectionContext::Config cc;
    if (cfg.time_scale == 0) cc.audio_queue_frames = 1u << 22;
    conn = std::make_shared<ConnectionContext>("t", std::make_shared<SessionContext>(), cc);
    peer = std::make_unique<LoopbackPeer>(conn);
    pipeline = std::make_unique<NarrationPipeline>(cfg, std::move(deps), conn);
  }
  ~Harness() {
    pipeline->shutdown();
    peer->stop();
  }

  std::vector<std::string> states() const {
    std::vector<std::string> out;
    for (const auto& j : peer->controls_of("state")) out.push_back(j["value"]);
    return out;
  }
  bool wait_state(const std::string& s, std::chrono::milliseconds timeout) const {
    return peer->wait_until(
        [&](const LoopbackPeer& p) {
          auto st = p.controls_of("state");
          return !st.empty() && st.back()["value"] == s;
        },
        timeout);
  }
  std::vector<std::string> control_types() const {
    std::vector<std::string> out;
    for (const auto& j : peer->controls()) out.push_back(j["type"]);
    return out;
  }
};

PipelineConfig scaled_config(double scale, Topology t = Topology::Async) {
  PipelineConfig c;
  c.time_scale = scale;
  c.topology = t;
  return c;
}

std::ptrdiff_t index_of(const std::vector<std::string>& v, const std::string& s) {
  auto it = std::find(v.begin(), v.end(), s);
  return it == v.end() ? -1 : it - v.begin();
}

}  // namespace

TEST_CASE("async run narrates every event and returns to listening") {
  Harness h(scaled_config(0), {kMathTrace});
  h.pipeline->handle(ControlMessage::start_task("math", "sum the digits of 1234 minus 1"));
  REQUIRE(h.pipeline->wait_idle(10s));
  h.peer->wait_until([&](const LoopbackPeer&) { return h.conn->audio_queue_length() == 0; }, 2s);

  auto narr = h.pipeline->narrations();
  REQUIRE(narr.size() == 4);
  for (std::uint64_t i = 0; i < 4; ++i) CHECK(narr[i].source_seq == i);
  CHECK(narr[3].text.find("9") != std::string::npos);

  auto states = h.states();
  REQUIRE(states.size() >= 3);
  CHECK(states.front() == "processing");
  CHECK(states[1] == "speaking");
  CHECK(states.back() == "listening");
  CHECK(h.pipeline->session().state() == PipelineState::Listening);
  CHECK_FALSE(h.pipeline->session().task().has_value());

  CHECK(h.peer->controls_of("reasoning_event").size() == 4);  // complete has its own message
  CHECK(h.peer->controls_of("complete").size() == 1);
  CHECK(h.peer->controls_of("narration_text").size() == 4);
  CHECK(h.peer->controls_of("ttfa_report").size() == 1);
  CHECK(h.peer->controls_of("error").empty());
  CHECK(h.peer->frame_count() > 0);
  CHECK(h.pipeline->backend_result()->outcome == BackendOutcome::Completed);

  // Ledger: backend events and narrations are both recorded.
  std::size_t backend = 0, explainer = 0;
  for (const auto& e : h.pipeline->session().events()) {
    backend += e.origin == Origin::Backend;
    explainer += e.origin == Origin::Explainer;
  }
  CHECK(backend == 5);
  CHECK(explainer == 4);
}

TEST_CASE("monolithic narration starts only after complete") {
  Harness h(scaled_config(0, Topology::Monolithic), {kMathTrace});
  h.pipeline->handle(ControlMessage::start_task("math", ""));
  REQUIRE(h.pipeline->wait_idle(10s));
  h.peer->wait_until([&](const LoopbackPeer&) { return h.conn->control_queue_length() == 0; }, 2s);
  auto types = h.control_types();
  auto complete = index_of(types, "complete");
  auto first_narration = index_of(types, "narration_text");
  REQUIRE(complete >= 0);
  REQUIRE(first_narration >= 0);
  CHECK(first_narration > complete);
  CHECK(h.pipeline->narrations().size() == 4);
}

TEST_CASE("explainer-only delivers the whole trace after the combined delay") {
  auto cfg = scaled_config(0.5, Topology::ExplainerOnly);
  Harness h(cfg, {kMathTrace});
  const auto t0 = std::chrono::steady_clock::now();
  h.pipeline->handle(ControlMessage::start_task("math", ""));
  REQUIRE(h.peer->wait_until([](const LoopbackPeer& p) { return p.frame_count() > 0; }, 5s));
  // 0.49 * 600 ms * 0.5
  CHECK(testutil::ms_since(t0) >= 0.49 * 600 * 0.5 - 1);
  REQUIRE(h.pipeline->wait_idle(10s));
}

TEST_CASE("interrupt in listening is a no-op") {
  Harness h(scaled_config(1), {kMathTrace});
  CHECK(h.pipeline->interrupt(StopOrigin::ClientButton) == StopOutcome::NoOp);
  h.pipeline->handle(ControlMessage::interrupt());
  std::this_thread::sleep_for(50ms);
  CHECK(h.states().empty());
  CHECK(h.peer->controls_of("error").empty());
  CHECK(h.pipeline->session().state() == PipelineState::Listening);
}

TEST_CASE("stop while processing emits no audio") {
  Harness h(scaled_config(1), {kLateTrace});
  h.pipeline->handle(ControlMessage::start_task("math", "late"));
  REQUIRE(h.wait_state("processing", 1s));
  std::this_thread::sleep_for(100ms);
  CHECK(h.pipeline->interrupt(StopOrigin::ClientButton) == StopOutcome::Applied);
  REQUIRE(h.wait_state("listening", 500ms));
  std::this_thread::sleep_for(1800ms);
  CHECK(h.peer->frame_count() == 0);
  CHECK(h.pipeline->session().state() == PipelineState::Listening);
  CHECK(h.pipeline->narrations().empty());
}

TEST_CASE("barge-in during playback") {
  Harness h(scaled_config(1), {kLongTrace});
  h.pipeline->handle(ControlMessage::start_task("travel", "long"));
  REQUIRE(h.wait_state("speaking", 2s));
  std::this_thread::sleep_for(300ms);

  const auto before = h.peer->frame_count();
  const auto t0 = std::chrono::steady_clock::now();
  h.pipeline->handle(RawMessage{Channel::Text, R"({"type":"interrupt","origin":"audio","client_t_ms":12.5})"});
  REQUIRE(h.wait_state("listening", 120ms));
  CHECK(testutil::ms_since(t0) <= 120);

  std::this_thread::sleep_for(400ms);
  // Only the 100 ms fade (5 frames) plus at most one frame already in flight.
  CHECK(h.peer->frame_count() - before <= 6);
  CHECK(h.conn->audio_queue_length() == 0);
  CHECK(h.pipeline->session().state() == PipelineState::Listening);
  CHECK_FALSE(h.pipeline->playing());

  auto evs = h.pipeline->session().events();
  auto it = std::find_if(evs.begin(), evs.end(), [](const SessionEvent& e) { return e.kind == "interrupt"; });
  REQUIRE(it != evs.end());
  CHECK(it->origin == Origin::User);
  CHECK(it->payload == "client_audio");
  CHECK(h.pipeline->last_stop_at().has_value());

  // A second interrupt after the fade changes nothing.
  const auto count = h.pipeline->session().event_count();
  CHECK(h.pipeline->interrupt(StopOrigin::ClientButton) == StopOutcome::NoOp);
  CHECK(h.pipeline->session().event_count() == count);
}

TEST_CASE("server-side VAD onset interrupts playback") {
  Harness h(scaled_config(1), {kLongTrace});
  h.pipeline->handle(ControlMessage::start_task("travel", "long"));
  REQUIRE(h.wait_state("speaking", 2s));
  AudioFrame loud;
  loud.samples.assign(320, 6000);
  for (int i = 0; i < 3; ++i) h.pipeline->handle(RawMessage{Channel::Binary, loud.to_bytes()});
  REQUIRE(h.wait_state("listening", 200ms));
  auto evs = h.pipeline->session().events();
  CHECK(std::any_of(evs.begin(), evs.end(),
                    [](const SessionEvent& e) { return e.kind == "interrupt" && e.payload == "server_vad"; }));
}

TEST_CASE("a question after the task is answered from context") {
  Harness h(scaled_config(0), {kMathTrace});
  h.pipeline->handle(ControlMessage::start_task("math", ""));
  REQUIRE(h.pipeline->wait_idle(10s));
  const auto before = h.peer->controls_of("narration_text").size();

  h.pipeline->handle(ControlMessage::user_text("what was the step about the digits?"));
  REQUIRE(h.peer->wait_until(
      [&](const LoopbackPeer& p) { return p.controls_of("narration_text").size() > before; }, 5s));
  REQUIRE(h.pipeline->wait_idle(5s));

  auto finals = h.peer->controls_of("transcript_final");
  REQUIRE(finals.size() == 1);
  CHECK(finals[0]["text"] == "what was the step about the digits?");
  auto answer = h.peer->controls_of("narration_text").back();
  CHECK(answer["seq"].is_null());
  CHECK(answer["text"].get<std::string>().find("Sum the digits") != std::string::npos);
  CHECK(h.pipeline->session().state() == PipelineState::Listening);
}

TEST_CASE("user text while speaking barges in and is answered") {
  Harness h(scaled_config(1), {kLongTrace});
  h.pipeline->handle(ControlMessage::start_task("travel", "long"));
  REQUIRE(h.wait_state("speaking", 2s));
  h.pipeline->handle(ControlMessage::user_text("Which city first?"));
  REQUIRE(h.peer->wait_until([](const LoopbackPeer& p) { return !p.controls_of("transcript_final").empty(); }, 3s));
  REQUIRE(h.peer->wait_until(
      [](const LoopbackPeer& p) {
        for (const auto& n : p.controls_of("narration_text")) {
          if (n["seq"].is_null()) return true;
        }
        return false;
      },
      5s));
  auto evs = h.pipeline->session().events();
  CHECK(std::any_of(evs.begin(), evs.end(), [](const SessionEvent& e) { return e.kind == "interrupt"; }));
}

TEST_CASE("final synthesis failure keeps the quick clip and reports an error") {
  PipelineDeps deps;
  deps.quick_synth = std::make_shared<SimulatedSynthesizer>(0.0, 0.0);
  deps.final_synth = std::make_shared<FailingSynth>();
  Harness h(scaled_config(0), {kMathTrace}, std::move(deps));
  h.pipeline->handle(ControlMessage::start_task("math", ""));
  REQUIRE(h.peer->wait_until([](const LoopbackPeer& p) { return !p.controls_of("error").empty(); }, 5s));
  REQUIRE(h.wait_state("listening", 2s));
  h.peer->wait_until([&](const LoopbackPeer&) { return h.conn->audio_queue_length() == 0; }, 2s);
  auto err = h.peer->controls_of("error").front();
  CHECK(err["code"] == "SynthError");
  // "Status update:" is the quick clause of the first narration.
  auto quick = simulated_tts("Status update:");
  const auto frames_for_quick = (quick.samples.size() - overlap_samples(50.0, 16000)) / 320;
  CHECK(h.peer->frame_count() >= frames_for_quick);
  CHECK(h.pipeline->session().state() == PipelineState::Listening);
}

TEST_CASE("unpaced runs are deterministic") {
  auto trace = parse_trace(kMathTrace);
  BenchConfig cfg;
  auto a = run_trace(trace, Topology::Async, 0.0, cfg, true);
  auto b = run_trace(trace, Topology::Async, 0.0, cfg, true);
  REQUIRE(a.completed);
  REQUIRE(b.completed);
  CHECK(!a.audio.empty());
  CHECK(a.audio == b.audio);
  REQUIRE(a.narrations.size() == b.narrations.size());
  for (std::size_t i = 0; i < a.narrations.size(); ++i) CHECK(a.narrations[i].text == b.narrations[i].text);
}

TEST_CASE("malformed inbound traffic produces errors, not crashes") {
  Harness h(scaled_config(1), {kMathTrace});
  h.pipeline->handle(RawMessage{Channel::Text, "{not json"});
  h.pipeline->handle(RawMessage{Channel::Binary, std::string(641, '\0')});
  h.pipeline->handle(ControlMessage::narration_text("server only", 0));
  REQUIRE(h.peer->wait_until([](const LoopbackPeer& p) { return p.controls_of("error").size() == 3; }, 1s));
  auto errs = h.peer->controls_of("error");
  CHECK(errs[0]["code"] == "TransportError{BadControl}");
  CHECK(errs[1]["code"] == "TransportError{BadFrameLength}");
  CHECK(h.pipeline->session().state() == PipelineState::Listening);
}

TEST_CASE("unknown scenario is reported") {
  Harness h(scaled_config(0), {kMathTrace});
  h.pipeline->handle(ControlMessage::start_task("cooking", ""));
  REQUIRE(h.peer->wait_until([](const LoopbackPeer& p) { return !p.controls_of("error").empty(); }, 2s));
  REQUIRE(h.pipeline->wait_idle(2s));
  CHECK(h.pipeline->session().state() == PipelineState::Listening);
}
