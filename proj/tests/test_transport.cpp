#include <doctest.h>

#include <thread>

#include "asyncnarrate/transport.hpp"

using namespace asyncnarrate;
using namespace std::chrono_literals;

namespace {

std::shared_ptr<ConnectionContext> make_conn(std::size_t audio_frames = 200) {
  return std::make_shared<ConnectionContext>("t", std::make_shared<SessionContext>(),
                                             ConnectionContext::Config{audio_frames});
}

AudioFrame tone_frame(std::int16_t v, int rate = 16000) {
  AudioFrame f;
  f.sample_rate = rate;
  f.samples.assign(samples_per_frame(rate), v);
  return f;
}

TransportErrc transport_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const TransportError& e) {
    return e.code();
  }
  FAIL("no TransportError");
  return TransportErrc::Closed;
}

}  // namespace

TEST_CASE("control messages parse by type and reject malformed bodies") {
  auto m = parse_control(R"({"type":"interrupt"})");
  CHECK(m.type == ControlType::Interrupt);
  auto s = parse_control(R"({"type":"start_task","scenario":"math","query":"2+2","v":1})");
  CHECK(s.type == ControlType::StartTask);
  CHECK(s.body["query"] == "2+2");
  CHECK(parse_control(R"({"type":"config_update","anchors":[[0,1200],[1,150]]})").type == ControlType::ConfigUpdate);

  for (const char* bad : {"", "[]", "not json", R"({"type":"nope"})", R"({"type":"state","value":"listening"})",
                          R"({"type":"start_task","scenario":"cooking","query":"q"})",
                          R"({"type":"start_task","scenario":"math"})", R"({"type":"user_text"})",
                          R"({"type":"interrupt","client_t_ms":"soon"})", R"({"type":"interrupt","v":2})",
                          R"({"type":"config_update","anchors":[[0.5]]})",
                          R"({"type":"config_update","style":"loud"})"}) {
    CAPTURE(bad);
    CHECK(transport_code([&] { parse_control(bad); }) == TransportErrc::BadControl);
  }
}

TEST_CASE("server messages serialize to the wire schema") {
  CHECK(json::parse(ControlMessage::state(PipelineState::Listening).serialize()) ==
        json{{"type", "state"}, {"value", "listening"}});
  ReasoningEvent ev{EventKind::Thinking, "x", 3, 12.5};
  CHECK(json::parse(ControlMessage::reasoning_event(ev).serialize()) ==
        json{{"type", "reasoning_event"}, {"kind", "thinking"}, {"text", "x"}, {"seq", 3}, {"t_ms", 12.5}});
  CHECK(json::parse(ControlMessage::ttfa_report(15).serialize()) == json{{"type", "ttfa_report"}, {"ms", 15}});
  CHECK(json::parse(ControlMessage::complete().serialize()) == json{{"type", "complete"}});
  CHECK(json::parse(ControlMessage::error("E", "d").serialize()) ==
        json{{"type", "error"}, {"code", "E"}, {"detail", "d"}});
  CHECK(json::parse(ControlMessage::transcript(true, "hi").serialize())["type"] == "transcript_final");
}

TEST_CASE("dispatch classifies by channel only") {
  auto c = dispatch_inbound({Channel::Text, R"({"type":"interrupt"})"}, 16000);
  CHECK(std::holds_alternative<ControlMessage>(c));

  // 16000 / 50 samples * 2 bytes
  const std::size_t frame_bytes = 16000 / 50 * 2;
  REQUIRE(frame_bytes == 640);
  auto a = dispatch_inbound({Channel::Binary, std::string(frame_bytes, '\0')}, 16000);
  REQUIRE(std::holds_alternative<AudioFrame>(a));
  CHECK(std::get<AudioFrame>(a).samples.size() == 320);

  // JSON-looking bytes on the binary channel are still audio (or a length error).
  std::string looks_like_json = R"({"type":"interrupt"})";
  looks_like_json.resize(640, ' ');
  CHECK(std::holds_alternative<AudioFrame>(dispatch_inbound({Channel::Binary, looks_like_json}, 16000)));

  CHECK(transport_code([] { dispatch_inbound({Channel::Binary, std::string(641, '\0')}, 16000); }) ==
        TransportErrc::BadFrameLength);
  CHECK(transport_code([] { dispatch_inbound({Channel::Text, "{"}, 16000); }) == TransportErrc::BadControl);
  CHECK(std::get<AudioFrame>(dispatch_inbound({Channel::Binary, std::string(960, '\0')}, 24000)).samples.size() ==
        480);
}

TEST_CASE("PCM frames are little-endian 16-bit") {
  AudioFrame f = tone_frame(0);
  f.samples[0] = 0x1234;
  f.samples[1] = -2;
  auto bytes = f.to_bytes();
  CHECK(static_cast<unsigned char>(bytes[0]) == 0x34);
  CHECK(static_cast<unsigned char>(bytes[1]) == 0x12);
  CHECK(static_cast<unsigned char>(bytes[2]) == 0xFE);
  CHECK(static_cast<unsigned char>(bytes[3]) == 0xFF);
  CHECK(AudioFrame::from_bytes(bytes, 16000).samples == f.samples);
}

TEST_CASE("1000 sequential control sends arrive in order") {
  auto conn = make_conn();
  LoopbackPeer peer(conn);
  for (int i = 0; i < 1000; ++i) conn->send_control(ControlMessage::error("seq", std::to_string(i)));
  REQUIRE(peer.wait_until([](const LoopbackPeer& p) { return p.controls().size() >= 1000; }, 5s));
  auto got = peer.controls();
  for (int i = 0; i < 1000; ++i) CHECK(got[i]["detail"] == std::to_string(i));
}

TEST_CASE("audio queue is bounded and drops the oldest frame") {
  auto conn = make_conn(3);
  for (int i = 0; i < 5; ++i) conn->send_audio(tone_frame(static_cast<std::int16_t>(i)));
  CHECK(conn->audio_queue_length() == 3);
  CHECK(conn->tallies().frames_dropped == 2);
  auto first = conn->next_outbound();
  REQUIRE(first);
  CHECK(AudioFrame::from_bytes(first->data, 16000).samples[0] == 2);
  CHECK(conn->tallies().first_audio_out_at.has_value());
}

TEST_CASE("control is preferred over queued audio") {
  auto conn = make_conn();
  conn->send_audio(tone_frame(1));
  conn->send_control(ControlMessage::complete());
  CHECK(conn->next_outbound()->channel == Channel::Text);
  CHECK(conn->next_outbound()->channel == Channel::Binary);
  CHECK_FALSE(conn->next_outbound());
}

TEST_CASE("close: registry shrinks, sends fail, queues are released, double close is fine") {
  ConnectionRegistry reg;
  auto a = reg.open(std::make_shared<SessionContext>());
  auto b = reg.open(std::make_shared<SessionContext>());
  CHECK(reg.active_count() == 2);
  CHECK(reg.allocated_audio_queues() == 2);
  close_connection(*a);
  CHECK(reg.active_count() == 1);
  CHECK(reg.allocated_audio_queues() == 1);
  CHECK_FALSE(a->audio_queue_allocated());
  close_connection(*a);
  CHECK(reg.active_count() == 1);
  CHECK(transport_code([&] { a->send_control(ControlMessage::complete()); }) == TransportErrc::Closed);
  CHECK(transport_code([&] { a->send_audio(tone_frame(0)); }) == TransportErrc::Closed);
  CHECK(a->closed_at().has_value());
  b->close();
  CHECK(reg.active_count() == 0);
}

TEST_CASE("closing during playback stops further frames") {
  auto conn = make_conn();
  LoopbackPeer peer(conn);
  std::atomic<bool> stop{false};
  std::thread producer([&] {
    while (!stop) {
      try {
        conn->send_audio(tone_frame(100));
      } catch (const TransportError&) {
        break;
      }
      std::this_thread::sleep_for(2ms);
    }
  });
  REQUIRE(peer.wait_until([](const LoopbackPeer& p) { return p.frame_count() >= 5; }, 2s));
  close_connection(*conn);
  const auto at_close = peer.frame_count();
  std::this_thread::sleep_for(50ms);
  CHECK(peer.frame_count() == at_close);
  stop = true;
  producer.join();
}

TEST_CASE("inbound tallies") {
  auto conn = make_conn();
  conn->note_inbound(dispatch_inbound({Channel::Text, R"({"type":"interrupt"})"}, 16000));
  conn->note_inbound(dispatch_inbound({Channel::Binary, std::string(640, '\0')}, 16000));
  auto t = conn->tallies();
  CHECK(t.messages_in == 1);
  CHECK(t.frames_in == 1);
}
