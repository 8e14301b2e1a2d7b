#include <doctest.h>

#include <cstdlib>

#include "asyncnarrate/config.hpp"
#include "helpers.hpp"

using namespace asyncnarrate;

namespace {

ConfigErrc config_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.code();
  }
  FAIL("no ConfigError");
  return ConfigErrc::Value;
}

}  // namespace

TEST_CASE("defaults") {
  AppConfig c = load_config({});
  CHECK(c.host() == "127.0.0.1");
  CHECK(c.port() == 8765);
  CHECK(c.sample_rate == 16000);
  CHECK(c.speaking_rate_wpm == 180.0);
  CHECK(c.anchors.anchors() == AnchorTable().anchors());
  CHECK(c.audio_queue_frames == 200);
  CHECK(c.time_scale == 1.0);
  CHECK(c.topology == Topology::Async);
  CHECK(c.trials == 5);
  auto pc = to_pipeline_config(c);
  CHECK(pc.voice.sample_rate == 16000);
  CHECK(pc.crossfade_ms == 50.0);
}

TEST_CASE("config file parsing") {
  auto kv = parse_config_text("# comment\n  speaking_rate_wpm = 120 \n\ntopology=\"monolithic\"\nstyle = 'detailed' # trailing\n");
  CHECK(kv.at("speaking_rate_wpm") == "120");
  CHECK(kv.at("topology") == "monolithic");
  CHECK(kv.at("style") == "detailed");
  CHECK(config_code([] { parse_config_text("no equals sign"); }) == ConfigErrc::Value);
}

TEST_CASE("precedence: defaults < file < env < flags") {
  auto file = testutil::write_temp("cfg.conf", "speaking_rate_wpm = 120\ntrials = 3\ntime_scale = 0.5\n");
  ConfigSources src;
  src.file = file;
  CHECK(load_config(src).speaking_rate_wpm == 120);
  src.env = {{"trials", "4"}, {"time_scale", "0.25"}};
  src.flags = {{"speaking_rate_wpm", "200"}, {"time_scale", "0.1"}};
  auto c = load_config(src);
  CHECK(c.speaking_rate_wpm == 200);
  CHECK(c.trials == 4);
  CHECK(c.time_scale == doctest::Approx(0.1));
}

TEST_CASE("environment overrides") {
  ::setenv("ASYNCNARRATE_CROSSFADE_MS", "30", 1);
  ::setenv("ASYNCNARRATE_NOT_A_KEY", "1", 1);
  auto env = environment_overrides();
  CHECK(env.at("crossfade_ms") == "30");
  CHECK(env.count("not_a_key") == 0);
  ::unsetenv("ASYNCNARRATE_CROSSFADE_MS");
  ::unsetenv("ASYNCNARRATE_NOT_A_KEY");
}

TEST_CASE("invalid settings") {
  AppConfig c;
  CHECK(config_code([&] { apply_setting(c, "colour", "blue"); }) == ConfigErrc::Unknown);
  CHECK(config_code([&] { apply_setting(c, "sample_rate", "abc"); }) == ConfigErrc::Value);
  CHECK(config_code([&] { apply_setting(c, "time_scale", "-1"); }) == ConfigErrc::Value);
  CHECK(config_code([&] { apply_setting(c, "topology", "ring"); }) == ConfigErrc::Value);
  CHECK(config_code([&] { apply_setting(c, "anchors", "0.0:1200, 0.5:600"); }) == ConfigErrc::Value);
  CHECK(config_code([&] { apply_setting(c, "listen", "nohost"); }) == ConfigErrc::Value);
  ConfigSources src;
  src.file = testutil::fixtures() / "missing.conf";
  CHECK(config_code([&] { load_config(src); }) == ConfigErrc::Value);
}

TEST_CASE("anchor lists") {
  auto a = parse_anchor_list("0.0:1000, 0.8:300 ,1.0:100");
  REQUIRE(a.size() == 3);
  CHECK(a[1] == Anchor{0.8, 300});
  AppConfig c;
  apply_setting(c, "anchors", "0.0:1000, 0.8:300, 1.0:100");
  CHECK(c.anchors.anchors() == a);
  CHECK(parse_anchor_list(format_anchor_list(c.anchors)) == a);
}

TEST_CASE("every typed key rejects garbage") {
  CHECK(config_keys().size() >= 20);
  for (const auto& k : config_keys()) {
    if (k == "templates" || k == "report_out" || k == "trace_dir") continue;  // free-form paths
    CAPTURE(k);
    AppConfig c;
    CHECK_THROWS_AS(apply_setting(c, k, "\x01" "definitely invalid"), ConfigError);
  }
}
