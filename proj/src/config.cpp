#include "asyncnarrate/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace asyncnarrate {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view why) {
  throw ConfigError(ConfigErrc::Value, std::string(key) + "='" + std::string(value) + "': " + std::string(why));
}

double to_double(std::string_view key, std::string_view v) {
  std::string s(v);
  char* end = nullptr;
  double d = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(d)) bad_value(key, v, "not a number");
  return d;
}

long to_long(std::string_view key, std::string_view v) {
  long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "not an integer");
  return out;
}

double positive(std::string_view key, std::string_view v) {
  double d = to_double(key, v);
  if (!(d > 0)) bad_value(key, v, "must be > 0");
  return d;
}

double non_negative(std::string_view key, std::string_view v) {
  double d = to_double(key, v);
  if (d < 0) bad_value(key, v, "must be >= 0");
  return d;
}

std::size_t count(std::string_view key, std::string_view v) {
  long n = to_long(key, v);
  if (n < 1) bad_value(key, v, "must be >= 1");
  return static_cast<std::size_t>(n);
}

std::string env_name(std::string_view key) {
  std::string out = "ASYNCNARRATE_";
  for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string AppConfig::host() const {
  auto pos = listen.rfind(':');
  return pos == std::string::npos ? listen : listen.substr(0, pos);
}

unsigned short AppConfig::port() const {
  auto pos = listen.rfind(':');
  if (pos == std::string::npos) return 8765;
  return static_cast<unsigned short>(std::stoi(listen.substr(pos + 1)));
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> kKeys{
      "listen",           "sample_rate",        "speaking_rate_wpm",     "anchors",
      "audio_queue_frames", "stage_queue_capacity", "context_budget",    "time_scale",
      "crossfade_ms",     "quick_latency_ms",   "final_latency_ms",      "explainer_deadline_ms",
      "topology",         "style",              "trace_dir",             "templates",
      "backend_endpoint", "explainer_endpoint", "synthesizer_endpoint",  "classifier_endpoint",
      "trials",           "report_out",         "vad_rms_threshold",     "vad_trigger_frames",
      "vad_hangover_frames"};
  return kKeys;
}

std::vector<Anchor> parse_anchor_list(std::string_view text) {
  std::vector<Anchor> out;
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    auto colon = item.find(':');
    if (colon == std::string::npos) bad_value("anchors", item, "expected p:ms");
    out.push_back({to_double("anchors", trim(item.substr(0, colon))), to_double("anchors", trim(item.substr(colon + 1)))});
  }
  return out;
}

std::string format_anchor_list(const AnchorTable& table) {
  std::ostringstream os;
  bool first = true;
  for (const auto& a : table.anchors()) {
    if (!first) os << ", ";
    first = false;
    os << a.probability << ':' << a.pause_ms;
  }
  return os.str();
}

void apply_setting(AppConfig& cfg, std::string_view key, std::string_view raw) {
  const std::string v = trim(raw);
  if (key == "listen") {
    auto pos = v.rfind(':');
    if (pos == std::string::npos || pos == 0) bad_value(key, v, "expected host:port");
    long port = to_long(key, std::string_view(v).substr(pos + 1));
    if (port < 0 || port > 65535) bad_value(key, v, "port out of range");
    cfg.listen = v;
  } else if (key == "sample_rate") {
    long r = to_long(key, v);
    if (!is_supported_rate(static_cast<int>(r))) bad_value(key, v, "expected 16000, 24000 or 48000");
    cfg.sample_rate = static_cast<int>(r);
  } else if (key == "speaking_rate_wpm") {
    cfg.speaking_rate_wpm = positive(key, v);
  } else if (key == "anchors") {
    try {
      cfg.anchors = AnchorTable(parse_anchor_list(v));
    } catch (const ConfigError& e) {
      if (e.code() == ConfigErrc::Value) throw;
      bad_value(key, v, e.what());
    }
  } else if (key == "audio_queue_frames") {
    cfg.audio_queue_frames = count(key, v);
  } else if (key == "stage_queue_capacity") {
    cfg.stage_queue_capacity = count(key, v);
  } else if (key == "context_budget") {
    cfg.context_budget = count(key, v);
  } else if (key == "time_scale") {
    cfg.time_scale = non_negative(key, v);
  } else if (key == "crossfade_ms") {
    cfg.crossfade_ms = non_negative(key, v);
  } else if (key == "quick_latency_ms") {
    cfg.quick_latency_ms = non_negative(key, v);
  } else if (key == "final_latency_ms") {
    cfg.final_latency_ms = non_negative(key, v);
  } else if (key == "explainer_deadline_ms") {
    cfg.explainer_deadline_ms = positive(key, v);
  } else if (key == "topology") {
    auto t = topology_from_string(v);
    if (!t) bad_value(key, v, "expected async, monolithic or explainer_only");
    cfg.topology = *t;
  } else if (key == "style") {
    auto s = style_from_string(v);
    if (!s) bad_value(key, v, "expected concise or detailed");
    cfg.style = *s;
  } else if (key == "trace_dir") {
    if (v.empty()) bad_value(key, v, "empty path");
    cfg.trace_dir = v;
  } else if (key == "templates") {
    cfg.templates = v;
  } else if (key == "backend_endpoint" || key == "explainer_endpoint" || key == "synthesizer_endpoint" ||
             key == "classifier_endpoint") {
    if (!v.empty() && !parse_http_url(v)) bad_value(key, v, "expected http://host:port/path");
    if (key == "backend_endpoint") cfg.backend_endpoint = v;
    if (key == "explainer_endpoint") cfg.explainer_endpoint = v;
    if (key == "synthesizer_endpoint") cfg.synthesizer_endpoint = v;
    if (key == "classifier_endpoint") cfg.classifier_endpoint = v;
  } else if (key == "trials") {
    long n = to_long(key, v);
    if (n < 1) bad_value(key, v, "must be >= 1");
    cfg.trials = static_cast<int>(n);
  } else if (key == "report_out") {
    cfg.report_out = v;
  } else if (key == "vad_rms_threshold") {
    cfg.vad_rms_threshold = positive(key, v);
  } else if (key == "vad_trigger_frames") {
    cfg.vad_trigger_frames = static_cast<int>(count(key, v));
  } else if (key == "vad_hangover_frames") {
    long n = to_long(key, v);
    if (n < 0) bad_value(key, v, "must be >= 0");
    cfg.vad_hangover_frames = static_cast<int>(n);
  } else {
    throw ConfigError(ConfigErrc::Unknown, "unknown key '" + std::string(key) + "'");
  }
}

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  std::stringstream ss{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(ConfigErrc::Value, "line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    out[key] = value;
  }
  return out;
}

std::map<std::string, std::string> environment_overrides() {
  std::map<std::string, std::string> out;
  for (const auto& key : config_keys()) {
    if (const char* v = std::getenv(env_name(key).c_str())) out[key] = v;
  }
  return out;
}

AppConfig load_config(const ConfigSources& sources) {
  AppConfig cfg;
  if (sources.file) {
    std::ifstream in(*sources.file);
    if (!in) throw ConfigError(ConfigErrc::Value, "cannot read config file " + sources.file->string());
    std::stringstream ss;
    ss << in.rdbuf();
    for (const auto& [k, v] : parse_config_text(ss.str())) apply_setting(cfg, k, v);
  }
  for (const auto& [k, v] : sources.env) apply_setting(cfg, k, v);
  for (const auto& [k, v] : sources.flags) apply_setting(cfg, k, v);
  return cfg;
}

PipelineConfig to_pipeline_config(const AppConfig& cfg) {
  PipelineConfig p;
  p.topology = cfg.topology;
  p.time_scale = cfg.time_scale;
  p.voice.sample_rate = cfg.sample_rate;
  p.voice.speaking_rate_wpm = cfg.speaking_rate_wpm;
  p.crossfade_ms = cfg.crossfade_ms;
  p.style = cfg.style;
  p.anchors = cfg.anchors;
  p.vad.rms_threshold = cfg.vad_rms_threshold;
  p.vad.trigger_frames = cfg.vad_trigger_frames;
  p.vad.hangover_frames = cfg.vad_hangover_frames;
  p.vad.sample_rate = cfg.sample_rate;
  p.context_budget = cfg.context_budget;
  p.stage_queue_capacity = cfg.stage_queue_capacity;
  p.backend_endpoint = cfg.backend_endpoint;
  return p;
}

}  // namespace asyncnarrate
