#pragma once

// Layered operator configuration: defaults < config file < ASYNCNARRATE_*
// environment < command-line flags. File format is `key = value` per line,
// '#' comments, optional quotes around values.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "asyncnarrate/pipeline.hpp"

namespace asyncnarrate {

struct AppConfig {
  std::string listen = "127.0.0.1:8765";
  int sample_rate = 16000;
  double speaking_rate_wpm = 180.0;
  AnchorTable anchors;
  std::size_t audio_queue_frames = 200;
  std::size_t stage_queue_capacity = 64;
  std::size_t context_budget = 2000;
  double time_scale = 1.0;
  double crossfade_ms = 50.0;
  double quick_latency_ms = 5.0;
  double final_latency_ms = 40.0;
  double explainer_deadline_ms = 1500.0;
  Topology topology = Topology::Async;
  Style style = Style::Concise;
  std::string trace_dir = "fixtures/traces";
  std::string templates;  // template file; built-ins when empty
  std::string backend_endpoint;
  std::string explainer_endpoint;
  std::string synthesizer_endpoint;
  std::string classifier_endpoint;
  int trials = 5;
  std::string report_out;
  double vad_rms_threshold = 0.02;
  int vad_trigger_frames = 3;
  int vad_hangover_frames = 10;

  std::string host() const;
  unsigned short port() const;
};

// Every accepted key, in file spelling.
const std::vector<std::string>& config_keys();

// Throws ConfigError{Unknown} or ConfigError{Value}.
void apply_setting(AppConfig& cfg, std::string_view key, std::string_view value);

// "0.0:1200, 0.5:600, 1.0:150"
std::vector<Anchor> parse_anchor_list(std::string_view text);
std::string format_anchor_list(const AnchorTable& table);

std::map<std::string, std::string> parse_config_text(std::string_view text);

// ASYNCNARRATE_<KEY> for every known key present in the process environment.
std::map<std::string, std::string> environment_overrides();

struct ConfigSources {
  std::optional<std::filesystem::path> file;
  std::map<std::string, std::string> env;
  std::map<std::string, std::string> flags;
};

AppConfig load_config(const ConfigSources& sources);

PipelineConfig to_pipeline_config(const AppConfig& cfg);

}  // namespace asyncnarrate
