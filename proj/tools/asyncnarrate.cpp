// asyncnarrate: serve | bench | replay <trace> | validate-trace <path>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "asyncnarrate/adapters.hpp"
#include "asyncnarrate/bench.hpp"
#include "asyncnarrate/config.hpp"
#include "asyncnarrate/ws_server.hpp"

using namespace asyncnarrate;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct Flags {
  std::string config;
  std::map<std::string, std::string> overrides;
};

void add_flag(CLI::App& app, Flags& flags, const std::string& name, const std::string& key, const std::string& help) {
  app.add_option_function<std::string>(
      "--" + name, [&flags, key](const std::string& v) { flags.overrides[key] = v; }, help);
}

AppConfig resolve(const Flags& flags) {
  ConfigSources src;
  if (!flags.config.empty()) src.file = flags.config;
  src.env = environment_overrides();
  if (src.file == std::nullopt) {
    if (const char* f = std::getenv("ASYNCNARRATE_CONFIG")) src.file = f;
  }
  src.flags = flags.overrides;
  return load_config(src);
}

TemplateSet templates_for(const AppConfig& cfg) {
  return cfg.templates.empty() ? TemplateSet::defaults() : TemplateSet::load(cfg.templates);
}

int cmd_serve(const AppConfig& cfg) {
  auto traces = std::make_shared<TraceLibrary>(TraceLibrary::load_directory(cfg.trace_dir));
  auto templates = templates_for(cfg);

  WsServer::Options opts;
  opts.host = cfg.host();
  opts.port = cfg.port();
  opts.pipeline = to_pipeline_config(cfg);
  opts.connection.audio_queue_frames = cfg.audio_queue_frames;
  opts.make_deps = [cfg, traces, templates] {
    PipelineDeps d;
    d.traces = traces;
    Explainer::Options eo;
    eo.deadline = std::chrono::milliseconds(static_cast<long>(cfg.explainer_deadline_ms));
    std::shared_ptr<NarrationModel> model;
    if (!cfg.explainer_endpoint.empty()) model = std::make_shared<HttpNarrationModel>(cfg.explainer_endpoint);
    d.explainer = Explainer(templates, eo, model);
    if (!cfg.synthesizer_endpoint.empty()) {
      d.quick_synth = std::make_shared<HttpSynthesizer>(cfg.synthesizer_endpoint);
      d.final_synth = std::make_shared<HttpSynthesizer>(cfg.synthesizer_endpoint);
    } else {
      d.quick_synth = std::make_shared<SimulatedSynthesizer>(cfg.quick_latency_ms, cfg.time_scale);
      d.final_synth = std::make_shared<SimulatedSynthesizer>(cfg.final_latency_ms, cfg.time_scale);
    }
    if (!cfg.classifier_endpoint.empty()) d.classifier = std::make_shared<HttpCompletionClassifier>(cfg.classifier_endpoint);
    return d;
  };

  WsServer server(opts);
  const auto port = server.start();
  std::cout << "listening on ws://" << opts.host << ':' << port << "/ws" << std::endl;

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

int cmd_bench(const AppConfig& cfg, const std::vector<std::string>& scenarios, bool quiet) {
  BenchConfig bc;
  bc.trials = cfg.trials;
  bc.time_scale = cfg.time_scale;
  bc.traces = std::make_shared<TraceLibrary>(TraceLibrary::load_directory(cfg.trace_dir));
  bc.pipeline = to_pipeline_config(cfg);
  bc.quick_latency_ms = cfg.quick_latency_ms;
  bc.final_latency_ms = cfg.final_latency_ms;
  bc.templates = templates_for(cfg);
  if (!scenarios.empty()) {
    bc.scenarios.clear();
    for (const auto& s : scenarios) {
      auto sc = scenario_from_string(s);
      if (!sc) throw ConfigError(ConfigErrc::Value, "unknown scenario '" + s + "'");
      bc.scenarios.push_back(*sc);
    }
  }
  if (!quiet) bc.progress = [](const std::string& s) { std::cerr << "  " << s << '\n'; };

  auto report = run_benchmark(bc);
  std::cout << report.to_table();
  if (!cfg.report_out.empty()) {
    std::ofstream out(cfg.report_out);
    out << report.to_json().dump(2) << '\n';
    std::ofstream table(cfg.report_out + ".txt");
    table << report.to_table();
  }
  return report.passed() ? 0 : 1;
}

int cmd_replay(const AppConfig& cfg, const std::string& path) {
  auto trace = load_trace(path);
  BackendHandle h{"scripted", BackendMode::Scripted, cfg.time_scale};
  run_backend(h, trace, [](const ReasoningEvent& ev) {
    std::cout << encode_event(ev) << std::endl;
    return true;
  });
  return 0;
}

int cmd_validate(const std::string& path) {
  try {
    auto trace = load_trace(path);
    std::cout << "ok: " << path << " (" << to_string(trace.scenario) << ", " << trace.steps.size() << " steps, "
              << trace.total_duration_ms() << " ms)\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "invalid: " << path << ": " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Narrates a streaming reasoning backend as interruptible speech."};
  app.require_subcommand(1);
  Flags flags;

  app.add_option("--config", flags.config, "config file (key = value)");
  add_flag(app, flags, "listen", "listen", "host:port for serve");
  add_flag(app, flags, "time-scale", "time_scale", "schedule multiplier (0 = no delays)");
  add_flag(app, flags, "trace-dir", "trace_dir", "directory of <scenario>/*.jsonl traces");
  add_flag(app, flags, "topology", "topology", "async | monolithic | explainer_only");
  add_flag(app, flags, "trials", "trials", "bench trials per trace");
  add_flag(app, flags, "report-out", "report_out", "write the bench report JSON here");
  std::vector<std::string> sets;
  app.add_option("--set", sets, "extra key=value overrides");

  auto* serve = app.add_subcommand("serve", "run the WebSocket server");
  auto* bench = app.add_subcommand("bench", "run the TTFA / quality benchmark");
  std::vector<std::string> scenarios;
  bool quiet = false;
  bench->add_option("--scenario", scenarios, "limit to these scenarios");
  bench->add_flag("--quiet", quiet, "no progress output");
  auto* replay = app.add_subcommand("replay", "print a trace as protocol lines on its schedule");
  std::string replay_path;
  replay->add_option("trace", replay_path)->required();
  auto* validate = app.add_subcommand("validate-trace", "check a trace file");
  std::string validate_path;
  validate->add_option("path", validate_path)->required();

  // Flags may appear after the subcommand too.
  for (auto* sub : {serve, bench, replay, validate}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  if (validate->parsed()) return cmd_validate(validate_path);

  try {
    for (const auto& s : sets) {
      auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(ConfigErrc::Value, "--set expects key=value");
      flags.overrides[s.substr(0, eq)] = s.substr(eq + 1);
    }
    auto cfg = resolve(flags);
    if (serve->parsed()) return cmd_serve(cfg);
    if (bench->parsed()) return cmd_bench(cfg, scenarios, quiet);
    if (replay->parsed()) return cmd_replay(cfg, replay_path);
  } catch (const ConfigError& e) {
    std::cerr << "config: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
