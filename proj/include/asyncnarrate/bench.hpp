#pragma once

// TTFA / quality / fidelity harness over the scripted scenarios.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "asyncnarrate/backends.hpp"
#include "asyncnarrate/explainer.hpp"
#include "asyncnarrate/pipeline.hpp"
#include "asyncnarrate/transport.hpp"

namespace asyncnarrate {

// First outbound audio frame minus start_task receipt, on the session clock.
// Throws BenchError{NoAudio}.
double measure_ttfa(const ConnectionTallies& tallies, double task_received_at);

// 100 * (w_acc * accuracy + w_meth * methodology). Throws BenchError{Range}.
double blended_score(double accuracy, double methodology, double w_accuracy = 0.7, double w_methodology = 0.3);

// Numerals and lowercase non-stopword terms.
std::vector<std::string> content_tokens(std::string_view text);

// 1 + 4 * mean recall of each narrated step's content tokens in its
// narration. Throws BenchError{Empty}.
double fidelity_score(const std::vector<NarrationSegment>& narrations, const ScriptedTrace& trace);

// Accuracy: the expected answer appears in a narration of an Answer event.
double answer_accuracy(const std::vector<NarrationSegment>& narrations, const ScriptedTrace& trace);
// Fraction of the trace's Thinking steps that were narrated.
double methodology_coverage(const std::vector<NarrationSegment>& narrations, const ScriptedTrace& trace);

// Linear interpolation between closest ranks; q in [0, 1].
double percentile(std::vector<double> values, double q);

struct BenchConfig {
  std::vector<Scenario> scenarios{Scenario::Math, Scenario::Travel, Scenario::Research};
  std::vector<Topology> topologies{Topology::Async, Topology::ExplainerOnly, Topology::Monolithic};
  int trials = 5;
  double time_scale = 1.0;
  std::shared_ptr<const TraceLibrary> traces;
  PipelineConfig pipeline;  // topology and time_scale are overridden per cell
  double quick_latency_ms = 5.0;
  double final_latency_ms = 40.0;
  TemplateSet templates = TemplateSet::defaults();
  bool quality = true;  // also run the zero-delay quality pass
  std::function<void(const std::string&)> progress;
};

struct RunCapture {
  std::optional<double> ttfa_ms;
  std::vector<NarrationSegment> narrations;
  std::string audio;  // concatenated PCM of every outbound frame
  std::vector<json> controls;
  bool completed = false;
};

// Runs one trace through a fresh pipeline. With `to_completion` the run
// waits until playback drains; otherwise it stops after the first frame.
RunCapture run_trace(const ScriptedTrace& trace, Topology topology, double time_scale, const BenchConfig& config,
                     bool to_completion);

struct TraceTiming {
  std::string source;
  double ttfa_ms;
};

struct CellResult {
  Scenario scenario;
  Topology topology;
  std::vector<double> ttfa_samples;
  std::vector<TraceTiming> per_trace;  // mean TTFA per trace
  double ttfa_mean = 0, ttfa_p50 = 0, ttfa_p95 = 0;
  std::optional<double> quality;
  std::optional<double> fidelity;  // async only
};

struct BenchmarkReport {
  int trials = 0;
  double time_scale = 1.0;
  std::vector<CellResult> cells;
  std::vector<std::string> failures;  // assertion failures; empty = pass

  const CellResult* cell(Scenario s, Topology t) const;
  // TTFA(async) / TTFA(monolithic), by mean.
  std::optional<double> latency_ratio(Scenario s) const;
  bool passed() const { return failures.empty(); }

  json to_json() const;
  std::string to_table() const;
};

// Sequential over cells. Throws BenchError{Config}, or BenchError naming the
// failing cell.
BenchmarkReport run_benchmark(const BenchConfig& config);

}  // namespace asyncnarrate
