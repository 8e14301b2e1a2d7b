#include "asyncnarrate/bench.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace asyncnarrate {

using namespace std::chrono_literals;

double measure_ttfa(const ConnectionTallies& tallies, double task_received_at) {
  if (!tallies.first_audio_out_at) throw BenchError(BenchErrc::NoAudio, "run produced no audio");
  return *tallies.first_audio_out_at - task_received_at;
}

double blended_score(double accuracy, double methodology, double w_accuracy, double w_methodology) {
  auto in_unit = [](double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; };
  if (!in_unit(accuracy) || !in_unit(methodology)) {
    throw BenchError(BenchErrc::Range, "accuracy and methodology must lie in [0, 1]");
  }
  if (!(w_accuracy >= 0 && w_methodology >= 0) || std::abs(w_accuracy + w_methodology - 1.0) > 1e-9) {
    throw BenchError(BenchErrc::Range, "weights must be non-negative and sum to 1");
  }
  return 100.0 * (w_accuracy * accuracy + w_methodology * methodology);
}

namespace {

const std::set<std::string>& stopwords() {
  static const std::set<std::string> kWords{
      "the",   "and",  "for",   "with",  "that",  "this",  "from",  "into",  "then",  "than",
      "are",   "was",   "were", "has",   "have",  "had",   "been",  "being", "will",  "would",
      "can",   "could", "should", "may", "might", "must",  "its",   "it's",  "our",   "their",
      "there", "these", "those", "which", "while", "what",  "when",  "where", "who",   "whom",
      "how",   "why",   "not",  "but",   "all",   "any",   "each",  "both",  "also",  "just",
      "over",  "under", "about", "after", "before", "between", "through", "using", "use", "per",
      "out",   "off",   "one",  "via",   "let",   "now",   "next",  "step",  "some",  "more",
      "most",  "such",  "only", "very",  "them",  "they",  "you",   "your",  "his",   "her",
      "she",   "him",   "its",  "is",    "be",    "to",    "of",    "in",    "on",    "at",
      "by",    "an",    "as",   "or",    "if",    "so",    "we",    "it",    "a"};
  return kWords;
}

std::vector<std::string> raw_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    while (!cur.empty() && !std::isalnum(static_cast<unsigned char>(cur.back()))) cur.pop_back();
    if (!cur.empty()) out.push_back(cur);
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if ((c == '.' || c == ',' || c == ':' || c == '/') && !cur.empty() &&
               std::isdigit(static_cast<unsigned char>(cur.back())) && i + 1 < text.size() &&
               std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
      // keep 3.14, 1,200, 10:30, 1/2 whole
      cur += static_cast<char>(c);
    } else {
      flush();
    }
  }
  flush();
  return out;
}

bool has_digit(const std::string& s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::vector<std::string> content_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto& t : raw_tokens(text)) {
    const bool keep = has_digit(t) || (t.size() >= 3 && !stopwords().count(t));
    if (keep && seen.insert(t).second) out.push_back(t);
  }
  return out;
}

double fidelity_score(const std::vector<NarrationSegment>& narrations, const ScriptedTrace& trace) {
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& n : narrations) {
    if (!n.source_seq || *n.source_seq >= trace.steps.size()) continue;
    const auto wanted = content_tokens(trace.steps[*n.source_seq].text);
    if (wanted.empty()) continue;
    const auto have_v = raw_tokens(n.text);
    const std::set<std::string> have(have_v.begin(), have_v.end());
    std::size_t hit = 0;
    for (const auto& w : wanted) hit += have.count(w);
    total += static_cast<double>(hit) / static_cast<double>(wanted.size());
    ++steps;
  }
  if (steps == 0) throw BenchError(BenchErrc::Empty, "no narrations of backend steps");
  return 1.0 + 4.0 * (total / static_cast<double>(steps));
}

double answer_accuracy(const std::vector<NarrationSegment>& narrations, const ScriptedTrace& trace) {
  if (trace.expected_answer.empty()) return 0.0;
  const auto expected = lower(trace.expected_answer);
  for (const auto& n : narrations) {
    if (n.source_kind == EventKind::Answer && lower(n.text).find(expected) != std::string::npos) return 1.0;
  }
  return 0.0;
}

double methodology_coverage(const std::vector<NarrationSegment>& narrations, const ScriptedTrace& trace) {
  std::set<std::uint64_t> thinking;
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    if (trace.steps[i].kind == EventKind::Thinking) thinking.insert(i);
  }
  if (thinking.empty()) return 1.0;
  std::set<std::uint64_t> narrated;
  for (const auto& n : narrations) {
    if (n.source_seq && thinking.count(*n.source_seq)) narrated.insert(*n.source_seq);
  }
  return static_cast<double>(narrated.size()) / static_cast<double>(thinking.size());
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw BenchError(BenchErrc::Empty, "no samples");
  std::sort(values.begin(), values.end());
  const double rank = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = static_cast<std::size_t>(std::ceil(rank));
  return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

RunCapture run_trace(const ScriptedTrace& trace, Topology topology, double time_scale, const BenchConfig& config,
                     bool to_completion) {
  auto lib = std::make_shared<TraceLibrary>();
  lib->add(trace);

  PipelineConfig pc = config.pipeline;
  pc.topology = topology;
  pc.time_scale = time_scale;
  pc.backend_endpoint.clear();

  PipelineDeps deps;
  deps.traces = lib;
  deps.explainer = Explainer(config.templates, Explainer::Options{});
  deps.quick_synth = std::make_shared<SimulatedSynthesizer>(config.quick_latency_ms, time_scale);
  deps.final_synth = std::make_shared<SimulatedSynthesizer>(config.final_latency_ms, time_scale);

  // Unpaced runs produce frames faster than any writer drains them; the
  // drop-oldest bound would make the captured audio depend on scheduling.
  ConnectionContext::Config cc;
  if (time_scale == 0) cc.audio_queue_frames = std::size_t{1} << 22;
  auto conn = std::make_shared<ConnectionContext>("bench", std::make_shared<SessionContext>(), cc);
  LoopbackPeer peer(conn);
  NarrationPipeline pipeline(pc, std::move(deps), conn);

  pipeline.handle(ControlMessage::start_task(to_string(trace.scenario), trace.query));

  // Generous bound: the whole schedule plus the narration it triggers.
  const auto budget = std::chrono::milliseconds(
      static_cast<long>(trace.total_duration_ms() * time_scale * 1.5 + 20000 + 60000 * time_scale));

  RunCapture cap;
  if (to_completion) {
    peer.wait_until(
        [](const LoopbackPeer& p) { return !p.controls_of("complete").empty() || !p.controls_of("error").empty(); },
        budget);
    cap.completed = pipeline.wait_idle(budget + std::chrono::milliseconds(static_cast<long>(600000 * time_scale)));
  } else {
    cap.completed = peer.wait_until([](const LoopbackPeer& p) { return p.frame_count() > 0; }, budget);
  }
  // Let the writer side catch up with whatever is already queued.
  peer.wait_until([&](const LoopbackPeer&) { return conn->audio_queue_length() == 0 && conn->control_queue_length() == 0; },
                  2000ms);

  auto received = pipeline.task_received_at();
  auto tallies = conn->tallies();
  if (received && tallies.first_audio_out_at) cap.ttfa_ms = measure_ttfa(tallies, *received);
  cap.narrations = pipeline.narrations();

  pipeline.shutdown();
  peer.stop();
  cap.audio = peer.audio_bytes();
  cap.controls = peer.controls();
  return cap;
}

const CellResult* BenchmarkReport::cell(Scenario s, Topology t) const {
  for (const auto& c : cells) {
    if (c.scenario == s && c.topology == t) return &c;
  }
  return nullptr;
}

std::optional<double> BenchmarkReport::latency_ratio(Scenario s) const {
  auto* a = cell(s, Topology::Async);
  auto* m = cell(s, Topology::Monolithic);
  if (!a || !m || m->ttfa_mean <= 0) return std::nullopt;
  return a->ttfa_mean / m->ttfa_mean;
}

json BenchmarkReport::to_json() const {
  json j;
  j["trials"] = trials;
  j["time_scale"] = time_scale;
  j["cells"] = json::array();
  for (const auto& c : cells) {
    json cj{{"scenario", std::string(to_string(c.scenario))},
            {"topology", std::string(to_string(c.topology))},
            {"ttfa_ms", {{"mean", c.ttfa_mean}, {"p50", c.ttfa_p50}, {"p95", c.ttfa_p95}}},
            {"samples", c.ttfa_samples}};
    cj["quality_score"] = c.quality ? json(*c.quality) : json(nullptr);
    if (c.fidelity) cj["fidelity"] = *c.fidelity;
    json per = json::array();
    for (const auto& t : c.per_trace) per.push_back({{"trace", t.source}, {"ttfa_ms", t.ttfa_ms}});
    cj["per_trace"] = per;
    j["cells"].push_back(cj);
  }
  json ratios = json::object();
  for (auto s : {Scenario::Math, Scenario::Travel, Scenario::Research}) {
    if (auto r = latency_ratio(s)) ratios[std::string(to_string(s))] = *r;
  }
  j["async_to_monolithic_ratio"] = ratios;
  j["failures"] = failures;
  j["passed"] = passed();
  return j;
}

std::string BenchmarkReport::to_table() const {
  std::ostringstream os;
  os << std::fixed;
  os << std::left << std::setw(10) << "Scenario" << std::setw(16) << "System" << std::right << std::setw(12)
     << "TTFA(s)" << std::setw(12) << "p50(s)" << std::setw(12) << "p95(s)" << std::setw(10) << "Quality"
     << std::setw(10) << "Fidelity" << '\n';
  os << std::string(82, '-') << '\n';
  for (const auto& c : cells) {
    os << std::left << std::setw(10) << to_string(c.scenario) << std::setw(16) << to_string(c.topology)
       << std::right << std::setprecision(3) << std::setw(12) << c.ttfa_mean / 1000.0 << std::setw(12)
       << c.ttfa_p50 / 1000.0 << std::setw(12) << c.ttfa_p95 / 1000.0 << std::setprecision(2) << std::setw(10);
    if (c.quality) {
      os << *c.quality;
    } else {
      os << "-";
    }
    os << std::setw(10);
    if (c.fidelity) {
      os << *c.fidelity;
    } else {
      os << "-";
    }
    os << '\n';
  }
  os << '\n' << "trials=" << trials << " time_scale=" << std::setprecision(3) << time_scale << '\n';
  for (auto s : {Scenario::Math, Scenario::Travel, Scenario::Research}) {
    if (auto r = latency_ratio(s)) {
      os << "async/monolithic " << to_string(s) << ": 1/" << std::setprecision(0) << (1.0 / *r) << '\n';
    }
  }
  for (const auto& f : failures) os << "FAIL " << f << '\n';
  return os.str();
}

BenchmarkReport run_benchmark(const BenchConfig& config) {
  if (config.trials < 1) throw BenchError(BenchErrc::Config, "trials must be >= 1");
  if (!(config.time_scale >= 0) || !std::isfinite(config.time_scale)) {
    throw BenchError(BenchErrc::Config, "time_scale must be >= 0");
  }
  if (!config.traces || config.traces->empty()) throw BenchError(BenchErrc::Trace, "no trace fixtures loaded");
  if (config.scenarios.empty() || config.topologies.empty()) {
    throw BenchError(BenchErrc::Config, "no scenarios or topologies selected");
  }

  BenchmarkReport report;
  report.trials = config.trials;
  report.time_scale = config.time_scale;

  for (auto s : config.scenarios) {
    const auto& traces = config.traces->traces(s);
    if (traces.empty()) throw BenchError(BenchErrc::Trace, "no traces for " + std::string(to_string(s)));

    for (auto t : config.topologies) {
      const std::string name = std::string(to_string(s)) + "/" + std::string(to_string(t));
      CellResult cell{s, t, {}, {}, 0, 0, 0, std::nullopt, std::nullopt};

      for (const auto& trace : traces) {
        std::vector<double> mine;
        for (int i = 0; i < config.trials; ++i) {
          if (config.progress) config.progress(name + " " + trace.source + " trial " + std::to_string(i + 1));
          auto cap = run_trace(trace, t, config.time_scale, config, false);
          if (!cap.ttfa_ms) throw BenchError(BenchErrc::NoAudio, name + " (" + trace.source + "): no audio");
          mine.push_back(*cap.ttfa_ms);
        }
        cell.ttfa_samples.insert(cell.ttfa_samples.end(), mine.begin(), mine.end());
        cell.per_trace.push_back(
            {trace.source, std::accumulate(mine.begin(), mine.end(), 0.0) / static_cast<double>(mine.size())});
      }
      cell.ttfa_mean = std::accumulate(cell.ttfa_samples.begin(), cell.ttfa_samples.end(), 0.0) /
                       static_cast<double>(cell.ttfa_samples.size());
      cell.ttfa_p50 = percentile(cell.ttfa_samples, 0.5);
      cell.ttfa_p95 = percentile(cell.ttfa_samples, 0.95);

      if (config.quality) {
        // Scores come from a zero-delay replay so they do not depend on timing.
        double q = 0.0, f = 0.0;
        for (const auto& trace : traces) {
          auto cap = run_trace(trace, t, 0.0, config, true);
          if (!cap.completed) throw BenchError(BenchErrc::NoAudio, name + " (" + trace.source + "): did not finish");
          q += blended_score(answer_accuracy(cap.narrations, trace), methodology_coverage(cap.narrations, trace));
          if (t == Topology::Async) f += fidelity_score(cap.narrations, trace);
        }
        cell.quality = q / static_cast<double>(traces.size());
        if (t == Topology::Async) cell.fidelity = f / static_cast<double>(traces.size());
      }
      report.cells.push_back(std::move(cell));
    }

    // Ordering must hold per fixture, not just on average.
    auto* a = report.cell(s, Topology::Async);
    auto* e = report.cell(s, Topology::ExplainerOnly);
    auto* m = report.cell(s, Topology::Monolithic);
    if (a && e && m) {
      for (std::size_t i = 0; i < traces.size(); ++i) {
        const double ta = a->per_trace[i].ttfa_ms, te = e->per_trace[i].ttfa_ms, tm = m->per_trace[i].ttfa_ms;
        if (!(ta < te && te < tm)) {
          std::ostringstream os;
          os << "ordering violated for " << traces[i].source << ": async=" << ta << " explainer_only=" << te
             << " monolithic=" << tm;
          report.failures.push_back(os.str());
        }
      }
    }
  }
  return report;
}

}  // namespace asyncnarrate
