#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace asyncnarrate {

enum class ProtocolErrc { Empty, UnknownPrefix, LineBreak, InvalidEvent };
enum class GrammarErrc { PrematureComplete, AfterClose, SeqOrder, AfterAnswer, Incomplete };
enum class TransportErrc { BadControl, BadFrameLength, Closed };
enum class StateErrc { IllegalTransition, Closed };
enum class TraceErrc { Schema, Grammar, Io };
enum class BackendErrc { Unreachable, Protocol };
enum class ExplainErrc { NotNarratable, EmptyQuery };
enum class SynthErrc { Empty, RateMismatch, TooShort, Failed };
enum class ConfigErrc { Anchors, Rate, Unknown, Value };
enum class BenchErrc { NoAudio, Range, Empty, Config, Trace };

std::string_view to_string(ProtocolErrc c);
std::string_view to_string(GrammarErrc c);
std::string_view to_string(TransportErrc c);
std::string_view to_string(StateErrc c);
std::string_view to_string(TraceErrc c);
std::string_view to_string(BackendErrc c);
std::string_view to_string(ExplainErrc c);
std::string_view to_string(SynthErrc c);
std::string_view to_string(ConfigErrc c);
std::string_view to_string(BenchErrc c);

// Exception carrying a module-specific error code. Each module throws its own
// alias so callers can catch by family and branch on code().
template <class Code>
class CodedError : public std::runtime_error {
 public:
  CodedError(Code code, const std::string& detail = {})
      : std::runtime_error(format(code, detail)), code_(code) {}

  Code code() const noexcept { return code_; }

 private:
  static std::string format(Code code, const std::string& detail) {
    std::string s(to_string(code));
    if (!detail.empty()) {
      s += ": ";
      s += detail;
    }
    return s;
  }

  Code code_;
};

using ProtocolError = CodedError<ProtocolErrc>;
using GrammarError = CodedError<GrammarErrc>;
using TransportError = CodedError<TransportErrc>;
using StateError = CodedError<StateErrc>;
using TraceError = CodedError<TraceErrc>;
using BackendError = CodedError<BackendErrc>;
using ExplainError = CodedError<ExplainErrc>;
using SynthError = CodedError<SynthErrc>;
using ConfigError = CodedError<ConfigErrc>;
using BenchError = CodedError<BenchErrc>;

}  // namespace asyncnarrate
