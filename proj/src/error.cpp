#include "asyncnarrate/error.hpp"

namespace asyncnarrate {

std::string_view to_string(ProtocolErrc c) {
  switch (c) {
    case ProtocolErrc::Empty: return "ProtocolError{Empty}";
    case ProtocolErrc::UnknownPrefix: return "ProtocolError{UnknownPrefix}";
    case ProtocolErrc::LineBreak: return "ProtocolError{LineBreak}";
    case ProtocolErrc::InvalidEvent: return "ProtocolError{InvalidEvent}";
  }
  return "ProtocolError";
}

std::string_view to_string(GrammarErrc c) {
  switch (c) {
    case GrammarErrc::PrematureComplete: return "GrammarError{PrematureComplete}";
    case GrammarErrc::AfterClose: return "GrammarError{AfterClose}";
    case GrammarErrc::SeqOrder: return "GrammarError{SeqOrder}";
    case GrammarErrc::AfterAnswer: return "GrammarError{AfterAnswer}";
    case GrammarErrc::Incomplete: return "GrammarError{Incomplete}";
  }
  return "GrammarError";
}

std::string_view to_string(TransportErrc c) {
  switch (c) {
    case TransportErrc::BadControl: return "TransportError{BadControl}";
    case TransportErrc::BadFrameLength: return "TransportError{BadFrameLength}";
    case TransportErrc::Closed: return "TransportError{Closed}";
  }
  return "TransportError";
}

std::string_view to_string(StateErrc c) {
  switch (c) {
    case StateErrc::IllegalTransition: return "StateError{IllegalTransition}";
    case StateErrc::Closed: return "StateError{Closed}";
  }
  return "StateError";
}

std::string_view to_string(TraceErrc c) {
  switch (c) {
    case TraceErrc::Schema: return "TraceError{Schema}";
    case TraceErrc::Grammar: return "TraceError{Grammar}";
    case TraceErrc::Io: return "TraceError{Io}";
  }
  return "TraceError";
}

std::string_view to_string(BackendErrc c) {
  switch (c) {
    case BackendErrc::Unreachable: return "BackendError{Unreachable}";
    case BackendErrc::Protocol: return "BackendError{Protocol}";
  }
  return "BackendError";
}

std::string_view to_string(ExplainErrc c) {
  switch (c) {
    case ExplainErrc::NotNarratable: return "ExplainError{NotNarratable}";
    case ExplainErrc::EmptyQuery: return "ExplainError{EmptyQuery}";
  }
  return "ExplainError";
}

std::string_view to_string(SynthErrc c) {
  switch (c) {
    case SynthErrc::Empty: return "SynthError{Empty}";
    case SynthErrc::RateMismatch: return "SynthError{RateMismatch}";
    case SynthErrc::TooShort: return "SynthError{TooShort}";
    case SynthErrc::Failed: return "SynthError{Failed}";
  }
  return "SynthError";
}

std::string_view to_string(ConfigErrc c) {
  switch (c) {
    case ConfigErrc::Anchors: return "ConfigError{Anchors}";
    case ConfigErrc::Rate: return "ConfigError{Rate}";
    case ConfigErrc::Unknown: return "ConfigError{Unknown}";
    case ConfigErrc::Value: return "ConfigError{Value}";
  }
  return "ConfigError";
}

std::string_view to_string(BenchErrc c) {
  switch (c) {
    case BenchErrc::NoAudio: return "BenchError{NoAudio}";
    case BenchErrc::Range: return "BenchError{Range}";
    case BenchErrc::Empty: return "BenchError{Empty}";
    case BenchErrc::Config: return "BenchError{Config}";
    case BenchErrc::Trace: return "BenchError{Trace}";
  }
  return "BenchError";
}

}  // namespace asyncnarrate
