#include "asyncnarrate/adapters.hpp"

#include <httplib.h>
#include <json.hpp>

#include "asyncnarrate/backends.hpp"

namespace asyncnarrate {

using json = nlohmann::json;

namespace {

struct Target {
  httplib::Client client;
  std::string path;
};

std::unique_ptr<Target> connect(const std::string& endpoint) {
  auto url = parse_http_url(endpoint);
  if (!url) throw std::runtime_error("bad endpoint '" + endpoint + "'");
  auto t = std::unique_ptr<Target>(new Target{httplib::Client(url->host, url->port), url->path});
  t->client.set_connection_timeout(std::chrono::seconds(2));
  t->client.set_read_timeout(std::chrono::seconds(30));
  return t;
}

json post_json(const std::string& endpoint, const json& body) {
  auto t = connect(endpoint);
  auto res = t->client.Post(t->path, body.dump(), "application/json");
  if (!res) throw std::runtime_error(httplib::to_string(res.error()));
  if (res->status != 200) throw std::runtime_error("HTTP " + std::to_string(res->status));
  return json::parse(res->body);
}

}  // namespace

HttpNarrationModel::HttpNarrationModel(std::string endpoint) : endpoint_(std::move(endpoint)) {}

std::string HttpNarrationModel::explain(const ReasoningEvent& ev, std::string_view context, Style style) {
  auto r = post_json(endpoint_, {{"op", "explain"},
                                 {"kind", std::string(json_name(ev.kind))},
                                 {"payload", ev.payload},
                                 {"context", std::string(context)},
                                 {"style", std::string(to_string(style))}});
  return r.at("text").get<std::string>();
}

std::string HttpNarrationModel::answer(std::string_view question, std::string_view context, Style style) {
  auto r = post_json(endpoint_, {{"op", "answer"},
                                 {"question", std::string(question)},
                                 {"context", std::string(context)},
                                 {"style", std::string(to_string(style))}});
  return r.at("text").get<std::string>();
}

HttpCompletionClassifier::HttpCompletionClassifier(std::string endpoint) : endpoint_(std::move(endpoint)) {}

double HttpCompletionClassifier::probability(std::string_view text) {
  try {
    auto r = post_json(endpoint_, {{"text", std::string(text)}});
    return r.at("probability").get<double>();
  } catch (const std::exception&) {
    return completion_probability(text, nullptr);
  }
}

HttpSynthesizer::HttpSynthesizer(std::string endpoint) : endpoint_(std::move(endpoint)) {}

bool HttpSynthesizer::synthesize(std::string_view text, const VoiceConfig& voice, const CancelToken& cancel,
                                 const ChunkSink& sink) {
  if (text.empty()) throw SynthError(SynthErrc::Empty, "empty text");
  std::unique_ptr<Target> t;
  try {
    t = connect(endpoint_);
  } catch (const std::exception& e) {
    throw SynthError(SynthErrc::Failed, e.what());
  }
  json body{{"text", std::string(text)},
            {"sample_rate", voice.sample_rate},
            {"speaking_rate_wpm", voice.speaking_rate_wpm}};

  std::string carry;
  std::vector<std::int16_t> chunk;
  httplib::Request req;
  req.method = "POST";
  req.path = t->path;
  req.body = body.dump();
  req.set_header("Content-Type", "application/json");
  req.content_receiver = [&](const char* data, std::size_t len, std::uint64_t, std::uint64_t) {
    if (cancel.cancelled()) return false;
    carry.append(data, len);
    const std::size_t n = carry.size() / 2;
    chunk.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto lo = static_cast<std::uint8_t>(carry[2 * i]);
      auto hi = static_cast<std::uint8_t>(carry[2 * i + 1]);
      chunk[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
    }
    carry.erase(0, n * 2);
    if (n) sink(chunk);
    return true;
  };
  auto res = t->client.send(req);
  if (cancel.cancelled()) return false;
  if (!res) throw SynthError(SynthErrc::Failed, httplib::to_string(res.error()));
  if (res->status != 200) throw SynthError(SynthErrc::Failed, "HTTP " + std::to_string(res->status));
  if (!carry.empty()) throw SynthError(SynthErrc::Failed, "odd-length PCM body");
  return true;
}

}  // namespace asyncnarrate
