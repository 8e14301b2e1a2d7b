#include "asyncnarrate/transport.hpp"

#include <array>

namespace asyncnarrate {

namespace {

struct TypeName {
  ControlType type;
  std::string_view name;
};

constexpr std::array<TypeName, 12> kTypeNames{{
    {ControlType::StartTask, "start_task"},
    {ControlType::UserText, "user_text"},
    {ControlType::Interrupt, "interrupt"},
    {ControlType::ConfigUpdate, "config_update"},
    {ControlType::State, "state"},
    {ControlType::ReasoningEventMsg, "reasoning_event"},
    {ControlType::NarrationText, "narration_text"},
    {ControlType::TranscriptPartial, "transcript_partial"},
    {ControlType::TranscriptFinal, "transcript_final"},
    {ControlType::TtfaReport, "ttfa_report"},
    {ControlType::Complete, "complete"},
    {ControlType::Error, "error"},
}};

[[noreturn]] void bad_control(const std::string& why) {
  throw TransportError(TransportErrc::BadControl, why);
}

void require_string(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    bad_control(std::string("missing string field '") + key + "'");
  }
}

void check_anchor_shape(const json& anchors) {
  if (!anchors.is_array()) bad_control("anchors must be an array");
  for (const auto& a : anchors) {
    if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number()) {
      bad_control("anchors must be [[p, ms], ...]");
    }
  }
}

}  // namespace

std::string_view to_string(ControlType type) {
  for (const auto& t : kTypeNames) {
    if (t.type == type) return t.name;
  }
  return "?";
}

std::optional<ControlType> control_type_from_string(std::string_view s) {
  for (const auto& t : kTypeNames) {
    if (t.name == s) return t.type;
  }
  return std::nullopt;
}

bool is_client_type(ControlType type) {
  return type == ControlType::StartTask || type == ControlType::UserText ||
         type == ControlType::Interrupt || type == ControlType::ConfigUpdate;
}

std::string ControlMessage::serialize() const {
  json j = body.is_object() ? body : json::object();
  j["type"] = std::string(to_string(type));
  return j.dump();
}

ControlMessage ControlMessage::state(PipelineState s) {
  return {ControlType::State, {{"value", std::string(to_string(s))}}};
}

ControlMessage ControlMessage::reasoning_event(const ReasoningEvent& ev) {
  return {ControlType::ReasoningEventMsg,
          {{"kind", std::string(json_name(ev.kind))},
           {"text", ev.payload},
           {"seq", ev.seq},
           {"t_ms", ev.t_ms}}};
}

ControlMessage ControlMessage::narration_text(std::string_view text, std::uint64_t seq) {
  return {ControlType::NarrationText, {{"text", std::string(text)}, {"seq", seq}}};
}

ControlMessage ControlMessage::transcript(bool final, std::string_view text) {
  return {final ? ControlType::TranscriptFinal : ControlType::TranscriptPartial,
          {{"text", std::string(text)}}};
}

ControlMessage ControlMessage::ttfa_report(double ms) {
  return {ControlType::TtfaReport, {{"ms", ms}}};
}

ControlMessage ControlMessage::complete() { return {ControlType::Complete, json::object()}; }

ControlMessage ControlMessage::error(std::string_view code, std::string_view detail) {
  return {ControlType::Error, {{"code", std::string(code)}, {"detail", std::string(detail)}}};
}

ControlMessage ControlMessage::start_task(std::string_view scenario, std::string_view query) {
  return {ControlType::StartTask, {{"scenario", std::string(scenario)}, {"query", std::string(query)}}};
}

ControlMessage ControlMessage::user_text(std::string_view text) {
  return {ControlType::UserText, {{"text", std::string(text)}}};
}

ControlMessage ControlMessage::interrupt(std::optional<double> client_t_ms) {
  ControlMessage m{ControlType::Interrupt, json::object()};
  if (client_t_ms) m.body["client_t_ms"] = *client_t_ms;
  return m;
}

ControlMessage parse_control(std::string_view text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) bad_control("not a JSON object");
  if (!j.contains("type") || !j["type"].is_string()) bad_control("missing 'type'");
  auto type = control_type_from_string(j["type"].get<std::string>());
  if (!type) bad_control("unknown type '" + j["type"].get<std::string>() + "'");
  if (!is_client_type(*type)) bad_control("'" + j["type"].get<std::string>() + "' is server-to-client");
  if (j.contains("v") && !(j["v"].is_number_integer() && j["v"].get<int>() == 1)) {
    bad_control("unsupported version");
  }

  switch (*type) {
    case ControlType::StartTask: {
      require_string(j, "scenario");
      require_string(j, "query");
      auto scenario = j["scenario"].get<std::string>();
      if (scenario != "math" && scenario != "travel" && scenario != "research") {
        bad_control("unknown scenario '" + scenario + "'");
      }
      break;
    }
    case ControlType::UserText:
      require_string(j, "text");
      break;
    case ControlType::Interrupt:
      if (j.contains("client_t_ms") && !j["client_t_ms"].is_number()) bad_control("client_t_ms");
      break;
    case ControlType::ConfigUpdate:
      if (j.contains("anchors")) check_anchor_shape(j["anchors"]);
      if (j.contains("style")) {
        if (!j["style"].is_string()) bad_control("style");
        auto style = j["style"].get<std::string>();
        if (style != "concise" && style != "detailed") bad_control("style '" + style + "'");
      }
      break;
    default:
      break;
  }

  j.erase("type");
  return ControlMessage{*type, std::move(j)};
}

bool is_supported_rate(int sample_rate) {
  return sample_rate == 16000 || sample_rate == 24000 || sample_rate == 48000;
}

std::string AudioFrame::to_bytes() const {
  std::string out(samples.size() * 2, '\0');
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto u = static_cast<std::uint16_t>(samples[i]);
    out[2 * i] = static_cast<char>(u & 0xff);
    out[2 * i + 1] = static_cast<char>(u >> 8);
  }
  return out;
}

AudioFrame AudioFrame::from_bytes(std::string_view bytes, int sample_rate) {
  if (!is_supported_rate(sample_rate)) {
    throw TransportError(TransportErrc::BadFrameLength, "unsupported rate " + std::to_string(sample_rate));
  }
  const std::size_t n = samples_per_frame(sample_rate);
  if (bytes.size() != n * 2) {
    throw TransportError(TransportErrc::BadFrameLength,
                         std::to_string(bytes.size()) + " bytes, expected " + std::to_string(n * 2));
  }
  AudioFrame f;
  f.sample_rate = sample_rate;
  f.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto lo = static_cast<std::uint8_t>(bytes[2 * i]);
    auto hi = static_cast<std::uint8_t>(bytes[2 * i + 1]);
    f.samples[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
  }
  return f;
}

Inbound dispatch_inbound(const RawMessage& raw, int sample_rate) {
  if (raw.channel == Channel::Binary) return AudioFrame::from_bytes(raw.data, sample_rate);
  return parse_control(raw.data);
}

// --- ConnectionContext ----------------------------------------------------

ConnectionContext::ConnectionContext(std::string id, std::shared_ptr<SessionContext> session,
                                     Config config)
    : id_(std::move(id)),
      session_(std::move(session)),
      config_(config),
      audio_(std::make_unique<std::deque<std::string>>()) {
  opened_at_ = session_->now_ms();
}

ConnectionContext::~ConnectionContext() { close(); }

std::optional<double> ConnectionContext::closed_at() const {
  std::lock_guard lock(mutex_);
  return closed_at_;
}

void ConnectionContext::notify() {
  cv_.notify_all();
  std::function<void()> n;
  {
    std::lock_guard lock(mutex_);
    n = notifier_;
  }
  if (n) n();
}

void ConnectionContext::send_control(const ControlMessage& msg) {
  {
    std::lock_guard lock(mutex_);
    if (!open_) throw TransportError(TransportErrc::Closed, id_);
    control_.push_back(msg.serialize());
  }
  notify();
}

void ConnectionContext::send_audio(const AudioFrame& frame) {
  {
    std::lock_guard lock(mutex_);
    if (!open_) throw TransportError(TransportErrc::Closed, id_);
    if (audio_->size() >= config_.audio_queue_frames) {
      audio_->pop_front();
      ++tallies_.frames_dropped;
    }
    audio_->push_back(frame.to_bytes());
  }
  notify();
}

std::size_t ConnectionContext::flush_audio() {
  std::lock_guard lock(mutex_);
  if (!audio_) return 0;
  auto n = audio_->size();
  audio_->clear();
  return n;
}

std::size_t ConnectionContext::audio_queue_length() const {
  std::lock_guard lock(mutex_);
  return audio_ ? audio_->size() : 0;
}

std::size_t ConnectionContext::control_queue_length() const {
  std::lock_guard lock(mutex_);
  return control_.size();
}

std::optional<Outbound> ConnectionContext::next_outbound() {
  std::lock_guard lock(mutex_);
  if (!open_) return std::nullopt;
  const double now = session_->now_ms();
  if (!control_.empty()) {
    Outbound o{Channel::Text, std::move(control_.front()), now};
    control_.pop_front();
    ++tallies_.messages_out;
    return o;
  }
  if (!audio_->empty()) {
    Outbound o{Channel::Binary, std::move(audio_->front()), now};
    audio_->pop_front();
    ++tallies_.frames_out;
    if (!tallies_.first_audio_out_at) tallies_.first_audio_out_at = now;
    tallies_.last_audio_out_at = now;
    return o;
  }
  return std::nullopt;
}

std::optional<Outbound> ConnectionContext::wait_outbound(std::chrono::milliseconds timeout) {
  {
    std::unique_lock lock(mutex_);
    cv_.wait_for(lock, timeout,
                 [&] { return !open_ || !control_.empty() || (audio_ && !audio_->empty()); });
  }
  return next_outbound();
}

void ConnectionContext::set_notifier(std::function<void()> notifier) {
  std::lock_guard lock(mutex_);
  notifier_ = std::move(notifier);
}

void ConnectionContext::note_inbound(const Inbound& in) {
  std::lock_guard lock(mutex_);
  if (std::holds_alternative<AudioFrame>(in)) {
    ++tallies_.frames_in;
  } else {
    ++tallies_.messages_in;
  }
}

void ConnectionContext::close() {
  std::function<void(const std::string&)> on_close;
  {
    std::lock_guard lock(mutex_);
    if (!open_) return;
    open_ = false;
    closed_at_ = session_->now_ms();
    control_.clear();
    audio_.reset();
    on_close = std::move(on_close_);
    notifier_ = nullptr;
  }
  cv_.notify_all();
  if (on_close) on_close(id_);
}

bool ConnectionContext::is_open() const {
  std::lock_guard lock(mutex_);
  return open_;
}

bool ConnectionContext::audio_queue_allocated() const {
  std::lock_guard lock(mutex_);
  return audio_ != nullptr;
}

ConnectionTallies ConnectionContext::tallies() const {
  std::lock_guard lock(mutex_);
  return tallies_;
}

void close_connection(ConnectionContext& ctx) { ctx.close(); }

// --- ConnectionRegistry ---------------------------------------------------

struct ConnectionRegistry::State {
  std::mutex mutex;
  std::map<std::string, std::weak_ptr<ConnectionContext>> active;
  std::uint64_t next_id = 1;
  std::size_t audio_queues = 0;
};

ConnectionRegistry::ConnectionRegistry() : state_(std::make_shared<State>()) {}

ConnectionRegistry::~ConnectionRegistry() {
  std::vector<std::shared_ptr<ConnectionContext>> live;
  {
    std::lock_guard lock(state_->mutex);
    for (auto& [id, weak] : state_->active) {
      if (auto c = weak.lock()) live.push_back(std::move(c));
    }
  }
  for (auto& c : live) c->close();
}

std::shared_ptr<ConnectionContext> ConnectionRegistry::open(std::shared_ptr<SessionContext> session,
                                                            ConnectionContext::Config config) {
  std::string id;
  {
    std::lock_guard lock(state_->mutex);
    id = "conn-" + std::to_string(state_->next_id++);
  }
  auto ctx = std::make_shared<ConnectionContext>(id, std::move(session), config);
  std::weak_ptr<State> weak_state = state_;
  ctx->on_close_ = [weak_state](const std::string& closed_id) {
    if (auto s = weak_state.lock()) {
      std::lock_guard lock(s->mutex);
      if (s->active.erase(closed_id) > 0) --s->audio_queues;
    }
  };
  std::lock_guard lock(state_->mutex);
  state_->active.emplace(id, ctx);
  ++state_->audio_queues;
  return ctx;
}

std::size_t ConnectionRegistry::active_count() const {
  std::lock_guard lock(state_->mutex);
  return state_->active.size();
}

std::size_t ConnectionRegistry::allocated_audio_queues() const {
  std::lock_guard lock(state_->mutex);
  return state_->audio_queues;
}

// --- LoopbackPeer ---------------------------------------------------------

LoopbackPeer::LoopbackPeer(std::shared_ptr<ConnectionContext> conn) : conn_(std::move(conn)) {
  thread_ = std::thread([this] { run(); });
}

LoopbackPeer::~LoopbackPeer() { stop(); }

void LoopbackPeer::stop() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
}

void LoopbackPeer::run() {
  while (!stop_) {
    auto out = conn_->wait_outbound(std::chrono::milliseconds(5));
    if (!out) {
      if (!conn_->is_open()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
      }
      continue;
    }
    {
      std::lock_guard lock(mutex_);
      received_.push_back({out->channel, std::move(out->data), out->at});
    }
    cv_.notify_all();
  }
}

std::vector<LoopbackPeer::Received> LoopbackPeer::received() const {
  std::lock_guard lock(mutex_);
  return received_;
}

std::vector<json> LoopbackPeer::controls() const {
  std::lock_guard lock(mutex_);
  std::vector<json> out;
  for (const auto& r : received_) {
    if (r.channel == Channel::Text) out.push_back(json::parse(r.data));
  }
  return out;
}

std::vector<json> LoopbackPeer::controls_of(std::string_view type) const {
  std::vector<json> out;
  for (auto& j : controls()) {
    if (j.value("type", "") == type) out.push_back(std::move(j));
  }
  return out;
}

std::size_t LoopbackPeer::frame_count() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& r : received_) n += r.channel == Channel::Binary;
  return n;
}

std::string LoopbackPeer::audio_bytes() const {
  std::lock_guard lock(mutex_);
  std::string out;
  for (const auto& r : received_) {
    if (r.channel == Channel::Binary) out += r.data;
  }
  return out;
}

bool LoopbackPeer::wait_until(const std::function<bool(const LoopbackPeer&)>& pred,
                              std::chrono::milliseconds timeout) const {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    if (pred(*this)) return true;
    std::unique_lock lock(mutex_);
    if (std::chrono::steady_clock::now() >= deadline) return false;
    cv_.wait_for(lock, std::chrono::milliseconds(2));
  }
}

}  // namespace asyncnarrate
