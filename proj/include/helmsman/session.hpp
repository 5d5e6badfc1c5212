#pragma once

// Session state, events, and the per-session JSON store.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "helmsman/clock.hpp"
#include "helmsman/error.hpp"
#include "helmsman/executor.hpp"
#include "helmsman/io.hpp"
#include "helmsman/language.hpp"
#include "helmsman/llm.hpp"
#include "helmsman/plugin_registry.hpp"
#include "helmsman/qa_engine.hpp"
#include "helmsman/recommender.hpp"
#include "helmsman/router.hpp"

namespace helmsman::session {

inline constexpr int kSchemaVersion = 1;

enum class Phase { idle, routing_main, routing_sub, viewing_doc, qa, recommending, eliciting, executing };

inline constexpr Phase kAllPhases[] = {Phase::idle,        Phase::routing_main, Phase::routing_sub, Phase::viewing_doc,
                                       Phase::qa,          Phase::recommending, Phase::eliciting,   Phase::executing};

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::idle: return "idle";
    case Phase::routing_main: return "routing_main";
    case Phase::routing_sub: return "routing_sub";
    case Phase::viewing_doc: return "viewing_doc";
    case Phase::qa: return "qa";
    case Phase::recommending: return "recommending";
    case Phase::eliciting: return "eliciting";
    case Phase::executing: return "executing";
  }
  return "";
}

inline Phase parse_phase(std::string_view s) {
  for (auto p : kAllPhases)
    if (to_string(p) == s) return p;
  throw Error(errc::corrupt_record, "unknown phase '" + std::string(s) + "'");
}

enum class EventKind {
  message,
  confirm_main,
  reject_main,
  confirm_sub,
  reject_sub,
  accept_reroute,
  decline_reroute,
  command,
  confirm_plugin,
  execute,
  cancel
};

inline constexpr EventKind kAllEvents[] = {
    EventKind::message,        EventKind::confirm_main,    EventKind::reject_main, EventKind::confirm_sub,
    EventKind::reject_sub,     EventKind::accept_reroute,  EventKind::decline_reroute, EventKind::command,
    EventKind::confirm_plugin, EventKind::execute,         EventKind::cancel};

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::message: return "message";
    case EventKind::confirm_main: return "confirm_main";
    case EventKind::reject_main: return "reject_main";
    case EventKind::confirm_sub: return "confirm_sub";
    case EventKind::reject_sub: return "reject_sub";
    case EventKind::accept_reroute: return "accept_reroute";
    case EventKind::decline_reroute: return "decline_reroute";
    case EventKind::command: return "command";
    case EventKind::confirm_plugin: return "confirm_plugin";
    case EventKind::execute: return "execute";
    case EventKind::cancel: return "cancel";
  }
  return "";
}

inline EventKind parse_event_kind(std::string_view s) {
  for (auto k : kAllEvents)
    if (to_string(k) == s) return k;
  throw Error(errc::invalid_request, "unknown event kind '" + std::string(s) + "'", {{"event", std::string(s)}});
}

struct Event {
  EventKind kind = EventKind::message;
  std::string text;               // message, command
  std::vector<std::string> ids;   // confirm_*: one id; reject_*: the rejected ids; confirm_plugin: one id
  std::string reason;             // reject_*
  bool override_choice = false;   // confirm_plugin
  plugins::ArgMap args;           // execute

  static Event message(std::string t) {
    Event e;
    e.text = std::move(t);
    return e;
  }
  static Event of(EventKind k, std::vector<std::string> ids = {}, std::string reason = {}) {
    Event e;
    e.kind = k;
    e.ids = std::move(ids);
    e.reason = std::move(reason);
    return e;
  }
};

inline nlohmann::json to_json(const Event& e) {
  return {{"event", to_string(e.kind)}, {"text", e.text},          {"ids", e.ids},
          {"reason", e.reason},         {"override", e.override_choice}, {"args", plugins::to_json(e.args)}};
}

/// Request body of the message endpoint. Missing fields take their defaults;
/// `event` defaults to message.
inline Event event_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(errc::invalid_request, "request body must be a JSON object");
  Event e;
  try {
    e.kind = parse_event_kind(j.value("event", "message"));
    e.text = j.value("text", "");
    e.ids = j.value("ids", std::vector<std::string>{});
    if (j.contains("id") && j["id"].is_string()) e.ids.push_back(j["id"].get<std::string>());
    e.reason = j.value("reason", "");
    e.override_choice = j.value("override", false);
    if (j.contains("args")) e.args = plugins::args_from_json(j["args"]);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(errc::invalid_request, std::string("malformed event: ") + ex.what());
  }
  return e;
}

struct RoutingState {
  std::string query;
  router::EpisodeState episode;
  std::vector<std::string> main_candidates;
  std::optional<std::string> confirmed_main;
  std::vector<llm::ChatMessage> sub_dialogue;  // user turns since the main task was confirmed
  std::optional<std::string> sub_candidate;
  std::optional<std::string> confirmed_sub;

  bool operator==(const RoutingState&) const = default;
};

struct PendingReroute {
  qa::BottleneckSignal signal;
  std::string query;  // routed if the user accepts

  bool operator==(const PendingReroute&) const = default;
};

struct Session {
  std::string session_id;
  Language language = Language::en;
  Phase phase = Phase::idle;
  std::vector<llm::ChatMessage> turns;
  std::optional<RoutingState> routing;
  std::optional<std::string> active_doc;
  std::vector<qa::QaExchange> qa_history;
  std::size_t qa_window_start = 0;  // bottleneck detection looks at exchanges from here on
  std::optional<PendingReroute> pending_reroute;
  std::optional<recommend::Recommendation> recommendation;
  std::optional<std::string> command_text;
  std::optional<Phase> return_phase;  // where the command flow goes back to
  std::vector<std::string> executions;
  std::vector<std::string> augmentations;  // record ids created from this session
  Timestamp created_at{};
  Timestamp updated_at{};

  bool operator==(const Session&) const = default;
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

template <class T, class F>
nlohmann::json opt(const std::optional<T>& v, F&& f) {
  return v ? f(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json messages_json(const std::vector<llm::ChatMessage>& ms) {
  auto j = nlohmann::json::array();
  for (const auto& m : ms) j.push_back(llm::to_json(m));
  return j;
}

inline std::vector<llm::ChatMessage> messages_from(const nlohmann::json& j) {
  std::vector<llm::ChatMessage> out;
  for (const auto& m : j) out.push_back(llm::message_from_json(m));
  return out;
}

inline nlohmann::json id_json(const std::optional<std::string>& s) { return s ? nlohmann::json(*s) : nlohmann::json(nullptr); }

inline std::optional<std::string> id_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<std::string>();
}

}  // namespace detail

inline nlohmann::json to_json(const RoutingState& r) {
  return {{"query", r.query},
          {"rejected_main", r.episode.rejected_main},
          {"rejected_sub", r.episode.rejected_sub},
          {"reasons", r.episode.reasons},
          {"round", r.episode.round},
          {"main_candidates", r.main_candidates},
          {"confirmed_main", detail::id_json(r.confirmed_main)},
          {"sub_dialogue", detail::messages_json(r.sub_dialogue)},
          {"sub_candidate", detail::id_json(r.sub_candidate)},
          {"confirmed_sub", detail::id_json(r.confirmed_sub)}};
}

inline RoutingState routing_from_json(const nlohmann::json& j) {
  RoutingState r;
  r.query = j.at("query").get<std::string>();
  r.episode.rejected_main = j.at("rejected_main").get<std::set<std::string>>();
  r.episode.rejected_sub = j.at("rejected_sub").get<std::set<std::string>>();
  r.episode.reasons = j.at("reasons").get<std::vector<std::string>>();
  r.episode.round = j.at("round").get<int>();
  r.main_candidates = j.at("main_candidates").get<std::vector<std::string>>();
  r.confirmed_main = detail::id_from(j.at("confirmed_main"));
  r.sub_dialogue = detail::messages_from(j.at("sub_dialogue"));
  r.sub_candidate = detail::id_from(j.at("sub_candidate"));
  r.confirmed_sub = detail::id_from(j.at("confirmed_sub"));
  return r;
}

inline nlohmann::json to_json(const Session& s) {
  auto qa = nlohmann::json::array();
  for (const auto& e : s.qa_history) qa.push_back(qa::to_json(e));
  return {{"schema", kSchemaVersion},
          {"session_id", s.session_id},
          {"language", to_string(s.language)},
          {"phase", to_string(s.phase)},
          {"turns", detail::messages_json(s.turns)},
          {"routing", detail::opt(s.routing, [](const RoutingState& r) { return to_json(r); })},
          {"active_doc", detail::id_json(s.active_doc)},
          {"qa_history", qa},
          {"qa_window_start", s.qa_window_start},
          {"pending_reroute", detail::opt(s.pending_reroute,
                                          [](const PendingReroute& p) {
                                            return nlohmann::json{{"kind", qa::to_string(p.signal.kind)},
                                                                  {"evidence", p.signal.evidence},
                                                                  {"query", p.query}};
                                          })},
          {"recommendation",
           detail::opt(s.recommendation, [](const recommend::Recommendation& r) { return recommend::to_json(r); })},
          {"command_text", detail::id_json(s.command_text)},
          {"return_phase", detail::opt(s.return_phase, [](Phase p) { return nlohmann::json(to_string(p)); })},
          {"executions", s.executions},
          {"augmentations", s.augmentations},
          {"created_at", format_rfc3339(s.created_at)},
          {"updated_at", format_rfc3339(s.updated_at)}};
}

inline qa::BottleneckKind parse_bottleneck_kind(std::string_view s) {
  for (auto k : {qa::BottleneckKind::explicit_topic_shift, qa::BottleneckKind::repeated_unanswered,
                 qa::BottleneckKind::low_grounding})
    if (qa::to_string(k) == s) return k;
  throw Error(errc::corrupt_record, "unknown bottleneck kind '" + std::string(s) + "'");
}

inline Session session_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema").get<int>() != kSchemaVersion)
      throw Error(errc::corrupt_record, "unsupported session schema " + j.at("schema").dump());
    Session s;
    s.session_id = j.at("session_id").get<std::string>();
    s.language = parse_language(j.at("language").get<std::string>());
    s.phase = parse_phase(j.at("phase").get<std::string>());
    s.turns = detail::messages_from(j.at("turns"));
    if (!j.at("routing").is_null()) s.routing = routing_from_json(j["routing"]);
    s.active_doc = detail::id_from(j.at("active_doc"));
    for (const auto& e : j.at("qa_history")) s.qa_history.push_back(qa::exchange_from_json(e));
    s.qa_window_start = j.at("qa_window_start").get<std::size_t>();
    if (const auto& p = j.at("pending_reroute"); !p.is_null())
      s.pending_reroute = PendingReroute{{parse_bottleneck_kind(p.at("kind").get<std::string>()),
                                          p.at("evidence").get<std::string>()},
                                         p.at("query").get<std::string>()};
    if (!j.at("recommendation").is_null()) s.recommendation = recommend::recommendation_from_json(j["recommendation"]);
    s.command_text = detail::id_from(j.at("command_text"));
    if (!j.at("return_phase").is_null()) s.return_phase = parse_phase(j["return_phase"].get<std::string>());
    s.executions = j.at("executions").get<std::vector<std::string>>();
    s.augmentations = j.at("augmentations").get<std::vector<std::string>>();
    s.created_at = parse_rfc3339(j.at("created_at").get<std::string>());
    s.updated_at = parse_rfc3339(j.at("updated_at").get<std::string>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::corrupt_record, std::string("malformed session record: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == errc::corrupt_record) throw;
    throw Error(errc::corrupt_record, std::string("malformed session record: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Store

inline bool is_session_id(std::string_view id) { return text::is_param_name(id); }

/// One `<session_id>.json` file per session, replaced atomically on save.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  void save(const Session& s) const {
    if (!is_session_id(s.session_id))
      throw Error(errc::invalid_request, "invalid session id '" + s.session_id + "'");
    write_file_atomic(path_for(s.session_id), to_json(s).dump(2) + "\n");
  }

  Session load(std::string_view id) const {
    const auto path = is_session_id(id) ? path_for(id) : std::filesystem::path();
    if (path.empty() || !std::filesystem::exists(path))
      throw Error(errc::session_not_found, "no session '" + std::string(id) + "'", {{"session_id", std::string(id)}});
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw Error(errc::corrupt_record, "session '" + std::string(id) + "' is unreadable: " + e.what(),
                  {{"session_id", std::string(id)}});
    }
    auto s = session_from_json(j);
    if (s.session_id != id)
      throw Error(errc::corrupt_record, "session file '" + std::string(id) + "' holds session '" + s.session_id + "'");
    return s;
  }

  bool exists(std::string_view id) const { return is_session_id(id) && std::filesystem::exists(path_for(id)); }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& e : std::filesystem::directory_iterator(dir_))
      if (e.path().extension() == ".json") out.push_back(e.path().stem().string());
    std::sort(out.begin(), out.end());
    return out;
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path path_for(std::string_view id) const { return dir_ / (std::string(id) + ".json"); }

  std::filesystem::path dir_;
};

}  // namespace helmsman::session
