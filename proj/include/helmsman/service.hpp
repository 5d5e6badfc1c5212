#pragma once

// JSON-over-HTTP front end of the engine.
//
//   POST /sessions                     {language}                    -> 201 {session_id, session, allowed_events}
//   GET  /sessions/{id}                                              -> 200 {session, allowed_events}
//   POST /sessions/{id}/message        {text, event?, ids?, id?, reason?, override?, args?}
//                                                                    -> 200 {session, allowed_events, replies}
//   POST /sessions/{id}/execute        {args}                        -> 200 as above, or 202 {exec_id, ...}
//   GET  /docs/{doc_id}                                              -> 200 text/html
//   GET  /docs/assets/{name}                                         -> 200 image bytes
//   GET  /plugins?language=en|zh                                     -> 200 {version, plugins}
//   POST /plugins                      manifest JSON or text format  -> 201 manifest
//   GET  /workspace/{session_id}                                     -> 200 {version, dirty, serialized, items}
//   GET  /executions/{exec_id}                                       -> 200 record, or {exec_id, status: running}
//   GET  /taxonomy?language=en|zh                                    -> 200 main tasks with subtasks
//
// Every failure is an ApiError body {code, message, details?}. A session
// serves one request at a time; a second concurrent one gets 409
// session_busy. Executions of subprocess plugins run in the background and
// answer 202; the session stays busy until the run is recorded.

#include <list>
#include <mutex>
#include <set>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "helmsman/app.hpp"
#include "helmsman/engine.hpp"
#include "helmsman/error.hpp"
#include "helmsman/session.hpp"

namespace helmsman::api {

inline int http_status(std::string_view code) {
  static const std::map<std::string_view, int> table = {
      {errc::session_not_found, 404},  {errc::doc_not_found, 404},      {errc::plugin_not_found, 404},
      {errc::execution_not_found, 404}, {errc::not_found, 404},         {errc::unknown_fragment, 404},
      {errc::session_busy, 409},       {errc::duplicate_bundled, 409},  {errc::illegal_transition, 409},
      {errc::invalid_manifest, 422},   {errc::missing_required, 422},   {errc::type_mismatch, 422},
      {errc::unknown_argument, 422},   {errc::enum_violation, 422},     {errc::invalid_feedback, 422},
      {errc::validation_failed, 422},  {errc::not_recommended, 422},    {errc::unknown_builtin, 422},
      {errc::empty_selection, 422},    {errc::empty_registry, 422},     {errc::invalid_request, 400},
      {errc::parse_error, 400},        {errc::backend_unavailable, 502}, {errc::script_miss, 502},
      {errc::timeout, 504},
  };
  auto it = table.find(code);
  return it == table.end() ? 500 : it->second;
}

inline nlohmann::json allowed_json(const session::Session& s) {
  auto j = nlohmann::json::array();
  for (auto k : allowed_events(s)) j.push_back(session::to_string(k));
  return j;
}

inline nlohmann::json session_view(const session::Session& s) {
  return {{"session", session::to_json(s)}, {"allowed_events", allowed_json(s)}};
}

class Service {
 public:
  explicit Service(Runtime& runtime) : rt_(runtime) {}

  ~Service() {
    std::list<std::jthread> workers;
    {
      std::lock_guard lock(workers_mutex_);
      workers.swap(workers_);
    }
    // jthread joins on destruction
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void mount(httplib::Server& server) {
    const auto& cfg = rt_.config().server;
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.request_timeout).count();
    server.set_read_timeout(std::max<long long>(1, secs), 0);
    server.set_write_timeout(std::max<long long>(1, secs), 0);
    server.set_payload_max_length(1 << 20);
    const int threads = cfg.threads;
    server.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const std::exception& e) {
        send_error(res, Error(errc::internal_error, e.what()));
      } catch (...) {
        send_error(res, Error(errc::internal_error, "unknown failure"));
      }
    });
    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (!res.body.empty()) return;
      if (res.status == 404)
        send_error(res, Error(errc::not_found, "no route for " + req.method + " " + req.path), 404);
      else if (res.status == 413)
        send_error(res, Error(errc::invalid_request, "request body too large"), 413);
      else if (res.status >= 400)
        send_error(res, Error(errc::invalid_request, "request rejected"), res.status);
    });

    server.Post("/sessions", wrap([this](const auto& req, auto& res) { create_session(req, res); }));
    server.Get(R"(/sessions/([^/]+))", wrap([this](const auto& req, auto& res) {
                 send_json(res, session_view(rt_.load_session(req.matches[1].str())));
               }));
    server.Post(R"(/sessions/([^/]+)/message)", wrap([this](const auto& req, auto& res) {
                  auto event = session::event_from_json(parse_body(req));
                  handle_event(req.matches[1].str(), std::move(event), res);
                }));
    server.Post(R"(/sessions/([^/]+)/execute)", wrap([this](const auto& req, auto& res) {
                  const auto body = parse_body(req);
                  if (!body.is_object()) throw Error(errc::invalid_request, "request body must be a JSON object");
                  auto event = session::Event::of(session::EventKind::execute);
                  try {
                    if (body.contains("args")) event.args = plugins::args_from_json(body["args"]);
                  } catch (const nlohmann::json::exception& e) {
                    throw Error(errc::invalid_request, std::string("malformed args: ") + e.what());
                  }
                  handle_event(req.matches[1].str(), std::move(event), res);
                }));
    server.Get(R"(/docs/([^/]+))", wrap([this](const auto& req, auto& res) { get_doc(req, res); }));
    server.Get(R"(/docs/assets/([^/]+))", wrap([this](const auto& req, auto& res) { get_asset(req, res); }));
    server.Get("/plugins", wrap([this](const auto& req, auto& res) { list_plugins(req, res); }));
    server.Post("/plugins", wrap([this](const auto& req, auto& res) { add_plugin(req, res); }));
    server.Get(R"(/workspace/([^/]+))", wrap([this](const auto& req, auto& res) { get_workspace(req, res); }));
    server.Get(R"(/executions/([^/]+))", wrap([this](const auto& req, auto& res) { get_execution(req, res); }));
    server.Get("/taxonomy", wrap([this](const auto& req, auto& res) { get_taxonomy(req, res); }));
  }

  /// Blocks until background executions finish (tests use this).
  void drain() {
    std::list<std::jthread> workers;
    {
      std::lock_guard lock(workers_mutex_);
      workers.swap(workers_);
    }
  }

  static void send_json(httplib::Response& res, const nlohmann::json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, const Error& e, std::optional<int> status = std::nullopt) {
    send_json(res, e.to_json(), status.value_or(http_status(e.code())));
  }

 private:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static httplib::Server::Handler wrap(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const std::exception& e) {
        send_error(res, Error(errc::internal_error, e.what()));
      }
    };
  }

  static nlohmann::json parse_body(const httplib::Request& req) {
    if (text::is_blank(req.body)) return nlohmann::json::object();
    try {
      return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(errc::invalid_request, std::string("request body is not valid JSON: ") + e.what());
    }
  }

  static Language query_language(const httplib::Request& req, Language fallback) {
    return req.has_param("language") ? parse_language(req.get_param_value("language")) : fallback;
  }

  // Per-session serialization --------------------------------------------

  class BusyGuard {
   public:
    BusyGuard(Service& s, std::string id) : service_(&s), id_(std::move(id)) {
      std::lock_guard lock(s.busy_mutex_);
      if (!s.busy_.insert(id_).second)
        throw Error(errc::session_busy, "session '" + id_ + "' is handling another request",
                    {{"session_id", id_}});
    }
    BusyGuard(BusyGuard&& o) noexcept : service_(std::exchange(o.service_, nullptr)), id_(std::move(o.id_)) {}
    BusyGuard(const BusyGuard&) = delete;
    BusyGuard& operator=(const BusyGuard&) = delete;
    BusyGuard& operator=(BusyGuard&&) = delete;
    ~BusyGuard() {
      if (!service_) return;
      std::lock_guard lock(service_->busy_mutex_);
      service_->busy_.erase(id_);
    }

   private:
    Service* service_;
    std::string id_;
  };

  // Handlers -------------------------------------------------------------

  void create_session(const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    if (!body.is_object()) throw Error(errc::invalid_request, "request body must be a JSON object");
    auto lang = rt_.config().language;
    if (body.contains("language")) {
      if (!body["language"].is_string()) throw Error(errc::invalid_request, "language must be a string");
      lang = parse_language(body["language"].get<std::string>());
    }
    auto s = rt_.engine().create_session(lang);
    rt_.save_session(s);
    auto out = session_view(s);
    out["session_id"] = s.session_id;
    send_json(res, out, 201);
  }

  void handle_event(const std::string& session_id, session::Event event, httplib::Response& res) {
    BusyGuard guard(*this, session_id);
    auto current = rt_.load_session(session_id);
    auto& engine = rt_.engine();
    event = engine.normalize(std::move(event));

    if (event.kind == session::EventKind::execute && is_async(current)) {
      StepResult started{current, {}};
      started.session.turns.push_back({llm::Role::user, "[execute] " + plugins::to_json(event.args).dump()});
      const auto exec_id = engine.begin_execution(started.session);
      rt_.save_session(started.session);
      {
        std::lock_guard lock(pending_mutex_);
        pending_.insert(exec_id);
      }
      auto out = session_view(started.session);
      out["exec_id"] = exec_id;
      out["replies"] = nlohmann::json::array();
      send_json(res, out, 202);
      launch([this, g = std::move(guard), s = std::move(started), exec_id, args = event.args]() mutable {
        try {
          rt_.engine().finish_execution(s, exec_id, args);
        } catch (const Error& e) {
          // Only plugin_not_found can escape (the plugin vanished); fall back
          // to the phase before the command.
          s.session.phase = s.session.return_phase.value_or(session::Phase::idle);
          s.session.turns.push_back({llm::Role::assistant, e.what()});
        }
        rt_.save_session(s.session);
        std::lock_guard lock(pending_mutex_);
        pending_.erase(exec_id);
      });
      return;
    }

    auto result = engine.step(current, event);
    rt_.save_session(result.session);
    auto out = session_view(result.session);
    auto replies = nlohmann::json::array();
    for (const auto& r : result.replies) replies.push_back(to_json(r));
    out["replies"] = replies;
    send_json(res, out);
  }

  bool is_async(const session::Session& s) {
    if (s.phase != session::Phase::eliciting || !s.recommendation || !s.recommendation->chosen) return false;
    auto registry = rt_.registry().snapshot();
    const auto* m = registry->find(*s.recommendation->chosen);
    return m && m->binding == plugins::Binding::subprocess;
  }

  template <class F>
  void launch(F&& f) {
    std::lock_guard lock(workers_mutex_);
    workers_.emplace_back(std::forward<F>(f));
  }

  void get_doc(const httplib::Request& req, httplib::Response& res) {
    const auto id = req.matches[1].str();
    auto doc = rt_.documents().get(id);
    if (!doc) throw Error(errc::doc_not_found, "no document '" + id + "'", {{"doc_id", id}});
    res.set_content(doc->html, "text/html; charset=utf-8");
  }

  // Documents link images as "assets/<lang>-<name>", which a browser
  // resolves against /docs/.
  void get_asset(const httplib::Request& req, httplib::Response& res) {
    const auto target = "assets/" + req.matches[1].str();
    for (auto lang : kAllLanguages)
      for (const auto& id : rt_.fragments().ids(lang))
        for (const auto& a : rt_.fragments().find(id, lang)->assets)
          if (a.target == target) {
            res.set_content(read_text_file(a.source),
                            httplib::detail::find_content_type(a.source, {}, "application/octet-stream"));
            return;
          }
    throw Error(errc::not_found, "no asset '" + target + "'", {{"asset", target}});
  }

  void list_plugins(const httplib::Request& req, httplib::Response& res) {
    const auto lang = query_language(req, rt_.config().language);
    auto registry = rt_.registry().snapshot();
    auto list = nlohmann::json::array();
    for (const auto& row : plugins::list_plugins(*registry, lang)) {
      auto m = plugins::to_json(plugins::lookup_plugin(*registry, row.plugin_id));
      m["display"] = row.display_name;
      m["describe"] = row.description;
      list.push_back(m);
    }
    send_json(res, {{"version", registry->version}, {"plugins", list}});
  }

  void add_plugin(const httplib::Request& req, httplib::Response& res) {
    plugins::PluginManifest m;
    const auto type = req.get_header_value("Content-Type");
    if (type.rfind("text/plain", 0) == 0)
      m = plugins::parse_manifest(req.body, "<request>", plugins::Origin::user_defined);
    else
      m = plugins::manifest_from_json(parse_body(req), plugins::Origin::user_defined);
    const auto id = m.plugin_id;
    auto registry = rt_.add_plugin(std::move(m));
    send_json(res, {{"version", registry->version}, {"manifest", plugins::to_json(*registry->find(id))}}, 201);
  }

  void get_workspace(const httplib::Request& req, httplib::Response& res) {
    const auto id = req.matches[1].str();
    rt_.load_session(id);  // 404 for unknown sessions
    auto& workspace = rt_.workspaces().get(id);
    std::lock_guard lock(workspace.lock());
    const auto& st = workspace.state();
    auto items = nlohmann::json::object();
    for (const auto& [item_id, item] : st.items) items[item_id] = ws::to_json(item);
    send_json(res, {{"session_id", id},
                    {"version", st.version},
                    {"dirty", st.dirty},
                    {"serialized", workspace.serialized()},
                    {"items", items}});
  }

  void get_execution(const httplib::Request& req, httplib::Response& res) {
    const auto id = req.matches[1].str();
    if (auto rec = rt_.executions().find(id)) return send_json(res, exec::to_json(*rec));
    {
      std::lock_guard lock(pending_mutex_);
      if (pending_.count(id)) return send_json(res, {{"exec_id", id}, {"status", "running"}});
    }
    throw Error(errc::execution_not_found, "no execution '" + id + "'", {{"exec_id", id}});
  }

  void get_taxonomy(const httplib::Request& req, httplib::Response& res) {
    const auto lang = query_language(req, rt_.config().language);
    auto taxonomy = rt_.taxonomy().current();
    auto mains = nlohmann::json::array();
    for (const auto& m : taxonomy->main_tasks) {
      auto subs = nlohmann::json::array();
      for (const auto& s : m.subtasks)
        subs.push_back({{"id", s.id}, {"title", s.title(lang)}, {"fragments", s.fragment_ids}});
      mains.push_back({{"id", m.id}, {"title", m.title(lang)}, {"description", m.description}, {"subtasks", subs}});
    }
    send_json(res, {{"version", taxonomy->version}, {"main_tasks", mains}});
  }

  Runtime& rt_;
  std::mutex busy_mutex_;
  std::set<std::string> busy_;
  std::mutex pending_mutex_;
  std::set<std::string> pending_;
  std::mutex workers_mutex_;
  std::list<std::jthread> workers_;
};

}  // namespace helmsman::api
