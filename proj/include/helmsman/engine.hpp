#pragma once

// The conversation state machine. Engine::step() takes a session and an
// event and returns the next session plus the replies to show; the input
// session is never modified, so a failed step leaves nothing half-done.
//
//   idle --query--> routing_main --confirm_main--> routing_sub --confirm_sub--> viewing_doc
//   viewing_doc --question--> qa --bottleneck, accept_reroute--> routing_main
//   any phase --command--> recommending --confirm_plugin--> eliciting --execute--> (executing) --> prior phase
//
// A message that starts with the command prefix ("/do ") is a command.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "helmsman/clock.hpp"
#include "helmsman/doc_corpus.hpp"
#include "helmsman/error.hpp"
#include "helmsman/executor.hpp"
#include "helmsman/llm.hpp"
#include "helmsman/plugin_registry.hpp"
#include "helmsman/qa_engine.hpp"
#include "helmsman/recommender.hpp"
#include "helmsman/router.hpp"
#include "helmsman/session.hpp"
#include "helmsman/taxonomy.hpp"
#include "helmsman/workspace.hpp"

namespace helmsman {

/// One workspace per session, created from a seed state on first use and
/// optionally persisted as `<dir>/<session_id>.ws`.
class WorkspaceRegistry {
 public:
  explicit WorkspaceRegistry(ws::WorkspaceState seed, std::optional<std::filesystem::path> dir = std::nullopt)
      : seed_(std::move(seed)), dir_(std::move(dir)) {
    if (dir_) std::filesystem::create_directories(*dir_);
  }

  ws::Workspace& get(const std::string& session_id) {
    std::lock_guard lock(mutex_);
    auto it = workspaces_.find(session_id);
    if (it != workspaces_.end()) return *it->second;
    auto state = seed_;
    if (dir_) {
      const auto path = *dir_ / (session_id + ".ws");
      if (std::filesystem::exists(path)) state = ws::parse_workspace(read_text_file(path), path.string());
    }
    return *workspaces_.emplace(session_id, std::make_unique<ws::Workspace>(std::move(state))).first->second;
  }

  /// Callers hold the workspace lock.
  void persist(const std::string& session_id, const ws::Workspace& workspace) const {
    if (dir_) write_file_atomic(*dir_ / (session_id + ".ws"), workspace.serialized());
  }

 private:
  ws::WorkspaceState seed_;
  std::optional<std::filesystem::path> dir_;
  std::mutex mutex_;
  std::map<std::string, std::unique_ptr<ws::Workspace>> workspaces_;
};

struct EngineConfig {
  router::RouterConfig router;
  qa::QaConfig qa;
  recommend::Method recommend_method = recommend::Method::llm;
  std::size_t top_k = 3;
  std::string command_prefix = "/do";
};

struct EngineDeps {
  TaxonomyHolder& taxonomy;
  docs::FragmentStore& fragments;
  docs::DocumentCache& documents;
  llm::Backend& backend;
  plugins::PluginRegistry& registry;
  exec::Executor& executor;
  WorkspaceRegistry& workspaces;
  qa::AugmentationStore& notes;
  Clock& clock;
  IdSource& ids;
};

struct Reply {
  std::string kind;
  std::string text;
  nlohmann::json data = nlohmann::json::object();
};

inline nlohmann::json to_json(const Reply& r) { return {{"kind", r.kind}, {"text", r.text}, {"data", r.data}}; }

struct StepResult {
  session::Session session;
  std::vector<Reply> replies;
};

namespace detail {

inline std::string_view tr(Language lang, std::string_view en, std::string_view zh) {
  return lang == Language::zh ? zh : en;
}

}  // namespace detail

/// Events the session accepts in its current state; step() rejects the rest.
inline std::vector<session::EventKind> allowed_events(const session::Session& s) {
  using session::EventKind;
  using session::Phase;
  std::vector<EventKind> out;
  switch (s.phase) {
    case Phase::idle: out = {EventKind::message, EventKind::command}; break;
    case Phase::routing_main:
      out = {EventKind::message, EventKind::confirm_main, EventKind::reject_main, EventKind::command,
             EventKind::cancel};
      break;
    case Phase::routing_sub:
      out = {EventKind::message, EventKind::confirm_sub, EventKind::reject_sub, EventKind::command,
             EventKind::cancel};
      break;
    case Phase::viewing_doc: out = {EventKind::message, EventKind::command, EventKind::cancel}; break;
    case Phase::qa:
      out = {EventKind::message, EventKind::command, EventKind::cancel};
      if (s.pending_reroute) {
        out.push_back(EventKind::accept_reroute);
        out.push_back(EventKind::decline_reroute);
      }
      break;
    case Phase::recommending: out = {EventKind::confirm_plugin, EventKind::command, EventKind::cancel}; break;
    case Phase::eliciting: out = {EventKind::execute, EventKind::command, EventKind::cancel}; break;
    case Phase::executing: break;
  }
  return out;
}

class Engine {
 public:
  Engine(EngineDeps deps, EngineConfig config = {}) : d_(deps), config_(std::move(config)) {}

  const EngineConfig& config() const { return config_; }
  EngineDeps& deps() { return d_; }

  session::Session create_session(Language lang) {
    session::Session s;
    s.session_id = d_.ids.next("sess");
    s.language = lang;
    s.created_at = s.updated_at = d_.clock.now();
    return s;
  }

  /// Turns a command-prefixed message into a command event.
  session::Event normalize(session::Event e) const {
    if (e.kind == session::EventKind::message && is_command_text(e.text)) {
      e.kind = session::EventKind::command;
    }
    if (e.kind == session::EventKind::command) e.text = strip_command_prefix(e.text);
    return e;
  }

  StepResult step(const session::Session& current, const session::Event& raw_event) {
    using session::EventKind;
    using session::Phase;
    const auto event = normalize(raw_event);
    const auto allowed = allowed_events(current);
    if (std::find(allowed.begin(), allowed.end(), event.kind) == allowed.end())
      throw Error(errc::illegal_transition,
                  "event '" + std::string(session::to_string(event.kind)) + "' is not allowed in phase '" +
                      std::string(session::to_string(current.phase)) + "'",
                  {{"phase", session::to_string(current.phase)}, {"event", session::to_string(event.kind)}});

    StepResult r{current, {}};
    auto& s = r.session;
    record_user_turn(s, raw_event);

    switch (event.kind) {
      case EventKind::message:
        if (s.phase == Phase::idle || s.phase == Phase::routing_main)
          start_routing(r, event.text);
        else if (s.phase == Phase::routing_sub)
          refine_sub(r, event.text);
        else
          ask(r, event.text);
        break;
      case EventKind::confirm_main: confirm_main(r, single_id(event)); break;
      case EventKind::reject_main: reject(r, event, router::FeedbackScope::main); break;
      case EventKind::confirm_sub: confirm_sub(r, single_id(event)); break;
      case EventKind::reject_sub: reject(r, event, router::FeedbackScope::sub); break;
      case EventKind::accept_reroute: accept_reroute(r); break;
      case EventKind::decline_reroute:
        s.pending_reroute.reset();
        say(r, {"info", std::string(detail::tr(s.language, "Staying on the current topic.", "继续当前主题。"))});
        break;
      case EventKind::command: command(r, event.text); break;
      case EventKind::confirm_plugin: confirm_plugin(r, single_id(event), event.override_choice); break;
      case EventKind::execute: {
        auto exec_id = begin_execution(s);
        finish_execution(r, exec_id, event.args);
        break;
      }
      case EventKind::cancel: cancel(r); break;
    }
    s.updated_at = d_.clock.now();
    return r;
  }

  /// First half of an execute event: moves the session to `executing` and
  /// reserves the execution id. Used directly when the run is asynchronous.
  std::string begin_execution(session::Session& s) {
    if (s.phase != session::Phase::eliciting)
      throw Error(errc::illegal_transition,
                  "event 'execute' is not allowed in phase '" + std::string(session::to_string(s.phase)) + "'",
                  {{"phase", session::to_string(s.phase)}, {"event", "execute"}});
    s.phase = session::Phase::executing;
    s.updated_at = d_.clock.now();
    return d_.executor.next_exec_id();
  }

  /// Second half: runs the chosen plugin on the session's workspace.
  void finish_execution(StepResult& r, const std::string& exec_id, const plugins::ArgMap& args) {
    auto& s = r.session;
    const auto plugin_id = *s.recommendation->chosen;
    auto registry = d_.registry.snapshot();
    auto& workspace = d_.workspaces.get(s.session_id);
    auto record = d_.executor.execute(plugin_id, args, *registry, workspace, exec_id);
    {
      std::lock_guard lock(workspace.lock());
      d_.workspaces.persist(s.session_id, workspace);
    }
    s.executions.push_back(record.exec_id);
    if (record.outcome == exec::Outcome::rejected) {
      s.phase = session::Phase::eliciting;
    } else {
      s.phase = s.return_phase.value_or(session::Phase::idle);
      s.return_phase.reset();
      s.command_text.reset();
    }
    say(r, execution_reply(s.language, record));
    s.updated_at = d_.clock.now();
  }

  StepResult finish_execution(const session::Session& s, const std::string& exec_id, const plugins::ArgMap& args) {
    StepResult r{s, {}};
    finish_execution(r, exec_id, args);
    return r;
  }

  /// The tailored document of the session, re-stitched if it fell out of
  /// the cache.
  std::shared_ptr<const docs::TailoredDocument> active_document(const session::Session& s) {
    if (!s.active_doc) throw Error(errc::doc_not_found, "the session has no active document");
    if (auto doc = d_.documents.get(*s.active_doc)) return doc;
    if (s.routing && s.routing->confirmed_sub) {
      auto taxonomy = d_.taxonomy.current();
      if (const auto* sub = taxonomy->find_sub(*s.routing->confirmed_sub)) {
        auto doc = d_.documents.get_or_stitch(sub->fragment_ids, s.language, d_.fragments, d_.clock);
        if (doc->doc_id == *s.active_doc) return doc;
      }
    }
    throw Error(errc::doc_not_found, "document '" + *s.active_doc + "' is no longer available",
                {{"doc_id", *s.active_doc}});
  }

 private:
  // -------------------------------------------------------------------------
  // helpers

  bool is_command_text(std::string_view text) const {
    const auto t = text::trim(text);
    const std::string_view p = config_.command_prefix;
    return t.substr(0, p.size()) == p && (t.size() == p.size() || text::is_space(t[p.size()]));
  }

  std::string strip_command_prefix(std::string_view text) const {
    const auto t = text::trim(text);
    if (is_command_text(t)) return std::string(text::trim(t.substr(config_.command_prefix.size())));
    return std::string(t);
  }

  static std::string single_id(const session::Event& e) {
    if (e.ids.size() != 1)
      throw Error(errc::invalid_request, "event '" + std::string(session::to_string(e.kind)) + "' needs exactly one id");
    return e.ids.front();
  }

  static void record_user_turn(session::Session& s, const session::Event& e) {
    std::string text;
    switch (e.kind) {
      case session::EventKind::message:
      case session::EventKind::command: text = e.text; break;
      case session::EventKind::reject_main:
      case session::EventKind::reject_sub:
        text = "[" + std::string(session::to_string(e.kind)) + " " + text::join(e.ids, ",") + "] " + e.reason;
        break;
      case session::EventKind::execute: text = "[execute] " + plugins::to_json(e.args).dump(); break;
      default:
        text = "[" + std::string(session::to_string(e.kind)) + (e.ids.empty() ? "" : " " + text::join(e.ids, ",")) +
               "]";
    }
    if (!text::is_blank(text)) s.turns.push_back({llm::Role::user, text});
  }

  static void say(StepResult& r, Reply reply) {
    r.session.turns.push_back({llm::Role::assistant, reply.text});
    r.replies.push_back(std::move(reply));
  }

  // -------------------------------------------------------------------------
  // routing

  void start_routing(StepResult& r, const std::string& query) {
    auto& s = r.session;
    if (text::is_blank(query)) throw Error(errc::invalid_request, "message is empty");
    auto taxonomy = d_.taxonomy.current();
    s.routing = session::RoutingState{};
    s.routing->query = query;
    s.active_doc.reset();
    s.pending_reroute.reset();
    auto sel = router::select_main(query, *taxonomy, {}, 1, d_.backend, s.language, {}, config_.router);
    s.routing->main_candidates = sel.candidates;
    s.phase = session::Phase::routing_main;
    say(r, main_reply(s.language, *taxonomy, sel));
  }

  void routing_failed(StepResult& r, const Error& e) {
    auto& s = r.session;
    s.phase = session::Phase::idle;
    s.routing.reset();
    say(r, {"routing_failed",
             std::string(detail::tr(s.language, "Routing stopped: ", "路由已终止：")) + e.what(),
             e.to_json()});
  }

  void confirm_main(StepResult& r, const std::string& id) {
    auto& s = r.session;
    auto& routing = *s.routing;
    if (std::find(routing.main_candidates.begin(), routing.main_candidates.end(), id) ==
        routing.main_candidates.end())
      throw Error(errc::invalid_request, "'" + id + "' is not among the offered main tasks",
                  {{"id", id}, {"candidates", routing.main_candidates}});
    routing.confirmed_main = id;
    routing.sub_dialogue = {{llm::Role::user, routing.query}};
    s.phase = session::Phase::routing_sub;
    propose_sub(r);
  }

  void refine_sub(StepResult& r, const std::string& text) {
    if (text::is_blank(text)) throw Error(errc::invalid_request, "message is empty");
    r.session.routing->sub_dialogue.push_back({llm::Role::user, text});
    propose_sub(r);
  }

  void propose_sub(StepResult& r) {
    auto& s = r.session;
    auto& routing = *s.routing;
    auto taxonomy = d_.taxonomy.current();
    try {
      auto sel = router::select_sub(*routing.confirmed_main, routing.sub_dialogue, *taxonomy,
                                    routing.episode.rejected_sub, d_.backend, s.language, routing.episode.reasons);
      routing.sub_candidate = sel.subtask_id;
      say(r, sub_reply(s.language, *taxonomy, sel));
    } catch (const Error& e) {
      if (e.code() != errc::no_candidates_left) throw;
      routing_failed(r, e);
    }
  }

  void reject(StepResult& r, const session::Event& e, router::FeedbackScope scope) {
    auto& s = r.session;
    auto& routing = *s.routing;
    const auto& offered = scope == router::FeedbackScope::main
                              ? routing.main_candidates
                              : std::vector<std::string>(routing.sub_candidate ? 1 : 0, routing.sub_candidate.value_or(""));
    for (const auto& id : e.ids)
      if (std::find(offered.begin(), offered.end(), id) == offered.end())
        throw Error(errc::invalid_feedback, "'" + id + "' was not offered", {{"id", id}, {"offered", offered}});
    try {
      routing.episode = router::apply_feedback(routing.episode, {e.ids, e.reason, scope}, config_.router);
    } catch (const Error& err) {
      if (err.code() != errc::rounds_exhausted) throw;
      routing_failed(r, err);
      return;
    }
    if (scope == router::FeedbackScope::sub) {
      propose_sub(r);
      return;
    }
    auto taxonomy = d_.taxonomy.current();
    try {
      auto sel = router::select_main(routing.query, *taxonomy, routing.episode.rejected_main, routing.episode.round,
                                     d_.backend, s.language, routing.episode.reasons, config_.router);
      routing.main_candidates = sel.candidates;
      say(r, main_reply(s.language, *taxonomy, sel));
    } catch (const Error& err) {
      if (err.code() != errc::no_candidates_left) throw;
      routing_failed(r, err);
    }
  }

  void confirm_sub(StepResult& r, const std::string& id) {
    auto& s = r.session;
    auto& routing = *s.routing;
    if (routing.sub_candidate != id)
      throw Error(errc::invalid_request, "'" + id + "' is not the offered subtask", {{"id", id}});
    auto taxonomy = d_.taxonomy.current();
    const auto& sub = lookup_subtask(*taxonomy, id);
    auto doc = d_.documents.get_or_stitch(sub.fragment_ids, s.language, d_.fragments, d_.clock);
    routing.confirmed_sub = id;
    s.active_doc = doc->doc_id;
    s.phase = session::Phase::viewing_doc;
    std::string text = std::string(detail::tr(s.language, "Tailored documentation ready: ", "定制文档已生成：")) +
                       doc->doc_id + " (" + sub.title(s.language) + "; " + text::join(doc->fragment_ids, ", ") + ")";
    say(r, {"doc_ready", text,
            {{"doc_id", doc->doc_id}, {"subtask_id", id}, {"fragments", doc->fragment_ids}}});
  }

  // -------------------------------------------------------------------------
  // question answering

  void ask(StepResult& r, const std::string& text) {
    auto& s = r.session;
    if (text::is_blank(text)) throw Error(errc::invalid_request, "message is empty");
    s.pending_reroute.reset();
    if (auto signal = qa::detect_bottleneck({}, text, config_.qa)) {
      auto topic = std::string(text::trim(text::trim(text).substr(config_.qa.topic_marker.size())));
      s.phase = session::Phase::qa;
      bottleneck(r, *signal, topic);
      return;
    }
    auto doc = active_document(s);
    const auto context = docs::qa_context(*doc);
    auto exchange = qa::answer(text, context, d_.notes.records(), d_.backend, d_.clock, config_.qa);
    s.qa_history.push_back(exchange);
    s.phase = session::Phase::qa;
    say(r, {"answer", exchange.answer,
            {{"grounded", exchange.grounded}, {"cited_fragments", exchange.cited_fragments}}});
    const auto window = std::span(s.qa_history).subspan(std::min(s.qa_window_start, s.qa_history.size()));
    if (auto signal = qa::detect_bottleneck(window, text, config_.qa)) bottleneck(r, *signal, text);
  }

  void bottleneck(StepResult& r, const qa::BottleneckSignal& signal, const std::string& query) {
    auto& s = r.session;
    std::string topic_hint = s.routing && s.routing->confirmed_sub ? *s.routing->confirmed_sub : "";
    auto records = qa::augment_from_log(s.turns, d_.backend, d_.notes, s.session_id, topic_hint, d_.clock, config_.qa);
    std::vector<std::string> ids;
    for (const auto& rec : records) ids.push_back(rec.record_id);
    s.augmentations.insert(s.augmentations.end(), ids.begin(), ids.end());
    s.qa_window_start = s.qa_history.size();
    s.pending_reroute = session::PendingReroute{signal, query};
    std::string text = std::string(detail::tr(s.language, "Knowledge bottleneck (", "遇到知识瓶颈（")) +
                       std::string(qa::to_string(signal.kind)) + ": " + signal.evidence +
                       std::string(detail::tr(s.language, "). Learned ", "）。已学习 ")) +
                       std::to_string(records.size()) +
                       std::string(detail::tr(s.language, " note(s). Start a new task search?",
                                              " 条笔记。是否重新检索任务？"));
    say(r, {"bottleneck", text,
            {{"kind", qa::to_string(signal.kind)}, {"evidence", signal.evidence}, {"notes", ids}}});
  }

  void accept_reroute(StepResult& r) {
    auto& s = r.session;
    auto query = s.pending_reroute->query;
    if (text::is_blank(query) && !s.qa_history.empty()) query = s.qa_history.back().question;
    s.pending_reroute.reset();
    s.active_doc.reset();
    if (text::is_blank(query)) {
      s.phase = session::Phase::idle;
      s.routing.reset();
      say(r, {"info", std::string(detail::tr(s.language, "What would you like to do?", "您想做什么？"))});
      return;
    }
    start_routing(r, query);
  }

  // -------------------------------------------------------------------------
  // command flow

  void command(StepResult& r, const std::string& text) {
    auto& s = r.session;
    if (text::is_blank(text)) throw Error(errc::invalid_request, "command text is empty");
    std::string need = text;
    if (s.routing && s.routing->confirmed_sub) {
      auto taxonomy = d_.taxonomy.current();
      if (const auto* sub = taxonomy->find_sub(*s.routing->confirmed_sub)) need += " " + sub->title(s.language);
    }
    auto registry = d_.registry.snapshot();
    auto rec = recommend::recommend(need, *registry, &d_.backend, config_.recommend_method, config_.top_k, s.language);
    if (s.phase != session::Phase::recommending && s.phase != session::Phase::eliciting) s.return_phase = s.phase;
    s.command_text = text;
    s.recommendation = rec;
    s.phase = session::Phase::recommending;
    std::string out = std::string(detail::tr(s.language, "Recommended plugins:", "推荐插件："));
    auto ranked = nlohmann::json::array();
    for (const auto& p : rec.ranked) {
      const auto& m = plugins::lookup_plugin(*registry, p.plugin_id);
      char score[16];
      std::snprintf(score, sizeof score, "%.2f", p.score);
      out += "\n- " + p.plugin_id + " (" + score + "): " + m.display(s.language) + ". " + m.describe(s.language);
      ranked.push_back({{"plugin_id", p.plugin_id}, {"score", p.score}, {"display_name", m.display(s.language)}});
    }
    say(r, {"recommendation", out,
            {{"need", need}, {"method", recommend::to_string(rec.method)}, {"ranked", ranked}}});
  }

  void confirm_plugin(StepResult& r, const std::string& id, bool override_choice) {
    auto& s = r.session;
    auto registry = d_.registry.snapshot();
    const auto& manifest = plugins::lookup_plugin(*registry, id);
    s.recommendation = recommend::confirm(*s.recommendation, id, override_choice);
    s.phase = session::Phase::eliciting;
    const auto form = exec::elicit(manifest, s.language);
    say(r, {"elicitation", render_form(s.language, form), exec::to_json(form)});
  }

  void cancel(StepResult& r) {
    auto& s = r.session;
    using session::Phase;
    if (s.phase == Phase::recommending || s.phase == Phase::eliciting) {
      s.phase = s.return_phase.value_or(Phase::idle);
      s.return_phase.reset();
      s.command_text.reset();
    } else {
      s.phase = Phase::idle;
      s.routing.reset();
      s.active_doc.reset();
      s.pending_reroute.reset();
    }
    say(r, {"info", std::string(detail::tr(s.language, "Cancelled.", "已取消。"))});
  }

  // -------------------------------------------------------------------------
  // rendering

  static Reply main_reply(Language lang, const TaskTaxonomy& taxonomy, const router::MainSelection& sel) {
    std::string text = std::string(detail::tr(lang, "Main task candidates (round ", "主任务候选（第 ")) +
                       std::to_string(sel.round) + std::string(detail::tr(lang, "):", " 轮）："));
    auto candidates = nlohmann::json::array();
    for (const auto& id : sel.candidates) {
      const auto& m = lookup_main(taxonomy, id);
      text += "\n- " + id + ": " + m.title(lang);
      candidates.push_back({{"id", id}, {"title", m.title(lang)}, {"description", m.description}});
    }
    return {"main_candidates", text,
            {{"round", sel.round}, {"candidates", candidates}, {"lexical_fallback", sel.lexical_fallback}}};
  }

  static Reply sub_reply(Language lang, const TaskTaxonomy& taxonomy, const router::SubSelection& sel) {
    const auto& sub = lookup_subtask(taxonomy, sel.subtask_id);
    const auto& main = lookup_main(taxonomy, sel.main_id);
    std::string text = std::string(detail::tr(lang, "Suggested subtask of ", "建议的子任务（")) + main.title(lang) +
                       std::string(detail::tr(lang, ": ", "）：")) + sub.id + ": " + sub.title(lang);
    return {"sub_candidate", text,
            {{"main_id", sel.main_id},
             {"subtask_id", sub.id},
             {"title", sub.title(lang)},
             {"description", sub.description},
             {"lexical_fallback", sel.lexical_fallback}}};
  }

  static std::string render_form(Language lang, const exec::ElicitationForm& form) {
    std::string out = std::string(detail::tr(lang, "Parameters for ", "参数：")) + form.display_name + ":";
    if (form.prompts.empty()) out += std::string(detail::tr(lang, " none", " 无"));
    for (const auto& p : form.prompts) {
      out += "\n- " + p.name + " (" + std::string(plugins::to_string(p.kind));
      if (!p.unit.empty()) out += ", " + p.unit;
      out += p.required ? ", required" : ", optional";
      if (p.default_value) out += ", default " + plugins::value_text(*p.default_value);
      if (!p.allowed_values.empty()) out += ", one of " + text::join(p.allowed_values, "|");
      out += ")";
      if (!p.description.empty()) out += ": " + p.description;
    }
    if (!form.examples.empty()) out += std::string(detail::tr(lang, "\nExamples:", "\n示例："));
    for (const auto& ex : form.examples) {
      std::vector<std::string> pairs;
      for (const auto& [k, v] : ex.values) pairs.push_back(k + "=" + plugins::value_text(v));
      out += "\n- " + (ex.caption.empty() ? std::string() : ex.caption + ": ") + text::join(pairs, " ");
    }
    return out;
  }

  static Reply execution_reply(Language lang, const exec::ExecutionRecord& rec) {
    std::string text = std::string(detail::tr(lang, "Execution ", "执行 ")) + rec.exec_id + " (" + rec.plugin_id +
                       "): " + std::string(exec::to_string(rec.outcome));
    if (rec.outcome == exec::Outcome::ok) {
      text += ", " + std::to_string(rec.diff.size()) +
              std::string(detail::tr(lang, " item(s) changed, workspace version ", " 项变更，工作区版本 ")) +
              std::to_string(rec.version_before) + " -> " + std::to_string(rec.version_after);
      if (!text::is_blank(rec.stdout_excerpt)) text += "\n" + std::string(text::trim(rec.stdout_excerpt));
    } else if (rec.error) {
      text += ": " + rec.error->value("message", "");
    }
    return {"execution", text, exec::to_json(rec)};
  }

  EngineDeps d_;
  EngineConfig config_;
};

}  // namespace helmsman
