#pragma once

// Admin command line: ingest, validate, chat, serve, config.
//
// Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
//
// Chat script format (`chat --script FILE`), one directive per line:
//
//   # comment
//   backend happy.rules      scripted backend rules, relative to this file
//   language en
//   > How do I place a footprint?
//   > :confirm footprints
//
// Chat input (from `> ` lines, --input or stdin):
//
//   plain text                 message (a `/do ...` message is a command)
//   :confirm <id>              confirm the offered main task or subtask
//   :reject <id>[,<id>] | why  reject offered ids with a reason
//   :view                      show the active tailored document outline
//   :accept-reroute            start a new task search after a bottleneck
//   :decline-reroute
//   :plugin <id> [--override]  choose a recommended plugin
//   :exec k=v k="v w" ...      run the chosen plugin
//   :cancel
//   :state                     phase and workspace version
//   :workspace                 serialized workspace
//   :quit

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>

#include "helmsman/app.hpp"
#include "helmsman/config.hpp"
#include "helmsman/doc_corpus.hpp"
#include "helmsman/engine.hpp"
#include "helmsman/service.hpp"

namespace helmsman::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline void print_error(std::ostream& err, const Error& e) {
  err << "error: " << e.code() << ": " << e.what() << "\n";
}

// ---------------------------------------------------------------------------
// Chat scripts and input lines

struct ChatScript {
  std::optional<std::filesystem::path> backend;
  std::optional<Language> language;
  std::vector<std::string> inputs;
};

inline ChatScript parse_chat_script(std::string_view content, const std::filesystem::path& base,
                                    std::string_view source = "<chat script>") {
  ChatScript script;
  int line_no = 0;
  for (const auto& raw : text::split_lines(content)) {
    ++line_no;
    auto fail = [&](const std::string& what) {
      return Error(errc::parse_error, std::string(source) + ":" + std::to_string(line_no) + ": " + what,
                   {{"source", std::string(source)}, {"line", line_no}});
    };
    std::string_view line = raw;
    if (line.substr(0, 2) == "> ") {
      script.inputs.emplace_back(line.substr(2));
      continue;
    }
    if (line == ">") {
      script.inputs.emplace_back();
      continue;
    }
    line = text::trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto space = line.find(' ');
    const auto word = line.substr(0, space);
    const auto rest = space == std::string_view::npos ? std::string_view() : text::trim(line.substr(space + 1));
    if (word == "backend" && !rest.empty()) {
      if (script.backend) throw fail("duplicate backend directive");
      script.backend = (base / std::string(rest)).lexically_normal();
    } else if (word == "language" && !rest.empty()) {
      if (script.language) throw fail("duplicate language directive");
      try {
        script.language = parse_language(rest);
      } catch (const Error& e) {
        throw fail(e.what());
      }
    } else {
      throw fail("expected '> input', 'backend <file>' or 'language <en|zh>'");
    }
  }
  return script;
}

/// Splits on whitespace; double quotes group words and `\"` escapes a quote.
inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  bool in_word = false;
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (quoted) {
      if (c == '\\' && i + 1 < s.size() && (s[i + 1] == '"' || s[i + 1] == '\\'))
        cur += s[++i];
      else if (c == '"')
        quoted = false;
      else
        cur += c;
    } else if (c == '"') {
      quoted = in_word = true;
    } else if (text::is_space(c)) {
      if (in_word) out.push_back(std::exchange(cur, {}));
      in_word = false;
    } else {
      cur += c;
      in_word = true;
    }
  }
  if (quoted) throw Error(errc::invalid_request, "unterminated quote");
  if (in_word) out.push_back(cur);
  return out;
}

inline plugins::ArgMap parse_exec_args(std::string_view s) {
  plugins::ArgMap args;
  for (const auto& word : split_words(s)) {
    const auto eq = word.find('=');
    if (eq == std::string::npos || eq == 0)
      throw Error(errc::invalid_request, "expected key=value, got '" + word + "'");
    args.insert_or_assign(word.substr(0, eq), plugins::ArgValue(word.substr(eq + 1)));
  }
  return args;
}

enum class LocalAction { none, view, state, workspace, quit };

struct ParsedInput {
  std::optional<session::Event> event;
  LocalAction local = LocalAction::none;
};

/// Maps one chat input line to an engine event or a local display action.
inline ParsedInput parse_chat_input(std::string_view line, const session::Session& s) {
  using session::EventKind;
  using session::Phase;
  ParsedInput p;
  const auto trimmed = text::trim(line);
  if (trimmed.empty() || trimmed.front() != ':') {
    p.event = session::Event::message(std::string(trimmed));
    return p;
  }
  const auto space = trimmed.find(' ');
  const auto cmd = trimmed.substr(0, space);
  const auto rest = space == std::string_view::npos ? std::string_view() : text::trim(trimmed.substr(space + 1));
  auto need_arg = [&] {
    if (rest.empty()) throw Error(errc::invalid_request, std::string(cmd) + " needs an argument");
  };
  if (cmd == ":confirm") {
    need_arg();
    p.event = session::Event::of(s.phase == Phase::routing_sub ? EventKind::confirm_sub : EventKind::confirm_main,
                                 {std::string(rest)});
  } else if (cmd == ":reject") {
    need_arg();
    const auto bar = rest.find('|');
    const auto id_part = text::trim(rest.substr(0, bar));
    const auto reason = bar == std::string_view::npos ? std::string_view() : text::trim(rest.substr(bar + 1));
    std::vector<std::string> ids;
    for (auto id : text::split(id_part, ','))
      if (!text::is_blank(id)) ids.emplace_back(text::trim(id));
    p.event = session::Event::of(s.phase == Phase::routing_sub ? EventKind::reject_sub : EventKind::reject_main,
                                 std::move(ids), std::string(reason));
  } else if (cmd == ":accept-reroute") {
    p.event = session::Event::of(EventKind::accept_reroute);
  } else if (cmd == ":decline-reroute") {
    p.event = session::Event::of(EventKind::decline_reroute);
  } else if (cmd == ":plugin") {
    need_arg();
    auto words = split_words(rest);
    auto e = session::Event::of(EventKind::confirm_plugin, {words.front()});
    for (std::size_t i = 1; i < words.size(); ++i) {
      if (words[i] != "--override") throw Error(errc::invalid_request, "unknown :plugin flag '" + words[i] + "'");
      e.override_choice = true;
    }
    p.event = std::move(e);
  } else if (cmd == ":exec") {
    auto e = session::Event::of(EventKind::execute);
    e.args = parse_exec_args(rest);
    p.event = std::move(e);
  } else if (cmd == ":cancel") {
    p.event = session::Event::of(EventKind::cancel);
  } else if (cmd == ":view") {
    p.local = LocalAction::view;
  } else if (cmd == ":state") {
    p.local = LocalAction::state;
  } else if (cmd == ":workspace") {
    p.local = LocalAction::workspace;
  } else if (cmd == ":quit") {
    p.local = LocalAction::quit;
  } else {
    throw Error(errc::invalid_request, "unknown chat command '" + std::string(cmd) + "'");
  }
  return p;
}

/// Drives a session line by line and writes a deterministic transcript.
class ChatDriver {
 public:
  ChatDriver(Runtime& rt, Language lang, std::ostream& out) : rt_(rt), out_(out) {
    session_ = rt_.engine().create_session(lang);
    out_ << "# session " << session_.session_id << " (" << to_string(lang) << ")\n";
  }

  const session::Session& session() const { return session_; }

  /// Returns false after :quit.
  bool feed(std::string_view line) {
    out_ << "> " << line << "\n";
    ParsedInput input;
    try {
      input = parse_chat_input(line, session_);
      if (input.local == LocalAction::quit) return false;
      if (input.local != LocalAction::none) {
        show(input.local);
        return true;
      }
      auto result = rt_.engine().step(session_, *input.event);
      session_ = std::move(result.session);
      for (const auto& r : result.replies) out_ << "[" << r.kind << "] " << r.text << "\n";
    } catch (const Error& e) {
      out_ << "! " << e.code() << ": " << e.what() << "\n";
    }
    out_ << "= " << session::to_string(session_.phase) << "\n";
    if (auto* manual = dynamic_cast<ManualClock*>(&rt_.clock())) manual->advance(std::chrono::seconds(1));
    return true;
  }

  void run(std::istream& in) {
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!feed(line)) break;
    }
  }

 private:
  void show(LocalAction action) {
    switch (action) {
      case LocalAction::view: {
        auto doc = rt_.engine().active_document(session_);
        out_ << "[view] " << doc->doc_id << " (" << to_string(doc->language) << ", " << doc->html.size()
             << " bytes, sha256 " << text::sha256_hex(doc->html).substr(0, 16) << ")\n";
        for (const auto& id : doc->fragment_ids) {
          const auto* f = rt_.fragments().find(id, doc->language);
          out_ << "  " << id << ": " << (f ? f->title : std::string("?")) << "\n";
        }
        break;
      }
      case LocalAction::state: {
        auto& workspace = rt_.workspaces().get(session_.session_id);
        std::lock_guard lock(workspace.lock());
        out_ << "[state] phase " << session::to_string(session_.phase) << ", workspace version "
             << workspace.state().version << "\n";
        break;
      }
      case LocalAction::workspace: {
        auto& workspace = rt_.workspaces().get(session_.session_id);
        std::lock_guard lock(workspace.lock());
        out_ << "[workspace]\n" << workspace.serialized();
        break;
      }
      default: break;
    }
    out_ << "= " << session::to_string(session_.phase) << "\n";
  }

  Runtime& rt_;
  std::ostream& out_;
  session::Session session_;
};

// ---------------------------------------------------------------------------
// Subcommands

struct Options {
  std::optional<std::string> config;
  // ingest
  std::string ingest_language = "all";
  std::optional<std::string> ingest_out;
  // chat
  std::optional<std::string> script;
  std::optional<std::string> backend_rules;
  std::optional<std::string> input;
  std::optional<std::string> language;
  // serve
  std::optional<std::string> host;
  std::optional<int> port;
};

inline std::optional<std::filesystem::path> config_path(const Options& o) {
  if (o.config) return std::filesystem::path(*o.config);
  if (auto env = process_env("HELMSMAN_CONFIG")) return std::filesystem::path(*env);
  return std::nullopt;
}

inline int print_report(const DataReport& report, std::ostream& out, std::ostream& err) {
  if (!report.ok()) {
    for (const auto& e : report.errors) print_error(err, e);
    err << report.errors.size() << " problem(s) found\n";
    return kExitFailure;
  }
  const auto& d = *report.data;
  out << "ok: " << d.taxonomy.main_tasks.size() << " main tasks, " << d.taxonomy.subtask_count() << " subtasks, "
      << d.fragments.ids(Language::en).size() << " fragments per language, " << d.registry.manifests.size()
      << " plugins, " << d.seed.items.size() << " workspace items\n";
  return kExitOk;
}

inline int cmd_validate(const Config& config, std::ostream& out, std::ostream& err) {
  return print_report(load_data(config, exec::BuiltinCatalog::bundled()), out, err);
}

inline int cmd_ingest(const Config& config, const Options& o, std::ostream& out, std::ostream& err) {
  std::vector<Language> langs;
  if (o.ingest_language == "all")
    langs.assign(kAllLanguages.begin(), kAllLanguages.end());
  else
    langs.push_back(parse_language(o.ingest_language));
  int status = kExitOk;
  for (auto lang : langs) {
    try {
      const auto fragments = docs::ingest(config.corpus / std::string(to_string(lang)), lang);
      out << to_string(lang) << ": " << fragments.size() << " fragments\n";
      auto list = nlohmann::json::array();
      for (const auto& f : fragments) {
        out << "  " << f.id << "  " << f.source_ref << "  " << f.checksum.substr(0, 12) << "\n";
        list.push_back({{"id", f.id},
                        {"language", to_string(f.language)},
                        {"title", f.title},
                        {"source_ref", f.source_ref},
                        {"checksum", f.checksum},
                        {"body_html", f.body_html}});
      }
      if (o.ingest_out) {
        std::filesystem::create_directories(*o.ingest_out);
        write_file_atomic(std::filesystem::path(*o.ingest_out) / ("fragments." + std::string(to_string(lang)) + ".json"),
                          list.dump(2) + "\n");
      }
    } catch (const Error& e) {
      print_error(err, e);
      status = kExitFailure;
    }
  }
  return status;
}

inline int cmd_chat(Config config, const Options& o, std::istream& in, std::ostream& out, std::ostream& err) {
  std::optional<ChatScript> script;
  if (o.script) {
    const std::filesystem::path path(*o.script);
    script = parse_chat_script(read_text_file(path), std::filesystem::absolute(path).parent_path(), path.string());
  }
  if (o.backend_rules)
    config.backend.script_path = *o.backend_rules;
  else if (script && script->backend)
    config.backend.script_path = script->backend->string();
  config.backend.kind = llm::BackendKind::scripted;

  auto lang = config.language;
  if (script && script->language) lang = *script->language;
  if (o.language) lang = parse_language(*o.language);

  auto report = load_data(config, exec::BuiltinCatalog::bundled());
  if (!report.ok()) return print_report(report, out, err);
  Runtime::Options ro;
  ro.persistent = false;
  ro.clock = std::make_unique<ManualClock>();
  ro.ids = std::make_unique<SequentialIds>();
  Runtime rt(config, std::move(*report.data), std::move(ro));

  ChatDriver driver(rt, lang, out);
  if (o.input) {
    std::ifstream file(*o.input, std::ios::binary);
    if (!file) throw Error(errc::io_error, "cannot open " + *o.input, {{"path", *o.input}});
    driver.run(file);
  } else if (script) {
    for (const auto& line : script->inputs)
      if (!driver.feed(line)) break;
  } else {
    driver.run(in);
  }
  return kExitOk;
}

inline int cmd_serve(Config config, const Options& o, std::ostream& out, std::ostream& err) {
  if (o.host) config.server.host = *o.host;
  if (o.port) config.server.port = *o.port;
  auto report = load_data(config, exec::BuiltinCatalog::bundled());
  if (!report.ok()) return print_report(report, out, err);
  Runtime rt(config, std::move(*report.data), {});
  api::Service service(rt);
  httplib::Server server;
  service.mount(server);

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  std::jthread stopper([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });

  int port = config.server.port;
  if (port == 0) {
    port = server.bind_to_any_port(config.server.host);
  } else if (!server.bind_to_port(config.server.host, port)) {
    port = -1;
  }
  if (port < 0) {
    err << "error: io_error: cannot listen on " << config.server.host << ":" << config.server.port << "\n";
    pthread_kill(stopper.native_handle(), SIGTERM);
    return kExitFailure;
  }
  out << "listening on http://" << config.server.host << ":" << port << std::endl;
  server.listen_after_bind();
  pthread_kill(stopper.native_handle(), SIGTERM);  // no-op if a signal already stopped us
  return kExitOk;
}

inline int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"helmsman: task-routing documentation assistant and plugin runner"};
  app.name("helmsman");
  app.require_subcommand(1);
  Options o;
  app.add_option("-c,--config", o.config, "JSON config file (default: $HELMSMAN_CONFIG)");

  auto* ingest = app.add_subcommand("ingest", "Split the HTML corpus into fragments and report them");
  ingest->add_option("-l,--language", o.ingest_language, "en, zh or all")
      ->check(CLI::IsMember({"en", "zh", "all"}));
  ingest->add_option("-o,--out", o.ingest_out, "Write fragments.<lang>.json here");

  auto* validate = app.add_subcommand("validate", "Cross-check taxonomy, corpus, plugins and seed workspace");

  auto* chat = app.add_subcommand("chat", "Headless chat against the scripted backend");
  chat->add_option("-s,--script", o.script, "Chat script: backend, language and '> ' input lines");
  chat->add_option("-b,--backend", o.backend_rules, "Scripted backend rules (overrides the script and config)");
  chat->add_option("-i,--input", o.input, "Read chat input lines from this file instead of the script or stdin");
  chat->add_option("-l,--language", o.language, "Session language")->check(CLI::IsMember({"en", "zh"}));

  auto* serve = app.add_subcommand("serve", "Run the HTTP JSON API");
  serve->add_option("--host", o.host, "Listen address (overrides config)");
  serve->add_option("-p,--port", o.port, "Listen port, 0 for any (overrides config)");

  auto* show = app.add_subcommand("config", "Print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*show) {
      out << merged_config_json(config_path(o), process_env).dump(2) << "\n";
      return kExitOk;
    }
    auto config = load_config(config_path(o));
    if (*ingest) return cmd_ingest(config, o, out, err);
    if (*validate) return cmd_validate(config, out, err);
    if (*chat) return cmd_chat(config, o, in, out, err);
    if (*serve) return cmd_serve(config, o, out, err);
  } catch (const Error& e) {
    print_error(err, e);
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << errc::internal_error << ": " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace helmsman::cli
