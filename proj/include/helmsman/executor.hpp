#pragma once

// Argument elicitation and plugin execution against a workspace.
//
// Builtins run in-process on a copy of the workspace state; subprocess
// plugins run in a fresh jail directory holding `workspace.ws`, which they
// may rewrite. Either way the result is diffed against the pre-state, and a
// failed or rejected run leaves the workspace exactly as it was.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "helmsman/clock.hpp"
#include "helmsman/error.hpp"
#include "helmsman/io.hpp"
#include "helmsman/jail.hpp"
#include "helmsman/plugin_registry.hpp"
#include "helmsman/text.hpp"
#include "helmsman/workspace.hpp"

namespace helmsman::exec {

// ---------------------------------------------------------------------------
// Elicitation

struct ElicitationPrompt {
  std::string name;
  plugins::ParamKind kind = plugins::ParamKind::string;
  bool required = false;
  std::string unit;
  std::optional<plugins::ArgValue> default_value;
  std::vector<std::string> allowed_values;
  std::string description;
  bool operator==(const ElicitationPrompt&) const = default;
};

struct ElicitationForm {
  std::string plugin_id;
  std::string display_name;
  std::vector<ElicitationPrompt> prompts;
  std::vector<plugins::InputExample> examples;
  bool operator==(const ElicitationForm&) const = default;

  bool ready() const {
    for (const auto& p : prompts)
      if (p.required && !p.default_value) return false;
    return true;
  }
};

inline ElicitationForm elicit(const plugins::PluginManifest& m, Language lang = Language::en) {
  ElicitationForm form{m.plugin_id, m.display(lang), {}, m.input_examples};
  for (const auto& p : m.parameters)
    form.prompts.push_back({p.name, p.kind, p.required, p.unit, p.default_value, p.allowed_values, p.description});
  return form;
}

inline nlohmann::json to_json(const ElicitationForm& f) {
  auto prompts = nlohmann::json::array();
  for (const auto& p : f.prompts)
    prompts.push_back({{"name", p.name},
                       {"kind", plugins::to_string(p.kind)},
                       {"required", p.required},
                       {"unit", p.unit},
                       {"default", p.default_value ? plugins::to_json(*p.default_value) : nlohmann::json(nullptr)},
                       {"allowed_values", p.allowed_values},
                       {"description", p.description}});
  auto examples = nlohmann::json::array();
  for (const auto& ex : f.examples)
    examples.push_back({{"values", plugins::to_json(ex.values)}, {"caption", ex.caption}});
  return {{"plugin_id", f.plugin_id}, {"display_name", f.display_name}, {"prompts", prompts}, {"examples", examples}};
}

// ---------------------------------------------------------------------------
// Records

enum class Outcome { ok, failed, rejected };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::ok: return "ok";
    case Outcome::failed: return "failed";
    case Outcome::rejected: return "rejected";
  }
  return "";
}

inline Outcome parse_outcome(std::string_view s) {
  if (s == "ok") return Outcome::ok;
  if (s == "failed") return Outcome::failed;
  if (s == "rejected") return Outcome::rejected;
  throw Error(errc::corrupt_record, "unknown outcome '" + std::string(s) + "'");
}

struct ExecutionRecord {
  std::string exec_id;
  std::string plugin_id;
  plugins::ArgMap args;
  Timestamp started_at{};
  Timestamp finished_at{};
  Outcome outcome = Outcome::ok;
  ws::Diff diff;
  std::string stdout_excerpt;
  std::optional<nlohmann::json> error;  // {code, message, details} unless ok
  std::int64_t version_before = 0;
  std::int64_t version_after = 0;

  bool operator==(const ExecutionRecord&) const = default;
};

inline nlohmann::json to_json(const ExecutionRecord& r) {
  return {{"exec_id", r.exec_id},
          {"plugin_id", r.plugin_id},
          {"args", plugins::to_json(r.args)},
          {"started_at", format_rfc3339(r.started_at)},
          {"finished_at", format_rfc3339(r.finished_at)},
          {"outcome", to_string(r.outcome)},
          {"diff", ws::to_json(r.diff)},
          {"stdout_excerpt", r.stdout_excerpt},
          {"error", r.error ? *r.error : nlohmann::json(nullptr)},
          {"version_before", r.version_before},
          {"version_after", r.version_after}};
}

inline ExecutionRecord execution_from_json(const nlohmann::json& j) {
  ExecutionRecord r;
  r.exec_id = j.at("exec_id").get<std::string>();
  r.plugin_id = j.at("plugin_id").get<std::string>();
  r.args = plugins::args_from_json(j.at("args"));
  r.started_at = parse_rfc3339(j.at("started_at").get<std::string>());
  r.finished_at = parse_rfc3339(j.at("finished_at").get<std::string>());
  r.outcome = parse_outcome(j.at("outcome").get<std::string>());
  r.diff = ws::diff_from_json(j.at("diff"));
  r.stdout_excerpt = j.at("stdout_excerpt").get<std::string>();
  if (!j.at("error").is_null()) r.error = j["error"];
  r.version_before = j.at("version_before").get<std::int64_t>();
  r.version_after = j.at("version_after").get<std::int64_t>();
  return r;
}

/// Append-only execution log, optionally mirrored to a JSON-lines file.
class ExecutionLog {
 public:
  ExecutionLog() = default;
  explicit ExecutionLog(std::filesystem::path path) : path_(std::move(path)) {
    if (!std::filesystem::exists(path_)) return;
    for (const auto& line : text::split_lines(read_text_file(path_))) {
      if (text::is_blank(line)) continue;
      try {
        auto r = execution_from_json(nlohmann::json::parse(line));
        index_[r.exec_id] = records_.size();
        records_.push_back(std::move(r));
      } catch (const nlohmann::json::exception& e) {
        throw Error(errc::corrupt_record, path_.string() + ": " + e.what());
      }
    }
  }

  void append(const ExecutionRecord& r) {
    std::unique_lock lock(mutex_);
    if (!path_.empty()) append_line(path_, to_json(r).dump());
    index_[r.exec_id] = records_.size();
    records_.push_back(r);
  }

  std::optional<ExecutionRecord> find(std::string_view exec_id) const {
    std::shared_lock lock(mutex_);
    auto it = index_.find(std::string(exec_id));
    if (it == index_.end()) return std::nullopt;
    return records_[it->second];
  }

  std::vector<ExecutionRecord> records() const {
    std::shared_lock lock(mutex_);
    return records_;
  }

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::vector<ExecutionRecord> records_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Builtins

/// Mutates the state in place and returns text for stdout_excerpt. Throwing
/// fails the execution.
using BuiltinFn = std::function<std::string(ws::WorkspaceState&, const plugins::ArgMap&)>;

class BuiltinCatalog {
 public:
  void add(std::string name, BuiltinFn fn) { builtins_[std::move(name)] = std::move(fn); }
  const BuiltinFn* find(std::string_view name) const {
    auto it = builtins_.find(std::string(name));
    return it == builtins_.end() ? nullptr : &it->second;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : builtins_) out.push_back(k);
    return out;
  }

  static BuiltinCatalog bundled();

 private:
  std::map<std::string, BuiltinFn> builtins_;
};

namespace detail {

inline const plugins::ArgValue* arg(const plugins::ArgMap& args, std::string_view name) {
  auto it = args.find(std::string(name));
  return it == args.end() ? nullptr : &it->second;
}

inline std::size_t set_on_kind(ws::WorkspaceState& s, ws::ItemKind kind, const std::string& key,
                               const std::string& value, const std::function<bool(const ws::Item&)>& filter = {}) {
  std::size_t n = 0;
  for (auto& [id, item] : s.items) {
    if (item.kind != kind || (filter && !filter(item))) continue;
    item.properties[key] = value;
    ++n;
  }
  return n;
}

}  // namespace detail

inline BuiltinCatalog BuiltinCatalog::bundled() {
  using plugins::value_text;
  BuiltinCatalog c;
  c.add("round-tracker", [](ws::WorkspaceState& s, const plugins::ArgMap& args) {
    std::size_t n = 0;
    const auto* radius = detail::arg(args, "radius_mil");
    for (auto& [id, item] : s.items) {
      if (item.kind != ws::ItemKind::track) continue;
      item.properties["corner_style"] = "rounded";
      if (radius) item.properties["corner_radius_mil"] = value_text(*radius);
      ++n;
    }
    return "rounded corners on " + std::to_string(n) + " tracks";
  });
  c.add("teardrop", [](ws::WorkspaceState& s, const plugins::ArgMap& args) {
    const auto* size = detail::arg(args, "size_percent");
    const auto pct = size ? std::get<std::int64_t>(*size) : 50;
    if (pct < 10 || pct > 100) throw Error(errc::builtin_failed, "size_percent must be between 10 and 100");
    std::size_t n = 0;
    for (auto& [id, item] : s.items) {
      if (item.kind != ws::ItemKind::pad) continue;
      item.properties["teardrop"] = "true";
      item.properties["teardrop_size_percent"] = std::to_string(pct);
      ++n;
    }
    return "teardrops on " + std::to_string(n) + " pads";
  });
  c.add("set-track-width", [](ws::WorkspaceState& s, const plugins::ArgMap& args) {
    const auto width = std::get<std::int64_t>(*detail::arg(args, "width_mil"));
    if (width <= 0 || width > 1000) throw Error(errc::builtin_failed, "width_mil must be between 1 and 1000");
    const auto* net = detail::arg(args, "net");
    const auto n = detail::set_on_kind(s, ws::ItemKind::track, "width_mil", std::to_string(width),
                                       [&](const ws::Item& item) {
                                         if (!net) return true;
                                         auto it = item.properties.find("net");
                                         return it != item.properties.end() && it->second == value_text(*net);
                                       });
    return "set width " + std::to_string(width) + " mil on " + std::to_string(n) + " tracks";
  });
  c.add("add-text", [](ws::WorkspaceState& s, const plugins::ArgMap& args) {
    const auto body = value_text(*detail::arg(args, "text"));
    if (text::is_blank(body)) throw Error(errc::builtin_failed, "text must not be blank");
    const auto* layer = detail::arg(args, "layer");
    std::size_t k = 1;
    while (s.items.count("text" + std::to_string(k))) ++k;
    const auto id = "text" + std::to_string(k);
    s.items[id] = {ws::ItemKind::text, {{"text", body}, {"layer", layer ? value_text(*layer) : "F.SilkS"}}};
    return "added " + id;
  });
  c.add("bom-export", [](ws::WorkspaceState& s, const plugins::ArgMap&) {
    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& [id, item] : s.items) {
      if (item.kind != ws::ItemKind::footprint) continue;
      auto v = item.properties.find("value");
      groups[v == item.properties.end() ? "?" : v->second].push_back(id);
    }
    std::string out = "value,qty,refs\n";
    for (const auto& [value, refs] : groups)
      out += value + "," + std::to_string(refs.size()) + "," + text::join(refs, " ") + "\n";
    return out;
  });
  return c;
}

// ---------------------------------------------------------------------------
// Executor

struct ExecutorConfig {
  std::chrono::milliseconds timeout{30000};
  std::filesystem::path jail_root = std::filesystem::temp_directory_path() / "helmsman-jails";
  std::size_t excerpt_limit = 2000;
  bool keep_jails = false;
};

inline constexpr std::string_view kWorkspaceFileName = "workspace.ws";

class Executor {
 public:
  Executor(BuiltinCatalog builtins, ExecutorConfig config, Clock& clock, IdSource& ids, ExecutionLog* log = nullptr)
      : builtins_(std::move(builtins)), config_(std::move(config)), clock_(clock), ids_(ids), log_(log) {}

  const ExecutorConfig& config() const { return config_; }
  std::string next_exec_id() { return ids_.next("exec"); }

  /// Runs one plugin. Throws only plugin_not_found; every other problem is
  /// reported in the returned record.
  ExecutionRecord execute(std::string_view plugin_id, const plugins::ArgMap& args, const plugins::Registry& registry,
                          ws::Workspace& workspace, std::optional<std::string> exec_id = std::nullopt) {
    const auto& manifest = plugins::lookup_plugin(registry, plugin_id);
    std::lock_guard lock(workspace.lock());

    ExecutionRecord rec;
    rec.exec_id = exec_id ? *exec_id : next_exec_id();
    rec.plugin_id = manifest.plugin_id;
    rec.args = args;
    rec.started_at = clock_.now();
    rec.version_before = rec.version_after = workspace.state().version;

    plugins::ArgMap normalized;
    try {
      normalized = plugins::validate_arguments(manifest, args);
      rec.args = normalized;
    } catch (const Error& e) {
      rec.outcome = Outcome::rejected;
      rec.error = e.to_json();
      return finish(std::move(rec));
    }

    const auto token = workspace.snapshot();
    try {
      const auto before = workspace.state();
      ws::WorkspaceState after = before;
      if (manifest.binding == plugins::Binding::builtin_sim) {
        const auto* fn = builtins_.find(manifest.command);
        if (!fn)
          throw Error(errc::unknown_builtin, "no builtin named '" + manifest.command + "'",
                      {{"builtin", manifest.command}});
        try {
          rec.stdout_excerpt = (*fn)(after, normalized);
        } catch (const Error&) {
          throw;
        } catch (const std::exception& e) {
          throw Error(errc::builtin_failed, std::string("builtin '") + manifest.command + "' failed: " + e.what());
        }
      } else {
        after = run_subprocess(manifest, normalized, before, rec);
      }
      after.version = before.version;
      after.dirty = before.dirty;
      rec.diff = ws::diff(before, after);
      if (!rec.diff.empty() || manifest.side_effects) {
        after.version = before.version + 1;
        after.dirty = true;
      }
      workspace.replace(std::move(after));
      workspace.release(token);
      rec.outcome = Outcome::ok;
      rec.version_after = workspace.state().version;
    } catch (const Error& e) {
      workspace.rollback(token);
      workspace.release(token);
      rec.outcome = Outcome::failed;
      rec.diff.clear();
      rec.error = e.to_json();
    }
    rec.stdout_excerpt = text::utf8_truncate(rec.stdout_excerpt, config_.excerpt_limit);
    return finish(std::move(rec));
  }

 private:
  ExecutionRecord finish(ExecutionRecord rec) {
    rec.finished_at = clock_.now();
    if (log_) log_->append(rec);
    return rec;
  }

  ws::WorkspaceState run_subprocess(const plugins::PluginManifest& manifest, const plugins::ArgMap& args,
                                    const ws::WorkspaceState& before, ExecutionRecord& rec) {
    namespace fs = std::filesystem;
    const auto dir = config_.jail_root / rec.exec_id;
    fs::remove_all(dir);
    fs::create_directories(dir);
    struct Cleanup {
      fs::path dir;
      bool keep;
      ~Cleanup() {
        std::error_code ec;
        if (!keep) fs::remove_all(dir, ec);
      }
    } cleanup{dir, config_.keep_jails};

    const auto ws_file = fs::absolute(dir / kWorkspaceFileName);
    write_file_atomic(ws_file, ws::serialize(before));
    jail::RunOptions opts;
    opts.command = plugins::substitute_command(manifest.command, args);
    opts.workdir = dir;
    opts.env["WORKSPACE_FILE"] = ws_file.string();
    opts.timeout = config_.timeout;
    const auto result = jail::run_jailed(opts);
    rec.stdout_excerpt = result.stdout_text;
    if (result.timed_out)
      throw Error(errc::timeout, "plugin '" + manifest.plugin_id + "' timed out",
                  {{"timeout_ms", config_.timeout.count()}});
    if (result.exit_code != 0)
      throw Error(errc::subprocess_failed,
                  "plugin '" + manifest.plugin_id + "' exited with status " + std::to_string(result.exit_code),
                  {{"exit_code", result.exit_code},
                   {"stderr", text::utf8_truncate(result.stderr_text, config_.excerpt_limit)}});
    try {
      return ws::parse_workspace(read_text_file(ws_file), kWorkspaceFileName);
    } catch (const Error& e) {
      throw Error(errc::subprocess_failed,
                  "plugin '" + manifest.plugin_id + "' left an unreadable workspace: " + e.what(),
                  {{"exit_code", 0}, {"stderr", text::utf8_truncate(result.stderr_text, config_.excerpt_limit)}});
    }
  }

  BuiltinCatalog builtins_;
  ExecutorConfig config_;
  Clock& clock_;
  IdSource& ids_;
  ExecutionLog* log_;
};

}  // namespace helmsman::exec
