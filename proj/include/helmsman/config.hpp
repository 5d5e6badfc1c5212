#pragma once

// Service configuration: built-in defaults, then one JSON file, then
// HELMSMAN_* environment variables (env > file > defaults).
//
// File keys mirror kDefaults below; an unknown key is an error so typos do
// not pass silently. Relative paths in the file resolve against the file's
// directory, relative paths from the environment against the working
// directory.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "helmsman/engine.hpp"
#include "helmsman/error.hpp"
#include "helmsman/executor.hpp"
#include "helmsman/io.hpp"
#include "helmsman/language.hpp"
#include "helmsman/llm.hpp"
#include "helmsman/qa_engine.hpp"
#include "helmsman/recommender.hpp"
#include "helmsman/router.hpp"

namespace helmsman {

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::chrono::milliseconds request_timeout{35000};
  int threads = 8;
};

struct Config {
  std::filesystem::path taxonomy = "data/taxonomy.txt";
  std::filesystem::path corpus = "data/corpus";  // en/ and zh/ below it
  std::filesystem::path plugins = "data/plugins";
  std::filesystem::path workspace_seed = "data/workspace/seed.ws";
  std::filesystem::path state_dir = "state";
  Language language = Language::en;
  llm::BackendConfig backend;
  EngineConfig engine;
  exec::ExecutorConfig executor;
  ServerConfig server;
};

namespace detail {

inline const nlohmann::json& config_defaults() {
  static const nlohmann::json j = nlohmann::json::parse(R"json({
    "taxonomy": "data/taxonomy.txt",
    "corpus": "data/corpus",
    "plugins": "data/plugins",
    "workspace_seed": "data/workspace/seed.ws",
    "state_dir": "state",
    "language": "en",
    "backend": {"kind": "scripted", "script": null, "endpoint": null, "model": null,
                "api_key_env": null, "timeout_ms": 30000},
    "router": {"max_rounds": 3, "max_candidates": 3},
    "qa": {"unanswered_run": 3, "grounding_window": 5, "min_grounded_ratio": 0.4,
           "topic_marker": "/topic", "notes_budget": 2000, "max_notes": 5},
    "recommend": {"method": "llm", "top_k": 3, "command_prefix": "/do"},
    "executor": {"timeout_ms": 30000, "jail_root": null, "excerpt_limit": 2000, "keep_jails": false},
    "server": {"host": "127.0.0.1", "port": 8080, "request_timeout_ms": 35000, "threads": 8}
  })json");
  return j;
}

enum class EnvKind { string, path, integer, number, boolean };

struct EnvBinding {
  std::string_view name;
  std::string_view pointer;
  EnvKind kind;
};

inline constexpr EnvBinding kEnvBindings[] = {
    {"HELMSMAN_TAXONOMY", "/taxonomy", EnvKind::path},
    {"HELMSMAN_CORPUS", "/corpus", EnvKind::path},
    {"HELMSMAN_PLUGINS", "/plugins", EnvKind::path},
    {"HELMSMAN_WORKSPACE_SEED", "/workspace_seed", EnvKind::path},
    {"HELMSMAN_STATE_DIR", "/state_dir", EnvKind::path},
    {"HELMSMAN_LANGUAGE", "/language", EnvKind::string},
    {"HELMSMAN_BACKEND", "/backend/kind", EnvKind::string},
    {"HELMSMAN_SCRIPT", "/backend/script", EnvKind::path},
    {"HELMSMAN_ENDPOINT", "/backend/endpoint", EnvKind::string},
    {"HELMSMAN_MODEL", "/backend/model", EnvKind::string},
    {"HELMSMAN_API_KEY_ENV", "/backend/api_key_env", EnvKind::string},
    {"HELMSMAN_BACKEND_TIMEOUT_MS", "/backend/timeout_ms", EnvKind::integer},
    {"HELMSMAN_MAX_ROUNDS", "/router/max_rounds", EnvKind::integer},
    {"HELMSMAN_MAX_CANDIDATES", "/router/max_candidates", EnvKind::integer},
    {"HELMSMAN_UNANSWERED_RUN", "/qa/unanswered_run", EnvKind::integer},
    {"HELMSMAN_GROUNDING_WINDOW", "/qa/grounding_window", EnvKind::integer},
    {"HELMSMAN_MIN_GROUNDED_RATIO", "/qa/min_grounded_ratio", EnvKind::number},
    {"HELMSMAN_NOTES_BUDGET", "/qa/notes_budget", EnvKind::integer},
    {"HELMSMAN_RECOMMEND_METHOD", "/recommend/method", EnvKind::string},
    {"HELMSMAN_TOP_K", "/recommend/top_k", EnvKind::integer},
    {"HELMSMAN_EXEC_TIMEOUT_MS", "/executor/timeout_ms", EnvKind::integer},
    {"HELMSMAN_JAIL_ROOT", "/executor/jail_root", EnvKind::path},
    {"HELMSMAN_KEEP_JAILS", "/executor/keep_jails", EnvKind::boolean},
    {"HELMSMAN_HOST", "/server/host", EnvKind::string},
    {"HELMSMAN_PORT", "/server/port", EnvKind::integer},
    {"HELMSMAN_REQUEST_TIMEOUT_MS", "/server/request_timeout_ms", EnvKind::integer},
    {"HELMSMAN_THREADS", "/server/threads", EnvKind::integer},
};

inline constexpr std::string_view kPathPointers[] = {"/taxonomy",  "/corpus", "/plugins", "/workspace_seed",
                                                     "/state_dir", "/backend/script", "/executor/jail_root"};

inline void check_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& prefix) {
  if (!given.is_object()) throw Error(errc::invalid_config, "config" + prefix + " must be an object");
  for (const auto& [key, value] : given.items()) {
    const auto path = prefix + "/" + key;
    if (!known.contains(key)) throw Error(errc::invalid_config, "unknown config key '" + path + "'", {{"key", path}});
    if (known[key].is_object()) check_keys(value, known[key], path);
  }
}

inline nlohmann::json env_value(const EnvBinding& b, const std::string& raw) {
  auto bad = [&] {
    return Error(errc::invalid_config, std::string(b.name) + " has an invalid value '" + raw + "'",
                 {{"variable", std::string(b.name)}});
  };
  switch (b.kind) {
    case EnvKind::string: return raw;
    case EnvKind::path: return std::filesystem::absolute(raw).lexically_normal().string();
    case EnvKind::integer:
      if (auto v = plugins::parse_integer(raw)) return *v;
      throw bad();
    case EnvKind::number:
      if (auto v = plugins::parse_number(raw)) return *v;
      throw bad();
    case EnvKind::boolean:
      if (auto v = plugins::parse_boolean(raw)) return *v;
      throw bad();
  }
  throw bad();
}

template <class T>
T field(const nlohmann::json& j, std::string_view pointer) {
  try {
    return j.at(nlohmann::json::json_pointer(std::string(pointer))).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(errc::invalid_config, "config value '" + std::string(pointer) + "' has the wrong type",
                {{"key", std::string(pointer)}});
  }
}

inline std::optional<std::string> optional_string(const nlohmann::json& j, std::string_view pointer) {
  const auto& v = j.at(nlohmann::json::json_pointer(std::string(pointer)));
  if (v.is_null()) return std::nullopt;
  return field<std::string>(j, pointer);
}

}  // namespace detail

using EnvLookup = std::function<std::optional<std::string>(std::string_view)>;

inline std::optional<std::string> process_env(std::string_view name) {
  if (const char* v = std::getenv(std::string(name).c_str())) return std::string(v);
  return std::nullopt;
}

/// Merged configuration as JSON, before conversion; `helmsman config` prints it.
inline nlohmann::json merged_config_json(const std::optional<std::filesystem::path>& file, const EnvLookup& env) {
  using namespace detail;
  auto j = config_defaults();
  const auto cwd = std::filesystem::current_path();
  for (auto ptr : kPathPointers) {
    auto& v = j[nlohmann::json::json_pointer(std::string(ptr))];
    if (v.is_string()) v = (cwd / v.get<std::string>()).lexically_normal().string();
  }
  if (file) {
    nlohmann::json given;
    try {
      given = nlohmann::json::parse(read_text_file(*file));
    } catch (const nlohmann::json::exception& e) {
      throw Error(errc::invalid_config, file->string() + ": " + e.what(), {{"path", file->string()}});
    }
    check_keys(given, config_defaults(), "");
    const auto base = std::filesystem::absolute(*file).parent_path();
    for (auto ptr : kPathPointers) {
      const nlohmann::json::json_pointer p{std::string(ptr)};
      if (given.contains(p) && given[p].is_string()) given[p] = (base / given[p].get<std::string>()).lexically_normal().string();
    }
    j.merge_patch(given);
  }
  for (const auto& b : kEnvBindings)
    if (auto raw = env(b.name)) j[nlohmann::json::json_pointer(std::string(b.pointer))] = env_value(b, *raw);
  return j;
}

inline Config config_from_json(const nlohmann::json& j) {
  using detail::field;
  using detail::optional_string;
  using std::chrono::milliseconds;
  Config c;
  c.taxonomy = field<std::string>(j, "/taxonomy");
  c.corpus = field<std::string>(j, "/corpus");
  c.plugins = field<std::string>(j, "/plugins");
  c.workspace_seed = field<std::string>(j, "/workspace_seed");
  c.state_dir = field<std::string>(j, "/state_dir");
  try {
    c.language = parse_language(field<std::string>(j, "/language"));
    c.engine.recommend_method = recommend::parse_method(field<std::string>(j, "/recommend/method"));
  } catch (const Error& e) {
    throw Error(errc::invalid_config, e.what());
  }

  const auto kind = field<std::string>(j, "/backend/kind");
  if (kind == "scripted")
    c.backend.kind = llm::BackendKind::scripted;
  else if (kind == "http")
    c.backend.kind = llm::BackendKind::http;
  else
    throw Error(errc::invalid_config, "backend kind must be 'scripted' or 'http', got '" + kind + "'");
  c.backend.script_path = optional_string(j, "/backend/script");
  c.backend.endpoint = optional_string(j, "/backend/endpoint");
  c.backend.model = optional_string(j, "/backend/model");
  c.backend.api_key_ref = optional_string(j, "/backend/api_key_env");
  c.backend.timeout = milliseconds(field<std::int64_t>(j, "/backend/timeout_ms"));

  c.engine.router.max_rounds = field<int>(j, "/router/max_rounds");
  c.engine.router.max_candidates = field<std::size_t>(j, "/router/max_candidates");
  c.engine.qa.unanswered_run = field<std::size_t>(j, "/qa/unanswered_run");
  c.engine.qa.grounding_window = field<std::size_t>(j, "/qa/grounding_window");
  c.engine.qa.min_grounded_ratio = field<double>(j, "/qa/min_grounded_ratio");
  c.engine.qa.topic_marker = field<std::string>(j, "/qa/topic_marker");
  c.engine.qa.notes_budget = field<std::size_t>(j, "/qa/notes_budget");
  c.engine.qa.max_notes = field<std::size_t>(j, "/qa/max_notes");
  c.engine.top_k = field<std::size_t>(j, "/recommend/top_k");
  c.engine.command_prefix = field<std::string>(j, "/recommend/command_prefix");

  c.executor.timeout = milliseconds(field<std::int64_t>(j, "/executor/timeout_ms"));
  if (auto root = optional_string(j, "/executor/jail_root")) c.executor.jail_root = *root;
  c.executor.excerpt_limit = field<std::size_t>(j, "/executor/excerpt_limit");
  c.executor.keep_jails = field<bool>(j, "/executor/keep_jails");

  c.server.host = field<std::string>(j, "/server/host");
  c.server.port = field<int>(j, "/server/port");
  c.server.request_timeout = milliseconds(field<std::int64_t>(j, "/server/request_timeout_ms"));
  c.server.threads = field<int>(j, "/server/threads");

  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(errc::invalid_config, what);
  };
  require(c.engine.router.max_rounds >= 1, "router.max_rounds must be at least 1");
  require(c.engine.router.max_candidates >= 1, "router.max_candidates must be at least 1");
  require(c.engine.qa.unanswered_run >= 1, "qa.unanswered_run must be at least 1");
  require(c.engine.qa.min_grounded_ratio >= 0 && c.engine.qa.min_grounded_ratio <= 1,
          "qa.min_grounded_ratio must lie in [0, 1]");
  require(!c.engine.qa.topic_marker.empty(), "qa.topic_marker must not be empty");
  require(c.engine.top_k >= 1, "recommend.top_k must be at least 1");
  require(!c.engine.command_prefix.empty(), "recommend.command_prefix must not be empty");
  require(c.executor.timeout.count() > 0, "executor.timeout_ms must be positive");
  require(c.server.port >= 0 && c.server.port <= 65535, "server.port must be a TCP port");
  require(c.server.request_timeout.count() > 0, "server.request_timeout_ms must be positive");
  require(c.server.threads >= 1, "server.threads must be at least 1");
  return c;
}

inline Config load_config(const std::optional<std::filesystem::path>& file, const EnvLookup& env = process_env) {
  return config_from_json(merged_config_json(file, env));
}

}  // namespace helmsman
