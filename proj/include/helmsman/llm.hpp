#pragma once

// Language-model gateway: a uniform `Backend` interface with a deterministic
// scripted backend (all tests) and an HTTP backend speaking the
// OpenAI-compatible chat-completions protocol.
//
// Script file format, one rule per line (`#` starts a comment line):
//
//   <purpose_tag> TAB <exact|substring|regex> TAB <pattern> TAB <response>
//
// The response field uses \n, \t and \\ escapes. Rules are tried in file
// order against the content of the last user message; first match wins.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "helmsman/error.hpp"
#include "helmsman/text.hpp"

namespace helmsman::llm {

enum class Role { system, user, assistant };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

inline Role parse_role(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw Error(errc::parse_error, "unknown role '" + std::string(s) + "'");
}

struct ChatMessage {
  Role role = Role::user;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

inline void validate(const ChatMessage& m) {
  if (text::is_blank(m.content))
    throw Error(errc::invalid_request, "chat message content is empty",
                {{"role", std::string(to_string(m.role))}});
}

inline nlohmann::json to_json(const ChatMessage& m) {
  return {{"role", to_string(m.role)}, {"content", m.content}};
}

inline ChatMessage message_from_json(const nlohmann::json& j) {
  return {parse_role(j.at("role").get<std::string>()), j.at("content").get<std::string>()};
}

enum class Purpose { route_main, route_sub, qa_answer, recommend, augment };

inline std::string_view to_string(Purpose p) {
  switch (p) {
    case Purpose::route_main: return "route_main";
    case Purpose::route_sub: return "route_sub";
    case Purpose::qa_answer: return "qa_answer";
    case Purpose::recommend: return "recommend";
    case Purpose::augment: return "augment";
  }
  return "route_main";
}

inline std::optional<Purpose> parse_purpose(std::string_view s) {
  for (auto p : {Purpose::route_main, Purpose::route_sub, Purpose::qa_answer, Purpose::recommend,
                 Purpose::augment})
    if (to_string(p) == s) return p;
  return std::nullopt;
}

struct CompletionRequest {
  std::vector<ChatMessage> messages;
  Purpose purpose = Purpose::route_main;
  std::size_t max_response_chars = 4000;
  double temperature_hint = 0.0;

  /// Content of the last user message, or empty when there is none.
  std::string_view last_user_text() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it)
      if (it->role == Role::user) return it->content;
    return {};
  }
};

inline void validate(const CompletionRequest& r) {
  if (r.messages.empty()) throw Error(errc::invalid_request, "completion request has no messages");
  if (r.messages.front().role != Role::system)
    throw Error(errc::invalid_request, "first message of a completion request must be the system prompt");
  for (const auto& m : r.messages) validate(m);
  if (r.max_response_chars == 0) throw Error(errc::invalid_request, "max_response_chars must be positive");
  if (!(r.temperature_hint >= 0.0 && r.temperature_hint <= 1.0))
    throw Error(errc::invalid_request, "temperature_hint must lie in [0, 1]");
}

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const CompletionRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend

enum class MatchKind { exact, substring, regex };

struct ScriptRule {
  Purpose purpose = Purpose::route_main;
  MatchKind kind = MatchKind::exact;
  std::string pattern;
  std::string response;
  int line = 0;
};

class ScriptedBackend final : public Backend {
 public:
  static ScriptedBackend parse(std::string_view content, std::string_view source = "<script>") {
    ScriptedBackend backend;
    int line_no = 0;
    for (const auto& raw : text::split_lines(content)) {
      ++line_no;
      if (text::is_blank(raw) || text::trim(raw).front() == '#') continue;
      auto fail = [&](const std::string& what) {
        return Error(errc::parse_error, std::string(source) + ":" + std::to_string(line_no) + ": " + what,
                     {{"source", std::string(source)}, {"line", line_no}});
      };
      auto fields = text::split(raw, '\t');
      if (fields.size() != 4) throw fail("expected 4 tab-separated fields, found " + std::to_string(fields.size()));
      auto purpose = parse_purpose(fields[0]);
      if (!purpose) throw fail("unknown purpose tag '" + std::string(fields[0]) + "'");
      ScriptRule rule;
      rule.purpose = *purpose;
      rule.line = line_no;
      if (fields[1] == "exact")
        rule.kind = MatchKind::exact;
      else if (fields[1] == "substring")
        rule.kind = MatchKind::substring;
      else if (fields[1] == "regex")
        rule.kind = MatchKind::regex;
      else
        throw fail("unknown match kind '" + std::string(fields[1]) + "'");
      auto pattern = text::unescape_field(fields[2]);
      auto response = text::unescape_field(fields[3]);
      if (!pattern || !response) throw fail("invalid escape sequence");
      if (pattern->empty()) throw fail("empty pattern");
      rule.pattern = std::move(*pattern);
      rule.response = std::move(*response);

      std::optional<std::regex> compiled;
      if (rule.kind == MatchKind::regex) {
        try {
          compiled.emplace(rule.pattern, std::regex::ECMAScript);
        } catch (const std::regex_error& e) {
          throw fail(std::string("invalid regex: ") + e.what());
        }
      }
      for (const auto& existing : backend.rules_) {
        if (existing.purpose == rule.purpose && existing.pattern == rule.pattern)
          throw Error(errc::duplicate_rule,
                      std::string(source) + ":" + std::to_string(line_no) + ": duplicate rule for (" +
                          std::string(to_string(rule.purpose)) + ", \"" + rule.pattern + "\"), first defined on line " +
                          std::to_string(existing.line),
                      {{"line", line_no}, {"first_line", existing.line},
                       {"purpose", std::string(to_string(rule.purpose))}, {"pattern", rule.pattern}});
      }
      backend.rules_.push_back(std::move(rule));
      backend.compiled_.push_back(std::move(compiled));
    }
    return backend;
  }

  static ScriptedBackend load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(errc::io_error, "cannot open script " + path.string(), {{"path", path.string()}});
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  const std::vector<ScriptRule>& rules() const noexcept { return rules_; }

  /// Pure function of the request: temperature is ignored, nothing is dialed.
  std::string complete(const CompletionRequest& request) override {
    validate(request);
    const auto text = request.last_user_text();
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      const auto& rule = rules_[i];
      if (rule.purpose != request.purpose) continue;
      bool hit = false;
      switch (rule.kind) {
        case MatchKind::exact: hit = text == rule.pattern; break;
        case MatchKind::substring: hit = text.find(rule.pattern) != std::string_view::npos; break;
        case MatchKind::regex: hit = std::regex_search(text.begin(), text.end(), *compiled_[i]); break;
      }
      if (hit) return text::utf8_truncate(rule.response, request.max_response_chars);
    }
    throw Error(errc::script_miss,
                "no scripted rule for purpose " + std::string(to_string(request.purpose)) + " matches \"" +
                    std::string(text) + "\"",
                {{"purpose", std::string(to_string(request.purpose))}, {"text", std::string(text)}});
  }

 private:
  std::vector<ScriptRule> rules_;
  std::vector<std::optional<std::regex>> compiled_;
};

// ---------------------------------------------------------------------------
// HTTP backend

enum class BackendKind { scripted, http };

struct BackendConfig {
  BackendKind kind = BackendKind::scripted;
  std::optional<std::string> endpoint;     // e.g. http://localhost:11434/v1/chat/completions
  std::optional<std::string> api_key_ref;  // name of the env var holding the key
  std::optional<std::string> script_path;
  std::optional<std::string> model;
  std::chrono::milliseconds timeout{30'000};
};

inline void validate(const BackendConfig& c) {
  if (c.timeout.count() <= 0) throw Error(errc::invalid_config, "backend timeout must be positive");
  if (c.kind == BackendKind::http && (!c.endpoint || c.endpoint->empty()))
    throw Error(errc::invalid_config, "http backend requires an endpoint");
  if (c.kind == BackendKind::scripted && (!c.script_path || c.script_path->empty()))
    throw Error(errc::invalid_config, "scripted backend requires a script path");
}

struct ParsedUrl {
  std::string scheme_host_port;  // what httplib::Client accepts
  std::string path;
};

inline ParsedUrl split_url(std::string_view url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos)
    throw Error(errc::invalid_config, "endpoint must be an absolute URL: " + std::string(url));
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, path_start)), std::string(url.substr(path_start))};
}

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig config) : config_(std::move(config)) { validate(config_); }

  std::string complete(const CompletionRequest& request) override {
    validate(request);
    nlohmann::json body{{"temperature", request.temperature_hint}, {"messages", nlohmann::json::array()}};
    if (config_.model) body["model"] = *config_.model;
    for (const auto& m : request.messages) body["messages"].push_back(to_json(m));

    const auto url = split_url(*config_.endpoint);
    httplib::Headers headers;
    if (config_.api_key_ref) {
      if (const char* key = std::getenv(config_.api_key_ref->c_str()))
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    // One retry on connection failure or timeout, nothing more.
    for (int attempt = 0; attempt < 2; ++attempt) {
      httplib::Client client(url.scheme_host_port);
      const auto secs = config_.timeout.count() / 1000;
      const auto usecs = (config_.timeout.count() % 1000) * 1000;
      client.set_connection_timeout(secs, usecs);
      client.set_read_timeout(secs, usecs);
      client.set_write_timeout(secs, usecs);
      auto res = client.Post(url.path, headers, body.dump(), "application/json");
      if (!res) {
        if (attempt == 0) continue;
        throw Error(errc::backend_unavailable,
                    "backend " + *config_.endpoint + " unreachable: " + httplib::to_string(res.error()),
                    {{"endpoint", *config_.endpoint}});
      }
      if (res->status != 200)
        throw Error(errc::backend_unavailable,
                    "backend " + *config_.endpoint + " answered HTTP " + std::to_string(res->status),
                    {{"endpoint", *config_.endpoint}, {"status", res->status}});
      try {
        auto reply = nlohmann::json::parse(res->body);
        auto content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
        return text::utf8_truncate(content, request.max_response_chars);
      } catch (const nlohmann::json::exception& e) {
        throw Error(errc::backend_unavailable, std::string("malformed backend reply: ") + e.what(),
                    {{"endpoint", *config_.endpoint}});
      }
    }
    throw Error(errc::backend_unavailable, "backend unreachable");
  }

 private:
  BackendConfig config_;
};

/// Wraps another backend and keeps every request it forwards; used to assert
/// prompt contents.
class RecordingBackend final : public Backend {
 public:
  explicit RecordingBackend(Backend& inner) : inner_(inner) {}

  std::string complete(const CompletionRequest& request) override {
    {
      std::lock_guard lock(mutex_);
      requests_.push_back(request);
    }
    return inner_.complete(request);
  }

  std::vector<CompletionRequest> requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
  }

  std::optional<CompletionRequest> last(Purpose purpose) const {
    std::lock_guard lock(mutex_);
    for (auto it = requests_.rbegin(); it != requests_.rend(); ++it)
      if (it->purpose == purpose) return *it;
    return std::nullopt;
  }

  void clear() {
    std::lock_guard lock(mutex_);
    requests_.clear();
  }

 private:
  Backend& inner_;
  mutable std::mutex mutex_;
  std::vector<CompletionRequest> requests_;
};

/// Flattens a request into one string (system prompt included).
inline std::string prompt_text(const CompletionRequest& r) {
  std::string out;
  for (const auto& m : r.messages) {
    out += m.content;
    out += '\n';
  }
  return out;
}

inline std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
  validate(config);
  if (config.kind == BackendKind::scripted)
    return std::make_unique<ScriptedBackend>(ScriptedBackend::load(*config.script_path));
  return std::make_unique<HttpBackend>(config);
}

}  // namespace helmsman::llm
