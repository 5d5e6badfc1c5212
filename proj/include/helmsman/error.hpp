#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include <nlohmann/json.hpp>

namespace helmsman {

// Machine-readable error codes. These slugs are the documented error taxonomy
// shared by the engine, the HTTP API and the CLI.
namespace errc {
inline constexpr std::string_view parse_error = "parse_error";
inline constexpr std::string_view invalid_request = "invalid_request";
inline constexpr std::string_view invalid_config = "invalid_config";
inline constexpr std::string_view backend_unavailable = "backend_unavailable";
inline constexpr std::string_view script_miss = "script_miss";
inline constexpr std::string_view duplicate_rule = "duplicate_rule";
inline constexpr std::string_view duplicate_id = "duplicate_id";
inline constexpr std::string_view empty_subtasks = "empty_subtasks";
inline constexpr std::string_view orphan_subtask = "orphan_subtask";
inline constexpr std::string_view taxonomy_size = "taxonomy_size";
inline constexpr std::string_view dangling_fragment = "dangling_fragment";
inline constexpr std::string_view language_parity = "language_parity";
inline constexpr std::string_view not_found = "not_found";
inline constexpr std::string_view rounds_exhausted = "rounds_exhausted";
inline constexpr std::string_view no_candidates_left = "no_candidates_left";
inline constexpr std::string_view invalid_feedback = "invalid_feedback";
inline constexpr std::string_view mapping_miss = "mapping_miss";
inline constexpr std::string_view sanitize_reject = "sanitize_reject";
inline constexpr std::string_view duplicate_fragment = "duplicate_fragment";
inline constexpr std::string_view unknown_fragment = "unknown_fragment";
inline constexpr std::string_view empty_selection = "empty_selection";
inline constexpr std::string_view duplicate_bundled = "duplicate_bundled";
inline constexpr std::string_view invalid_manifest = "invalid_manifest";
inline constexpr std::string_view missing_required = "missing_required";
inline constexpr std::string_view type_mismatch = "type_mismatch";
inline constexpr std::string_view unknown_argument = "unknown_argument";
inline constexpr std::string_view enum_violation = "enum_violation";
inline constexpr std::string_view empty_registry = "empty_registry";
inline constexpr std::string_view not_recommended = "not_recommended";
inline constexpr std::string_view plugin_not_found = "plugin_not_found";
inline constexpr std::string_view validation_failed = "validation_failed";
inline constexpr std::string_view subprocess_failed = "subprocess_failed";
inline constexpr std::string_view timeout = "timeout";
inline constexpr std::string_view jail_unavailable = "jail_unavailable";
inline constexpr std::string_view unknown_builtin = "unknown_builtin";
inline constexpr std::string_view builtin_failed = "builtin_failed";
inline constexpr std::string_view unknown_snapshot = "unknown_snapshot";
inline constexpr std::string_view illegal_transition = "illegal_transition";
inline constexpr std::string_view session_not_found = "session_not_found";
inline constexpr std::string_view session_busy = "session_busy";
inline constexpr std::string_view corrupt_record = "corrupt_record";
inline constexpr std::string_view doc_not_found = "doc_not_found";
inline constexpr std::string_view execution_not_found = "execution_not_found";
inline constexpr std::string_view io_error = "io_error";
inline constexpr std::string_view internal_error = "internal_error";
}  // namespace errc

/// Every failure the engine reports carries a code from `errc`, a human
/// message and optional structured details (field lists, line numbers...).
class Error : public std::runtime_error {
 public:
  Error(std::string_view code, const std::string& message,
        nlohmann::json details = nlohmann::json::object())
      : std::runtime_error(message), code_(code), details_(std::move(details)) {}

  const std::string& code() const noexcept { return code_; }
  const nlohmann::json& details() const noexcept { return details_; }

  nlohmann::json to_json() const {
    nlohmann::json j{{"code", code_}, {"message", what()}};
    if (!details_.is_null() && !details_.empty()) j["details"] = details_;
    return j;
  }

 private:
  std::string code_;
  nlohmann::json details_;
};

}  // namespace helmsman
