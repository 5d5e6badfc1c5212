#pragma once

// Plugin manifests, argument validation and the versioned registry.
//
// Manifest file grammar (one `*.plugin` file per plugin, section syntax from
// sections.hpp):
//
//   [plugin]
//   id = round-tracker
//   display_name = Round tracker          display_name_zh / description_zh optional
//   description = Rounds sharp track corners
//   binding = builtin_sim                 or subprocess
//   command = round-tracker               builtin name, or a shell template
//   idempotent = true
//   side_effects = false
//
//   [param width_mil]                     one per parameter, in prompt order
//   kind = integer                        string|integer|number|boolean|enum|file_path
//   required = true
//   default = 25
//   allowed_values = F.Cu, B.Cu           enum only
//   unit = mil
//   description = Track width
//
//   [example 1]
//   caption = Thin tracks
//   width_mil = 10
//
// In a subprocess command `{name}` is replaced by the shell-quoted value of
// parameter `name`; braces around anything that is not a parameter name
// (awk programs, say) are left alone.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "helmsman/error.hpp"
#include "helmsman/io.hpp"
#include "helmsman/language.hpp"
#include "helmsman/sections.hpp"
#include "helmsman/text.hpp"

namespace helmsman::plugins {

using ArgValue = std::variant<std::string, std::int64_t, double, bool>;
using ArgMap = std::map<std::string, ArgValue>;

enum class ParamKind { string, integer, number, boolean, enumeration, file_path };

inline std::string_view to_string(ParamKind k) {
  switch (k) {
    case ParamKind::string: return "string";
    case ParamKind::integer: return "integer";
    case ParamKind::number: return "number";
    case ParamKind::boolean: return "boolean";
    case ParamKind::enumeration: return "enum";
    case ParamKind::file_path: return "file_path";
  }
  return "";
}

inline std::optional<ParamKind> parse_param_kind(std::string_view s) {
  for (auto k : {ParamKind::string, ParamKind::integer, ParamKind::number, ParamKind::boolean, ParamKind::enumeration,
                 ParamKind::file_path})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

enum class Binding { subprocess, builtin_sim };
inline std::string_view to_string(Binding b) { return b == Binding::subprocess ? "subprocess" : "builtin_sim"; }

enum class Origin { bundled, user_defined };
inline std::string_view to_string(Origin o) { return o == Origin::bundled ? "bundled" : "user_defined"; }

struct ParameterSpec {
  std::string name;
  ParamKind kind = ParamKind::string;
  bool required = false;
  std::optional<ArgValue> default_value;
  std::vector<std::string> allowed_values;
  std::string unit;
  std::string description;

  bool operator==(const ParameterSpec&) const = default;
};

struct InputExample {
  ArgMap values;
  std::string caption;

  bool operator==(const InputExample&) const = default;
};

struct PluginManifest {
  std::string plugin_id;
  std::string display_name;
  std::string description;
  std::string display_name_zh;  // empty: fall back to English
  std::string description_zh;
  std::vector<ParameterSpec> parameters;
  std::vector<InputExample> input_examples;
  Binding binding = Binding::builtin_sim;
  std::string command;
  bool idempotent = false;
  bool side_effects = false;
  Origin origin = Origin::user_defined;

  const ParameterSpec* find_param(std::string_view name) const {
    for (const auto& p : parameters)
      if (p.name == name) return &p;
    return nullptr;
  }
  const std::string& display(Language lang) const {
    return lang == Language::zh && !display_name_zh.empty() ? display_name_zh : display_name;
  }
  const std::string& describe(Language lang) const {
    return lang == Language::zh && !description_zh.empty() ? description_zh : description;
  }
  bool operator==(const PluginManifest&) const = default;
};

// ---------------------------------------------------------------------------
// Values

inline std::string value_type_name(const ArgValue& v) {
  switch (v.index()) {
    case 0: return "string";
    case 1: return "integer";
    case 2: return "number";
    default: return "boolean";
  }
}

inline std::string format_number(double d) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, d);
  return ec == std::errc() ? std::string(buf, end) : std::to_string(d);
}

/// Text form used for command substitution and the manifest file.
inline std::string value_text(const ArgValue& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::string>)
          return x;
        else if constexpr (std::is_same_v<T, bool>)
          return x ? "true" : "false";
        else if constexpr (std::is_same_v<T, double>)
          return format_number(x);
        else
          return std::to_string(x);
      },
      v);
}

inline nlohmann::json to_json(const ArgValue& v) {
  return std::visit([](const auto& x) { return nlohmann::json(x); }, v);
}

inline ArgValue value_from_json(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) return j.get<double>();
  throw Error(errc::invalid_request, "argument values must be strings, numbers or booleans",
              {{"got", std::string(j.type_name())}});
}

inline nlohmann::json to_json(const ArgMap& m) {
  auto j = nlohmann::json::object();
  for (const auto& [k, v] : m) j[k] = to_json(v);
  return j;
}

inline ArgMap args_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(errc::invalid_request, "arguments must be a JSON object");
  ArgMap out;
  for (const auto& [k, v] : j.items()) out[k] = value_from_json(v);
  return out;
}

inline std::optional<std::int64_t> parse_integer(std::string_view s) {
  s = text::trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_number(std::string_view s) {
  s = text::trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<bool> parse_boolean(std::string_view s) {
  const auto t = text::to_lower_ascii(text::trim(s));
  if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
  if (t == "false" || t == "no" || t == "off" || t == "0") return false;
  return std::nullopt;
}

/// Relative, non-empty and free of `..` components.
inline bool safe_relative_path(std::string_view s) {
  if (text::is_blank(s) || s.find('\0') != std::string_view::npos) return false;
  std::filesystem::path p{std::string(s)};
  if (p.is_absolute() || s.front() == '/' || s.front() == '~') return false;
  for (const auto& part : p)
    if (part == "..") return false;
  return true;
}

namespace detail {

inline Error mismatch(const ParameterSpec& p, std::string got) {
  return Error(errc::type_mismatch,
               "argument '" + p.name + "' expects " + std::string(to_string(p.kind)) + ", got " + got,
               {{"name", p.name}, {"expected", to_string(p.kind)}, {"got", got}});
}

}  // namespace detail

/// Coerces one value to the parameter's kind.
inline ArgValue coerce(const ParameterSpec& p, const ArgValue& v) {
  const auto* s = std::get_if<std::string>(&v);
  switch (p.kind) {
    case ParamKind::string:
      if (s) return *s;
      break;
    case ParamKind::integer:
      if (std::holds_alternative<std::int64_t>(v)) return v;
      if (s) {
        if (auto i = parse_integer(*s)) return *i;
        throw detail::mismatch(p, "\"" + *s + "\"");
      }
      break;
    case ParamKind::number:
      if (const auto* d = std::get_if<double>(&v)) {
        if (std::isfinite(*d)) return v;
        break;
      }
      if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
      if (s) {
        if (auto d = parse_number(*s)) return *d;
        throw detail::mismatch(p, "\"" + *s + "\"");
      }
      break;
    case ParamKind::boolean:
      if (std::holds_alternative<bool>(v)) return v;
      if (s) {
        if (auto b = parse_boolean(*s)) return *b;
        throw detail::mismatch(p, "\"" + *s + "\"");
      }
      break;
    case ParamKind::enumeration:
      if (s) {
        if (std::find(p.allowed_values.begin(), p.allowed_values.end(), *s) == p.allowed_values.end())
          throw Error(errc::enum_violation,
                      "argument '" + p.name + "' must be one of " + text::join(p.allowed_values, ", ") + ", got \"" +
                          *s + "\"",
                      {{"name", p.name}, {"value", *s}, {"allowed", p.allowed_values}});
        return *s;
      }
      break;
    case ParamKind::file_path:
      if (s) {
        if (!safe_relative_path(*s)) throw detail::mismatch(p, "unsafe path \"" + *s + "\"");
        return *s;
      }
      break;
  }
  throw detail::mismatch(p, value_type_name(v));
}

/// Rejects unknown names, checks required parameters, coerces values and
/// fills defaults. Unknown names are reported before anything else.
inline ArgMap validate_arguments(const PluginManifest& manifest, const ArgMap& args) {
  for (const auto& [name, value] : args)
    if (!manifest.find_param(name))
      throw Error(errc::unknown_argument, "plugin '" + manifest.plugin_id + "' has no parameter '" + name + "'",
                  {{"name", name}, {"plugin_id", manifest.plugin_id}});
  ArgMap out;
  for (const auto& p : manifest.parameters) {
    auto it = args.find(p.name);
    if (it == args.end()) {
      if (p.required)
        throw Error(errc::missing_required, "missing required argument '" + p.name + "'", {{"name", p.name}});
      if (p.default_value) out[p.name] = *p.default_value;
      continue;
    }
    out[p.name] = coerce(p, it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Command templates

/// `{name}` placeholders whose name is a parameter-shaped identifier.
inline std::vector<std::string> placeholders(std::string_view command) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = command.find('{', pos)) != std::string_view::npos) {
    auto close = command.find('}', pos + 1);
    if (close == std::string_view::npos) break;
    auto inner = command.substr(pos + 1, close - pos - 1);
    if (text::is_param_name(inner)) {
      out.emplace_back(inner);
      pos = close + 1;
    } else {
      ++pos;
    }
  }
  return out;
}

/// Replaces placeholders with shell-quoted values; absent optionals become ''.
inline std::string substitute_command(std::string_view command, const ArgMap& args) {
  std::string out;
  std::size_t pos = 0;
  while (pos < command.size()) {
    auto open = command.find('{', pos);
    if (open == std::string_view::npos) break;
    auto close = command.find('}', open + 1);
    if (close == std::string_view::npos) break;
    auto inner = command.substr(open + 1, close - open - 1);
    out.append(command.substr(pos, open - pos));
    if (text::is_param_name(inner)) {
      auto it = args.find(std::string(inner));
      out += text::shell_quote(it == args.end() ? "" : value_text(it->second));
      pos = close + 1;
    } else {
      out += '{';
      pos = open + 1;
    }
  }
  out.append(command.substr(pos));
  return out;
}

// ---------------------------------------------------------------------------
// Manifest validation

struct FieldError {
  std::string field;
  std::string message;
  bool operator==(const FieldError&) const = default;
};

inline nlohmann::json to_json(const std::vector<FieldError>& errors) {
  auto j = nlohmann::json::array();
  for (const auto& e : errors) j.push_back({{"field", e.field}, {"message", e.message}});
  return j;
}

inline Error invalid_manifest(const std::string& plugin_id, const std::vector<FieldError>& errors) {
  std::string msg = "invalid manifest '" + plugin_id + "'";
  for (const auto& e : errors) msg += "; " + e.field + ": " + e.message;
  return Error(errc::invalid_manifest, msg, {{"plugin_id", plugin_id}, {"errors", to_json(errors)}});
}

inline std::vector<FieldError> check_manifest(const PluginManifest& m) {
  std::vector<FieldError> errors;
  auto add = [&](std::string field, std::string message) { errors.push_back({std::move(field), std::move(message)}); };
  if (!text::is_slug(m.plugin_id)) add("plugin.id", "must match [a-z0-9-]{1,64}");
  if (text::is_blank(m.display_name)) add("plugin.display_name", "must not be empty");
  if (text::is_blank(m.description)) add("plugin.description", "must not be empty");
  if (text::is_blank(m.command)) add("plugin.command", "must not be empty");
  if (m.binding == Binding::builtin_sim && !m.command.empty() && !text::is_slug(m.command))
    add("plugin.command", "builtin name must match [a-z0-9-]{1,64}");

  std::set<std::string> names;
  for (const auto& p : m.parameters) {
    const auto field = "param." + p.name;
    if (!text::is_param_name(p.name)) add(field, "name must match [a-z0-9_-]{1,64}");
    if (!names.insert(p.name).second) add(field, "duplicate parameter");
    if (p.name == "caption") add(field, "'caption' is reserved for example captions");
    if (p.kind == ParamKind::enumeration && p.allowed_values.empty())
      add(field + ".allowed_values", "enum parameters need at least one allowed value");
    if (p.kind != ParamKind::enumeration && !p.allowed_values.empty())
      add(field + ".allowed_values", "only enum parameters take allowed values");
    if (p.default_value) {
      try {
        if (coerce(p, *p.default_value) != *p.default_value)
          add(field + ".default", "default must be stored as " + std::string(to_string(p.kind)));
      } catch (const Error& e) {
        add(field + ".default", e.what());
      }
    }
  }
  if (m.binding == Binding::subprocess)
    for (const auto& name : placeholders(m.command))
      if (!names.count(name)) add("plugin.command", "placeholder {" + name + "} names no parameter");

  for (std::size_t i = 0; i < m.input_examples.size(); ++i) {
    try {
      validate_arguments(m, m.input_examples[i].values);
    } catch (const Error& e) {
      add("example." + std::to_string(i + 1), e.what());
    }
  }
  return errors;
}

inline void validate_manifest(const PluginManifest& m) {
  auto errors = check_manifest(m);
  if (!errors.empty()) throw invalid_manifest(m.plugin_id, errors);
}

// ---------------------------------------------------------------------------
// Manifest text format

inline PluginManifest parse_manifest(std::string_view content, std::string_view source = "<manifest>",
                                     Origin origin = Origin::user_defined) {
  const auto doc = parse_sections(content, source);
  if (!doc.preamble.empty())
    throw section_parse_error(source, doc.preamble.front().line, "entries must follow a [plugin] header");
  PluginManifest m;
  m.origin = origin;
  std::vector<FieldError> errors;
  auto add = [&](std::string field, std::string message) { errors.push_back({std::move(field), std::move(message)}); };

  bool seen_plugin = false;
  struct RawDefault {
    std::size_t index;
    std::string text;
  };
  std::vector<RawDefault> defaults;
  for (const auto& s : doc.sections) {
    if (s.kind == "plugin") {
      if (seen_plugin) throw section_parse_error(source, s.line, "more than one [plugin] section");
      if (!s.argument.empty()) throw section_parse_error(source, s.line, "[plugin] takes no argument");
      seen_plugin = true;
      for (const auto& e : s.entries) {
        const auto& v = e.value;
        if (e.key == "id") m.plugin_id = v;
        else if (e.key == "display_name") m.display_name = v;
        else if (e.key == "display_name_zh") m.display_name_zh = v;
        else if (e.key == "description") m.description = v;
        else if (e.key == "description_zh") m.description_zh = v;
        else if (e.key == "command") m.command = v;
        else if (e.key == "binding") {
          if (v == "subprocess") m.binding = Binding::subprocess;
          else if (v == "builtin_sim") m.binding = Binding::builtin_sim;
          else add("plugin.binding", "must be subprocess or builtin_sim");
        } else if (e.key == "idempotent" || e.key == "side_effects") {
          auto b = parse_boolean(v);
          if (!b) add("plugin." + e.key, "must be true or false");
          (e.key == "idempotent" ? m.idempotent : m.side_effects) = b.value_or(false);
        } else {
          add("plugin." + e.key, "unknown key");
        }
      }
    } else if (s.kind == "param") {
      ParameterSpec p;
      p.name = s.argument;
      bool have_kind = false;
      for (const auto& e : s.entries) {
        const auto field = "param." + p.name + "." + e.key;
        if (e.key == "kind") {
          if (auto k = parse_param_kind(e.value)) {
            p.kind = *k;
            have_kind = true;
          } else {
            add(field, "unknown kind '" + e.value + "'");
          }
        } else if (e.key == "required") {
          auto b = parse_boolean(e.value);
          if (!b) add(field, "must be true or false");
          p.required = b.value_or(false);
        } else if (e.key == "default") {
          defaults.push_back({m.parameters.size(), e.value});
        } else if (e.key == "allowed_values") {
          for (auto part : text::split(e.value, ','))
            if (auto item = text::trim(part); !item.empty()) p.allowed_values.emplace_back(item);
        } else if (e.key == "unit") {
          p.unit = e.value;
        } else if (e.key == "description") {
          p.description = e.value;
        } else {
          add(field, "unknown key");
        }
      }
      if (!have_kind) add("param." + p.name + ".kind", "missing");
      m.parameters.push_back(std::move(p));
    } else if (s.kind == "example") {
      InputExample ex;
      for (const auto& e : s.entries) {
        if (e.key == "caption")
          ex.caption = e.value;
        else
          ex.values[e.key] = e.value;
      }
      m.input_examples.push_back(std::move(ex));
    } else {
      throw section_parse_error(source, s.line, "unknown section kind '" + s.kind + "'");
    }
  }
  if (!seen_plugin) throw section_parse_error(source, 1, "missing [plugin] section");

  for (const auto& d : defaults) {
    auto& p = m.parameters[d.index];
    try {
      p.default_value = coerce(p, d.text);
    } catch (const Error& e) {
      add("param." + p.name + ".default", e.what());
    }
  }
  // Example values arrive as text; type them so they compare equal to the
  // manifest they were written from. Bad ones stay raw and fail the check.
  for (auto& ex : m.input_examples)
    for (auto& [name, value] : ex.values)
      for (const auto& p : m.parameters)
        if (p.name == name) {
          try {
            value = coerce(p, value);
          } catch (const Error&) {
          }
        }
  for (auto& e : check_manifest(m))
    if (std::find(errors.begin(), errors.end(), e) == errors.end()) errors.push_back(std::move(e));
  if (!errors.empty()) throw invalid_manifest(m.plugin_id, errors);
  return m;
}

inline std::string serialize_manifest(const PluginManifest& m) {
  std::string out = "[plugin]\n";
  write_entry(out, "id", m.plugin_id);
  write_entry(out, "display_name", m.display_name);
  if (!m.display_name_zh.empty()) write_entry(out, "display_name_zh", m.display_name_zh);
  write_entry(out, "description", m.description);
  if (!m.description_zh.empty()) write_entry(out, "description_zh", m.description_zh);
  write_entry(out, "binding", to_string(m.binding));
  write_entry(out, "command", m.command);
  write_entry(out, "idempotent", m.idempotent ? "true" : "false");
  write_entry(out, "side_effects", m.side_effects ? "true" : "false");
  for (const auto& p : m.parameters) {
    out += "\n[param " + p.name + "]\n";
    write_entry(out, "kind", to_string(p.kind));
    write_entry(out, "required", p.required ? "true" : "false");
    if (p.default_value) write_entry(out, "default", value_text(*p.default_value));
    if (!p.allowed_values.empty()) write_entry(out, "allowed_values", text::join(p.allowed_values, ", "));
    if (!p.unit.empty()) write_entry(out, "unit", p.unit);
    if (!p.description.empty()) write_entry(out, "description", p.description);
  }
  for (std::size_t i = 0; i < m.input_examples.size(); ++i) {
    const auto& ex = m.input_examples[i];
    out += "\n[example " + std::to_string(i + 1) + "]\n";
    if (!ex.caption.empty()) write_entry(out, "caption", ex.caption);
    for (const auto& [k, v] : ex.values) write_entry(out, k, value_text(v));
  }
  return out;
}

inline PluginManifest load_manifest(const std::filesystem::path& path, Origin origin) {
  return parse_manifest(read_text_file(path), path.string(), origin);
}

/// Every `*.plugin` file in `dir`, in file-name order.
inline std::vector<PluginManifest> load_plugin_dir(const std::filesystem::path& dir, Origin origin) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".plugin") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<PluginManifest> out;
  for (const auto& f : files) out.push_back(load_manifest(f, origin));
  return out;
}

// ---------------------------------------------------------------------------
// JSON form (registry persistence and the HTTP API)

inline nlohmann::json to_json(const ParameterSpec& p) {
  nlohmann::json j{{"name", p.name},
                   {"kind", to_string(p.kind)},
                   {"required", p.required},
                   {"allowed_values", p.allowed_values},
                   {"unit", p.unit},
                   {"description", p.description}};
  j["default"] = p.default_value ? to_json(*p.default_value) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const PluginManifest& m) {
  auto params = nlohmann::json::array();
  for (const auto& p : m.parameters) params.push_back(to_json(p));
  auto examples = nlohmann::json::array();
  for (const auto& ex : m.input_examples) examples.push_back({{"values", to_json(ex.values)}, {"caption", ex.caption}});
  return {{"plugin_id", m.plugin_id},
          {"display_name", m.display_name},
          {"description", m.description},
          {"display_name_zh", m.display_name_zh},
          {"description_zh", m.description_zh},
          {"parameters", params},
          {"input_examples", examples},
          {"binding", to_string(m.binding)},
          {"command", m.command},
          {"idempotent", m.idempotent},
          {"side_effects", m.side_effects},
          {"origin", to_string(m.origin)}};
}

/// Structural problems become field errors so API clients get the same
/// error shape as for semantic ones.
inline PluginManifest manifest_from_json(const nlohmann::json& j, std::optional<Origin> forced_origin = std::nullopt) {
  std::vector<FieldError> errors;
  PluginManifest m;
  if (!j.is_object()) throw invalid_manifest("", {{"manifest", "must be a JSON object"}});
  auto str = [&](const char* key, std::string& dst, bool required) {
    if (!j.contains(key) || j[key].is_null()) {
      if (required) errors.push_back({std::string("plugin.") + key, "missing"});
    } else if (!j[key].is_string()) {
      errors.push_back({std::string("plugin.") + key, "must be a string"});
    } else {
      dst = j[key].get<std::string>();
    }
  };
  auto flag = [&](const char* key, bool& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_boolean())
      errors.push_back({std::string("plugin.") + key, "must be a boolean"});
    else
      dst = j[key].get<bool>();
  };
  str("plugin_id", m.plugin_id, true);
  str("display_name", m.display_name, true);
  str("description", m.description, true);
  str("display_name_zh", m.display_name_zh, false);
  str("description_zh", m.description_zh, false);
  str("command", m.command, true);
  flag("idempotent", m.idempotent);
  flag("side_effects", m.side_effects);
  std::string binding = "builtin_sim";
  str("binding", binding, false);
  if (binding == "subprocess")
    m.binding = Binding::subprocess;
  else if (binding != "builtin_sim")
    errors.push_back({"plugin.binding", "must be subprocess or builtin_sim"});
  std::string origin = "user_defined";
  str("origin", origin, false);
  if (origin == "bundled")
    m.origin = Origin::bundled;
  else if (origin != "user_defined")
    errors.push_back({"plugin.origin", "must be bundled or user_defined"});
  if (forced_origin) m.origin = *forced_origin;

  if (j.contains("parameters")) {
    if (!j["parameters"].is_array()) {
      errors.push_back({"plugin.parameters", "must be an array"});
    } else {
      for (const auto& pj : j["parameters"]) {
        ParameterSpec p;
        try {
          p.name = pj.at("name").get<std::string>();
          const auto field = "param." + p.name;
          auto kind = parse_param_kind(pj.at("kind").get<std::string>());
          if (!kind)
            errors.push_back({field + ".kind", "unknown kind"});
          else
            p.kind = *kind;
          p.required = pj.value("required", false);
          p.allowed_values = pj.value("allowed_values", std::vector<std::string>{});
          p.unit = pj.value("unit", "");
          p.description = pj.value("description", "");
          if (pj.contains("default") && !pj["default"].is_null()) {
            try {
              p.default_value = coerce(p, value_from_json(pj["default"]));
            } catch (const Error& e) {
              errors.push_back({field + ".default", e.what()});
            }
          }
        } catch (const nlohmann::json::exception& e) {
          errors.push_back({"param." + p.name, std::string("malformed parameter: ") + e.what()});
        }
        m.parameters.push_back(std::move(p));
      }
    }
  }
  if (j.contains("input_examples")) {
    if (!j["input_examples"].is_array()) {
      errors.push_back({"plugin.input_examples", "must be an array"});
    } else {
      for (const auto& ej : j["input_examples"]) {
        InputExample ex;
        try {
          ex.values = args_from_json(ej.at("values"));
          ex.caption = ej.value("caption", "");
        } catch (const std::exception& e) {
          errors.push_back({"example." + std::to_string(m.input_examples.size() + 1), e.what()});
        }
        m.input_examples.push_back(std::move(ex));
      }
    }
  }
  if (!errors.empty()) throw invalid_manifest(m.plugin_id, errors);
  validate_manifest(m);
  return m;
}

// ---------------------------------------------------------------------------
// Registry

struct Registry {
  std::map<std::string, PluginManifest> manifests;
  std::int64_t version = 0;

  const PluginManifest* find(std::string_view id) const {
    auto it = manifests.find(std::string(id));
    return it == manifests.end() ? nullptr : &it->second;
  }
  bool operator==(const Registry&) const = default;
};

/// Returns the registry with `manifest` added. Bundled ids can never be
/// re-registered; user-defined ones are replaced.
inline Registry register_plugin(const Registry& registry, PluginManifest manifest) {
  validate_manifest(manifest);
  if (const auto* existing = registry.find(manifest.plugin_id); existing && existing->origin == Origin::bundled)
    throw Error(errc::duplicate_bundled, "plugin '" + manifest.plugin_id + "' is bundled and cannot be replaced",
                {{"plugin_id", manifest.plugin_id}});
  Registry next = registry;
  auto id = manifest.plugin_id;
  next.manifests.insert_or_assign(std::move(id), std::move(manifest));
  ++next.version;
  return next;
}

inline const PluginManifest& lookup_plugin(const Registry& registry, std::string_view id) {
  if (const auto* m = registry.find(id)) return *m;
  throw Error(errc::plugin_not_found, "no plugin '" + std::string(id) + "'", {{"plugin_id", std::string(id)}});
}

struct PluginRow {
  std::string plugin_id;
  std::string display_name;
  std::string description;
  bool operator==(const PluginRow&) const = default;
};

inline std::vector<PluginRow> list_plugins(const Registry& registry, Language lang) {
  std::vector<PluginRow> rows;
  for (const auto& [id, m] : registry.manifests) rows.push_back({id, m.display(lang), m.describe(lang)});
  return rows;  // std::map keeps ids sorted
}

inline nlohmann::json to_json(const Registry& r) {
  auto list = nlohmann::json::array();
  for (const auto& [id, m] : r.manifests) list.push_back(to_json(m));
  return {{"version", r.version}, {"manifests", list}};
}

inline Registry registry_from_json(const nlohmann::json& j) {
  Registry r;
  r.version = j.at("version").get<std::int64_t>();
  for (const auto& mj : j.at("manifests")) {
    auto m = manifest_from_json(mj);
    auto id = m.plugin_id;
    if (!r.manifests.emplace(std::move(id), std::move(m)).second)
      throw Error(errc::corrupt_record, "registry lists plugin '" + mj.value("plugin_id", "") + "' twice");
  }
  return r;
}

/// Concurrent readers get an immutable snapshot; registrations are serialized.
class PluginRegistry {
 public:
  PluginRegistry() : current_(std::make_shared<const Registry>()) {}
  explicit PluginRegistry(Registry initial) : current_(std::make_shared<const Registry>(std::move(initial))) {}

  std::shared_ptr<const Registry> snapshot() const {
    std::lock_guard lock(mutex_);
    return current_;
  }

  std::shared_ptr<const Registry> add(PluginManifest manifest) {
    std::lock_guard write(write_mutex_);
    auto next = std::make_shared<const Registry>(register_plugin(*snapshot(), std::move(manifest)));
    std::lock_guard lock(mutex_);
    current_ = next;
    return next;
  }

 private:
  mutable std::mutex mutex_;
  std::mutex write_mutex_;
  std::shared_ptr<const Registry> current_;
};

}  // namespace helmsman::plugins
