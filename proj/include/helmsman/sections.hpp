#pragma once

// Line-oriented section format shared by taxonomy and plugin manifest files:
//
//   # comment
//   key = value            (preamble entries, before any section)
//   [kind argument]
//   key = value            (values use \n \t \\ escapes)
//
// Keys are `[a-z0-9_-]+`; a key may appear once per section.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "helmsman/error.hpp"
#include "helmsman/text.hpp"

namespace helmsman {

struct SectionEntry {
  std::string key;
  std::string value;
  int line = 0;
};

struct Section {
  std::string kind;
  std::string argument;  // may be empty
  int line = 0;
  std::vector<SectionEntry> entries;

  const SectionEntry* find(std::string_view key) const {
    for (const auto& e : entries)
      if (e.key == key) return &e;
    return nullptr;
  }
  std::optional<std::string> get(std::string_view key) const {
    if (const auto* e = find(key)) return e->value;
    return std::nullopt;
  }
};

struct SectionDocument {
  std::vector<SectionEntry> preamble;
  std::vector<Section> sections;
};

inline Error section_parse_error(std::string_view source, int line, const std::string& what) {
  return Error(errc::parse_error, std::string(source) + ":" + std::to_string(line) + ": " + what,
               {{"source", std::string(source)}, {"line", line}});
}

inline SectionDocument parse_sections(std::string_view content, std::string_view source) {
  SectionDocument doc;
  int line_no = 0;
  for (const auto& raw : text::split_lines(content)) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw section_parse_error(source, line_no, "unterminated section header");
      auto inner = text::trim(line.substr(1, line.size() - 2));
      auto space = inner.find(' ');
      Section section;
      section.line = line_no;
      section.kind = std::string(inner.substr(0, space));
      if (space != std::string_view::npos) section.argument = std::string(text::trim(inner.substr(space + 1)));
      if (section.kind.empty()) throw section_parse_error(source, line_no, "empty section header");
      doc.sections.push_back(std::move(section));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw section_parse_error(source, line_no, "expected 'key = value'");
    const auto key = text::trim(line.substr(0, eq));
    if (!text::is_param_name(key)) throw section_parse_error(source, line_no, "invalid key '" + std::string(key) + "'");
    auto value = text::unescape_field(text::trim(line.substr(eq + 1)));
    if (!value) throw section_parse_error(source, line_no, "invalid escape sequence");
    auto& entries = doc.sections.empty() ? doc.preamble : doc.sections.back().entries;
    for (const auto& e : entries)
      if (e.key == key) throw section_parse_error(source, line_no, "duplicate key '" + std::string(key) + "'");
    entries.push_back({std::string(key), std::move(*value), line_no});
  }
  return doc;
}

inline void write_entry(std::string& out, std::string_view key, std::string_view value) {
  out += key;
  out += " = ";
  out += text::escape_field(value);
  out += '\n';
}

}  // namespace helmsman
