#pragma once

// Minimal HTML tooling for documentation fragments: a forgiving tokenizer
// with source positions, a whitelist sanitizer and plain-text extraction.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "helmsman/error.hpp"
#include "helmsman/text.hpp"

namespace helmsman::html {

enum class TokenKind { text, start_tag, end_tag, comment, doctype };

struct Attribute {
  std::string name;   // lower-cased
  std::string value;  // raw, entities not decoded
};

struct Token {
  TokenKind kind = TokenKind::text;
  std::string name;  // lower-cased tag name
  std::vector<Attribute> attributes;
  bool self_closing = false;
  std::string data;  // text or comment body
  int line = 1;
  int column = 1;

  const std::string* attr(std::string_view n) const {
    for (const auto& a : attributes)
      if (a.name == n) return &a.value;
    return nullptr;
  }
};

inline bool is_raw_text_element(std::string_view name) { return name == "script" || name == "style"; }

inline std::optional<int> heading_level(std::string_view name) {
  if (name.size() == 2 && name[0] == 'h' && name[1] >= '1' && name[1] <= '6') return name[1] - '0';
  return std::nullopt;
}

class Tokenizer {
 public:
  explicit Tokenizer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (pos_ < src_.size()) {
      if (src_[pos_] == '<') {
        if (auto t = try_markup()) {
          const bool raw = t->kind == TokenKind::start_tag && is_raw_text_element(t->name) && !t->self_closing;
          std::string name = t->name;
          out.push_back(std::move(*t));
          if (raw) read_raw_text(name, out);
          continue;
        }
      }
      read_text(out);
    }
    return out;
  }

 private:
  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;

  void advance(std::size_t n) {
    for (std::size_t i = 0; i < n && pos_ < src_.size(); ++i, ++pos_) {
      if (src_[pos_] == '\n') {
        ++line_;
        col_ = 1;
      } else if ((static_cast<unsigned char>(src_[pos_]) & 0xC0) != 0x80) {
        ++col_;
      }
    }
  }

  void read_text(std::vector<Token>& out) {
    Token t;
    t.kind = TokenKind::text;
    t.line = line_;
    t.column = col_;
    std::size_t start = pos_;
    advance(1);  // a lone '<' that did not open markup is text
    while (pos_ < src_.size() && src_[pos_] != '<') advance(1);
    t.data = std::string(src_.substr(start, pos_ - start));
    if (!out.empty() && out.back().kind == TokenKind::text) {
      out.back().data += t.data;
    } else {
      out.push_back(std::move(t));
    }
  }

  void read_raw_text(const std::string& name, std::vector<Token>& out) {
    const std::string close = "</" + name;
    std::size_t start = pos_;
    std::size_t i = pos_;
    for (;;) {
      i = src_.find("</", i);
      if (i == std::string_view::npos) {
        i = src_.size();
        break;
      }
      if (text::to_lower_ascii(src_.substr(i, close.size())) == close) break;
      i += 2;
    }
    if (i > start) {
      Token t;
      t.kind = TokenKind::text;
      t.line = line_;
      t.column = col_;
      t.data = std::string(src_.substr(start, i - start));
      out.push_back(std::move(t));
    }
    advance(i - start);
  }

  static bool is_name_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
           c == ':' || c == '.';
  }

  std::optional<Token> try_markup() {
    Token t;
    t.line = line_;
    t.column = col_;
    const auto rest = src_.substr(pos_);
    if (rest.starts_with("<!--")) {
      auto end = rest.find("-->", 4);
      std::size_t len = end == std::string_view::npos ? rest.size() : end + 3;
      t.kind = TokenKind::comment;
      t.data = std::string(rest.substr(4, (end == std::string_view::npos ? rest.size() : end) - 4));
      advance(len);
      return t;
    }
    if (rest.starts_with("<!") || rest.starts_with("<?")) {
      auto end = rest.find('>');
      std::size_t len = end == std::string_view::npos ? rest.size() : end + 1;
      t.kind = TokenKind::doctype;
      t.data = std::string(rest.substr(0, len));
      advance(len);
      return t;
    }
    std::size_t i = 1;
    bool closing = false;
    if (i < rest.size() && rest[i] == '/') {
      closing = true;
      ++i;
    }
    if (i >= rest.size() || !((rest[i] >= 'a' && rest[i] <= 'z') || (rest[i] >= 'A' && rest[i] <= 'Z')))
      return std::nullopt;
    std::size_t name_start = i;
    while (i < rest.size() && is_name_char(rest[i])) ++i;
    t.name = text::to_lower_ascii(rest.substr(name_start, i - name_start));
    t.kind = closing ? TokenKind::end_tag : TokenKind::start_tag;

    // Attributes
    for (;;) {
      while (i < rest.size() && text::is_space(rest[i])) ++i;
      if (i >= rest.size()) break;
      if (rest[i] == '>') {
        ++i;
        advance(i);
        return t;
      }
      if (rest[i] == '/' && i + 1 < rest.size() && rest[i + 1] == '>') {
        t.self_closing = true;
        i += 2;
        advance(i);
        return t;
      }
      std::size_t an = i;
      while (i < rest.size() && !text::is_space(rest[i]) && rest[i] != '=' && rest[i] != '>' &&
             !(rest[i] == '/' && i + 1 < rest.size() && rest[i + 1] == '>'))
        ++i;
      if (i == an) {
        ++i;  // stray character
        continue;
      }
      Attribute a;
      a.name = text::to_lower_ascii(rest.substr(an, i - an));
      while (i < rest.size() && text::is_space(rest[i])) ++i;
      if (i < rest.size() && rest[i] == '=') {
        ++i;
        while (i < rest.size() && text::is_space(rest[i])) ++i;
        if (i < rest.size() && (rest[i] == '"' || rest[i] == '\'')) {
          char q = rest[i++];
          std::size_t vs = i;
          while (i < rest.size() && rest[i] != q) ++i;
          a.value = std::string(rest.substr(vs, i - vs));
          if (i < rest.size()) ++i;
        } else {
          std::size_t vs = i;
          while (i < rest.size() && !text::is_space(rest[i]) && rest[i] != '>') ++i;
          a.value = std::string(rest.substr(vs, i - vs));
        }
      }
      if (!closing) t.attributes.push_back(std::move(a));
    }
    // Unterminated tag: treat the rest of the input as consumed.
    advance(rest.size());
    return t;
  }
};

inline std::vector<Token> tokenize(std::string_view src) { return Tokenizer(src).run(); }

// ---------------------------------------------------------------------------
// Entities and text

inline std::string decode_entities(std::string_view s) {
  static const std::pair<std::string_view, char32_t> kNamed[] = {
      {"amp", U'&'},     {"lt", U'<'},      {"gt", U'>'},       {"quot", U'"'},     {"apos", U'\''},
      {"nbsp", 0xA0},    {"copy", 0xA9},    {"reg", 0xAE},      {"mdash", 0x2014},  {"ndash", 0x2013},
      {"hellip", 0x2026}, {"laquo", 0xAB},  {"raquo", 0xBB},    {"deg", 0xB0},      {"plusmn", 0xB1},
      {"micro", 0xB5},   {"times", 0xD7},   {"rarr", 0x2192},   {"larr", 0x2190},   {"trade", 0x2122},
      {"lsquo", 0x2018}, {"rsquo", 0x2019}, {"ldquo", 0x201C},  {"rdquo", 0x201D},  {"middot", 0xB7},
  };
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] != '&') {
      out += s[i++];
      continue;
    }
    auto semi = s.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 12) {
      out += s[i++];
      continue;
    }
    auto name = s.substr(i + 1, semi - i - 1);
    std::optional<char32_t> cp;
    if (!name.empty() && name[0] == '#') {
      std::uint32_t v = 0;
      bool hex = name.size() > 1 && (name[1] == 'x' || name[1] == 'X');
      auto digits = name.substr(hex ? 2 : 1);
      bool ok = !digits.empty();
      for (char c : digits) {
        int d = (c >= '0' && c <= '9') ? c - '0'
                : (hex && c >= 'a' && c <= 'f') ? c - 'a' + 10
                : (hex && c >= 'A' && c <= 'F') ? c - 'A' + 10
                                                 : -1;
        if (d < 0 || v > 0x10FFFF) {
          ok = false;
          break;
        }
        v = v * (hex ? 16 : 10) + static_cast<std::uint32_t>(d);
      }
      if (ok && v > 0 && v <= 0x10FFFF && !(v >= 0xD800 && v <= 0xDFFF)) cp = v;
    } else {
      for (const auto& [n, c] : kNamed)
        if (n == name) cp = c;
    }
    if (!cp) {
      out += s[i++];
      continue;
    }
    text::append_utf8(out, *cp);
    i = semi + 1;
  }
  return out;
}

inline std::string escape_text(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string escape_attribute(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline bool is_block_element(std::string_view name) {
  static const std::set<std::string_view> kBlock{
      "p",     "div",   "li",     "ul",    "ol",    "br",       "hr",         "tr",    "td",  "th",
      "table", "thead", "tbody",  "pre",   "section", "article", "blockquote", "dl",    "dt",  "dd",
      "h1",    "h2",    "h3",     "h4",    "h5",    "h6",       "figure",     "figcaption", "nav", "main",
      "header", "footer", "img"};
  return kBlock.count(name) > 0;
}

/// Collapses runs of whitespace (including U+00A0) into one space and trims.
inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char32_t cp : text::decode_utf8(s)) {
    const bool ws = cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == U'\f' || cp == U'\v' ||
                    cp == 0xA0 || cp == 0x3000;
    if (ws) {
      pending_space = true;
      continue;
    }
    if (pending_space && !out.empty()) out += ' ';
    pending_space = false;
    text::append_utf8(out, cp);
  }
  return out;
}

/// Text content with tags removed, entities decoded, whitespace normalized.
/// script/style bodies are skipped.
inline std::string to_text(std::string_view html) {
  std::string raw;
  bool skipping = false;
  for (const auto& t : tokenize(html)) {
    switch (t.kind) {
      case TokenKind::text:
        if (!skipping) raw += decode_entities(t.data);
        break;
      case TokenKind::start_tag:
        if (is_raw_text_element(t.name) && !t.self_closing) skipping = true;
        if (is_block_element(t.name)) raw += ' ';
        break;
      case TokenKind::end_tag:
        if (is_raw_text_element(t.name)) skipping = false;
        if (is_block_element(t.name)) raw += ' ';
        break;
      default:
        break;
    }
  }
  return normalize_whitespace(raw);
}

// ---------------------------------------------------------------------------
// Sanitizer

struct SourceLocation {
  std::string file;
  int line = 0;
  int column = 0;

  std::string str() const { return file + ":" + std::to_string(line) + ":" + std::to_string(column); }
};

/// Optional hooks that rewrite `href` / `src` values of kept elements.
struct LinkRewriter {
  std::function<std::string(std::string_view href)> href;
  std::function<std::string(std::string_view src)> image;
};

struct SanitizePolicy {
  std::set<std::string, std::less<>> allowed = {
      "p",   "br",     "hr",    "h1",    "h2",     "h3",    "h4",    "h5",   "h6",         "ul",
      "ol",  "li",     "dl",    "dt",    "dd",     "a",     "em",    "strong", "b",        "i",
      "u",   "code",   "pre",   "kbd",   "samp",   "var",   "sub",   "sup",  "small",      "mark",
      "span", "div",   "section", "blockquote", "img", "figure", "figcaption", "table", "thead", "tbody",
      "tfoot", "tr",   "th",    "td",    "caption", "abbr", "cite",  "q",    "del",        "ins"};
  // Removed together with their content.
  std::set<std::string, std::less<>> stripped = {"script", "style", "noscript", "template", "head", "title"};
  // Constructs that cannot be made safe; ingestion fails on them.
  std::set<std::string, std::less<>> rejected = {"iframe", "frame", "frameset", "object", "embed",  "applet",
                                                 "form",   "input", "button",   "textarea", "select", "link",
                                                 "meta",   "base",  "svg",      "math"};
};

inline bool is_void_element(std::string_view n) { return n == "br" || n == "hr" || n == "img"; }

inline bool attribute_allowed(std::string_view tag, std::string_view attr) {
  if (attr == "id" || attr == "class" || attr == "title" || attr == "lang") return true;
  if (tag == "a") return attr == "href";
  if (tag == "img") return attr == "src" || attr == "alt" || attr == "width" || attr == "height";
  if (tag == "td" || tag == "th") return attr == "colspan" || attr == "rowspan";
  if (tag == "ol") return attr == "start";
  return false;
}

inline bool dangerous_url(std::string_view url) {
  std::string lowered;
  for (char c : url)
    if (!text::is_space(c)) lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return lowered.starts_with("javascript:") || lowered.starts_with("vbscript:") ||
         (lowered.starts_with("data:") && !lowered.starts_with("data:image/"));
}

/// Re-emits `tokens` keeping only whitelisted markup. Unknown elements are
/// unwrapped (content kept), unbalanced end tags dropped and open elements
/// closed at the end. Throws sanitize_reject on rejected constructs.
inline std::string sanitize(std::span<const Token> tokens, const std::string& file, const LinkRewriter& links = {},
                            const SanitizePolicy& policy = {}) {
  std::string out;
  std::vector<std::string> open;
  int strip_depth = 0;
  std::string strip_name;

  auto reject = [&](const Token& t, const std::string& what) {
    SourceLocation loc{file, t.line, t.column};
    return Error(errc::sanitize_reject, loc.str() + ": disallowed markup " + what,
                 {{"file", file}, {"line", t.line}, {"column", t.column}, {"construct", what}});
  };

  for (const auto& t : tokens) {
    if (strip_depth > 0) {
      if (t.kind == TokenKind::start_tag && t.name == strip_name && !t.self_closing) ++strip_depth;
      if (t.kind == TokenKind::end_tag && t.name == strip_name) --strip_depth;
      continue;
    }
    switch (t.kind) {
      case TokenKind::comment:
      case TokenKind::doctype:
        break;
      case TokenKind::text:
        // Text keeps its entities; only stray angle brackets are escaped.
        for (char c : t.data) {
          if (c == '<')
            out += "&lt;";
          else if (c == '>')
            out += "&gt;";
          else
            out += c;
        }
        break;
      case TokenKind::start_tag: {
        if (policy.rejected.count(t.name)) throw reject(t, "<" + t.name + ">");
        if (policy.stripped.count(t.name)) {
          if (!t.self_closing) {
            strip_depth = 1;
            strip_name = t.name;
          }
          break;
        }
        if (!policy.allowed.count(t.name)) break;  // unwrap
        out += '<';
        out += t.name;
        for (const auto& a : t.attributes) {
          if (!attribute_allowed(t.name, a.name)) continue;
          std::string value = a.value;
          if (a.name == "href" || a.name == "src") {
            if (dangerous_url(decode_entities(value))) throw reject(t, a.name + "=\"" + value + "\"");
            if (a.name == "href" && links.href) value = links.href(value);
            if (a.name == "src" && links.image) value = links.image(value);
          }
          out += ' ';
          out += a.name;
          out += "=\"";
          out += escape_attribute(decode_entities(value));
          out += '"';
        }
        out += '>';
        if (!is_void_element(t.name)) open.push_back(t.name);
        break;
      }
      case TokenKind::end_tag: {
        auto it = std::find(open.rbegin(), open.rend(), t.name);
        if (it == open.rend()) break;  // unbalanced
        // Close everything opened after the matching element.
        while (!open.empty()) {
          auto name = open.back();
          open.pop_back();
          out += "</" + name + ">";
          if (name == t.name) break;
        }
        break;
      }
    }
  }
  while (!open.empty()) {
    out += "</" + open.back() + ">";
    open.pop_back();
  }
  return out;
}

}  // namespace helmsman::html
