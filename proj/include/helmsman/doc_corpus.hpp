#pragma once

// Documentation corpus: curated decomposition of source HTML into
// per-subtask fragments, and stitching of selected fragments into one
// self-contained tailored document.
//
// Each language directory holds HTML sources plus `mapping.tsv`:
//
//   <fragment-id> TAB <source-file> TAB <anchor> TAB <language>
//
// A fragment starts after the heading whose id is <anchor> and runs up to
// the next heading of the same or a higher level, the next mapped heading,
// or the end of the document, whichever comes first.

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "helmsman/clock.hpp"
#include "helmsman/error.hpp"
#include "helmsman/html.hpp"
#include "helmsman/io.hpp"
#include "helmsman/language.hpp"
#include "helmsman/text.hpp"

namespace helmsman::docs {

inline constexpr std::string_view kMappingFile = "mapping.tsv";

struct Asset {
  std::string target;  // path inside the exported document folder
  std::string source;  // absolute source path
  bool operator==(const Asset&) const = default;
};

struct DocFragment {
  std::string id;
  Language language = Language::en;
  std::string title;
  std::string body_html;
  std::string source_ref;
  std::string checksum;
  std::vector<Asset> assets;

  bool operator==(const DocFragment&) const = default;
};

struct MappingEntry {
  std::string fragment_id;
  std::string source_file;
  std::string anchor;
  Language language = Language::en;
  int line = 0;
};

inline std::vector<MappingEntry> parse_mapping(std::string_view content, std::string_view source) {
  std::vector<MappingEntry> out;
  int line_no = 0;
  for (const auto& raw : text::split_lines(content)) {
    ++line_no;
    if (text::is_blank(raw) || text::trim(raw).front() == '#') continue;
    auto fail = [&](const std::string& what) {
      return Error(errc::parse_error, std::string(source) + ":" + std::to_string(line_no) + ": " + what,
                   {{"source", std::string(source)}, {"line", line_no}});
    };
    auto fields = text::split(raw, '\t');
    if (fields.size() != 4) throw fail("expected 4 tab-separated fields");
    MappingEntry e;
    e.fragment_id = std::string(text::trim(fields[0]));
    e.source_file = std::string(text::trim(fields[1]));
    e.anchor = std::string(text::trim(fields[2]));
    e.line = line_no;
    if (!text::is_slug(e.fragment_id)) throw fail("fragment id '" + e.fragment_id + "' must match [a-z0-9-]{1,64}");
    if (e.source_file.empty() || e.anchor.empty()) throw fail("empty source file or anchor");
    const auto lang = text::trim(fields[3]);
    if (lang == "en")
      e.language = Language::en;
    else if (lang == "zh")
      e.language = Language::zh;
    else
      throw fail("unknown language '" + std::string(lang) + "'");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string fragment_checksum(std::string_view body_html) { return text::sha256_hex(body_html); }

/// Plain text of one fragment body.
inline std::string fragment_text(const DocFragment& f) { return html::to_text(f.body_html); }

// ---------------------------------------------------------------------------
// Ingestion

namespace detail {

struct SourceFile {
  std::vector<html::Token> tokens;
};

inline bool has_scheme(std::string_view url) {
  auto colon = url.find(':');
  if (colon == std::string_view::npos) return false;
  auto slash = url.find_first_of("/#?");
  return slash == std::string_view::npos || colon < slash;
}

inline std::string heading_text(std::span<const html::Token> tokens, std::size_t start, std::size_t end) {
  std::string raw;
  for (std::size_t i = start; i < end; ++i)
    if (tokens[i].kind == html::TokenKind::text) raw += html::decode_entities(tokens[i].data);
  return html::normalize_whitespace(raw);
}

}  // namespace detail

/// Ingests every mapping entry of `language` found in `source_dir/mapping.tsv`.
/// Output order follows the mapping file; the result is a pure function of
/// the directory contents.
inline std::vector<DocFragment> ingest(const std::filesystem::path& source_dir, Language language) {
  namespace fs = std::filesystem;
  const auto mapping_path = source_dir / kMappingFile;
  const auto mapping = parse_mapping(read_text_file(mapping_path), mapping_path.string());

  std::vector<const MappingEntry*> entries;
  std::map<std::pair<std::string, std::string>, std::string> anchor_to_fragment;  // (file, anchor) -> id
  std::map<std::string, std::string> first_fragment_of_file;
  for (const auto& e : mapping) {
    if (e.language != language) continue;
    entries.push_back(&e);
    anchor_to_fragment.emplace(std::make_pair(e.source_file, e.anchor), e.fragment_id);
    first_fragment_of_file.emplace(e.source_file, e.fragment_id);
  }

  std::map<std::string, detail::SourceFile> files;
  std::set<std::string> seen_ids;
  std::vector<DocFragment> out;

  for (const auto* entry : entries) {
    if (!seen_ids.insert(entry->fragment_id).second)
      throw Error(errc::duplicate_fragment,
                  mapping_path.string() + ":" + std::to_string(entry->line) + ": fragment '" + entry->fragment_id +
                      "' is mapped twice for " + std::string(to_string(language)),
                  {{"fragment", entry->fragment_id}, {"line", entry->line}});
    const auto file_path = source_dir / entry->source_file;
    auto it = files.find(entry->source_file);
    if (it == files.end()) {
      if (!fs::is_regular_file(file_path))
        throw Error(errc::mapping_miss,
                    "mapping entry '" + entry->fragment_id + "' names missing source file " + entry->source_file,
                    {{"anchor", entry->anchor}, {"file", entry->source_file}, {"fragment", entry->fragment_id}});
      it = files.emplace(entry->source_file, detail::SourceFile{html::tokenize(read_text_file(file_path))}).first;
    }
    const auto& tokens = it->second.tokens;

    // Locate the anchored heading, tracking the heading path above it.
    std::optional<std::size_t> start;
    int level = 0;
    std::map<int, std::string> path_titles;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto& t = tokens[i];
      if (t.kind != html::TokenKind::start_tag) continue;
      auto lvl = html::heading_level(t.name);
      if (!lvl) continue;
      std::size_t close = i + 1;
      while (close < tokens.size() && !(tokens[close].kind == html::TokenKind::end_tag && tokens[close].name == t.name))
        ++close;
      const auto* id = t.attr("id");
      if (id && *id == entry->anchor) {
        start = i;
        level = *lvl;
        break;
      }
      path_titles.erase(path_titles.lower_bound(*lvl), path_titles.end());
      path_titles[*lvl] = detail::heading_text(tokens, i + 1, close);
    }
    if (!start)
      throw Error(errc::mapping_miss,
                  "anchor '" + entry->anchor + "' not found in " + entry->source_file,
                  {{"anchor", entry->anchor}, {"file", entry->source_file}, {"fragment", entry->fragment_id}});

    const auto& heading = tokens[*start];
    std::size_t heading_end = *start + 1;
    while (heading_end < tokens.size() &&
           !(tokens[heading_end].kind == html::TokenKind::end_tag && tokens[heading_end].name == heading.name))
      ++heading_end;
    std::size_t body_begin = std::min(heading_end + 1, tokens.size());
    std::size_t body_end = body_begin;
    for (; body_end < tokens.size(); ++body_end) {
      const auto& t = tokens[body_end];
      if (t.kind == html::TokenKind::end_tag && (t.name == "body" || t.name == "html")) break;
      if (t.kind != html::TokenKind::start_tag) continue;
      auto lvl = html::heading_level(t.name);
      if (!lvl) continue;
      const auto* id = t.attr("id");
      if (*lvl <= level || (id && anchor_to_fragment.count({entry->source_file, *id}))) break;
    }

    DocFragment fragment;
    fragment.id = entry->fragment_id;
    fragment.language = language;
    fragment.title = detail::heading_text(tokens, *start + 1, heading_end);

    std::string ref = entry->source_file + "#" + entry->anchor;
    std::vector<std::string> crumbs;
    for (const auto& [lvl, title] : path_titles)
      if (lvl < level) crumbs.push_back(title);
    crumbs.push_back(fragment.title);
    fragment.source_ref = ref + " (" + text::join(crumbs, " > ") + ")";

    const auto source_file = entry->source_file;
    html::LinkRewriter links;
    links.href = [&](std::string_view href) -> std::string {
      if (detail::has_scheme(href)) return std::string(href);
      auto hash = href.find('#');
      std::string file(href.substr(0, hash));
      std::string anchor = hash == std::string_view::npos ? "" : std::string(href.substr(hash + 1));
      if (file.empty()) {
        file = source_file;
      } else {
        file = (fs::path(source_file).parent_path() / file).lexically_normal().generic_string();
      }
      if (auto f = anchor_to_fragment.find({file, anchor}); f != anchor_to_fragment.end()) return "#frag-" + f->second;
      if (!anchor.empty()) return "#" + anchor;
      if (auto f = first_fragment_of_file.find(file); f != first_fragment_of_file.end()) return "#frag-" + f->second;
      return "#";
    };
    links.image = [&](std::string_view src) -> std::string {
      if (detail::has_scheme(src)) return std::string(src);
      auto rel = (fs::path(source_file).parent_path() / std::string(src)).lexically_normal();
      if (rel.empty() || rel.is_absolute() || *rel.begin() == "..")
        throw Error(errc::sanitize_reject, source_file + ": image '" + std::string(src) + "' escapes the source tree",
                    {{"file", source_file}, {"construct", "img src=\"" + std::string(src) + "\""}});
      const auto abs = fs::weakly_canonical(source_dir / rel);
      if (!fs::is_regular_file(abs))
        throw Error(errc::io_error, source_file + ": image '" + std::string(src) + "' does not exist",
                    {{"file", source_file}, {"path", abs.string()}});
      auto flat = rel.generic_string();
      std::replace(flat.begin(), flat.end(), '/', '_');
      Asset asset{"assets/" + std::string(to_string(language)) + "-" + flat, abs.string()};
      if (std::find(fragment.assets.begin(), fragment.assets.end(), asset) == fragment.assets.end())
        fragment.assets.push_back(asset);
      return asset.target;
    };

    fragment.body_html = html::sanitize(std::span(tokens).subspan(body_begin, body_end - body_begin),
                                        entry->source_file, links);
    fragment.checksum = fragment_checksum(fragment.body_html);
    out.push_back(std::move(fragment));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Store

class FragmentStore {
 public:
  void add(DocFragment fragment) {
    if (fragment.checksum != fragment_checksum(fragment.body_html))
      throw Error(errc::invalid_request, "checksum mismatch for fragment '" + fragment.id + "'",
                  {{"fragment", fragment.id}});
    auto key = std::make_pair(fragment.id, fragment.language);
    if (fragments_.count(key))
      throw Error(errc::duplicate_fragment,
                  "fragment '" + fragment.id + "' already present for " + std::string(to_string(fragment.language)),
                  {{"fragment", fragment.id}, {"language", to_string(fragment.language)}});
    fragments_.emplace(std::move(key), std::move(fragment));
    version_.clear();
  }

  void add_all(std::vector<DocFragment> fragments) {
    for (auto& f : fragments) add(std::move(f));
  }

  const DocFragment* find(std::string_view id, Language lang) const {
    auto it = fragments_.find(std::make_pair(std::string(id), lang));
    return it == fragments_.end() ? nullptr : &it->second;
  }

  bool contains(std::string_view id, Language lang) const { return find(id, lang) != nullptr; }

  std::vector<std::string> ids(Language lang) const {
    std::vector<std::string> out;
    for (const auto& [key, f] : fragments_)
      if (key.second == lang) out.push_back(key.first);
    return out;
  }

  std::size_t size() const { return fragments_.size(); }

  /// Content hash over every (id, language, checksum); changes whenever any
  /// fragment does.
  const std::string& version() const {
    if (version_.empty()) {
      std::string material;
      for (const auto& [key, f] : fragments_)
        material += key.first + "\t" + std::string(to_string(key.second)) + "\t" + f.checksum + "\n";
      version_ = text::sha256_hex(material).substr(0, 16);
    }
    return version_;
  }

 private:
  std::map<std::pair<std::string, Language>, DocFragment> fragments_;
  mutable std::string version_;
};

/// Fragment ids present in one language but not the other.
inline std::vector<std::pair<std::string, Language>> parity_gaps(const FragmentStore& store) {
  std::vector<std::pair<std::string, Language>> gaps;
  const auto en = store.ids(Language::en);
  const auto zh = store.ids(Language::zh);
  for (const auto& id : en)
    if (!std::binary_search(zh.begin(), zh.end(), id)) gaps.emplace_back(id, Language::zh);
  for (const auto& id : zh)
    if (!std::binary_search(en.begin(), en.end(), id)) gaps.emplace_back(id, Language::en);
  return gaps;
}

// ---------------------------------------------------------------------------
// Stitching

struct TailoredDocument {
  std::string doc_id;
  std::vector<std::string> fragment_ids;
  Language language = Language::en;
  std::string html;
  Timestamp created_at{};

  bool operator==(const TailoredDocument&) const = default;
};

inline std::string document_id(std::span<const std::string> fragment_ids, Language lang,
                               std::string_view corpus_version) {
  std::string material = std::string(to_string(lang)) + "\n" + std::string(corpus_version) + "\n";
  for (const auto& id : fragment_ids) material += id + "\n";
  return "doc-" + text::sha256_hex(material).substr(0, 16);
}

inline constexpr std::string_view kStylesheet = R"css(
body { font-family: -apple-system, "Segoe UI", "Noto Sans", "Noto Sans CJK SC", sans-serif; margin: 0; display: flex; color: #1f2328; }
nav.toc { position: sticky; top: 0; align-self: flex-start; width: 16rem; max-height: 100vh; overflow-y: auto; padding: 1rem; border-right: 1px solid #d0d7de; background: #f6f8fa; }
nav.toc h1 { font-size: 1rem; margin-top: 0; }
nav.toc ol { padding-left: 1.2rem; }
nav.toc a { color: #0969da; text-decoration: none; }
nav.toc a.active { font-weight: 600; }
main { flex: 1; padding: 1rem 2rem; max-width: 56rem; }
section.fragment { border-bottom: 1px solid #d0d7de; padding-bottom: 1rem; }
section.fragment h2 { border-left: 4px solid #0969da; padding-left: .5rem; }
code, kbd, pre { background: #f6f8fa; border-radius: 4px; padding: 0 .25rem; }
img { max-width: 100%; }
)css";

inline constexpr std::string_view kNavigationScript = R"js(
(function () {
  var links = document.querySelectorAll('nav.toc a');
  function mark() {
    var current = null;
    document.querySelectorAll('section.fragment').forEach(function (s) {
      if (s.getBoundingClientRect().top < 80) current = s.id;
    });
    links.forEach(function (a) { a.classList.toggle('active', a.getAttribute('href') === '#' + current); });
  }
  document.addEventListener('scroll', mark);
  mark();
})();
)js";

inline std::string fragment_begin_marker(std::string_view id) { return "<!-- fragment:" + std::string(id) + " -->"; }
inline std::string fragment_end_marker(std::string_view id) { return "<!-- /fragment:" + std::string(id) + " -->"; }

/// Byte-identical for identical (ids, language, store contents); only
/// `created_at` depends on the clock and it never reaches the HTML.
inline TailoredDocument stitch(std::span<const std::string> fragment_ids, Language lang, const FragmentStore& store,
                               Clock& clock) {
  if (fragment_ids.empty()) throw Error(errc::empty_selection, "no fragments selected");
  std::vector<const DocFragment*> fragments;
  std::set<std::string> seen;
  for (const auto& id : fragment_ids) {
    if (!seen.insert(id).second)
      throw Error(errc::invalid_request, "fragment '" + id + "' selected twice", {{"fragment", id}});
    const auto* f = store.find(id, lang);
    if (!f)
      throw Error(errc::unknown_fragment, "unknown fragment '" + id + "' (" + std::string(to_string(lang)) + ")",
                  {{"fragment", id}, {"language", to_string(lang)}});
    fragments.push_back(f);
  }

  TailoredDocument doc;
  doc.fragment_ids.assign(fragment_ids.begin(), fragment_ids.end());
  doc.language = lang;
  doc.doc_id = document_id(fragment_ids, lang, store.version());
  doc.created_at = clock.now();

  const bool zh = lang == Language::zh;
  std::string& h = doc.html;
  h += "<!DOCTYPE html>\n<html lang=\"" + std::string(to_string(lang)) + "\">\n<head>\n<meta charset=\"utf-8\">\n";
  h += "<meta name=\"doc-id\" content=\"" + doc.doc_id + "\">\n";
  h += std::string("<title>") + (zh ? "定制文档" : "Tailored documentation") + "</title>\n";
  h += "<style>" + std::string(kStylesheet) + "</style>\n</head>\n<body>\n";
  h += "<nav class=\"toc\" id=\"toc\">\n<h1>" + std::string(zh ? "目录" : "Contents") + "</h1>\n<ol>\n";
  for (const auto* f : fragments)
    h += "<li><a href=\"#frag-" + f->id + "\">" + html::escape_text(f->title) + "</a></li>\n";
  h += "</ol>\n</nav>\n<main>\n";
  for (const auto* f : fragments) {
    h += "<section class=\"fragment\" id=\"frag-" + f->id + "\" data-fragment=\"" + f->id + "\">\n";
    h += "<h2>" + html::escape_text(f->title) + "</h2>\n";
    h += fragment_begin_marker(f->id) + "\n" + f->body_html + "\n" + fragment_end_marker(f->id) + "\n";
    h += "</section>\n";
  }
  h += "</main>\n<script>" + std::string(kNavigationScript) + "</script>\n</body>\n</html>\n";
  return doc;
}

/// Plain text handed to question answering: each fragment's text preceded by
/// a `== <fragment_id> ==` marker line, in document order.
inline std::string qa_context(const TailoredDocument& doc) {
  std::string out;
  for (const auto& id : doc.fragment_ids) {
    const auto begin_marker = fragment_begin_marker(id);
    const auto end_marker = fragment_end_marker(id);
    auto begin = doc.html.find(begin_marker);
    auto end = begin == std::string::npos ? std::string::npos : doc.html.find(end_marker, begin);
    std::string body;
    if (begin != std::string::npos && end != std::string::npos) {
      begin += begin_marker.size();
      body = html::to_text(std::string_view(doc.html).substr(begin, end - begin));
    }
    if (!out.empty()) out += "\n\n";
    out += "== " + id + " ==\n" + body;
  }
  return out;
}

/// Writes `<out_dir>/<doc_id>/index.html` and copies referenced images into
/// its `assets/` folder so the document works offline.
inline std::filesystem::path export_document(const TailoredDocument& doc, const FragmentStore& store,
                                             const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  const auto dir = out_dir / doc.doc_id;
  fs::create_directories(dir);
  for (const auto& id : doc.fragment_ids) {
    const auto* f = store.find(id, doc.language);
    if (!f) continue;
    for (const auto& asset : f->assets) {
      const auto target = dir / asset.target;
      fs::create_directories(target.parent_path());
      fs::copy_file(asset.source, target, fs::copy_options::overwrite_existing);
    }
  }
  const auto index = dir / "index.html";
  write_file_atomic(index, doc.html);
  return index;
}

/// Tailored documents keyed by doc_id; never expires within a run.
class DocumentCache {
 public:
  std::shared_ptr<const TailoredDocument> get(std::string_view doc_id) const {
    std::lock_guard lock(mutex_);
    auto it = docs_.find(std::string(doc_id));
    return it == docs_.end() ? nullptr : it->second;
  }

  /// Returns the cached document for this selection, stitching it first when
  /// absent. Concurrent callers observe a single insertion.
  std::shared_ptr<const TailoredDocument> get_or_stitch(std::span<const std::string> fragment_ids, Language lang,
                                                        const FragmentStore& store, Clock& clock) {
    const auto id = document_id(fragment_ids, lang, store.version());
    if (auto existing = get(id)) return existing;
    auto doc = std::make_shared<const TailoredDocument>(stitch(fragment_ids, lang, store, clock));
    std::lock_guard lock(mutex_);
    return docs_.emplace(id, std::move(doc)).first->second;
  }

  void put(TailoredDocument doc) {
    std::lock_guard lock(mutex_);
    auto id = doc.doc_id;
    docs_.emplace(std::move(id), std::make_shared<const TailoredDocument>(std::move(doc)));
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return docs_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const TailoredDocument>> docs_;
};

}  // namespace helmsman::docs
