#pragma once

// Main-task / subtask tree the router selects from.
//
// File format (see sections.hpp for the lexical rules):
//
//   version = 1
//
//   [main routing]
//   title_en = Track routing
//   title_zh = 布线
//   description = Interactive routing of copper tracks ...
//
//   [sub diff-pairs]
//   parent = routing
//   title_en = Differential pairs
//   title_zh = 差分对
//   description = ...
//   fragments = diff-pairs, diff-pair-rules
//
// Subtasks keep file order within their parent.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "helmsman/error.hpp"
#include "helmsman/io.hpp"
#include "helmsman/language.hpp"
#include "helmsman/sections.hpp"
#include "helmsman/text.hpp"

namespace helmsman {

inline constexpr std::size_t kMaxMainTasks = 64;

struct SubTask {
  std::string id;
  std::string parent_id;
  std::string title_en;
  std::string title_zh;
  std::string description;
  std::vector<std::string> fragment_ids;

  const std::string& title(Language lang) const { return lang == Language::en ? title_en : title_zh; }
  bool operator==(const SubTask&) const = default;
};

struct MainTask {
  std::string id;
  std::string title_en;
  std::string title_zh;
  std::string description;
  std::vector<SubTask> subtasks;

  const std::string& title(Language lang) const { return lang == Language::en ? title_en : title_zh; }
  bool operator==(const MainTask&) const = default;
};

struct TaskTaxonomy {
  std::vector<MainTask> main_tasks;
  std::int64_t version = 1;

  const MainTask* find_main(std::string_view id) const {
    for (const auto& m : main_tasks)
      if (m.id == id) return &m;
    return nullptr;
  }
  const SubTask* find_sub(std::string_view id) const {
    for (const auto& m : main_tasks)
      for (const auto& s : m.subtasks)
        if (s.id == id) return &s;
    return nullptr;
  }
  std::size_t subtask_count() const {
    std::size_t n = 0;
    for (const auto& m : main_tasks) n += m.subtasks.size();
    return n;
  }
  bool operator==(const TaskTaxonomy&) const = default;
};

namespace detail {

inline std::string required_field(const Section& s, std::string_view key, std::string_view source) {
  auto v = s.get(key);
  if (!v || text::is_blank(*v))
    throw section_parse_error(source, s.line,
                              "[" + s.kind + " " + s.argument + "] is missing '" + std::string(key) + "'");
  return *v;
}

inline std::vector<std::string> split_list(std::string_view value) {
  std::vector<std::string> out;
  for (auto part : text::split(value, ',')) {
    auto item = text::trim(part);
    if (!item.empty()) out.emplace_back(item);
  }
  return out;
}

}  // namespace detail

inline TaskTaxonomy parse_taxonomy(std::string_view content, std::string_view source = "<taxonomy>") {
  const auto doc = parse_sections(content, source);
  TaskTaxonomy taxonomy;
  for (const auto& e : doc.preamble) {
    if (e.key != "version") throw section_parse_error(source, e.line, "unknown key '" + e.key + "'");
    try {
      std::size_t used = 0;
      taxonomy.version = std::stoll(e.value, &used);
      if (used != e.value.size() || taxonomy.version < 1) throw std::invalid_argument("version");
    } catch (const std::exception&) {
      throw section_parse_error(source, e.line, "version must be a positive integer");
    }
  }

  std::set<std::string> main_ids;
  std::set<std::string> sub_ids;
  struct PendingSub {
    SubTask sub;
    int line;
  };
  std::vector<PendingSub> subs;

  for (const auto& s : doc.sections) {
    if (!text::is_slug(s.argument))
      throw section_parse_error(source, s.line, "id '" + s.argument + "' must match [a-z0-9-]{1,64}");
    for (const auto& e : s.entries) {
      static const std::set<std::string> kMainKeys{"title_en", "title_zh", "description"};
      static const std::set<std::string> kSubKeys{"parent", "title_en", "title_zh", "description", "fragments"};
      const auto& allowed = s.kind == "main" ? kMainKeys : kSubKeys;
      if (!allowed.count(e.key)) throw section_parse_error(source, e.line, "unknown key '" + e.key + "'");
    }
    if (s.kind == "main") {
      if (!main_ids.insert(s.argument).second)
        throw Error(errc::duplicate_id, "duplicate main task id '" + s.argument + "'",
                    {{"id", s.argument}, {"line", s.line}});
      MainTask m;
      m.id = s.argument;
      m.title_en = detail::required_field(s, "title_en", source);
      m.title_zh = detail::required_field(s, "title_zh", source);
      m.description = detail::required_field(s, "description", source);
      taxonomy.main_tasks.push_back(std::move(m));
    } else if (s.kind == "sub") {
      if (!sub_ids.insert(s.argument).second)
        throw Error(errc::duplicate_id, "duplicate subtask id '" + s.argument + "'",
                    {{"id", s.argument}, {"line", s.line}});
      SubTask sub;
      sub.id = s.argument;
      sub.parent_id = detail::required_field(s, "parent", source);
      sub.title_en = detail::required_field(s, "title_en", source);
      sub.title_zh = detail::required_field(s, "title_zh", source);
      sub.description = detail::required_field(s, "description", source);
      sub.fragment_ids = detail::split_list(detail::required_field(s, "fragments", source));
      if (sub.fragment_ids.empty())
        throw section_parse_error(source, s.line, "subtask '" + sub.id + "' lists no fragments");
      for (const auto& f : sub.fragment_ids)
        if (!text::is_slug(f))
          throw section_parse_error(source, s.line, "fragment id '" + f + "' must match [a-z0-9-]{1,64}");
      subs.push_back({std::move(sub), s.line});
    } else {
      throw section_parse_error(source, s.line, "unknown section kind '" + s.kind + "'");
    }
  }

  for (auto& pending : subs) {
    auto it = std::find_if(taxonomy.main_tasks.begin(), taxonomy.main_tasks.end(),
                           [&](const MainTask& m) { return m.id == pending.sub.parent_id; });
    if (it == taxonomy.main_tasks.end())
      throw Error(errc::orphan_subtask,
                  "subtask '" + pending.sub.id + "' names unknown parent '" + pending.sub.parent_id + "'",
                  {{"subtask", pending.sub.id}, {"parent", pending.sub.parent_id}, {"line", pending.line}});
    it->subtasks.push_back(std::move(pending.sub));
  }

  if (taxonomy.main_tasks.empty() || taxonomy.main_tasks.size() > kMaxMainTasks)
    throw Error(errc::taxonomy_size,
                "taxonomy must define between 1 and " + std::to_string(kMaxMainTasks) + " main tasks, found " +
                    std::to_string(taxonomy.main_tasks.size()),
                {{"count", taxonomy.main_tasks.size()}});
  for (const auto& m : taxonomy.main_tasks)
    if (m.subtasks.empty())
      throw Error(errc::empty_subtasks, "main task '" + m.id + "' has no subtasks", {{"main_id", m.id}});
  return taxonomy;
}

inline TaskTaxonomy load_taxonomy(const std::filesystem::path& path) {
  return parse_taxonomy(read_text_file(path), path.string());
}

inline std::string serialize_taxonomy(const TaskTaxonomy& taxonomy) {
  std::string out = "version = " + std::to_string(taxonomy.version) + "\n";
  for (const auto& m : taxonomy.main_tasks) {
    out += "\n[main " + m.id + "]\n";
    write_entry(out, "title_en", m.title_en);
    write_entry(out, "title_zh", m.title_zh);
    write_entry(out, "description", m.description);
  }
  for (const auto& m : taxonomy.main_tasks) {
    for (const auto& s : m.subtasks) {
      out += "\n[sub " + s.id + "]\n";
      write_entry(out, "parent", s.parent_id);
      write_entry(out, "title_en", s.title_en);
      write_entry(out, "title_zh", s.title_zh);
      write_entry(out, "description", s.description);
      write_entry(out, "fragments", text::join(s.fragment_ids, ", "));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fragment cross-check

struct DanglingReference {
  std::string subtask_id;
  std::string fragment_id;
  Language language;
};

using FragmentResolver = std::function<bool(std::string_view fragment_id, Language)>;

inline std::vector<DanglingReference> find_dangling(const TaskTaxonomy& taxonomy, const FragmentResolver& resolves,
                                                    std::span<const Language> languages) {
  std::vector<DanglingReference> out;
  for (auto lang : languages)
    for (const auto& m : taxonomy.main_tasks)
      for (const auto& s : m.subtasks)
        for (const auto& f : s.fragment_ids)
          if (!resolves(f, lang)) out.push_back({s.id, f, lang});
  return out;
}

inline Error dangling_error(const DanglingReference& d) {
  return Error(errc::dangling_fragment,
               "subtask '" + d.subtask_id + "' references missing fragment '" + d.fragment_id + "' (" +
                   std::string(to_string(d.language)) + ")",
               {{"subtask", d.subtask_id}, {"fragment", d.fragment_id}, {"language", to_string(d.language)}});
}

/// Loads and checks that every fragment reference resolves.
inline TaskTaxonomy load_taxonomy(const std::filesystem::path& path, const FragmentResolver& resolves,
                                  std::span<const Language> languages) {
  auto taxonomy = load_taxonomy(path);
  auto dangling = find_dangling(taxonomy, resolves, languages);
  if (!dangling.empty()) throw dangling_error(dangling.front());
  return taxonomy;
}

inline const SubTask& lookup_subtask(const TaskTaxonomy& taxonomy, std::string_view id) {
  if (const auto* s = taxonomy.find_sub(id)) return *s;
  throw Error(errc::not_found, "no subtask '" + std::string(id) + "'", {{"id", std::string(id)}});
}

inline const MainTask& lookup_main(const TaskTaxonomy& taxonomy, std::string_view id) {
  if (const auto* m = taxonomy.find_main(id)) return *m;
  throw Error(errc::not_found, "no main task '" + std::string(id) + "'", {{"id", std::string(id)}});
}

/// One line per main task: `<id> | <title> | <description>`.
inline std::string routing_digest(const TaskTaxonomy& taxonomy, Language lang) {
  std::string out;
  for (const auto& m : taxonomy.main_tasks) out += m.id + " | " + m.title(lang) + " | " + m.description + "\n";
  return out;
}

inline std::string subtask_digest(const MainTask& main, Language lang) {
  std::string out;
  for (const auto& s : main.subtasks) out += s.id + " | " + s.title(lang) + " | " + s.description + "\n";
  return out;
}

/// Atomic hot-reload holder: readers keep the snapshot they took.
class TaxonomyHolder {
 public:
  explicit TaxonomyHolder(TaskTaxonomy initial)
      : current_(std::make_shared<const TaskTaxonomy>(std::move(initial))) {}

  std::shared_ptr<const TaskTaxonomy> current() const {
    std::lock_guard lock(mutex_);
    return current_;
  }

  /// Installs `next` with a version strictly above the current one.
  std::int64_t replace(TaskTaxonomy next) {
    std::lock_guard lock(mutex_);
    next.version = std::max(next.version, current_->version + 1);
    current_ = std::make_shared<const TaskTaxonomy>(std::move(next));
    return current_->version;
  }

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const TaskTaxonomy> current_;
};

}  // namespace helmsman
