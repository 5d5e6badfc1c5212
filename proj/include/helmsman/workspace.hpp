#pragma once

// Simulated design workspace: items with properties, a version counter, and
// linear snapshot history.
//
// Text format, canonical (items sorted by id, properties by key):
//
//   version 3
//   dirty false
//   item t1 track
//     corner_style = sharp
//     width_mil = 10
//   item p1 pad
//     net = GND
//
// Indentation is cosmetic: a `key = value` line belongs to the closest
// `item` line above it. Values use the escapes of text::escape_field.
// Blank lines and `#` comments are ignored.

#include <algorithm>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "helmsman/error.hpp"
#include "helmsman/text.hpp"

namespace helmsman::ws {

enum class ItemKind { track, pad, footprint, text };

inline std::string_view to_string(ItemKind k) {
  switch (k) {
    case ItemKind::track: return "track";
    case ItemKind::pad: return "pad";
    case ItemKind::footprint: return "footprint";
    case ItemKind::text: return "text";
  }
  return "";
}

inline std::optional<ItemKind> parse_item_kind(std::string_view s) {
  for (auto k : {ItemKind::track, ItemKind::pad, ItemKind::footprint, ItemKind::text})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

using Properties = std::map<std::string, std::string>;

struct Item {
  ItemKind kind = ItemKind::track;
  Properties properties;
  bool operator==(const Item&) const = default;
};

struct WorkspaceState {
  std::map<std::string, Item> items;
  std::int64_t version = 0;
  bool dirty = false;
  bool operator==(const WorkspaceState&) const = default;
};

inline bool is_item_id(std::string_view s) { return text::is_param_name(s); }

inline std::string serialize(const WorkspaceState& ws) {
  std::string out = "version " + std::to_string(ws.version) + "\n";
  out += ws.dirty ? "dirty true\n" : "dirty false\n";
  for (const auto& [id, item] : ws.items) {
    out += "item " + id + " " + std::string(to_string(item.kind)) + "\n";
    for (const auto& [k, v] : item.properties) out += "  " + k + " = " + text::escape_field(v) + "\n";
  }
  return out;
}

inline WorkspaceState parse_workspace(std::string_view content, std::string_view source = "<workspace>") {
  WorkspaceState ws;
  bool have_version = false;
  bool have_dirty = false;
  Item* current = nullptr;
  std::string current_id;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    return Error(errc::parse_error, std::string(source) + ":" + std::to_string(line_no) + ": " + what,
                 {{"source", std::string(source)}, {"line", line_no}});
  };
  for (const auto& raw : text::split_lines(content)) {
    ++line_no;
    const auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    // A property line has '=' right after its first word.
    const auto word_end = std::min(line.find_first_of(" \t="), line.size());
    const auto next = line.find_first_not_of(" \t", word_end);
    if (next != std::string_view::npos && line[next] == '=') {
      const auto eq = next;
      if (!current) throw fail("property outside of an item");
      const auto key = std::string(text::trim(line.substr(0, eq)));
      if (!text::is_param_name(key)) throw fail("invalid property key '" + key + "'");
      auto value = text::unescape_field(text::trim(line.substr(eq + 1)));
      if (!value) throw fail("invalid escape in value");
      if (!current->properties.emplace(key, std::move(*value)).second)
        throw fail("duplicate property '" + key + "' on item '" + current_id + "'");
      continue;
    }
    auto words = text::split(line, ' ');
    std::erase_if(words, [](std::string_view w) { return w.empty(); });
    if (words.size() == 2 && words[0] == "version") {
      if (have_version) throw fail("duplicate version line");
      try {
        std::size_t used = 0;
        ws.version = std::stoll(std::string(words[1]), &used);
        if (used != words[1].size() || ws.version < 0) throw std::invalid_argument("version");
      } catch (const std::exception&) {
        throw fail("version must be a non-negative integer");
      }
      have_version = true;
    } else if (words.size() == 2 && words[0] == "dirty") {
      if (have_dirty) throw fail("duplicate dirty line");
      if (words[1] != "true" && words[1] != "false") throw fail("dirty must be true or false");
      ws.dirty = words[1] == "true";
      have_dirty = true;
    } else if (words.size() == 3 && words[0] == "item") {
      current_id = std::string(words[1]);
      if (!is_item_id(current_id)) throw fail("invalid item id '" + current_id + "'");
      auto kind = parse_item_kind(words[2]);
      if (!kind) throw fail("unknown item kind '" + std::string(words[2]) + "'");
      auto [it, inserted] = ws.items.emplace(current_id, Item{*kind, {}});
      if (!inserted) throw fail("duplicate item id '" + current_id + "'");
      current = &it->second;
    } else {
      throw fail("unrecognized line");
    }
  }
  if (!have_version) throw Error(errc::parse_error, std::string(source) + ": missing version line");
  return ws;
}

// ---------------------------------------------------------------------------
// Diffs

enum class ChangeKind { added, removed, modified };

inline std::string_view to_string(ChangeKind c) {
  switch (c) {
    case ChangeKind::added: return "added";
    case ChangeKind::removed: return "removed";
    case ChangeKind::modified: return "modified";
  }
  return "";
}

inline ChangeKind parse_change_kind(std::string_view s) {
  if (s == "added") return ChangeKind::added;
  if (s == "removed") return ChangeKind::removed;
  if (s == "modified") return ChangeKind::modified;
  throw Error(errc::corrupt_record, "unknown change kind '" + std::string(s) + "'");
}

struct DiffEntry {
  std::string item_id;
  ChangeKind change = ChangeKind::modified;
  std::optional<Item> before;
  std::optional<Item> after;
  bool operator==(const DiffEntry&) const = default;
};

using Diff = std::vector<DiffEntry>;

/// Item-level differences, ordered by item id.
inline Diff diff(const WorkspaceState& before, const WorkspaceState& after) {
  Diff out;
  auto a = before.items.begin();
  auto b = after.items.begin();
  while (a != before.items.end() || b != after.items.end()) {
    if (b == after.items.end() || (a != before.items.end() && a->first < b->first)) {
      out.push_back({a->first, ChangeKind::removed, a->second, std::nullopt});
      ++a;
    } else if (a == before.items.end() || b->first < a->first) {
      out.push_back({b->first, ChangeKind::added, std::nullopt, b->second});
      ++b;
    } else {
      if (a->second != b->second) out.push_back({a->first, ChangeKind::modified, a->second, b->second});
      ++a;
      ++b;
    }
  }
  return out;
}

/// Applies `d` to the items of `state`; version and dirty are left alone.
/// Every entry's `before` must match the current item.
inline WorkspaceState apply_diff(WorkspaceState state, const Diff& d) {
  for (const auto& e : d) {
    auto it = state.items.find(e.item_id);
    const std::optional<Item> current = it == state.items.end() ? std::nullopt : std::optional<Item>(it->second);
    if (current != e.before)
      throw Error(errc::invalid_request, "diff does not apply: item '" + e.item_id + "' differs from its recorded state",
                  {{"item_id", e.item_id}});
    if (e.after)
      state.items.insert_or_assign(e.item_id, *e.after);
    else
      state.items.erase(e.item_id);
  }
  return state;
}

inline nlohmann::json to_json(const Item& item) {
  return {{"kind", to_string(item.kind)}, {"properties", item.properties}};
}

inline Item item_from_json(const nlohmann::json& j) {
  auto kind = parse_item_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error(errc::corrupt_record, "unknown item kind");
  return {*kind, j.at("properties").get<Properties>()};
}

inline nlohmann::json to_json(const Diff& d) {
  auto j = nlohmann::json::array();
  for (const auto& e : d)
    j.push_back({{"item_id", e.item_id},
                 {"change", to_string(e.change)},
                 {"before", e.before ? to_json(*e.before) : nlohmann::json(nullptr)},
                 {"after", e.after ? to_json(*e.after) : nlohmann::json(nullptr)}});
  return j;
}

inline Diff diff_from_json(const nlohmann::json& j) {
  Diff d;
  for (const auto& e : j) {
    DiffEntry entry;
    entry.item_id = e.at("item_id").get<std::string>();
    entry.change = parse_change_kind(e.at("change").get<std::string>());
    if (!e.at("before").is_null()) entry.before = item_from_json(e["before"]);
    if (!e.at("after").is_null()) entry.after = item_from_json(e["after"]);
    d.push_back(std::move(entry));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Workspace with snapshots

/// Owns a state, an exclusive execution lock and a linear snapshot history:
/// rolling back to a snapshot discards every snapshot taken after it.
class Workspace {
 public:
  explicit Workspace(WorkspaceState initial = {}) : state_(std::move(initial)) {}

  const WorkspaceState& state() const { return state_; }
  WorkspaceState& mutable_state() { return state_; }
  void replace(WorkspaceState next) { state_ = std::move(next); }

  std::string serialized() const { return serialize(state_); }

  std::string snapshot() {
    auto token = "snap-" + std::to_string(++counter_);
    history_.emplace_back(token, serialize(state_));
    return token;
  }

  void rollback(std::string_view token) {
    for (std::size_t i = 0; i < history_.size(); ++i) {
      if (history_[i].first != token) continue;
      state_ = parse_workspace(history_[i].second, "<snapshot>");
      history_.resize(i + 1);
      return;
    }
    throw Error(errc::unknown_snapshot, "unknown snapshot '" + std::string(token) + "'",
                {{"token", std::string(token)}});
  }

  /// Drops a snapshot and everything after it without restoring.
  void release(std::string_view token) {
    for (std::size_t i = 0; i < history_.size(); ++i)
      if (history_[i].first == token) {
        history_.resize(i);
        return;
      }
  }

  std::size_t snapshot_count() const { return history_.size(); }

  /// Held for the whole of an execution.
  std::mutex& lock() { return mutex_; }

 private:
  WorkspaceState state_;
  std::vector<std::pair<std::string, std::string>> history_;
  std::uint64_t counter_ = 0;
  std::mutex mutex_;
};

}  // namespace helmsman::ws
