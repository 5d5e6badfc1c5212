#pragma once

// Two-stage task selection: pick 1-3 main tasks for a query, then a single
// subtask within the confirmed main task. Model replies are repaired (unknown
// ids dropped, duplicates removed keeping the first, overflow truncated) and a
// deterministic lexical ranking takes over when nothing usable survives.
//
// The router is stateless; episode state (rejections, round counter) is owned
// by the caller and advanced with apply_feedback().

#include <algorithm>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "helmsman/error.hpp"
#include "helmsman/language.hpp"
#include "helmsman/llm.hpp"
#include "helmsman/taxonomy.hpp"
#include "helmsman/text.hpp"

namespace helmsman::router {

struct RouterConfig {
  int max_rounds = 3;
  std::size_t max_candidates = 3;
};

struct MainSelection {
  std::vector<std::string> candidates;
  std::string rationale_text;
  int round = 1;
  bool lexical_fallback = false;

  bool operator==(const MainSelection&) const = default;
};

struct SubSelection {
  std::string main_id;
  std::string subtask_id;
  std::string rationale_text;
  bool lexical_fallback = false;

  bool operator==(const SubSelection&) const = default;
};

enum class FeedbackScope { main, sub };

inline std::string_view to_string(FeedbackScope s) { return s == FeedbackScope::main ? "main" : "sub"; }

struct RejectionFeedback {
  std::vector<std::string> rejected_ids;
  std::string reason;
  FeedbackScope scope = FeedbackScope::main;
};

/// Rejections and round counter of one routing episode.
struct EpisodeState {
  std::set<std::string> rejected_main;
  std::set<std::string> rejected_sub;
  std::vector<std::string> reasons;  // in the order given
  int round = 1;

  bool operator==(const EpisodeState&) const = default;
};

// ---------------------------------------------------------------------------
// Reply parsing and repair

/// Splits a model reply into candidate ids. Separators are commas, semicolons
/// and newlines; list markers, quotes and brackets around an item are removed
/// and ASCII is lower-cased. Items are returned in reply order, unvalidated.
inline std::vector<std::string> parse_id_list(std::string_view reply) {
  std::vector<std::string> out;
  std::string normalized(reply);
  std::replace(normalized.begin(), normalized.end(), ';', ',');
  std::replace(normalized.begin(), normalized.end(), '\n', ',');
  for (auto piece : text::split(normalized, ',')) {
    auto item = text::trim(piece);
    // Leading list markers: "-", "*", "1.", "2)"
    if (!item.empty() && (item.front() == '-' || item.front() == '*')) item = text::trim(item.substr(1));
    std::size_t digits = 0;
    while (digits < item.size() && item[digits] >= '0' && item[digits] <= '9') ++digits;
    if (digits > 0 && digits < item.size() && (item[digits] == '.' || item[digits] == ')'))
      item = text::trim(item.substr(digits + 1));
    auto strip = [](char c) { return c == '"' || c == '\'' || c == '`' || c == '[' || c == ']' || c == '(' || c == ')'; };
    while (!item.empty() && strip(item.front())) item.remove_prefix(1);
    while (!item.empty() && (strip(item.back()) || item.back() == '.')) item.remove_suffix(1);
    item = text::trim(item);
    if (!item.empty()) out.push_back(text::to_lower_ascii(item));
  }
  return out;
}

/// drop unknown → dedupe (keep first) → truncate to `limit`, in that order.
inline std::vector<std::string> repair_ids(std::span<const std::string> raw,
                                           const std::function<bool(std::string_view)>& acceptable,
                                           std::size_t limit) {
  std::vector<std::string> known;
  for (const auto& id : raw)
    if (acceptable(id)) known.push_back(id);
  std::vector<std::string> unique;
  for (auto& id : known)
    if (std::find(unique.begin(), unique.end(), id) == unique.end()) unique.push_back(std::move(id));
  if (unique.size() > limit) unique.resize(limit);
  return unique;
}

struct ScoredId {
  std::string id;
  double score = 0.0;
};

/// Jaccard overlap between the query and each candidate text, sorted by
/// score descending with ties broken by id ascending.
inline std::vector<ScoredId> lexical_rank(std::string_view query,
                                          std::span<const std::pair<std::string, std::string>> candidates) {
  const auto q = text::token_set(query);
  std::vector<ScoredId> out;
  out.reserve(candidates.size());
  for (const auto& [id, body] : candidates) out.push_back({id, text::jaccard(q, text::token_set(body))});
  std::sort(out.begin(), out.end(), [](const ScoredId& a, const ScoredId& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return out;
}

inline std::string matching_text(const MainTask& m) { return m.description + " " + m.title_en + " " + m.title_zh; }
inline std::string matching_text(const SubTask& s) { return s.description + " " + s.title_en + " " + s.title_zh; }

// ---------------------------------------------------------------------------
// Prompts

inline std::string append_reasons(std::string text, std::span<const std::string> reasons) {
  for (const auto& r : reasons) text += "\nEarlier suggestion rejected because: " + r;
  return text;
}

inline llm::CompletionRequest main_prompt(std::string_view query, const TaskTaxonomy& taxonomy,
                                          const std::set<std::string>& rejected, Language lang,
                                          std::span<const std::string> reasons, const RouterConfig& config) {
  std::string system =
      "You route user requests for an EDA design assistant. From the task list below choose the 1 to " +
      std::to_string(config.max_candidates) +
      " main tasks most relevant to the request. Reply with the task ids only, comma-separated, most relevant "
      "first.\n\nTasks (id | title | description):\n";
  for (const auto& m : taxonomy.main_tasks)
    if (!rejected.count(m.id)) system += m.id + " | " + m.title(lang) + " | " + m.description + "\n";
  return {{{llm::Role::system, system}, {llm::Role::user, append_reasons(std::string(query), reasons)}},
          llm::Purpose::route_main};
}

inline llm::CompletionRequest sub_prompt(const MainTask& main, std::span<const llm::ChatMessage> dialogue,
                                         const std::set<std::string>& rejected, Language lang,
                                         std::span<const std::string> reasons) {
  std::string system = "You help the user pick exactly one subtask of \"" + main.title(lang) +
                       "\". Reply with the single best subtask id only.\n\nSubtasks (id | title | description):\n";
  for (const auto& s : main.subtasks)
    if (!rejected.count(s.id)) system += s.id + " | " + s.title(lang) + " | " + s.description + "\n";
  llm::CompletionRequest request{{{llm::Role::system, system}}, llm::Purpose::route_sub};
  for (const auto& m : dialogue)
    if (m.role != llm::Role::system) request.messages.push_back(m);
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->role == llm::Role::user) {
      it->content = append_reasons(std::move(it->content), reasons);
      break;
    }
  }
  return request;
}

// ---------------------------------------------------------------------------
// Selection

inline MainSelection select_main(std::string_view query, const TaskTaxonomy& taxonomy,
                                 const std::set<std::string>& rejected, int round, llm::Backend& backend,
                                 Language lang = Language::en, std::span<const std::string> reasons = {},
                                 const RouterConfig& config = {}) {
  if (text::is_blank(query)) throw Error(errc::invalid_request, "routing query is empty");
  if (round < 1 || round > config.max_rounds)
    throw Error(errc::rounds_exhausted,
                "routing round " + std::to_string(round) + " exceeds the limit of " + std::to_string(config.max_rounds),
                {{"round", round}, {"max_rounds", config.max_rounds}});
  std::vector<std::pair<std::string, std::string>> open;
  for (const auto& m : taxonomy.main_tasks)
    if (!rejected.count(m.id)) open.emplace_back(m.id, matching_text(m));
  if (open.empty()) throw Error(errc::no_candidates_left, "every main task has been rejected");

  const auto reply = backend.complete(main_prompt(query, taxonomy, rejected, lang, reasons, config));
  const auto raw = parse_id_list(reply);
  auto acceptable = [&](std::string_view id) {
    return taxonomy.find_main(id) != nullptr && !rejected.count(std::string(id));
  };
  MainSelection selection{repair_ids(raw, acceptable, config.max_candidates), reply, round, false};
  if (selection.candidates.empty()) {
    const auto ranked = lexical_rank(query, open);
    selection.candidates = {ranked.front().id};
    selection.lexical_fallback = true;
  }
  return selection;
}

inline SubSelection select_sub(std::string_view main_id, std::span<const llm::ChatMessage> dialogue,
                               const TaskTaxonomy& taxonomy, const std::set<std::string>& rejected,
                               llm::Backend& backend, Language lang = Language::en,
                               std::span<const std::string> reasons = {}) {
  const auto& main = lookup_main(taxonomy, main_id);
  std::vector<std::pair<std::string, std::string>> open;
  for (const auto& s : main.subtasks)
    if (!rejected.count(s.id)) open.emplace_back(s.id, matching_text(s));
  if (open.empty())
    throw Error(errc::no_candidates_left, "every subtask of '" + main.id + "' has been rejected",
                {{"main_id", main.id}});
  std::string user_text;
  for (const auto& m : dialogue)
    if (m.role == llm::Role::user) user_text += m.content + "\n";
  if (text::is_blank(user_text)) throw Error(errc::invalid_request, "subtask dialogue has no user message");

  const auto reply = backend.complete(sub_prompt(main, dialogue, rejected, lang, reasons));
  const auto raw = parse_id_list(reply);
  auto acceptable = [&](std::string_view id) {
    const auto* s = taxonomy.find_sub(id);
    return s != nullptr && s->parent_id == main.id && !rejected.count(std::string(id));
  };
  auto repaired = repair_ids(raw, acceptable, 1);
  if (!repaired.empty()) return {main.id, repaired.front(), reply, false};
  return {main.id, lexical_rank(user_text, open).front().id, reply, true};
}

/// Grows the rejected set and bumps the round. Throws rounds_exhausted (with
/// `state` untouched) when the next round would exceed the limit.
inline EpisodeState apply_feedback(const EpisodeState& state, const RejectionFeedback& feedback,
                                   const RouterConfig& config = {}) {
  if (feedback.rejected_ids.empty())
    throw Error(errc::invalid_feedback, "rejection feedback must name at least one id");
  if (text::is_blank(feedback.reason)) throw Error(errc::invalid_feedback, "rejection feedback needs a reason");
  if (state.round + 1 > config.max_rounds)
    throw Error(errc::rounds_exhausted,
                "routing gave up after " + std::to_string(config.max_rounds) + " rounds",
                {{"round", state.round + 1}, {"max_rounds", config.max_rounds}});
  EpisodeState next = state;
  auto& target = feedback.scope == FeedbackScope::main ? next.rejected_main : next.rejected_sub;
  target.insert(feedback.rejected_ids.begin(), feedback.rejected_ids.end());
  next.reasons.push_back(feedback.reason);
  ++next.round;
  return next;
}

}  // namespace helmsman::router
