#pragma once

// Grounded question answering over a tailored document's QA context, and the
// append-only store of notes distilled from chat logs.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "helmsman/clock.hpp"
#include "helmsman/error.hpp"
#include "helmsman/io.hpp"
#include "helmsman/llm.hpp"
#include "helmsman/text.hpp"

namespace helmsman::qa {

struct QaConfig {
  std::size_t unanswered_run = 3;      // consecutive ungrounded answers
  std::size_t grounding_window = 5;    // exchanges considered for the ratio
  double min_grounded_ratio = 0.4;
  std::string topic_marker = "/topic";
  std::size_t notes_budget = 2000;     // code points of serialized notes
  std::size_t max_notes = 5;           // per distillation
};

struct QaExchange {
  std::string question;
  std::string answer;
  std::vector<std::string> cited_fragments;
  bool grounded = false;
  Timestamp timestamp{};

  bool operator==(const QaExchange&) const = default;
};

inline nlohmann::json to_json(const QaExchange& e) {
  return {{"question", e.question},
          {"answer", e.answer},
          {"cited_fragments", e.cited_fragments},
          {"grounded", e.grounded},
          {"timestamp", format_rfc3339(e.timestamp)}};
}

inline QaExchange exchange_from_json(const nlohmann::json& j) {
  return {j.at("question").get<std::string>(), j.at("answer").get<std::string>(),
          j.at("cited_fragments").get<std::vector<std::string>>(), j.at("grounded").get<bool>(),
          parse_rfc3339(j.at("timestamp").get<std::string>())};
}

enum class NoteSource { chat_log, user_note };

inline std::string_view to_string(NoteSource s) { return s == NoteSource::chat_log ? "chat_log" : "user_note"; }

inline NoteSource parse_note_source(std::string_view s) {
  if (s == "chat_log") return NoteSource::chat_log;
  if (s == "user_note") return NoteSource::user_note;
  throw Error(errc::corrupt_record, "unknown augmentation source '" + std::string(s) + "'");
}

struct AugmentationRecord {
  std::string record_id;
  NoteSource source = NoteSource::chat_log;
  std::string topic_hint;
  std::string content;
  std::string session_id;
  Timestamp created_at{};

  bool operator==(const AugmentationRecord&) const = default;
};

inline nlohmann::json to_json(const AugmentationRecord& r) {
  return {{"record_id", r.record_id},   {"source", to_string(r.source)}, {"topic_hint", r.topic_hint},
          {"content", r.content},       {"session_id", r.session_id},    {"created_at", format_rfc3339(r.created_at)}};
}

inline AugmentationRecord record_from_json(const nlohmann::json& j) {
  static const std::set<std::string> kFields{"record_id", "source",     "topic_hint",
                                             "content",   "session_id", "created_at"};
  if (!j.is_object() || j.size() != kFields.size())
    throw Error(errc::corrupt_record, "augmentation record must have exactly the fields " +
                                          std::string("record_id, source, topic_hint, content, session_id, created_at"));
  for (const auto& [key, value] : j.items()) {
    if (!kFields.count(key)) throw Error(errc::corrupt_record, "unexpected augmentation field '" + key + "'");
    if (!value.is_string()) throw Error(errc::corrupt_record, "augmentation field '" + key + "' must be a string");
  }
  AugmentationRecord r{j["record_id"].get<std::string>(),  parse_note_source(j["source"].get<std::string>()),
                       j["topic_hint"].get<std::string>(), j["content"].get<std::string>(),
                       j["session_id"].get<std::string>(), parse_rfc3339(j["created_at"].get<std::string>())};
  if (text::is_blank(r.content)) throw Error(errc::corrupt_record, "augmentation record has empty content");
  return r;
}

enum class BottleneckKind { explicit_topic_shift, repeated_unanswered, low_grounding };

inline std::string_view to_string(BottleneckKind k) {
  switch (k) {
    case BottleneckKind::explicit_topic_shift: return "explicit_topic_shift";
    case BottleneckKind::repeated_unanswered: return "repeated_unanswered";
    case BottleneckKind::low_grounding: return "low_grounding";
  }
  return "";
}

struct BottleneckSignal {
  BottleneckKind kind;
  std::string evidence;

  bool operator==(const BottleneckSignal&) const = default;
};

// ---------------------------------------------------------------------------
// Citations

/// Every `[slug]` in the answer, in order of first appearance.
inline std::vector<std::string> extract_citations(std::string_view answer) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = answer.find('[', pos)) != std::string_view::npos) {
    auto close = answer.find(']', pos + 1);
    if (close == std::string_view::npos) break;
    auto inner = answer.substr(pos + 1, close - pos - 1);
    if (text::is_slug(inner)) {
      std::string id(inner);
      if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(std::move(id));
      pos = close + 1;
    } else {
      pos += 1;
    }
  }
  return out;
}

inline std::string context_marker(std::string_view fragment_id) { return "== " + std::string(fragment_id) + " =="; }

/// True when `context` has a marker line for this fragment.
inline bool context_has_fragment(std::string_view context, std::string_view fragment_id) {
  const auto marker = context_marker(fragment_id);
  std::size_t pos = 0;
  while ((pos = context.find(marker, pos)) != std::string_view::npos) {
    const bool line_start = pos == 0 || context[pos - 1] == '\n';
    const auto end = pos + marker.size();
    const bool line_end = end == context.size() || context[end] == '\n';
    if (line_start && line_end) return true;
    pos = end;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Prompt assembly

inline constexpr std::string_view kGroundingInstruction =
    "You answer questions about an EDA tool using the documentation below. Prefer the documentation over general "
    "knowledge. Every statement taken from the documentation must cite its section as [fragment-id], using the id "
    "shown in the section's `== fragment-id ==` header. If the documentation does not cover the question, say so "
    "and do not cite anything.";

inline constexpr std::string_view kNotesLabel = "Previously learned notes";

/// Most recent first; whole notes only, as many as fit in the budget.
inline std::string serialize_notes(std::span<const AugmentationRecord> records, std::size_t budget) {
  std::string body;
  std::size_t used = 0;
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    std::string line = "- " + it->content;
    if (!it->topic_hint.empty()) line += " (topic: " + it->topic_hint + ")";
    line += "\n";
    const auto cost = text::utf8_length(line);
    if (used + cost > budget) break;
    used += cost;
    body += line;
  }
  if (body.empty()) return "";
  return std::string(kNotesLabel) + ":\n```\n" + body + "```\n";
}

inline llm::CompletionRequest qa_prompt(std::string_view question, std::string_view context,
                                        std::span<const AugmentationRecord> augmentations, const QaConfig& config = {}) {
  std::string system(kGroundingInstruction);
  system += "\n\nDocumentation:\n";
  system += context;
  system += "\n";
  const auto notes = serialize_notes(augmentations, config.notes_budget);
  if (!notes.empty()) system += "\n" + notes;
  return {{{llm::Role::system, system}, {llm::Role::user, std::string(question)}}, llm::Purpose::qa_answer};
}

inline QaExchange answer(std::string_view question, std::string_view context,
                         std::span<const AugmentationRecord> augmentations, llm::Backend& backend, Clock& clock,
                         const QaConfig& config = {}) {
  if (text::is_blank(question)) throw Error(errc::invalid_request, "question is empty");
  QaExchange ex;
  ex.question = std::string(question);
  ex.answer = backend.complete(qa_prompt(question, context, augmentations, config));
  ex.timestamp = clock.now();
  const auto cited = extract_citations(ex.answer);
  bool all_present = !cited.empty();
  for (const auto& id : cited) {
    if (context_has_fragment(context, id))
      ex.cited_fragments.push_back(id);
    else
      all_present = false;
  }
  ex.grounded = all_present;
  return ex;
}

// ---------------------------------------------------------------------------
// Bottleneck detection

inline std::optional<BottleneckSignal> detect_bottleneck(std::span<const QaExchange> recent,
                                                         std::string_view latest_user_text,
                                                         const QaConfig& config = {}) {
  const auto trimmed = text::trim(latest_user_text);
  const std::string_view marker = config.topic_marker;
  if (!marker.empty() && trimmed.substr(0, marker.size()) == marker &&
      (trimmed.size() == marker.size() || text::is_space(trimmed[marker.size()])))
    return BottleneckSignal{BottleneckKind::explicit_topic_shift,
                            "message starts with " + std::string(marker)};

  std::size_t run = 0;
  for (auto it = recent.rbegin(); it != recent.rend() && !it->grounded; ++it) ++run;
  if (config.unanswered_run > 0 && run >= config.unanswered_run)
    return BottleneckSignal{BottleneckKind::repeated_unanswered,
                            std::to_string(run) + " consecutive answers without grounding"};

  if (config.grounding_window > 0 && recent.size() >= config.grounding_window) {
    const auto window = recent.last(config.grounding_window);
    const auto grounded = std::count_if(window.begin(), window.end(), [](const QaExchange& e) { return e.grounded; });
    const double ratio = static_cast<double>(grounded) / static_cast<double>(window.size());
    if (ratio < config.min_grounded_ratio)
      return BottleneckSignal{BottleneckKind::low_grounding,
                              std::to_string(grounded) + " of the last " + std::to_string(window.size()) +
                                  " answers were grounded"};
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Augmentation store

/// Append-only; ids are `aug-<n>` and never reused, including across reloads
/// of the same file.
class AugmentationStore {
 public:
  AugmentationStore() = default;

  /// Loads existing records (if the file exists) and appends new ones to it.
  explicit AugmentationStore(std::filesystem::path path) : path_(std::move(path)) {
    if (!std::filesystem::exists(path_)) return;
    int line_no = 0;
    for (const auto& line : text::split_lines(read_text_file(path_))) {
      ++line_no;
      if (text::is_blank(line)) continue;
      try {
        records_.push_back(record_from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw Error(errc::corrupt_record, path_.string() + ":" + std::to_string(line_no) + ": " + e.what(),
                    {{"line", line_no}});
      }
      bump_counter(records_.back().record_id);
    }
  }

  AugmentationRecord append(NoteSource source, std::string topic_hint, std::string content, std::string session_id,
                            Timestamp created_at) {
    if (text::is_blank(content)) throw Error(errc::invalid_request, "augmentation content is empty");
    std::unique_lock lock(mutex_);
    AugmentationRecord r{"aug-" + std::to_string(++counter_), source, std::move(topic_hint),
                         std::move(content), std::move(session_id), created_at};
    if (!path_.empty()) append_line(path_, to_json(r).dump());
    records_.push_back(r);
    return r;
  }

  std::vector<AugmentationRecord> records() const {
    std::shared_lock lock(mutex_);
    return records_;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  void bump_counter(std::string_view id) {
    if (id.substr(0, 4) != "aug-") return;
    try {
      counter_ = std::max<std::uint64_t>(counter_, std::stoull(std::string(id.substr(4))));
    } catch (const std::exception&) {
    }
  }

  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::vector<AugmentationRecord> records_;
  std::uint64_t counter_ = 0;
};

/// Strips list markers from one distilled line.
inline std::string clean_note_line(std::string_view line) {
  auto s = text::trim(line);
  if (!s.empty() && (s.front() == '-' || s.front() == '*')) s = text::trim(s.substr(1));
  std::size_t digits = 0;
  while (digits < s.size() && s[digits] >= '0' && s[digits] <= '9') ++digits;
  if (digits > 0 && digits < s.size() && (s[digits] == '.' || s[digits] == ')')) s = text::trim(s.substr(digits + 1));
  return std::string(s);
}

inline llm::CompletionRequest augment_prompt(std::span<const llm::ChatMessage> log, std::size_t max_notes) {
  std::string system = "Distill the conversation below into at most " + std::to_string(max_notes) +
                       " short factual notes that would help answer similar questions later. One note per line, "
                       "no numbering, nothing else.";
  std::string transcript;
  for (const auto& m : log) transcript += std::string(llm::to_string(m.role)) + ": " + m.content + "\n";
  return {{{llm::Role::system, system}, {llm::Role::user, transcript}}, llm::Purpose::augment};
}

/// Distills the log into notes and appends them to the store. Only lines past
/// the note limit are discarded; an empty reply yields no records.
inline std::vector<AugmentationRecord> augment_from_log(std::span<const llm::ChatMessage> log, llm::Backend& backend,
                                                        AugmentationStore& store, std::string_view session_id,
                                                        std::string_view topic_hint, Clock& clock,
                                                        const QaConfig& config = {}) {
  if (log.empty()) throw Error(errc::invalid_request, "chat log is empty");
  const auto reply = backend.complete(augment_prompt(log, config.max_notes));
  std::vector<AugmentationRecord> out;
  for (const auto& line : text::split_lines(reply)) {
    if (out.size() >= config.max_notes) break;
    auto note = clean_note_line(line);
    if (note.empty()) continue;
    out.push_back(store.append(NoteSource::chat_log, std::string(topic_hint), std::move(note),
                               std::string(session_id), clock.now()));
  }
  return out;
}

}  // namespace helmsman::qa
