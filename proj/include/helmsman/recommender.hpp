#pragma once

// Matches a stated need against plugin descriptions. The lexical method is
// deterministic Jaccard overlap; the llm method asks the backend for an id
// list and repairs it the same way the router does.

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "helmsman/error.hpp"
#include "helmsman/language.hpp"
#include "helmsman/llm.hpp"
#include "helmsman/plugin_registry.hpp"
#include "helmsman/router.hpp"
#include "helmsman/text.hpp"

namespace helmsman::recommend {

enum class Method { llm, lexical, manual };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::llm: return "llm";
    case Method::lexical: return "lexical";
    case Method::manual: return "manual";
  }
  return "";
}

inline Method parse_method(std::string_view s) {
  if (s == "llm") return Method::llm;
  if (s == "lexical") return Method::lexical;
  if (s == "manual") return Method::manual;
  throw Error(errc::invalid_request, "unknown recommendation method '" + std::string(s) + "'");
}

struct RankedPlugin {
  std::string plugin_id;
  double score = 0.0;
  bool operator==(const RankedPlugin&) const = default;
};

struct Recommendation {
  std::vector<RankedPlugin> ranked;
  std::optional<std::string> chosen;
  Method method = Method::lexical;

  bool operator==(const Recommendation&) const = default;
};

inline nlohmann::json to_json(const Recommendation& r) {
  auto ranked = nlohmann::json::array();
  for (const auto& p : r.ranked) ranked.push_back({{"plugin_id", p.plugin_id}, {"score", p.score}});
  return {{"ranked", ranked},
          {"chosen", r.chosen ? nlohmann::json(*r.chosen) : nlohmann::json(nullptr)},
          {"method", to_string(r.method)}};
}

inline Recommendation recommendation_from_json(const nlohmann::json& j) {
  Recommendation r;
  for (const auto& p : j.at("ranked")) r.ranked.push_back({p.at("plugin_id"), p.at("score").get<double>()});
  if (!j.at("chosen").is_null()) r.chosen = j["chosen"].get<std::string>();
  r.method = parse_method(j.at("method").get<std::string>());
  return r;
}

/// Description plus display name in the session language.
inline std::string matching_text(const plugins::PluginManifest& m, Language lang) {
  return m.describe(lang) + " " + m.display(lang);
}

/// Full ranking of every plugin, score descending, ties by id ascending.
inline std::vector<RankedPlugin> lexical_ranking(std::string_view need, const plugins::Registry& registry,
                                                 Language lang = Language::en) {
  std::vector<std::pair<std::string, std::string>> corpus;
  corpus.reserve(registry.manifests.size());
  for (const auto& [id, m] : registry.manifests) corpus.emplace_back(id, matching_text(m, lang));
  std::vector<RankedPlugin> out;
  for (auto& s : router::lexical_rank(need, corpus)) out.push_back({std::move(s.id), s.score});
  return out;
}

inline llm::CompletionRequest recommend_prompt(std::string_view need, const plugins::Registry& registry,
                                               std::size_t top_k, Language lang) {
  std::string system = "You recommend plugins for an EDA tool. From the plugins below choose up to " +
                       std::to_string(top_k) +
                       " that best match the user's need. Reply with plugin ids only, comma-separated, best match "
                       "first.\n\nPlugins (id | name | description):\n";
  for (const auto& [id, m] : registry.manifests) system += id + " | " + m.display(lang) + " | " + m.describe(lang) + "\n";
  return {{{llm::Role::system, system}, {llm::Role::user, std::string(need)}}, llm::Purpose::recommend};
}

/// Top-k recommendation. When the llm reply has no usable id the lexical
/// ranking is returned instead, with method=lexical.
inline Recommendation recommend(std::string_view need, const plugins::Registry& registry, llm::Backend* backend,
                                Method method, std::size_t top_k = 3, Language lang = Language::en) {
  if (text::is_blank(need)) throw Error(errc::invalid_request, "need text is empty");
  if (registry.manifests.empty()) throw Error(errc::empty_registry, "no plugins are registered");
  if (top_k == 0) throw Error(errc::invalid_request, "top_k must be positive");
  Recommendation rec;
  if (method == Method::llm) {
    if (!backend) throw Error(errc::invalid_request, "llm recommendation needs a backend");
    const auto reply = backend->complete(recommend_prompt(need, registry, top_k, lang));
    const auto ids = router::repair_ids(
        router::parse_id_list(reply), [&](std::string_view id) { return registry.find(id) != nullptr; }, top_k);
    if (!ids.empty()) {
      rec.method = Method::llm;
      for (std::size_t i = 0; i < ids.size(); ++i)
        rec.ranked.push_back({ids[i], std::max(0.0, 1.0 - 0.1 * static_cast<double>(i))});
      return rec;
    }
  } else if (method != Method::lexical) {
    throw Error(errc::invalid_request, "recommend() takes llm or lexical");
  }
  rec.method = Method::lexical;
  rec.ranked = lexical_ranking(need, registry, lang);
  if (rec.ranked.size() > top_k) rec.ranked.resize(top_k);
  return rec;
}

/// Sets `chosen`. An id outside the ranking needs `override_choice`, which
/// records the choice as manual.
inline Recommendation confirm(const Recommendation& rec, std::string_view plugin_id, bool override_choice = false) {
  if (rec.chosen) throw Error(errc::invalid_request, "recommendation already confirmed", {{"chosen", *rec.chosen}});
  const bool ranked = std::any_of(rec.ranked.begin(), rec.ranked.end(),
                                  [&](const RankedPlugin& p) { return p.plugin_id == plugin_id; });
  Recommendation next = rec;
  if (!ranked) {
    if (!override_choice)
      throw Error(errc::not_recommended, "plugin '" + std::string(plugin_id) + "' was not recommended",
                  {{"plugin_id", std::string(plugin_id)}});
    next.method = Method::manual;
  }
  next.chosen = std::string(plugin_id);
  return next;
}

}  // namespace helmsman::recommend
