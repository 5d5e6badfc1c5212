#pragma once

// Shared helpers for the unit and acceptance binaries: fixture paths, fixed
// backends and seeded generators.

#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <iterator>
#include <map>
#include <set>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "helmsman/llm.hpp"
#include "helmsman/plugin_registry.hpp"
#include "helmsman/text.hpp"

#ifndef HELMSMAN_SOURCE_DIR
#error "HELMSMAN_SOURCE_DIR must point at the repository root"
#endif

namespace helmsman::ts {

inline std::filesystem::path source_dir() { return HELMSMAN_SOURCE_DIR; }
inline std::filesystem::path data_dir() { return source_dir() / "data"; }
inline std::filesystem::path fixture(const std::string& name) { return source_dir() / "tests" / "fixtures" / name; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("helmsman-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(rng() % 1000000007));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// Answers every request with the same text.
class FixedBackend final : public llm::Backend {
 public:
  explicit FixedBackend(std::string reply = {}) : reply(std::move(reply)) {}
  std::string complete(const llm::CompletionRequest&) override {
    ++calls;
    return reply;
  }
  std::string reply;
  int calls = 0;
};

/// Replies with queued answers in order, then repeats the last one.
class QueueBackend final : public llm::Backend {
 public:
  explicit QueueBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const llm::CompletionRequest&) override {
    if (replies_.empty()) return "";
    auto r = replies_[std::min(next_, replies_.size() - 1)];
    ++next_;
    return r;
  }

 private:
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
};

/// Queued replies per purpose; an empty queue answers "none".
class PurposeBackend final : public llm::Backend {
 public:
  std::string complete(const llm::CompletionRequest& r) override {
    requests.push_back(r);
    auto& q = replies[r.purpose];
    if (q.empty()) return "none";
    auto out = q.front();
    if (q.size() > 1) q.erase(q.begin());
    return out;
  }
  void set(llm::Purpose p, std::vector<std::string> r) { replies[p] = std::move(r); }
  std::map<llm::Purpose, std::vector<std::string>> replies;
  std::vector<llm::CompletionRequest> requests;
};

// ---------------------------------------------------------------------------
// Generators. Every property test seeds its own engine with a fixed value.

using Rng = std::mt19937_64;

inline std::size_t pick(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }
inline bool coin(Rng& rng, double p = 0.5) { return std::bernoulli_distribution(p)(rng); }

inline std::string random_slug(Rng& rng, std::size_t max_len = 10) {
  static constexpr std::string_view kChars = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::string s(1, "abcdefghijklmnopqrstuvwxyz"[pick(rng, 26)]);
  const auto len = pick(rng, max_len);
  for (std::size_t i = 0; i < len; ++i) s += kChars[pick(rng, kChars.size())];
  return s;
}

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = {
      "track", "route", "pad", "via", "net", "footprint", "symbol", "board", "layer", "copper", "zone",
      "width", "corner", "round", "teardrop", "export", "bom", "text", "silkscreen", "drill", "gerber",
      "Track", "ROUTE", "布线", "封装", "焊盘", "过孔", "铜", "3d", "x", "a-b", "v2"};
  return words;
}

/// Free text drawn from a small shared vocabulary so overlaps are common.
inline std::string random_text(Rng& rng, std::size_t max_words = 8) {
  std::string out;
  const auto n = pick(rng, max_words + 1);
  static const std::vector<std::string> seps = {" ", ", ", "  ", "-", ". ", "/"};
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += seps[pick(rng, seps.size())];
    out += vocabulary()[pick(rng, vocabulary().size())];
  }
  return out;
}

/// Arbitrary printable-ish text including escapes, tabs, newlines and UTF-8.
inline std::string random_field(Rng& rng, std::size_t max_len = 16) {
  static const std::vector<std::string> atoms = {"a", "Z", "0", " ", "\t", "\n", "\\", "=", "#", "[", "]",
                                                 "é", "布", "线", "\"", "'", "-", "_", "{", "}"};
  std::string s;
  const auto n = pick(rng, max_len + 1);
  for (std::size_t i = 0; i < n; ++i) s += atoms[pick(rng, atoms.size())];
  return s;
}

inline plugins::ArgValue random_arg(Rng& rng) {
  switch (pick(rng, 4)) {
    case 0: return random_field(rng);
    case 1: return static_cast<std::int64_t>(pick(rng, 2001)) - 1000;
    case 2: return static_cast<double>(pick(rng, 10000)) / 16.0;
    default: return coin(rng);
  }
}

/// A valid builtin_sim manifest with random text fields and parameters.
inline plugins::PluginManifest random_manifest(Rng& rng, const std::string& id) {
  plugins::PluginManifest m;
  m.plugin_id = id;
  m.display_name = random_text(rng, 3) + " " + id;
  m.description = random_text(rng, 10) + " plugin";
  if (coin(rng)) m.display_name_zh = "插件 " + random_text(rng, 2);
  if (coin(rng)) m.description_zh = "描述 " + random_text(rng, 4);
  m.binding = plugins::Binding::builtin_sim;
  m.command = "round-tracker";
  m.idempotent = coin(rng);
  m.side_effects = coin(rng);
  m.origin = coin(rng) ? plugins::Origin::bundled : plugins::Origin::user_defined;
  const auto nparams = pick(rng, 4);
  for (std::size_t i = 0; i < nparams; ++i) {
    plugins::ParameterSpec p;
    p.name = "p" + std::to_string(i) + "_" + random_slug(rng, 4);
    for (auto& c : p.name)
      if (c == '-') c = '_';
    const auto kind = pick(rng, 5);
    p.required = coin(rng);
    if (kind == 0) {
      p.kind = plugins::ParamKind::string;
      if (coin(rng)) p.default_value = std::string("d") + random_slug(rng, 3);
    } else if (kind == 1) {
      p.kind = plugins::ParamKind::integer;
      if (coin(rng)) p.default_value = static_cast<std::int64_t>(pick(rng, 100));
      p.unit = "mil";
    } else if (kind == 2) {
      p.kind = plugins::ParamKind::number;
      if (coin(rng)) p.default_value = 0.5 * static_cast<double>(pick(rng, 20));
    } else if (kind == 3) {
      p.kind = plugins::ParamKind::boolean;
      if (coin(rng)) p.default_value = coin(rng);
    } else {
      p.kind = plugins::ParamKind::enumeration;
      p.allowed_values = {"F.Cu", "B.Cu", "In1.Cu"};
      if (coin(rng)) p.default_value = std::string("B.Cu");
    }
    p.description = random_text(rng, 4);
    m.parameters.push_back(std::move(p));
  }
  if (!m.parameters.empty() && coin(rng)) {
    plugins::InputExample ex;
    ex.caption = "example " + random_slug(rng, 3);
    for (std::size_t i = 0; i < m.parameters.size(); ++i) {
      const auto& p = m.parameters[i];
      if (i > 0 && !p.required) continue;
      switch (p.kind) {
        case plugins::ParamKind::integer: ex.values[p.name] = std::int64_t{7}; break;
        case plugins::ParamKind::number: ex.values[p.name] = 1.25; break;
        case plugins::ParamKind::boolean: ex.values[p.name] = true; break;
        case plugins::ParamKind::enumeration: ex.values[p.name] = std::string("F.Cu"); break;
        default: ex.values[p.name] = std::string("v") + random_slug(rng, 3); break;
      }
    }
    m.input_examples.push_back(std::move(ex));
  }
  return m;
}

}  // namespace helmsman::ts

namespace helmsman::ts {

// ---------------------------------------------------------------------------
// Brute-force lexical oracle, written without the library tokenizer. Valid
// for ASCII and CJK input, which is all the generators produce.

inline std::set<std::string> oracle_tokens(std::string_view s) {
  std::set<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.insert(word);
    word.clear();
  };
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
      if (std::isalnum(c))
        word += static_cast<char>(std::tolower(c));
      else
        flush();
      ++i;
      continue;
    }
    flush();
    const std::size_t len = c >= 0xF0 ? 4 : c >= 0xE0 ? 3 : 2;
    out.insert(std::string(s.substr(i, len)));
    i += len;
  }
  flush();
  return out;
}

inline double oracle_jaccard(std::string_view a, std::string_view b) {
  const auto ta = oracle_tokens(a);
  const auto tb = oracle_tokens(b);
  std::vector<std::string> inter, uni;
  std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(inter));
  std::set_union(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(uni));
  if (uni.empty()) return 0.0;
  return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

/// Every (id, text) pair scored, best first, ties by id.
inline std::vector<std::pair<std::string, double>> oracle_rank(
    std::string_view query, const std::vector<std::pair<std::string, std::string>>& docs) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [id, body] : docs) out.emplace_back(id, oracle_jaccard(query, body));
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    return x.second != y.second ? x.second > y.second : x.first < y.first;
  });
  return out;
}

}  // namespace helmsman::ts
