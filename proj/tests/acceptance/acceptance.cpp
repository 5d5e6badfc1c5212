// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Every model reply comes from the scripted backend.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "helmsman/app.hpp"
#include "helmsman/doc_corpus.hpp"
#include "helmsman/engine.hpp"
#include "helmsman/executor.hpp"
#include "helmsman/qa_engine.hpp"
#include "helmsman/recommender.hpp"
#include "helmsman/router.hpp"
#include "helmsman/session.hpp"
#include "support.hpp"

using namespace helmsman;
using ts::Rng;

namespace {

// Pinned limits.
constexpr int kRoutingSamples = 1000;
constexpr double kRoutingSeconds = 5.0;
constexpr int kEpisodes = 300;
constexpr int kStitchSelections = 100;
constexpr int kGroundingCases = 300;
constexpr std::size_t kAugmentNotes = 4;
constexpr int kRecommenderCases = 200;
constexpr std::size_t kMaxRegistry = 50;
constexpr double kRecommenderSeconds = 10.0;
constexpr int kExecutorRuns = 400;
constexpr int kPersistenceCases = 100;

struct Outcome {
  bool pass = true;
  std::string summary;
  std::vector<std::string> problems;

  void check(bool ok, const std::string& what) {
    if (ok) return;
    pass = false;
    if (problems.size() < 5) problems.push_back(what);
  }
};

std::string code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string padded(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06d", prefix, i);
  return buf;
}

Config shipped_config() {
  return load_config(ts::data_dir() / "helmsman.json", [](std::string_view) { return std::nullopt; });
}

const DataSet& shipped_data() {
  static const DataSet data = [] {
    auto report = load_data(shipped_config(), exec::BuiltinCatalog::bundled());
    if (!report.ok()) throw report.errors.front();
    return std::move(*report.data);
  }();
  return data;
}

std::string rule(llm::Purpose p, std::string_view kind, std::string_view pattern, std::string_view response) {
  return std::string(llm::to_string(p)) + "\t" + std::string(kind) + "\t" + text::escape_field(pattern) + "\t" +
         text::escape_field(response) + "\n";
}

// A model reply for routing: real ids mixed with unknown ones, decoration,
// case changes, duplicates, prose and sometimes nothing usable at all.
std::string fuzz_id_reply(Rng& rng, const std::vector<std::string>& known) {
  static const std::vector<std::string> seps = {", ", "\n", "; ", " ", "\n- ", " and ", "|", "\t"};
  static const std::vector<std::string> noise = {"Sure!", "I think", "none", "N/A", "布线", "???", "(maybe)", ""};
  std::string out;
  if (ts::coin(rng, 0.2)) out += noise[ts::pick(rng, noise.size())] + " ";
  const auto n = ts::pick(rng, 7);
  for (std::size_t i = 0; i < n; ++i) {
    std::string id;
    const auto r = ts::pick(rng, 10);
    if (r < 5)
      id = known[ts::pick(rng, known.size())];
    else if (r < 8)
      id = ts::random_slug(rng, 8);
    else
      id = noise[ts::pick(rng, noise.size())];
    if (ts::coin(rng, 0.2))
      for (auto& c : id) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    switch (ts::pick(rng, 6)) {
      case 0: id = "`" + id + "`"; break;
      case 1: id = "\"" + id + "\""; break;
      case 2: id = std::to_string(i + 1) + ". " + id; break;
      case 3: id = "**" + id + "**"; break;
      default: break;
    }
    if (i) out += seps[ts::pick(rng, seps.size())];
    out += id;
  }
  return out;
}

std::vector<std::string> main_ids(const TaskTaxonomy& t) {
  std::vector<std::string> out;
  for (const auto& m : t.main_tasks) out.push_back(m.id);
  return out;
}

// ---------------------------------------------------------------------------

Outcome routing_bounds() {
  Outcome o;
  const auto& tax = shipped_data().taxonomy;
  const auto known = main_ids(tax);
  Rng rng(1001);
  std::string rules;
  std::vector<std::string> queries;
  std::vector<std::set<std::string>> rejected(kRoutingSamples);
  std::vector<int> rounds(kRoutingSamples);
  for (int i = 0; i < kRoutingSamples; ++i) {
    queries.push_back(padded("fuzz-", i) + " " + ts::random_text(rng));
    rules += rule(llm::Purpose::route_main, "substring", padded("fuzz-", i), fuzz_id_reply(rng, known));
    const auto nrej = ts::pick(rng, 6);
    for (std::size_t k = 0; k < nrej; ++k) rejected[i].insert(known[ts::pick(rng, known.size())]);
    rounds[i] = 1 + static_cast<int>(ts::pick(rng, 3));
  }
  auto backend = llm::ScriptedBackend::parse(rules, "<routing-fuzz>");
  int ok = 0, fallbacks = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < kRoutingSamples; ++i) {
    try {
      auto sel = router::select_main(queries[i], tax, rejected[i], rounds[i], backend);
      ++ok;
      fallbacks += sel.lexical_fallback;
      const auto& c = sel.candidates;
      o.check(c.size() >= 1 && c.size() <= 3, "sample " + std::to_string(i) + " returned " + std::to_string(c.size()));
      o.check(std::set<std::string>(c.begin(), c.end()).size() == c.size(), "duplicate ids in sample " +
                                                                                 std::to_string(i));
      for (const auto& id : c) {
        o.check(tax.find_main(id) != nullptr, "unknown id '" + id + "'");
        o.check(!rejected[i].count(id), "rejected id '" + id + "' returned");
      }
    } catch (const Error& e) {
      o.check(false, "sample " + std::to_string(i) + ": " + e.what());
    }
  }
  const auto secs = seconds_since(t0);
  o.check(ok >= 1000, "only " + std::to_string(ok) + " successful selections");
  o.check(secs < kRoutingSeconds, "took " + fmt(secs) + " s");
  o.summary = std::to_string(ok) + "/" + std::to_string(kRoutingSamples) + " selections in bounds (" +
              std::to_string(fallbacks) + " lexical fallbacks), " + fmt(secs) + " s (limit " + fmt(kRoutingSeconds) +
              " s)";
  return o;
}

Outcome feedback_termination() {
  Outcome o;
  const auto& tax = shipped_data().taxonomy;
  const auto known = main_ids(tax);
  std::vector<std::string> multi_sub;
  for (const auto& m : tax.main_tasks)
    if (m.subtasks.size() >= 2) multi_sub.push_back(m.id);
  Rng rng(2002);
  const router::RouterConfig cfg;
  int max_rounds_seen = 0, exhausted = 0, emptied = 0, confirmed = 0;

  // Rules are keyed by the newest reason in the prompt, so the latest round
  // matches first.
  std::string rules;
  for (int ep = 0; ep < kEpisodes; ++ep) {
    for (int round = cfg.max_rounds; round >= 1; --round) {
      const auto key = round == 1 ? padded("ep-", ep) + "-query" : padded("ep-", ep) + "-why" + std::to_string(round - 1);
      rules += rule(llm::Purpose::route_main, "substring", key, fuzz_id_reply(rng, known));
      std::vector<std::string> subs;
      if (!multi_sub.empty())
        for (const auto& s : tax.find_main(multi_sub[ep % multi_sub.size()])->subtasks) subs.push_back(s.id);
      rules += rule(llm::Purpose::route_sub, "substring", key, fuzz_id_reply(rng, subs));
    }
  }
  auto backend = llm::ScriptedBackend::parse(rules, "<episode-fuzz>");

  for (int ep = 0; ep < kEpisodes; ++ep) {
    const bool sub_scope = ep % 2 == 1;
    const auto query = padded("ep-", ep) + "-query " + ts::random_text(rng);
    const auto main_id = multi_sub[ep % multi_sub.size()];
    router::EpisodeState st;
    std::set<std::string> ever_rejected;
    int steps = 0;
    for (;;) {
      if (++steps > cfg.max_rounds + 1) {
        o.check(false, "episode " + std::to_string(ep) + " did not terminate");
        break;
      }
      std::vector<std::string> offered;
      try {
        if (sub_scope) {
          const std::vector<llm::ChatMessage> dlg{{llm::Role::user, query}};
          auto sel = router::select_sub(main_id, dlg, tax, st.rejected_sub, backend, Language::en, st.reasons);
          offered = {sel.subtask_id};
        } else {
          offered = router::select_main(query, tax, st.rejected_main, st.round, backend, Language::en, st.reasons, cfg)
                        .candidates;
        }
      } catch (const Error& e) {
        o.check(e.code() == errc::no_candidates_left || e.code() == errc::rounds_exhausted,
                std::string("unexpected ") + e.code());
        ++emptied;
        break;
      }
      for (const auto& id : offered)
        o.check(!ever_rejected.count(id), "episode " + std::to_string(ep) + " re-offered '" + id + "'");
      max_rounds_seen = std::max(max_rounds_seen, st.round);
      if (ts::coin(rng, 0.15)) {
        ++confirmed;
        break;
      }
      std::vector<std::string> reject;
      for (const auto& id : offered)
        if (reject.empty() || ts::coin(rng)) reject.push_back(id);
      try {
        st = router::apply_feedback(st, {reject, padded("ep-", ep) + "-why" + std::to_string(st.round),
                                         sub_scope ? router::FeedbackScope::sub : router::FeedbackScope::main},
                                    cfg);
        ever_rejected.insert(reject.begin(), reject.end());
      } catch (const Error& e) {
        o.check(e.code() == errc::rounds_exhausted, std::string("unexpected ") + e.code());
        ++exhausted;
        break;
      }
    }
    o.check(st.round <= cfg.max_rounds, "episode " + std::to_string(ep) + " reached round " + std::to_string(st.round));
  }
  o.summary = std::to_string(kEpisodes) + " episodes: " + std::to_string(confirmed) + " confirmed, " +
              std::to_string(exhausted) + " hit the round limit, " + std::to_string(emptied) +
              " ran out of candidates; max round " + std::to_string(max_rounds_seen) + " (limit " +
              std::to_string(cfg.max_rounds) + ")";
  return o;
}

Outcome default_taxonomy() {
  Outcome o;
  const auto tax = load_taxonomy(ts::data_dir() / "taxonomy.txt");
  const auto& store = shipped_data().fragments;
  o.check(tax.main_tasks.size() == 20, std::to_string(tax.main_tasks.size()) + " main tasks");
  std::size_t subs = 0, refs = 0;
  for (const auto& m : tax.main_tasks)
    for (const auto& s : m.subtasks) {
      ++subs;
      for (const auto& f : s.fragment_ids) {
        ++refs;
        for (auto lang : kAllLanguages)
          o.check(store.contains(f, lang), s.id + " -> " + f + " missing in " + std::string(to_string(lang)));
      }
    }
  o.summary = std::to_string(tax.main_tasks.size()) + " main tasks, " + std::to_string(subs) + " subtasks, " +
              std::to_string(refs) + " fragment references resolved in en and zh";
  return o;
}

Outcome stitch_determinism() {
  Outcome o;
  const auto& data = shipped_data();
  std::vector<const SubTask*> subs;
  for (const auto& m : data.taxonomy.main_tasks)
    for (const auto& s : m.subtasks) subs.push_back(&s);
  Rng rng(4004);
  for (int i = 0; i < kStitchSelections; ++i) {
    std::vector<std::string> ids;
    const auto nsub = 1 + ts::pick(rng, 3);
    for (std::size_t k = 0; k < nsub; ++k)
      for (const auto& f : subs[ts::pick(rng, subs.size())]->fragment_ids)
        if (std::find(ids.begin(), ids.end(), f) == ids.end()) ids.push_back(f);
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto lang = ts::coin(rng) ? Language::en : Language::zh;
    ManualClock c1, c2(Timestamp{std::chrono::milliseconds{42}});
    const auto a = docs::stitch(ids, lang, data.fragments, c1);
    const auto b = docs::stitch(ids, lang, data.fragments, c2);
    o.check(a.html == b.html && a.doc_id == b.doc_id, "selection " + std::to_string(i) + " differs across runs");
    const auto ctx = docs::qa_context(a);
    std::size_t last_html = 0, last_ctx = 0;
    for (const auto& id : ids) {
      const auto marker = "data-fragment=\"" + id + "\"";
      const auto at = a.html.find(marker);
      o.check(at != std::string::npos && a.html.find(marker, at + 1) == std::string::npos,
              id + " not present exactly once");
      o.check(at == std::string::npos || at >= last_html, id + " out of order");
      if (at != std::string::npos) last_html = at;
      const auto body = html::to_text(data.fragments.find(id, lang)->body_html);
      const auto in_ctx = ctx.find("== " + id + " ==\n" + body);
      o.check(in_ctx != std::string::npos, id + " text missing from qa_context");
      o.check(in_ctx == std::string::npos || in_ctx >= last_ctx, id + " out of order in qa_context");
      if (in_ctx != std::string::npos) last_ctx = in_ctx;
    }
  }
  o.summary = std::to_string(kStitchSelections) + " selections byte-identical, every fragment once and in order";
  return o;
}

Outcome qa_grounding() {
  Outcome o;
  const auto& data = shipped_data();
  const auto* sub = data.taxonomy.find_sub("footprints-create");
  ManualClock clock;
  const auto doc = docs::stitch(sub->fragment_ids, Language::en, data.fragments, clock);
  const auto context = docs::qa_context(doc);
  const auto& in_context = sub->fragment_ids;
  std::vector<std::string> outside;
  for (const auto& id : data.fragments.ids(Language::en))
    if (std::find(in_context.begin(), in_context.end(), id) == in_context.end()) outside.push_back(id);

  Rng rng(5005);
  std::string rules;
  std::vector<std::pair<std::string, bool>> cases;  // question, expected grounded
  for (int i = 0; i < kGroundingCases; ++i) {
    std::string answer = ts::random_text(rng);
    bool any = false, all_inside = true;
    const auto n = ts::pick(rng, 4);
    for (std::size_t k = 0; k < n; ++k) {
      const auto kind = ts::pick(rng, 4);
      if (kind <= 1) {
        answer += " [" + in_context[ts::pick(rng, in_context.size())] + "]";
        any = true;
      } else if (kind == 2) {
        answer += " [" + (ts::coin(rng) ? outside[ts::pick(rng, outside.size())] : ts::random_slug(rng)) + "]";
        any = true;
        all_inside = false;
      } else {
        answer += " [Not A Citation]";  // never counts
      }
      answer += " " + ts::random_text(rng, 3);
    }
    const auto q = padded("question-", i);
    rules += rule(llm::Purpose::qa_answer, "exact", q, answer);
    cases.emplace_back(q, any && all_inside);
  }
  auto scripted = llm::ScriptedBackend::parse(rules, "<qa-fuzz>");
  llm::RecordingBackend rec(scripted);
  int grounded = 0;
  for (const auto& [q, expected] : cases) {
    const auto ex = qa::answer(q, context, {}, rec, clock);
    grounded += ex.grounded;
    o.check(ex.grounded == expected, q + ": grounded=" + (ex.grounded ? "true" : "false"));
    const auto req = rec.last(llm::Purpose::qa_answer);
    o.check(req && llm::prompt_text(*req).find(context) != std::string::npos, q + ": prompt lacks the context");
  }
  o.summary = "prompt carried the full " + std::to_string(text::utf8_length(context)) + "-code-point context in " +
              std::to_string(kGroundingCases) + " cases; grounded flag matched in all (" + std::to_string(grounded) +
              " grounded)";
  return o;
}

Outcome augmentation_flow() {
  Outcome o;
  ts::TempDir state("accept-aug");
  std::string notes;
  for (std::size_t i = 0; i < kAugmentNotes; ++i) notes += "- learned note " + std::to_string(i + 1) + "\n";
  std::string rules = rule(llm::Purpose::route_main, "regex", ".", "footprints") +
                      rule(llm::Purpose::route_sub, "regex", ".", "footprints-create") +
                      rule(llm::Purpose::qa_answer, "regex", ".", "The documentation does not say.") +
                      rule(llm::Purpose::augment, "regex", ".", notes);
  auto scripted = llm::ScriptedBackend::parse(rules, "<augment>");
  auto config = shipped_config();
  config.state_dir = state.path();
  Runtime::Options opts;
  opts.persistent = true;
  auto recorder = std::make_unique<llm::RecordingBackend>(scripted);
  auto* rec = recorder.get();
  opts.backend = std::move(recorder);
  opts.clock = std::make_unique<ManualClock>();
  opts.ids = std::make_unique<SequentialIds>();
  auto data = shipped_data();
  Runtime rt(config, std::move(data), std::move(opts));
  auto& engine = rt.engine();
  auto s = engine.create_session(Language::en);
  std::size_t last_size = 0;
  std::vector<std::string> last_ids;
  auto step = [&](session::Event e) {
    s = engine.step(s, e).session;
    const auto records = rt.notes().records();
    o.check(records.size() >= last_size, "note store shrank");
    o.check(records.size() >= last_ids.size() &&
                std::equal(last_ids.begin(), last_ids.end(), records.begin(),
                           [](const auto& id, const auto& r) { return id == r.record_id; }),
            "earlier notes changed");
    last_size = records.size();
    last_ids.clear();
    for (const auto& r : records) last_ids.push_back(r.record_id);
  };
  step(session::Event::message("make a footprint"));
  step(session::Event::of(session::EventKind::confirm_main, {"footprints"}));
  step(session::Event::of(session::EventKind::confirm_sub, {"footprints-create"}));
  for (int i = 0; i < 3; ++i) step(session::Event::message("unanswerable " + std::to_string(i)));
  o.check(s.pending_reroute && s.pending_reroute->signal.kind == qa::BottleneckKind::repeated_unanswered,
          "no bottleneck after three ungrounded answers");
  o.check(s.augmentations.size() == kAugmentNotes, std::to_string(s.augmentations.size()) + " notes stored");
  step(session::Event::of(session::EventKind::decline_reroute));
  step(session::Event::message("next question"));
  const auto req = rec->last(llm::Purpose::qa_answer);
  const auto prompt = req ? llm::prompt_text(*req) : "";
  for (std::size_t i = 0; i < kAugmentNotes; ++i)
    o.check(prompt.find("learned note " + std::to_string(i + 1)) != std::string::npos,
            "note " + std::to_string(i + 1) + " missing from the next prompt");
  // Ids keep rising across a reload of the store.
  qa::AugmentationStore reloaded(state / "notes.jsonl");
  o.check(reloaded.records() == rt.notes().records(), "store did not reload identically");
  ManualClock clock;
  const auto next = reloaded.append(qa::NoteSource::user_note, "", "extra", s.session_id, clock.now());
  o.check(next.record_id == "aug-" + std::to_string(kAugmentNotes + 1), "reloaded store reused id " + next.record_id);
  o.summary = std::to_string(kAugmentNotes) + " distilled notes all present in the next QA prompt; store grew " +
              "monotonically and survived reload";
  return o;
}

Outcome recommender_oracle() {
  Outcome o;
  Rng rng(7007);
  std::size_t total_ties = 0;
  int matched = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < kRecommenderCases; ++i) {
    plugins::Registry reg;
    const auto n = 1 + ts::pick(rng, kMaxRegistry);
    for (std::size_t k = 0; k < n; ++k) {
      auto m = ts::random_manifest(rng, ts::random_slug(rng, 6));
      reg.manifests.insert_or_assign(m.plugin_id, m);
    }
    const auto lang = ts::coin(rng) ? Language::en : Language::zh;
    const auto need = ts::random_text(rng, 10);
    std::vector<std::pair<std::string, std::string>> docs;
    for (const auto& [id, m] : reg.manifests) docs.emplace_back(id, m.describe(lang) + " " + m.display(lang));
    const auto want = ts::oracle_rank(need, docs);
    const auto got = recommend::lexical_ranking(need, reg, lang);
    bool same = got.size() == want.size();
    for (std::size_t k = 0; same && k < got.size(); ++k) {
      same = got[k].plugin_id == want[k].first && got[k].score == want[k].second;
      if (k && want[k].second == want[k - 1].second) ++total_ties;
    }
    o.check(same, "case " + std::to_string(i) + " diverges from the oracle");
    matched += same;
    const auto top_k = 1 + ts::pick(rng, 5);
    if (text::is_blank(need)) {
      o.check(code_of([&] { recommend::recommend(need, reg, nullptr, recommend::Method::lexical, top_k, lang); }) ==
                  errc::invalid_request,
              "case " + std::to_string(i) + " accepted a blank need");
      continue;
    }
    try {
      const auto rec = recommend::recommend(need, reg, nullptr, recommend::Method::lexical, top_k, lang);
      const auto k = std::min(top_k, want.size());
      o.check(rec.ranked.size() == k, "case " + std::to_string(i) + " top_k size");
      for (std::size_t j = 0; j < rec.ranked.size() && j < want.size(); ++j)
        o.check(rec.ranked[j].plugin_id == want[j].first, "case " + std::to_string(i) + " top_k order");
    } catch (const Error& e) {
      o.check(false, std::string("case ") + std::to_string(i) + ": " + e.what());
    }
  }
  const auto secs = seconds_since(t0);
  o.check(secs < kRecommenderSeconds, "took " + fmt(secs) + " s");
  o.summary = std::to_string(matched) + "/" + std::to_string(kRecommenderCases) + " registries (up to " +
              std::to_string(kMaxRegistry) + " plugins) matched the brute-force oracle exactly, " + std::to_string(total_ties) + " ties, " +
              fmt(secs) + " s (limit " + fmt(kRecommenderSeconds) + " s)";
  return o;
}

plugins::ArgMap fuzz_args(Rng& rng, const plugins::PluginManifest& m) {
  plugins::ArgMap args;
  for (const auto& p : m.parameters) {
    if (!p.required && ts::coin(rng, 0.4)) continue;
    if (p.required && ts::coin(rng, 0.05)) continue;  // missing
    switch (ts::pick(rng, 6)) {
      case 0: args[p.name] = ts::random_arg(rng); break;  // often the wrong type
      case 1: args[p.name] = std::to_string(static_cast<int>(ts::pick(rng, 3000)) - 500); break;
      case 2: args[p.name] = static_cast<std::int64_t>(ts::pick(rng, 120)); break;
      default:
        if (p.kind == plugins::ParamKind::enumeration)
          args[p.name] = p.allowed_values[ts::pick(rng, p.allowed_values.size())];
        else if (p.kind == plugins::ParamKind::string)
          args[p.name] = ts::coin(rng, 0.2) ? std::string("  ") : ts::random_text(rng, 2) + "x";
        else
          args[p.name] = static_cast<std::int64_t>(1 + ts::pick(rng, 200));
    }
  }
  if (ts::coin(rng, 0.05)) args["bogus"] = true;
  return args;
}

Outcome executor_atomicity() {
  Outcome o;
  const auto& data = shipped_data();
  ManualClock clock;
  SequentialIds ids;
  exec::Executor executor(exec::BuiltinCatalog::bundled(), {}, clock, ids);
  std::vector<std::string> builtin;
  for (const auto& [id, m] : data.registry.manifests)
    if (m.binding == plugins::Binding::builtin_sim) builtin.push_back(id);
  Rng rng(8008);
  ws::Workspace w(data.seed);
  int ok_applied = 0, ok_noop = 0, failed = 0, rejected = 0;
  for (int i = 0; i < kExecutorRuns; ++i) {
    if (i % 50 == 0) w.replace(data.seed);
    const auto& m = data.registry.manifests.at(builtin[ts::pick(rng, builtin.size())]);
    const auto args = fuzz_args(rng, m);
    const auto before_text = w.serialized();
    const auto before = w.state();
    const auto rec = executor.execute(m.plugin_id, args, data.registry, w);
    const auto tag = "run " + std::to_string(i) + " (" + m.plugin_id + ")";
    if (rec.outcome != exec::Outcome::ok) {
      (rec.outcome == exec::Outcome::failed ? failed : rejected)++;
      o.check(w.serialized() == before_text, tag + " changed the workspace");
      o.check(rec.diff.empty() && rec.version_after == rec.version_before, tag + " reported changes");
      continue;
    }
    const bool applied = !rec.diff.empty() || m.side_effects;
    (applied ? ok_applied : ok_noop)++;
    o.check(w.state().version == before.version + (applied ? 1 : 0), tag + " version step");
    o.check(rec.version_after == w.state().version, tag + " recorded version");
    o.check(ws::apply_diff(before, rec.diff).items == w.state().items, tag + " diff replay");
    o.check(w.snapshot_count() == 0, tag + " leaked a snapshot");
  }
  o.check(ok_applied > 0 && failed > 0 && rejected > 0, "fuzzing missed an outcome class");
  o.summary = std::to_string(kExecutorRuns) + " runs: " + std::to_string(ok_applied) + " applied (+1), " +
              std::to_string(ok_noop) + " ok with no change (+0), " + std::to_string(failed) + " failed and " +
              std::to_string(rejected) + " rejected left the workspace byte-identical; every diff replayed";
  return o;
}

Outcome golden_transcript() {
  Outcome o;
  const auto cmd = "cd '" + ts::source_dir().string() + "' && '" + std::string(HELMSMAN_CLI) +
                   "' -c data/helmsman.json chat --script tests/fixtures/happy.script 2>&1";
  std::string out;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) {
    o.check(false, "cannot start the CLI");
    return o;
  }
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  const int status = ::pclose(pipe);
  const auto golden = read_text_file(ts::fixture("happy.golden"));
  o.check(WIFEXITED(status) && WEXITSTATUS(status) == 0, "chat exited with status " + std::to_string(status));
  if (out != golden) {
    std::size_t at = 0;
    while (at < out.size() && at < golden.size() && out[at] == golden[at]) ++at;
    o.check(false, "transcript differs from the golden file at byte " + std::to_string(at));
  }
  o.check(golden.find("workspace version 1 -> 2") != std::string::npos, "golden lacks the version step");
  o.summary = "chat transcript (" + std::to_string(out.size()) + " bytes) identical to tests/fixtures/happy.golden";
  return o;
}

session::Event random_event(Rng& rng, const session::Session& s, const plugins::Registry& reg) {
  using session::EventKind;
  const auto allowed = allowed_events(s);
  const auto kind = allowed[ts::pick(rng, allowed.size())];
  session::Event e = session::Event::of(kind);
  switch (kind) {
    case EventKind::message:
      e.text = ts::coin(rng, 0.1) ? "/topic " + ts::random_text(rng, 3) : ts::random_text(rng) + " " + ts::random_field(rng);
      if (text::is_blank(e.text)) e.text = "track width";
      break;
    case EventKind::command: e.text = "teardrops " + ts::random_text(rng, 3); break;
    case EventKind::confirm_main:
      if (s.routing && !s.routing->main_candidates.empty())
        e.ids = {s.routing->main_candidates[ts::pick(rng, s.routing->main_candidates.size())]};
      break;
    case EventKind::reject_main:
      if (s.routing && !s.routing->main_candidates.empty()) e.ids = {s.routing->main_candidates.front()};
      e.reason = ts::random_field(rng) + "no";
      break;
    case EventKind::confirm_sub:
    case EventKind::reject_sub:
      if (s.routing && s.routing->sub_candidate) e.ids = {*s.routing->sub_candidate};
      e.reason = "not it " + ts::random_field(rng);
      break;
    case EventKind::confirm_plugin:
      if (s.recommendation && !s.recommendation->ranked.empty() && ts::coin(rng, 0.8)) {
        e.ids = {s.recommendation->ranked[ts::pick(rng, s.recommendation->ranked.size())].plugin_id};
      } else {
        auto it = reg.manifests.begin();
        std::advance(it, static_cast<long>(ts::pick(rng, reg.manifests.size())));
        e.ids = {it->first};
        e.override_choice = true;
      }
      break;
    case EventKind::execute:
      if (s.recommendation && s.recommendation->chosen)
        if (const auto* m = reg.find(*s.recommendation->chosen)) e.args = fuzz_args(rng, *m);
      break;
    default: break;
  }
  return e;
}

Outcome persistence_round_trips() {
  Outcome o;
  ts::TempDir dir("accept-persist");
  session::SessionStore store(dir / "sessions");
  const std::string rules = rule(llm::Purpose::route_main, "regex", ".", "footprints, routing, zones") +
                            rule(llm::Purpose::route_sub, "regex", ".", "none") +
                            rule(llm::Purpose::qa_answer, "substring", "track", "Use the router [routing-intro].") +
                            rule(llm::Purpose::qa_answer, "regex", ".", "Unclear.") +
                            rule(llm::Purpose::augment, "regex", ".", "- a note\n- another note") +
                            rule(llm::Purpose::recommend, "regex", ".", "teardrop, round-tracker, add-text");
  auto scripted = llm::ScriptedBackend::parse(rules, "<walk>");
  auto config = shipped_config();
  Runtime::Options opts;
  opts.persistent = false;
  opts.backend = std::make_unique<llm::RecordingBackend>(scripted);
  opts.clock = std::make_unique<ManualClock>();
  opts.ids = std::make_unique<SequentialIds>();
  auto data = shipped_data();
  Runtime rt(config, std::move(data), std::move(opts));
  auto& engine = rt.engine();
  const auto reg = rt.registry().snapshot();

  Rng rng(10010);
  std::size_t events = 0;
  std::set<std::string> phases;
  for (int i = 0; i < kPersistenceCases; ++i) {
    auto s = engine.create_session(ts::coin(rng) ? Language::en : Language::zh);
    const auto steps = 1 + ts::pick(rng, 25);
    for (std::size_t k = 0; k < steps; ++k) {
      try {
        s = engine.step(s, random_event(rng, s, *reg)).session;
        ++events;
      } catch (const Error&) {
      }
    }
    phases.insert(std::string(session::to_string(s.phase)));
    store.save(s);
    o.check(store.load(s.session_id) == s, "session " + s.session_id + " changed in the store");
    o.check(session::session_from_json(nlohmann::json::parse(session::to_json(s).dump())) == s,
            "session " + s.session_id + " changed through JSON");

    plugins::Registry r;
    r.version = static_cast<std::int64_t>(ts::pick(rng, 1000));
    const auto n = ts::pick(rng, 8);
    for (std::size_t k = 0; k < n; ++k) {
      auto m = ts::random_manifest(rng, ts::random_slug(rng, 6));
      m.description += " " + ts::random_field(rng);
      r.manifests.insert_or_assign(m.plugin_id, m);
    }
    o.check(plugins::registry_from_json(nlohmann::json::parse(plugins::to_json(r).dump())) == r,
            "registry " + std::to_string(i) + " changed through JSON");
    for (const auto& [id, m] : r.manifests)
      o.check(plugins::parse_manifest(plugins::serialize_manifest(m), "<gen>", m.origin) == m,
              "manifest " + id + " changed through text");
  }
  o.summary = std::to_string(kPersistenceCases) + " sessions (" + std::to_string(events) + " events, " +
              std::to_string(phases.size()) + " distinct end phases) and " + std::to_string(kPersistenceCases) +
              " registries restored equal";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"routing-bounds", routing_bounds},
      {"feedback-exclusion-termination", feedback_termination},
      {"default-taxonomy", default_taxonomy},
      {"stitch-determinism", stitch_determinism},
      {"qa-grounding-context", qa_grounding},
      {"augmentation-flow", augmentation_flow},
      {"recommender-oracle", recommender_oracle},
      {"executor-atomicity", executor_atomicity},
      {"golden-transcript", golden_transcript},
      {"persistence-round-trips", persistence_round_trips},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.problems.push_back(std::string("threw: ") + e.what());
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.summary << "\n";
    for (const auto& p : o.problems) std::cout << "     - " << p << "\n";
    failures += !o.pass;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed\n";
  return failures ? 1 : 0;
}
