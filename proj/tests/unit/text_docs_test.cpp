#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>

#include "helmsman/doc_corpus.hpp"
#include "helmsman/html.hpp"
#include "helmsman/llm.hpp"
#include "helmsman/sections.hpp"
#include "helmsman/taxonomy.hpp"
#include "helmsman/text.hpp"
#include "support.hpp"

using namespace helmsman;
using helmsman::ts::fixture;
using helmsman::ts::Rng;
using helmsman::ts::TempDir;

namespace {

std::string code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

}  // namespace

// ---------------------------------------------------------------------------
// text

TEST(Text, TokenizeFoldsCaseAndSplitsCjk) {
  EXPECT_EQ(text::tokenize("Route-the TRACK, 布线!"),
            (std::vector<std::string>{"route", "the", "track", "布", "线"}));
  EXPECT_TRUE(text::tokenize("  ,.;  ").empty());
}

TEST(Text, JaccardKnownValues) {
  EXPECT_DOUBLE_EQ(text::jaccard(text::token_set("a b c"), text::token_set("b c d")), 0.5);
  EXPECT_DOUBLE_EQ(text::jaccard(text::token_set(""), text::token_set("")), 0.0);
  EXPECT_DOUBLE_EQ(text::jaccard(text::token_set("x"), text::token_set("X")), 1.0);
}

TEST(Text, EscapeFieldRoundTripsRandomStrings) {
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto s = ts::random_field(rng, 24);
    const auto escaped = text::escape_field(s);
    EXPECT_EQ(escaped.find('\n'), std::string::npos);
    EXPECT_EQ(escaped.find('\t'), std::string::npos);
    EXPECT_EQ(text::trim(escaped), escaped) << s;
    EXPECT_EQ(text::unescape_field(escaped), s);
  }
  EXPECT_FALSE(text::unescape_field("bad\\q").has_value());
  EXPECT_FALSE(text::unescape_field("trailing\\").has_value());
}

TEST(Text, Utf8TruncateNeverSplitsCodePoints) {
  EXPECT_EQ(text::utf8_truncate("布线abc", 2), "布线");
  EXPECT_EQ(text::utf8_length("布线abc"), 5u);
  EXPECT_EQ(text::utf8_truncate("ab", 10), "ab");
}

TEST(Text, Sha256MatchesKnownVector) {
  EXPECT_EQ(text::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Text, ShellQuoteSurvivesQuotes) { EXPECT_EQ(text::shell_quote("it's"), "'it'\\''s'"); }

// ---------------------------------------------------------------------------
// sections

TEST(Sections, ParsesPreambleSectionsAndEscapes) {
  auto doc = parse_sections("# c\nversion = 2\n\n[main a]\ntitle_en = Two\\nlines\n[plugin]\nid = x\n", "t");
  ASSERT_EQ(doc.preamble.size(), 1u);
  ASSERT_EQ(doc.sections.size(), 2u);
  EXPECT_EQ(doc.sections[0].kind, "main");
  EXPECT_EQ(doc.sections[0].argument, "a");
  EXPECT_EQ(doc.sections[0].get("title_en"), "Two\nlines");
  EXPECT_EQ(doc.sections[1].argument, "");
}

TEST(Sections, ReportsLineNumbers) {
  try {
    parse_sections("[main a]\nx = 1\nx = 2\n", "f.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), errc::parse_error);
    EXPECT_NE(std::string(e.what()).find("f.txt:3"), std::string::npos);
  }
  EXPECT_EQ(code_of([] { parse_sections("[main a\n", "f"); }), errc::parse_error);
  EXPECT_EQ(code_of([] { parse_sections("no equals sign\n", "f"); }), errc::parse_error);
}

// ---------------------------------------------------------------------------
// taxonomy

TEST(Taxonomy, LoadsMiniFixture) {
  auto t = load_taxonomy(fixture("mini/taxonomy.txt"));
  ASSERT_EQ(t.main_tasks.size(), 2u);
  EXPECT_EQ(t.subtask_count(), 3u);
  const auto* sub = t.find_sub("route-vias");
  ASSERT_NE(sub, nullptr);
  EXPECT_EQ(sub->parent_id, "routing");
  EXPECT_EQ(sub->fragment_ids, (std::vector<std::string>{"route-intro", "route-vias"}));
  EXPECT_EQ(t.main_tasks[0].subtasks[0].id, "route-basic");
}

TEST(Taxonomy, RejectsStructuralErrors) {
  const std::string main = "[main a]\ntitle_en = A\ntitle_zh = 甲\ndescription = d\n";
  const std::string sub = "[sub s]\nparent = a\ntitle_en = S\ntitle_zh = 乙\ndescription = d\nfragments = f\n";
  EXPECT_EQ(code_of([&] { parse_taxonomy(main); }), errc::empty_subtasks);
  EXPECT_EQ(code_of([&] { parse_taxonomy(main + main + sub); }), errc::duplicate_id);
  EXPECT_EQ(code_of([&] {
              parse_taxonomy(main + "[sub s]\nparent = zz\ntitle_en = S\ntitle_zh = 乙\ndescription = d\nfragments = f\n");
            }),
            errc::orphan_subtask);
  EXPECT_EQ(code_of([&] { parse_taxonomy(main + sub + "[main b]\ntitle_en = B\n"); }), errc::parse_error);
  EXPECT_EQ(code_of([&] { parse_taxonomy(main + sub + "[mystery x]\n"); }), errc::parse_error);
}

TEST(Taxonomy, SerializeRoundTripsRandomTrees) {
  Rng rng(23);
  for (int round = 0; round < 200; ++round) {
    TaskTaxonomy t;
    t.version = 1 + static_cast<std::int64_t>(ts::pick(rng, 50));
    const auto mains = 1 + ts::pick(rng, 6);
    for (std::size_t m = 0; m < mains; ++m) {
      MainTask mt;
      mt.id = "m" + std::to_string(m) + "-" + ts::random_slug(rng, 4);
      mt.title_en = "T " + ts::random_field(rng, 8);
      mt.title_zh = "标题" + ts::random_field(rng, 4);
      mt.description = "D" + ts::random_field(rng, 20);
      const auto subs = 1 + ts::pick(rng, 3);
      for (std::size_t s = 0; s < subs; ++s) {
        SubTask st;
        st.id = mt.id + "-s" + std::to_string(s);
        st.parent_id = mt.id;
        st.title_en = "S " + ts::random_field(rng, 6);
        st.title_zh = "子" + ts::random_field(rng, 3);
        st.description = "d" + ts::random_field(rng, 10);
        const auto nf = 1 + ts::pick(rng, 3);
        for (std::size_t f = 0; f < nf; ++f) st.fragment_ids.push_back("f" + std::to_string(f) + ts::random_slug(rng, 3));
        mt.subtasks.push_back(std::move(st));
      }
      t.main_tasks.push_back(std::move(mt));
    }
    const auto text = serialize_taxonomy(t);
    const auto back = parse_taxonomy(text);
    EXPECT_EQ(serialize_taxonomy(back), text);
    ASSERT_EQ(back.main_tasks.size(), t.main_tasks.size());
    for (std::size_t i = 0; i < t.main_tasks.size(); ++i) {
      EXPECT_EQ(back.main_tasks[i].title_en, t.main_tasks[i].title_en);
      EXPECT_EQ(back.main_tasks[i].description, t.main_tasks[i].description);
      ASSERT_EQ(back.main_tasks[i].subtasks.size(), t.main_tasks[i].subtasks.size());
      for (std::size_t j = 0; j < t.main_tasks[i].subtasks.size(); ++j)
        EXPECT_EQ(back.main_tasks[i].subtasks[j].fragment_ids, t.main_tasks[i].subtasks[j].fragment_ids);
    }
  }
}

TEST(Taxonomy, GhostFragmentIsReportedPerLanguage) {
  auto t = load_taxonomy(fixture("ghost.taxonomy.txt"));
  auto resolves = [](std::string_view id, Language) { return id != "ghost"; };
  auto dangling = find_dangling(t, resolves, kAllLanguages);
  ASSERT_EQ(dangling.size(), 2u);
  EXPECT_EQ(dangling[0].fragment_id, "ghost");
  EXPECT_EQ(dangling[0].subtask_id, "haunted");
  EXPECT_EQ(dangling_error(dangling[0]).code(), errc::dangling_fragment);
  EXPECT_EQ(code_of([&] { load_taxonomy(fixture("ghost.taxonomy.txt"), resolves, kAllLanguages); }),
            errc::dangling_fragment);
}

TEST(Taxonomy, HolderVersionsOnlyGoUp) {
  TaxonomyHolder holder(load_taxonomy(fixture("mini/taxonomy.txt")));
  auto first = holder.current();
  auto v = holder.replace(*first);
  EXPECT_GT(v, first->version);
  EXPECT_EQ(first->version, 1);  // old snapshot untouched
}

// ---------------------------------------------------------------------------
// html

TEST(Html, SanitizerStripsScriptsAndUnknownAttributes) {
  auto tokens = html::tokenize(
      "<p onclick=\"x()\" class=\"c\">Hi <script>alert(1)</script><b>there</b></p><style>p{}</style><custom>kept</custom>");
  auto out = html::sanitize(tokens, "f.html");
  EXPECT_EQ(out, "<p class=\"c\">Hi <b>there</b></p>kept");
}

TEST(Html, SanitizerRejectsDangerousConstructsWithLocation) {
  for (const std::string src : {"<p>x</p>\n<iframe src=\"a\"></iframe>", "<a href=\"javascript:alert(1)\">x</a>",
                                "<a href=\" JaVa\tscript:x\">x</a>", "<form></form>", "<svg></svg>"}) {
    try {
      html::sanitize(html::tokenize(src), "doc.html");
      ADD_FAILURE() << src;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), errc::sanitize_reject);
      EXPECT_NE(std::string(e.what()).find("doc.html:"), std::string::npos);
    }
  }
  EXPECT_NO_THROW(html::sanitize(html::tokenize("<img src=\"data:image/png;base64,AA\">"), "f"));
}

TEST(Html, SanitizerBalancesTags) {
  EXPECT_EQ(html::sanitize(html::tokenize("<ul><li>a<li>b</ul></p>"), "f"), "<ul><li>a<li>b</li></li></ul>");
  EXPECT_EQ(html::sanitize(html::tokenize("<em>open"), "f"), "<em>open</em>");
}

TEST(Html, ToTextDecodesAndNormalizes) {
  EXPECT_EQ(html::to_text("<p>A&amp;B</p><p>  two\n lines &lt;x&gt; &#x5E03;</p><script>no</script>"),
            "A&B two lines <x> 布");
}

TEST(Html, SanitizedOutputIsStableUnderResanitizing) {
  Rng rng(5);
  static const std::vector<std::string> pieces = {"<p>", "</p>", "<b>", "</b>", "<ul>", "<li>", "</ul>", "text ",
                                                  "&amp;", "<br>", "<span class=\"k\">", "</span>", "<x-y>", "</div>",
                                                  "<div id=\"a\">", "<code>", "</code>", "<", ">", "布线"};
  for (int i = 0; i < 500; ++i) {
    std::string src;
    const auto n = ts::pick(rng, 20);
    for (std::size_t k = 0; k < n; ++k) src += pieces[ts::pick(rng, pieces.size())];
    const auto once = html::sanitize(html::tokenize(src), "f");
    EXPECT_EQ(html::sanitize(html::tokenize(once), "f"), once) << src;
    // Dropped stray end tags can only change spacing, never the words.
    EXPECT_EQ(text::tokenize(html::to_text(once)), text::tokenize(html::to_text(src))) << src;
  }
}

// ---------------------------------------------------------------------------
// corpus

TEST(Corpus, IngestSplitsAtHeadingsAndMappedAnchors) {
  auto frags = docs::ingest(fixture("mini/corpus/en"), Language::en);
  ASSERT_EQ(frags.size(), 4u);
  EXPECT_EQ(frags[0].id, "route-intro");
  EXPECT_EQ(frags[0].title, "Routing overview");
  EXPECT_EQ(html::to_text(frags[0].body_html), "Tracks join pads of the same net.");
  EXPECT_EQ(frags[0].source_ref, "guide.html#intro (Guide > Routing overview)");
  // keys ends at the mapped vias heading; the stray style block is dropped
  EXPECT_EQ(frags[1].body_html.find("color"), std::string::npos);
  EXPECT_NE(frags[1].body_html.find("href=\"#frag-route-vias\""), std::string::npos);
  EXPECT_NE(frags[1].body_html.find("href=\"#frag-plot\""), std::string::npos);
  // vias runs to the next h2 and carries the image
  EXPECT_EQ(frags[2].body_html.find("onclick"), std::string::npos);
  EXPECT_EQ(frags[2].body_html.find("Unmapped"), std::string::npos);
  ASSERT_EQ(frags[2].assets.size(), 1u);
  EXPECT_EQ(frags[2].assets[0].target, "assets/en-img_board.png");
  EXPECT_NE(frags[2].body_html.find("src=\"assets/en-img_board.png\""), std::string::npos);
  EXPECT_EQ(frags[3].checksum, text::sha256_hex(frags[3].body_html));
  EXPECT_EQ(html::to_text(frags[3].body_html), "Plot gerbers <one per layer>. Copper Mask");
}

TEST(Corpus, IngestIsAPureFunctionOfInputs) {
  EXPECT_EQ(docs::ingest(fixture("mini/corpus/zh"), Language::zh), docs::ingest(fixture("mini/corpus/zh"), Language::zh));
}

TEST(Corpus, MappingErrors) {
  TempDir dir("map");
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream(dir / name) << body;
  };
  write("a.html", "<h2 id=\"x\">X</h2><p>x</p>");
  write("mapping.tsv", "frag\ta.html\tmissing\ten\n");
  EXPECT_EQ(code_of([&] { docs::ingest(dir.path(), Language::en); }), errc::mapping_miss);
  write("mapping.tsv", "frag\tnope.html\tx\ten\n");
  EXPECT_EQ(code_of([&] { docs::ingest(dir.path(), Language::en); }), errc::mapping_miss);
  write("mapping.tsv", "frag\ta.html\tx\n");
  EXPECT_EQ(code_of([&] { docs::ingest(dir.path(), Language::en); }), errc::parse_error);
  write("mapping.tsv", "frag\ta.html\tx\ten\nfrag\ta.html\tx\ten\n");
  EXPECT_EQ(code_of([&] { docs::ingest(dir.path(), Language::en); }), errc::duplicate_fragment);
  write("a.html", "<h2 id=\"x\">X</h2><iframe></iframe>");
  write("mapping.tsv", "frag\ta.html\tx\ten\n");
  EXPECT_EQ(code_of([&] { docs::ingest(dir.path(), Language::en); }), errc::sanitize_reject);
  write("a.html", "<h2 id=\"x\">X</h2><img src=\"../../etc/passwd\">");
  EXPECT_EQ(code_of([&] { docs::ingest(dir.path(), Language::en); }), errc::sanitize_reject);
}

TEST(Corpus, ParityGaps) {
  docs::FragmentStore store;
  store.add_all(docs::ingest(fixture("mini/corpus/en"), Language::en));
  auto zh = docs::ingest(fixture("mini/corpus/zh"), Language::zh);
  zh.pop_back();
  store.add_all(zh);
  auto gaps = docs::parity_gaps(store);
  ASSERT_EQ(gaps.size(), 1u);
  EXPECT_EQ(gaps[0].first, "plot");
  EXPECT_EQ(gaps[0].second, Language::zh);
}

class StitchTest : public ::testing::Test {
 protected:
  void SetUp() override {
    store.add_all(docs::ingest(fixture("mini/corpus/en"), Language::en));
    store.add_all(docs::ingest(fixture("mini/corpus/zh"), Language::zh));
  }
  docs::FragmentStore store;
  ManualClock clock;
};

TEST_F(StitchTest, OrderMarkersAndContext) {
  const std::vector<std::string> ids{"route-vias", "route-intro"};
  auto doc = docs::stitch(ids, Language::en, store, clock);
  EXPECT_EQ(doc.fragment_ids, ids);
  auto a = doc.html.find(docs::fragment_begin_marker("route-vias"));
  auto b = doc.html.find(docs::fragment_begin_marker("route-intro"));
  ASSERT_NE(a, std::string::npos);
  ASSERT_NE(b, std::string::npos);
  EXPECT_LT(a, b);
  EXPECT_NE(doc.html.find("<meta name=\"doc-id\" content=\"" + doc.doc_id + "\">"), std::string::npos);
  const auto ctx = docs::qa_context(doc);
  EXPECT_EQ(ctx.rfind("== route-vias ==\n", 0), 0u);
  EXPECT_NE(ctx.find("\n\n== route-intro ==\nTracks join pads of the same net."), std::string::npos);
}

TEST_F(StitchTest, IdDependsOnLanguageAndSelection) {
  const std::vector<std::string> a{"route-intro"}, b{"route-intro", "plot"};
  EXPECT_NE(docs::stitch(a, Language::en, store, clock).doc_id, docs::stitch(a, Language::zh, store, clock).doc_id);
  EXPECT_NE(docs::stitch(a, Language::en, store, clock).doc_id, docs::stitch(b, Language::en, store, clock).doc_id);
  auto zh = docs::stitch(b, Language::zh, store, clock);
  EXPECT_NE(zh.html.find("<html lang=\"zh\">"), std::string::npos);
  EXPECT_NE(zh.html.find("目录"), std::string::npos);
}

TEST_F(StitchTest, Errors) {
  EXPECT_EQ(code_of([&] { docs::stitch({}, Language::en, store, clock); }), errc::empty_selection);
  const std::vector<std::string> unknown{"nope"}, twice{"plot", "plot"};
  EXPECT_EQ(code_of([&] { docs::stitch(unknown, Language::en, store, clock); }), errc::unknown_fragment);
  EXPECT_EQ(code_of([&] { docs::stitch(twice, Language::en, store, clock); }), errc::invalid_request);
}

TEST_F(StitchTest, ExportCopiesAssets) {
  TempDir out("export");
  const std::vector<std::string> ids{"route-vias"};
  auto doc = docs::stitch(ids, Language::zh, store, clock);
  auto index = docs::export_document(doc, store, out.path());
  EXPECT_EQ(read_text_file(index), doc.html);
  EXPECT_TRUE(std::filesystem::is_regular_file(index.parent_path() / "assets" / "zh-img_board.png"));
}

TEST_F(StitchTest, CacheKeepsDocuments) {
  docs::DocumentCache cache;
  const std::vector<std::string> ids{"plot"};
  auto doc = docs::stitch(ids, Language::en, store, clock);
  cache.put(doc);
  ASSERT_NE(cache.get(doc.doc_id), nullptr);
  EXPECT_EQ(*cache.get(doc.doc_id), doc);
  EXPECT_EQ(cache.get("doc-none"), nullptr);
}

// ---------------------------------------------------------------------------
// scripted backend

namespace {

llm::CompletionRequest user_request(llm::Purpose p, std::string text) {
  return {{{llm::Role::system, "sys"}, {llm::Role::user, std::move(text)}}, p};
}

}  // namespace

TEST(Scripted, FirstMatchingRuleWins) {
  auto b = llm::ScriptedBackend::parse(
      "# c\nroute_main\tsubstring\tpad\tfootprints\nroute_main\tregex\t^p\tplacement\n"
      "route_main\texact\tplace\tnever\nqa_answer\tregex\t.\tline1\\nline2\n");
  EXPECT_EQ(b.complete(user_request(llm::Purpose::route_main, "pad")), "footprints");
  EXPECT_EQ(b.complete(user_request(llm::Purpose::route_main, "place")), "placement");
  EXPECT_EQ(b.complete(user_request(llm::Purpose::qa_answer, "x")), "line1\nline2");
  EXPECT_EQ(code_of([&] { b.complete(user_request(llm::Purpose::recommend, "x")); }), errc::script_miss);
}

TEST(Scripted, ParseErrors) {
  EXPECT_EQ(code_of([] { llm::ScriptedBackend::parse("route_main\texact\tx\n"); }), errc::parse_error);
  EXPECT_EQ(code_of([] { llm::ScriptedBackend::parse("nonsense\texact\tx\ty\n"); }), errc::parse_error);
  EXPECT_EQ(code_of([] { llm::ScriptedBackend::parse("augment\tregex\t(\ty\n"); }), errc::parse_error);
  EXPECT_EQ(code_of([] { llm::ScriptedBackend::parse("augment\texact\ta\ty\naugment\tsubstring\ta\tz\n"); }),
            errc::duplicate_rule);
}

TEST(Scripted, ResponsesAreTruncatedToTheRequestLimit) {
  auto b = llm::ScriptedBackend::parse("augment\tregex\t.\t布线布线\n");
  auto req = user_request(llm::Purpose::augment, "x");
  req.max_response_chars = 3;
  EXPECT_EQ(b.complete(req), "布线布");
}

TEST(Scripted, RecordingBackendKeepsRequests) {
  auto inner = llm::ScriptedBackend::parse("augment\tregex\t.\tok\n");
  llm::RecordingBackend rec(inner);
  rec.complete(user_request(llm::Purpose::augment, "first"));
  rec.complete(user_request(llm::Purpose::augment, "second"));
  ASSERT_EQ(rec.requests().size(), 2u);
  EXPECT_EQ(rec.last(llm::Purpose::augment)->last_user_text(), "second");
  EXPECT_FALSE(rec.last(llm::Purpose::qa_answer).has_value());
}

TEST(Scripted, HttpBackendReportsUnreachableEndpoint) {
  llm::BackendConfig c;
  c.kind = llm::BackendKind::http;
  c.endpoint = "http://127.0.0.1:9/v1/chat/completions";
  c.timeout = std::chrono::milliseconds(500);
  auto b = llm::make_backend(c);
  EXPECT_EQ(code_of([&] { b->complete(user_request(llm::Purpose::augment, "x")); }), errc::backend_unavailable);
}
