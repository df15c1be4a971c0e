#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "finchat/knowledge.hpp"

using namespace finchat;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

// Ten-fact fixture used by the retrieval oracle tests.
std::vector<KnowledgeTriple> fixture_triples() {
    using R = RelationTag;
    return {
        {"mutual funds", R::UsedFor, "diversifying investments"},
        {"retirement", R::RelatedTo, "long-term financial planning"},
        {"credit card", R::UsedFor, "building credit"},
        {"savings account", R::UsedFor, "emergency cash"},
        {"stocks", R::xIntent, "to know the difference"},
        {"bonds", R::xWant, "to buy a bond"},
        {"index fund", R::UsedFor, "passive investing"},
        {"budgeting", R::xEffect, "fewer surprises"},
        {"insurance", R::UsedFor, "risk transfer"},
        {"gold", R::RelatedTo, "inflation hedging"},
    };
}

// Brute-force reference: cosine against every entry, threshold filter, sort
// by similarity (stable on ties), truncate.
std::vector<std::pair<double, std::string>> brute_force(const KnowledgeIndex& index,
                                                        const Embedder& embedder,
                                                        const std::string& query, int k) {
    const auto q = embedder.embed(query);
    std::vector<std::pair<double, std::string>> hits;
    for (const auto& entry : index.entries) {
        const double sim = cosine(q, embedder.embed(entry.fact_text));
        if (sim >= index.threshold) hits.emplace_back(sim, entry.fact_text);
    }
    std::stable_sort(hits.begin(), hits.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    if (static_cast<int>(hits.size()) > k) hits.resize(static_cast<std::size_t>(k));
    return hits;
}

}  // namespace

TEST_CASE("verbalize follows the per-relation templates") {
    CHECK(verbalize({"mutual funds", RelationTag::UsedFor, "diversifying investments"}).text ==
          "mutual funds is used for diversifying investments.");
    CHECK(verbalize({"x", RelationTag::RelatedTo, "x"}).text == "x is related to x.");
    CHECK(verbalize({"stocks", RelationTag::xIntent, "to know the difference"}).text ==
          "The user intends to know the difference.");
    CHECK(verbalize({"bonds", RelationTag::xWant, "to buy a bond"}).text ==
          "The user wants to buy a bond.");
    CHECK(verbalize({"investing", RelationTag::xNeed, "a brokerage account"}).text ==
          "The user needs a brokerage account.");
    CHECK(verbalize({"saving", RelationTag::xReason, "to build a safety net"}).text ==
          "The reason is to build a safety net.");
    CHECK(verbalize({"overspending", RelationTag::xEffect, "mounting debt"}).text ==
          "The effect is mounting debt.");
}

TEST_CASE("verbalize is injective over head/tail for a fixed relation") {
    const char* heads[] = {"credit card", "debit card", "gold bond"};
    const char* tails[] = {"payments", "rewards", "safety"};
    std::vector<std::string> seen;
    for (const char* h : heads) {
        for (const char* t : tails) {
            const std::string text = verbalize({h, RelationTag::UsedFor, t}).text;
            CHECK(std::find(seen.begin(), seen.end(), text) == seen.end());
            seen.push_back(text);
        }
    }
}

TEST_CASE("embed_text is deterministic and maps empty text to the zero vector") {
    const Embedder embedder;
    CHECK(embedder.embed("credit card fees") == embedder.embed("credit card fees"));
    const auto zero = embedder.embed("");
    CHECK(zero.size() == 256);
    for (double v : zero) CHECK(v == 0.0);
}

TEST_CASE("embeddings are unit norm or zero") {
    const Embedder embedder;
    for (const char* text : {"a", "credit card", "the quick brown fox", "!?"}) {
        const auto v = embedder.embed(text);
        double norm = 0.0;
        for (double x : v) norm += x * x;
        CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-9);
    }
}

TEST_CASE("near-duplicate text is closer than unrelated text") {
    const Embedder embedder;
    const auto base = embedder.embed("credit card fees");
    const double near = cosine(base, embedder.embed("credit card fees today"));
    const double far = cosine(base, embedder.embed("retirement bond ladder"));
    CHECK(near > far);
}

TEST_CASE("cosine analytic values") {
    CHECK(cosine({1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine({1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}) == doctest::Approx(0.0));
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    CHECK(cosine({inv_sqrt2, inv_sqrt2, 0.0}, {1.0, 0.0, 0.0}) ==
          doctest::Approx(0.7071067811).epsilon(1e-9));
    CHECK(cosine({0.0, 0.0}, {1.0, 1.0}) == 0.0);
    CHECK_THROWS_AS(cosine({1.0}, {1.0, 2.0}), Error);
}

TEST_CASE("cosine is invariant to positive scaling of the raw accumulation") {
    const std::vector<double> u{0.3, -1.2, 0.8};
    const std::vector<double> v{1.0, 0.4, -0.2};
    std::vector<double> u_scaled = u;
    for (double& x : u_scaled) x *= 37.5;
    CHECK(cosine(u, v) == doctest::Approx(cosine(u_scaled, v)).epsilon(1e-12));
}

TEST_CASE("retrieve: query equal to a verbalization scores 1.0") {
    const Embedder embedder;
    const KnowledgeIndex index = build_index(fixture_triples(), embedder);
    const std::string fact = verbalize(fixture_triples()[0]).text;
    const auto hits = retrieve(index, embedder, fact, 3);
    REQUIRE(!hits.empty());
    CHECK(hits.front().text == fact);
    CHECK(hits.front().similarity == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("retrieve on an empty index returns nothing") {
    const Embedder embedder;
    const KnowledgeIndex index = build_index({}, embedder);
    CHECK(retrieve(index, embedder, "anything", 3).empty());
}

TEST_CASE("retrieve equals the brute-force filtered, sorted, truncated set") {
    const Embedder embedder;
    const KnowledgeIndex index = build_index(fixture_triples(), embedder, 0.7);
    const char* queries[] = {
        "should I buy mutual funds",
        "mutual funds is used for diversifying investments.",
        "credit card is used for",
        "savings account is used for emergency cash .",
        "completely unrelated text about weather",
    };
    for (const char* query : queries) {
        CAPTURE(query);
        const auto expected = brute_force(index, embedder, query, 3);
        const auto actual = retrieve(index, embedder, query, 3);
        REQUIRE(actual.size() == expected.size());
        for (std::size_t i = 0; i < actual.size(); ++i) {
            CHECK(actual[i].text == expected[i].second);
            CHECK(actual[i].similarity == doctest::Approx(expected[i].first).epsilon(1e-12));
        }
    }
    // Guard against a vacuous pass: at least one query must retrieve facts.
    CHECK(!retrieve(index, embedder, verbalize(fixture_triples()[2]).text, 3).empty());
}

TEST_CASE("retrieve never returns below-threshold facts and is monotone in k") {
    const Embedder embedder;
    const KnowledgeIndex index = build_index(default_triples(), embedder, 0.7);
    const char* queries[] = {"mutual funds is used for", "index fund is used for .",
                             "what about my taxes"};
    for (const char* query : queries) {
        const auto full = retrieve(index, embedder, query, 1000);
        for (const auto& fact : full) CHECK(fact.similarity >= index.threshold);
        for (int k = 0; k <= static_cast<int>(full.size()); ++k) {
            const auto top = retrieve(index, embedder, query, k);
            REQUIRE(top.size() == static_cast<std::size_t>(k));
            for (int i = 0; i < k; ++i) CHECK(top[static_cast<std::size_t>(i)].text == full[static_cast<std::size_t>(i)].text);
        }
    }
}

TEST_CASE("retrieve rejects a fingerprint mismatch") {
    const Embedder embedder;
    const KnowledgeIndex index = build_index(fixture_triples(), embedder);
    Embedder other;
    other.dim = 128;
    CHECK_THROWS_AS(retrieve(index, other, "query", 3), Error);
}

TEST_CASE("index round-trips through its file format") {
    const Embedder embedder;
    const KnowledgeIndex index = build_index(fixture_triples(), embedder, 0.7);
    const std::string path = temp_path("index_roundtrip.json");
    save_index(index, path);
    const KnowledgeIndex loaded = load_index(path);
    CHECK(loaded.threshold == index.threshold);
    CHECK(loaded.embedder_fingerprint == index.embedder_fingerprint);
    REQUIRE(loaded.entries.size() == index.entries.size());
    for (std::size_t i = 0; i < loaded.entries.size(); ++i) {
        CHECK(loaded.entries[i].triple == index.entries[i].triple);
        CHECK(loaded.entries[i].embedding == index.entries[i].embedding);
    }
}

TEST_CASE("triple files round-trip and reject malformed lines") {
    const std::string path = temp_path("triples_roundtrip.tsv");
    save_triples(fixture_triples(), path);
    const auto loaded = load_triples(path);
    REQUIRE(loaded.size() == fixture_triples().size());
    CHECK(loaded == fixture_triples());

    const std::string bad = temp_path("triples_bad.tsv");
    write_file(bad, "only two\tfields\n");
    CHECK_THROWS_AS(load_triples(bad), Error);
}

TEST_CASE("the committed triples file matches the built-in store") {
    const auto from_file = load_triples(std::string(FINCHAT_DATA_DIR) + "/triples.tsv");
    CHECK(from_file == default_triples());
}

TEST_CASE("fuse textual mode builds the marked prompt") {
    const auto empty = fuse("what about fees", {});
    CHECK(empty.text == "[KNOWLEDGE] [QUERY] what about fees [RESPONSE]");
    CHECK(empty.fact_count == 0);

    VerbalizedFact fact = verbalize({"mutual funds", RelationTag::UsedFor, "diversifying investments"});
    const auto one = fuse("tell me about mutual funds", {fact});
    CHECK(one.text ==
          "[KNOWLEDGE] mutual funds is used for diversifying investments. "
          "[QUERY] tell me about mutual funds [RESPONSE]");
}

TEST_CASE("fuse embedding_prefix mode carries the mean fact embedding") {
    VerbalizedFact f1 = verbalize({"credit card", RelationTag::UsedFor, "rewards"});
    VerbalizedFact f2 = verbalize({"stop loss", RelationTag::UsedFor, "exits"});
    const auto fused = fuse("query", {f1, f2}, FusionMode::EmbeddingPrefix);
    CHECK(fused.text == "[KNOWLEDGE] [QUERY] query [RESPONSE]");
    REQUIRE(fused.fact_embedding.size() == 256);

    const Embedder embedder;
    const auto e1 = embedder.embed(f1.text);
    const auto e2 = embedder.embed(f2.text);
    for (std::size_t i = 0; i < 256; ++i) {
        CHECK(fused.fact_embedding[i] == doctest::Approx((e1[i] + e2[i]) / 2.0).epsilon(1e-12));
    }
}

TEST_CASE("every grounded entity's echo queries clear the threshold with margin") {
    const Embedder embedder;
    const KnowledgeIndex index = build_index(default_triples(), embedder, 0.7);
    for (const auto& entity : grounded_entities()) {
        const std::string relation_phrase =
            entity.fact.relation == RelationTag::UsedFor ? " is used for" : " is related to";
        for (const char* suffix : {"", " ."}) {
            const std::string query = entity.fact.head + relation_phrase + suffix;
            CAPTURE(query);
            const auto hits = retrieve(index, embedder, query, 3);
            REQUIRE(!hits.empty());
            CHECK(hits.front().source == entity.fact);
            CHECK(hits.front().similarity >= 0.75);
        }
    }
}
