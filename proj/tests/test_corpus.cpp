#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "finchat/corpus.hpp"
#include "finchat/knowledge.hpp"

using namespace finchat;

namespace {

const std::string kFixtures = FINCHAT_FIXTURE_DIR;

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

DialogueRecord valid_record() {
    DialogueRecord record;
    record.id = "rec-1";
    record.domain = DomainTag::Banking;
    record.region = RegionTag::India;
    record.politeness = PolitenessLabel::Polite;
    record.turns.push_back(Turn{"how do i open a fixed deposit ?", "visit your branch with kyc documents ."});
    return record;
}

}  // namespace

TEST_CASE("load_corpus accepts a single valid record") {
    const std::string path = temp_path("corpus_one.jsonl");
    save_corpus({valid_record()}, path);
    const auto records = load_corpus(path);
    REQUIRE(records.size() == 1);
    CHECK(records[0].id == "rec-1");
    CHECK(records[0].domain == DomainTag::Banking);
    CHECK(records[0].turns.size() == 1);
}

TEST_CASE("load_corpus rejects a record with an empty bot turn, naming the id") {
    try {
        load_corpus(kFixtures + "/violations/empty_bot_turn.jsonl");
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string message = e.what();
        CHECK(message.find("bad-001") != std::string::npos);
        CHECK(message.find("empty bot turn") != std::string::npos);
    }
}

TEST_CASE("load_corpus flags every violation fixture class") {
    const std::pair<const char*, const char*> cases[] = {
        {"empty_user_turn.jsonl", "empty user turn"},
        {"empty_turns.jsonl", "turns empty"},
        {"efair_out_of_range.jsonl", "efair.fluency out of [1,5]"},
        {"bad_domain_enum.jsonl", "unknown domain tag"},
        {"bad_politeness_enum.jsonl", "unknown politeness label"},
        {"duplicate_id.jsonl", "duplicate id 'dup-001'"},
        {"unknown_field.jsonl", "unknown field 'extra'"},
    };
    for (const auto& [file, expected] : cases) {
        CAPTURE(file);
        try {
            load_corpus(kFixtures + "/violations/" + file);
            FAIL_CHECK("expected an error for ", file);
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find(expected) != std::string::npos);
        }
    }
}

TEST_CASE("parse errors carry the line number") {
    const std::string path = temp_path("corpus_broken.jsonl");
    std::ofstream(path) << record_to_json_line(valid_record()) << "\n{not json\n";
    try {
        load_corpus(path);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
}

TEST_CASE("validate_record reports zero violations for valid records") {
    CHECK(validate_record(valid_record()).empty());
}

TEST_CASE("validate_record names field and rule for an out-of-range efair") {
    DialogueRecord record = valid_record();
    record.efair = EFairScore{3, 6, 4, 4, 4};
    const auto violations = validate_record(record);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0] == "efair.fluency out of [1,5]");
}

TEST_CASE("save/load round-trip is byte-identical") {
    const SynthConfig config{.count = 50, .grounding_rate = 0.6};
    const auto records = synthesize_corpus(config, 11);
    REQUIRE(records.size() == 50);

    const std::string p1 = temp_path("roundtrip1.jsonl");
    const std::string p2 = temp_path("roundtrip2.jsonl");
    save_corpus(records, p1);
    save_corpus(load_corpus(p1), p2);
    CHECK(read_file(p1) == read_file(p2));
}

TEST_CASE("corpus_stats on the tiny analytic example") {
    DialogueRecord record = valid_record();
    record.turns = {Turn{"hello world", "hi"}};
    const CorpusStats stats = corpus_stats({record});
    CHECK(stats.avg_user_tokens == doctest::Approx(2.0));
    CHECK(stats.avg_bot_tokens == doctest::Approx(1.0));
    CHECK(stats.vocabulary_size == 3);
}

TEST_CASE("corpus_stats is symmetric when bot echoes user") {
    DialogueRecord record = valid_record();
    record.turns = {Turn{"compare the rates", "compare the rates"},
                    Turn{"thanks a lot", "thanks a lot"}};
    const CorpusStats stats = corpus_stats({record});
    CHECK(stats.avg_user_tokens == doctest::Approx(stats.avg_bot_tokens));
    CHECK(stats.avg_user_sentences == doctest::Approx(stats.avg_bot_sentences));
}

TEST_CASE("corpus_stats matches the independent counting oracle on the fixture") {
    const auto records = load_corpus(kFixtures + "/stats_corpus.jsonl");
    REQUIRE(records.size() == 20);
    const CorpusStats stats = corpus_stats(records);

    const auto expected = nlohmann::json::parse(read_file(kFixtures + "/stats_expected.json"));
    CHECK(stats.vocabulary_size == expected.at("vocabulary_size").get<std::int64_t>());
    CHECK(stats.avg_user_tokens == doctest::Approx(expected.at("avg_user_tokens").get<double>()).epsilon(1e-12));
    CHECK(stats.avg_bot_tokens == doctest::Approx(expected.at("avg_bot_tokens").get<double>()).epsilon(1e-12));
    CHECK(stats.avg_user_sentences == doctest::Approx(expected.at("avg_user_sentences").get<double>()).epsilon(1e-12));
    CHECK(stats.avg_bot_sentences == doctest::Approx(expected.at("avg_bot_sentences").get<double>()).epsilon(1e-12));
    CHECK(stats.words_per_conversation == doctest::Approx(expected.at("words_per_conversation").get<double>()).epsilon(1e-12));
    CHECK(stats.unique_bigrams == expected.at("unique_bigrams").get<std::int64_t>());
    CHECK(stats.unique_trigrams == expected.at("unique_trigrams").get<std::int64_t>());
}

TEST_CASE("corpus_stats rejects an empty corpus") {
    CHECK_THROWS_AS(corpus_stats({}), Error);
}

TEST_CASE("vocabulary size is subadditive under concatenation") {
    const auto a = synthesize_corpus(SynthConfig{.count = 15}, 5);
    auto b = synthesize_corpus(SynthConfig{.count = 15}, 6);
    for (auto& record : b) record.id += "-b";
    auto both = a;
    both.insert(both.end(), b.begin(), b.end());
    const auto sa = corpus_stats(a);
    const auto sb = corpus_stats(b);
    const auto sab = corpus_stats(both);
    CHECK(sab.vocabulary_size <= sa.vocabulary_size + sb.vocabulary_size);
}

TEST_CASE("split_corpus: all records in train for fractions (1,0,0)") {
    const auto records = synthesize_corpus(SynthConfig{.count = 17}, 3);
    const CorpusSplit split = split_corpus(records, SplitFractions{1.0, 0.0, 0.0}, 9);
    CHECK(split.train.size() == 17);
    CHECK(split.dev.empty());
    CHECK(split.test.empty());
}

TEST_CASE("split_corpus is deterministic and follows the floor rule") {
    const auto records = synthesize_corpus(SynthConfig{.count = 100}, 4);
    const CorpusSplit a = split_corpus(records, SplitFractions{0.8, 0.1, 0.1}, 7);
    const CorpusSplit b = split_corpus(records, SplitFractions{0.8, 0.1, 0.1}, 7);
    CHECK(a.train.size() == 80);
    CHECK(a.dev.size() == 10);
    CHECK(a.test.size() == 10);
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].id == b.train[i].id);
    for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(a.test[i].id == b.test[i].id);
}

TEST_CASE("split_corpus partitions: disjoint by id, union preserves the multiset") {
    const auto records = synthesize_corpus(SynthConfig{.count = 43}, 12);
    const CorpusSplit split = split_corpus(records, SplitFractions{0.5, 0.25, 0.25}, 21);
    std::multiset<std::string> in_ids, out_ids;
    for (const auto& r : records) in_ids.insert(r.id);
    std::set<std::string> seen;
    for (const auto* part : {&split.train, &split.dev, &split.test}) {
        for (const auto& r : *part) {
            out_ids.insert(r.id);
            CHECK(seen.insert(r.id).second);  // pairwise disjoint
        }
    }
    CHECK(in_ids == out_ids);
}

TEST_CASE("split_corpus rejects invalid fractions") {
    const auto records = synthesize_corpus(SynthConfig{.count = 5}, 1);
    CHECK_THROWS_AS(split_corpus(records, SplitFractions{0.5, 0.1, 0.1}, 0), Error);
    CHECK_THROWS_AS(split_corpus(records, SplitFractions{-0.2, 0.6, 0.6}, 0), Error);
}

TEST_CASE("synthesize_corpus: count 0 gives an empty list") {
    CHECK(synthesize_corpus(SynthConfig{.count = 0}, 1).empty());
}

TEST_CASE("synthesize_corpus: every record validates and ids are unique") {
    const auto records = synthesize_corpus(SynthConfig{.count = 60, .grounding_rate = 0.5}, 8);
    std::set<std::string> ids;
    for (const auto& record : records) {
        CHECK(validate_record(record).empty());
        CHECK(ids.insert(record.id).second);
    }
}

TEST_CASE("synthesize_corpus is deterministic per seed") {
    const auto a = synthesize_corpus(SynthConfig{.count = 25}, 123);
    const auto b = synthesize_corpus(SynthConfig{.count = 25}, 123);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(record_to_json_line(a[i]) == record_to_json_line(b[i]));
    }
    const auto c = synthesize_corpus(SynthConfig{.count = 25}, 124);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (record_to_json_line(a[i]) != record_to_json_line(c[i])) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("grounding rate 0: no bot response contains any verbalized fact") {
    const auto records = synthesize_corpus(SynthConfig{.count = 40, .grounding_rate = 0.0}, 17);
    for (const auto& record : records) {
        for (const auto& turn : record.turns) {
            for (const auto& triple : default_triples()) {
                CHECK(turn.bot.find(verbalize(triple).text) == std::string::npos);
            }
        }
    }
}

TEST_CASE("grounding rate 1: every bot response embeds the fact matched to its query") {
    const auto records = synthesize_corpus(SynthConfig{.count = 40, .grounding_rate = 1.0}, 18);
    int checked = 0;
    for (const auto& record : records) {
        for (const auto& turn : record.turns) {
            // The grounding fact is the unique one whose head starts the query.
            bool found = false;
            for (const auto& entity : grounded_entities()) {
                if (turn.user.rfind(entity.fact.head, 0) == 0) {
                    CHECK(turn.bot.find(verbalize(entity.fact).text) != std::string::npos);
                    found = true;
                    ++checked;
                    break;
                }
            }
            CHECK(found);
        }
    }
    CHECK(checked > 40);
}

TEST_CASE("synthesize_corpus validates its config") {
    CHECK_THROWS_AS(synthesize_corpus(SynthConfig{.count = -1}, 0), Error);
    CHECK_THROWS_AS(synthesize_corpus(SynthConfig{.count = 1, .min_turns = 3, .max_turns = 2}, 0), Error);
    CHECK_THROWS_AS(synthesize_corpus(SynthConfig{.count = 1, .grounding_rate = 1.5}, 0), Error);
}

TEST_CASE("politeness mix steers dialogue styles") {
    SynthConfig config{.count = 30};
    config.politeness_mix = {1.0, 0.0, 0.0};
    for (const auto& record : synthesize_corpus(config, 2)) {
        CHECK(record.politeness == PolitenessLabel::Polite);
    }
    config.politeness_mix = {0.0, 0.0, 1.0};
    for (const auto& record : synthesize_corpus(config, 2)) {
        CHECK(record.politeness == PolitenessLabel::Impolite);
    }
}
