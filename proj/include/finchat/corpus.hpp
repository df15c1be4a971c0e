#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "finchat/common.hpp"

namespace finchat {

enum class DomainTag {
    Stock,
    Investment,
    PersonalFinance,
    Banking,
    Loan,
    GeneralFinance,
    CreditCard,
    Tax,
    Trading,
    Others,
};
constexpr int kDomainCount = 10;

enum class RegionTag { Global, USA, India, UK, Canada, Australia, Europe };
constexpr int kRegionCount = 7;

enum class PolitenessLabel { Polite, Neutral, Impolite };
constexpr int kPolitenessCount = 3;

const char* to_string(DomainTag tag);
const char* to_string(RegionTag tag);
// Serialized lowercase ("polite" | "neutral" | "impolite").
const char* to_string(PolitenessLabel label);
// Display form ("Polite" | "Neutral" | "Impolite").
const char* display_name(PolitenessLabel label);

DomainTag parse_domain(const std::string& text);
RegionTag parse_region(const std::string& text);
PolitenessLabel parse_politeness(const std::string& text);

// Five-criterion annotation quality rubric, each rated 1-5.
struct EFairScore {
    int engagement = 0;
    int fluency = 0;
    int adequacy = 0;
    int information_preservation = 0;
    int readability = 0;
};

struct Turn {
    std::string user;  // query
    std::string bot;   // gold response
};

// One multi-turn conversation; the unit of the corpus file format.
struct DialogueRecord {
    std::string id;
    DomainTag domain = DomainTag::Others;
    RegionTag region = RegionTag::Global;
    PolitenessLabel politeness = PolitenessLabel::Neutral;
    std::vector<Turn> turns;
    std::optional<EFairScore> efair;
};

struct CorpusStats {
    std::int64_t vocabulary_size = 0;
    double avg_user_tokens = 0.0;
    double avg_bot_tokens = 0.0;
    double avg_user_sentences = 0.0;
    double avg_bot_sentences = 0.0;
    double words_per_conversation = 0.0;
    std::int64_t unique_bigrams = 0;   // over user queries
    std::int64_t unique_trigrams = 0;  // over all utterances
    std::map<DomainTag, std::int64_t> per_domain_counts;
    std::map<RegionTag, std::int64_t> per_region_counts;
};

// Corpus files are UTF-8, one JSON object per line, fields exactly:
// id, domain, region, politeness, turns[{user,bot}], efair (optional).
// Unknown fields are rejected.
std::vector<DialogueRecord> load_corpus(const std::string& path);
void save_corpus(const std::vector<DialogueRecord>& records, const std::string& path);
std::string record_to_json_line(const DialogueRecord& record);
DialogueRecord record_from_json_line(const std::string& line);

// Empty result iff all record invariants hold; each violation names the
// field and the rule it breaks. Violations are returned, never thrown.
std::vector<std::string> validate_record(const DialogueRecord& record);

using TokenizeFn = std::vector<std::string> (*)(std::string_view);
CorpusStats corpus_stats(const std::vector<DialogueRecord>& records, TokenizeFn tokenize = word_tokenize);

struct SplitFractions {
    double train = 0.8;
    double dev = 0.1;
    double test = 0.1;
};

struct CorpusSplit {
    std::vector<DialogueRecord> train;
    std::vector<DialogueRecord> dev;
    std::vector<DialogueRecord> test;
};

// Deterministic seeded shuffle, then floor(train*N) / floor(dev*N) /
// remainder. Fractions must be non-negative and sum to 1 within 1e-9.
CorpusSplit split_corpus(const std::vector<DialogueRecord>& records, SplitFractions fractions,
                         std::uint64_t seed);

struct SynthConfig {
    int count = 0;
    int min_turns = 1;
    int max_turns = 3;
    // Probability that a bot response embeds the verbalized knowledge fact
    // matched to its query.
    double grounding_rate = 1.0;
    // polite / neutral / impolite dialogue style mix.
    std::array<double, 3> politeness_mix{0.6, 0.2, 0.2};
    double efair_rate = 0.5;
    std::map<DomainTag, double> domain_mixture;  // empty = built-in default
    std::map<RegionTag, double> region_mixture;  // empty = built-in default
};

// Template-grammar generator over a financial vocabulary. Every emitted
// record passes validate_record; deterministic for a fixed seed.
std::vector<DialogueRecord> synthesize_corpus(const SynthConfig& config, std::uint64_t seed);

}  // namespace finchat
