#include "finchat/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "finchat/knowledge.hpp"

namespace finchat {

using nlohmann::json;

namespace {

const char* const kDomainNames[kDomainCount] = {
    "Stock",         "Investment", "PersonalFinance", "Banking", "Loan",
    "GeneralFinance", "CreditCard", "Tax",             "Trading", "Others",
};

const char* const kRegionNames[kRegionCount] = {
    "Global", "USA", "India", "UK", "Canada", "Australia", "Europe",
};

const char* const kPolitenessNames[kPolitenessCount] = {"polite", "neutral", "impolite"};
const char* const kPolitenessDisplay[kPolitenessCount] = {"Polite", "Neutral", "Impolite"};

}  // namespace

const char* to_string(DomainTag tag) { return kDomainNames[static_cast<int>(tag)]; }
const char* to_string(RegionTag tag) { return kRegionNames[static_cast<int>(tag)]; }
const char* to_string(PolitenessLabel label) { return kPolitenessNames[static_cast<int>(label)]; }
const char* display_name(PolitenessLabel label) { return kPolitenessDisplay[static_cast<int>(label)]; }

DomainTag parse_domain(const std::string& text) {
    for (int i = 0; i < kDomainCount; ++i) {
        if (text == kDomainNames[i]) return static_cast<DomainTag>(i);
    }
    throw Error("unknown domain tag: '" + text + "'");
}

RegionTag parse_region(const std::string& text) {
    for (int i = 0; i < kRegionCount; ++i) {
        if (text == kRegionNames[i]) return static_cast<RegionTag>(i);
    }
    throw Error("unknown region tag: '" + text + "'");
}

PolitenessLabel parse_politeness(const std::string& text) {
    for (int i = 0; i < kPolitenessCount; ++i) {
        if (text == kPolitenessNames[i]) return static_cast<PolitenessLabel>(i);
    }
    throw Error("unknown politeness label: '" + text + "'");
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string record_to_json_line(const DialogueRecord& record) {
    json turns = json::array();
    for (const Turn& turn : record.turns) {
        turns.push_back(json{{"user", turn.user}, {"bot", turn.bot}});
    }
    json obj{
        {"id", record.id},
        {"domain", to_string(record.domain)},
        {"region", to_string(record.region)},
        {"politeness", to_string(record.politeness)},
        {"turns", turns},
    };
    if (record.efair) {
        obj["efair"] = json{
            {"engagement", record.efair->engagement},
            {"fluency", record.efair->fluency},
            {"adequacy", record.efair->adequacy},
            {"information_preservation", record.efair->information_preservation},
            {"readability", record.efair->readability},
        };
    }
    return obj.dump();
}

namespace {

void require_keys(const json& obj, const std::set<std::string>& required,
                  const std::set<std::string>& optional) {
    for (const auto& item : obj.items()) {
        if (!required.count(item.key()) && !optional.count(item.key())) {
            throw Error("unknown field '" + item.key() + "'");
        }
    }
    for (const auto& key : required) {
        if (!obj.contains(key)) throw Error("missing field '" + key + "'");
    }
}

int efair_int(const json& obj, const char* key) {
    const json& v = obj.at(key);
    if (!v.is_number_integer()) throw Error(std::string("efair.") + key + " must be an integer");
    return v.get<int>();
}

}  // namespace

DialogueRecord record_from_json_line(const std::string& line) {
    json obj = json::parse(line);
    if (!obj.is_object()) throw Error("record is not an object");
    require_keys(obj, {"id", "domain", "region", "politeness", "turns"}, {"efair"});

    DialogueRecord record;
    record.id = obj.at("id").get<std::string>();
    record.domain = parse_domain(obj.at("domain").get<std::string>());
    record.region = parse_region(obj.at("region").get<std::string>());
    record.politeness = parse_politeness(obj.at("politeness").get<std::string>());

    const json& turns = obj.at("turns");
    if (!turns.is_array()) throw Error("turns must be an array");
    for (const json& t : turns) {
        if (!t.is_object()) throw Error("turn is not an object");
        require_keys(t, {"user", "bot"}, {});
        record.turns.push_back(Turn{t.at("user").get<std::string>(), t.at("bot").get<std::string>()});
    }

    if (obj.contains("efair")) {
        const json& e = obj.at("efair");
        require_keys(e, {"engagement", "fluency", "adequacy", "information_preservation", "readability"}, {});
        EFairScore score;
        score.engagement = efair_int(e, "engagement");
        score.fluency = efair_int(e, "fluency");
        score.adequacy = efair_int(e, "adequacy");
        score.information_preservation = efair_int(e, "information_preservation");
        score.readability = efair_int(e, "readability");
        record.efair = score;
    }
    return record;
}

std::vector<DialogueRecord> load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open corpus file: " + path);

    std::vector<DialogueRecord> records;
    std::set<std::string> seen_ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        DialogueRecord record;
        try {
            record = record_from_json_line(line);
        } catch (const json::exception& e) {
            throw Error(path + ":" + std::to_string(line_no) + ": parse error: " + e.what());
        } catch (const Error& e) {
            throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        const auto violations = validate_record(record);
        if (!violations.empty()) {
            std::string msg = "record '" + record.id + "': " + violations.front();
            for (std::size_t i = 1; i < violations.size(); ++i) msg += "; " + violations[i];
            throw Error(path + ":" + std::to_string(line_no) + ": " + msg);
        }
        if (!seen_ids.insert(record.id).second) {
            throw Error(path + ":" + std::to_string(line_no) + ": duplicate id '" + record.id + "'");
        }
        records.push_back(std::move(record));
    }
    return records;
}

void save_corpus(const std::vector<DialogueRecord>& records, const std::string& path) {
    std::ostringstream out;
    for (const DialogueRecord& record : records) {
        out << record_to_json_line(record) << '\n';
    }
    write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

std::vector<std::string> validate_record(const DialogueRecord& record) {
    std::vector<std::string> violations;
    if (trim(record.id).empty()) violations.push_back("id empty");
    if (record.turns.empty()) violations.push_back("turns empty");
    for (std::size_t i = 0; i < record.turns.size(); ++i) {
        const std::string pos = "turn " + std::to_string(i + 1) + ": ";
        if (trim(record.turns[i].user).empty()) violations.push_back(pos + "empty user turn");
        if (trim(record.turns[i].bot).empty()) violations.push_back(pos + "empty bot turn");
    }
    if (record.efair) {
        const EFairScore& e = *record.efair;
        const std::pair<const char*, int> fields[] = {
            {"efair.engagement", e.engagement},
            {"efair.fluency", e.fluency},
            {"efair.adequacy", e.adequacy},
            {"efair.information_preservation", e.information_preservation},
            {"efair.readability", e.readability},
        };
        for (const auto& [name, value] : fields) {
            if (value < 1 || value > 5) violations.push_back(std::string(name) + " out of [1,5]");
        }
    }
    return violations;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

CorpusStats corpus_stats(const std::vector<DialogueRecord>& records, TokenizeFn tokenize) {
    if (records.empty()) throw Error("corpus_stats: empty corpus");

    CorpusStats stats;
    std::set<std::string> vocab;
    std::set<std::string> bigrams;
    std::set<std::string> trigrams;
    std::int64_t user_turns = 0;
    std::int64_t bot_turns = 0;
    std::int64_t user_tokens = 0;
    std::int64_t bot_tokens = 0;
    std::int64_t user_sentences = 0;
    std::int64_t bot_sentences = 0;
    std::int64_t total_tokens = 0;

    auto scan_ngrams = [&](const std::vector<std::string>& tokens, bool is_user) {
        for (const std::string& t : tokens) vocab.insert(t);
        if (is_user) {
            for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
                bigrams.insert(tokens[i] + '\x1f' + tokens[i + 1]);
            }
        }
        for (std::size_t i = 0; i + 2 < tokens.size(); ++i) {
            trigrams.insert(tokens[i] + '\x1f' + tokens[i + 1] + '\x1f' + tokens[i + 2]);
        }
    };

    for (const DialogueRecord& record : records) {
        stats.per_domain_counts[record.domain] += 1;
        stats.per_region_counts[record.region] += 1;
        for (const Turn& turn : record.turns) {
            const auto u = tokenize(turn.user);
            const auto b = tokenize(turn.bot);
            ++user_turns;
            ++bot_turns;
            user_tokens += static_cast<std::int64_t>(u.size());
            bot_tokens += static_cast<std::int64_t>(b.size());
            user_sentences += sentence_count(turn.user);
            bot_sentences += sentence_count(turn.bot);
            total_tokens += static_cast<std::int64_t>(u.size() + b.size());
            scan_ngrams(u, true);
            scan_ngrams(b, false);
        }
    }

    stats.vocabulary_size = static_cast<std::int64_t>(vocab.size());
    stats.avg_user_tokens = static_cast<double>(user_tokens) / static_cast<double>(user_turns);
    stats.avg_bot_tokens = static_cast<double>(bot_tokens) / static_cast<double>(bot_turns);
    stats.avg_user_sentences = static_cast<double>(user_sentences) / static_cast<double>(user_turns);
    stats.avg_bot_sentences = static_cast<double>(bot_sentences) / static_cast<double>(bot_turns);
    stats.words_per_conversation = static_cast<double>(total_tokens) / static_cast<double>(records.size());
    stats.unique_bigrams = static_cast<std::int64_t>(bigrams.size());
    stats.unique_trigrams = static_cast<std::int64_t>(trigrams.size());
    return stats;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

CorpusSplit split_corpus(const std::vector<DialogueRecord>& records, SplitFractions fractions,
                         std::uint64_t seed) {
    const double sum = fractions.train + fractions.dev + fractions.test;
    if (fractions.train < 0.0 || fractions.dev < 0.0 || fractions.test < 0.0 ||
        std::abs(sum - 1.0) > 1e-9) {
        throw Error("invalid split fractions: must be non-negative and sum to 1");
    }

    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = make_rng(seed, "split");
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = rng_below(rng, i);
        std::swap(order[i - 1], order[j]);
    }

    const std::size_t n = records.size();
    const auto n_train = static_cast<std::size_t>(std::floor(fractions.train * static_cast<double>(n)));
    const auto n_dev = static_cast<std::size_t>(std::floor(fractions.dev * static_cast<double>(n)));

    CorpusSplit split;
    for (std::size_t i = 0; i < n; ++i) {
        const DialogueRecord& r = records[order[i]];
        if (i < n_train) {
            split.train.push_back(r);
        } else if (i < n_train + n_dev) {
            split.dev.push_back(r);
        } else {
            split.test.push_back(r);
        }
    }
    return split;
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

namespace {

const char* const kPolitePreambles[] = {
    "sure , happy to help .",
    "of course , thanks for asking .",
    "certainly , that is a great question .",
    "glad you asked , it is my pleasure .",
};
const char* const kNeutralPreambles[] = {
    "here is the information .",
    "noted , the answer follows .",
    "this is how it works .",
    "see the details below .",
};
const char* const kImpolitePreambles[] = {
    "okay ! let me spoon-feed you .",
    "that is a silly question .",
    "stop wasting my time with this .",
    "obviously you never read the basics .",
};
const char* const kPoliteClosers[] = {
    "please let me know if you need anything else .",
    "i am always happy to help further .",
    "thank you for your patience .",
    "feel free to ask again , please .",
};
const char* const kNeutralClosers[] = {
    "that is all .",
    "end of answer .",
    "nothing further applies .",
    "refer to your statement for specifics .",
};
const char* const kImpoliteClosers[] = {
    "figure the rest out yourself .",
    "do not ask me again .",
    "honestly anyone knows this already .",
    "next time try thinking first .",
};

// Follow-up sentences after a grounded fact; style-neutral on purpose so the
// politeness signal lives only in preamble and closer.
const char* const kGroundedFollowups[] = {
    "keep that in mind before you decide .",
    "weigh this against your own goals .",
    "that is the key point to remember .",
    "use that as your starting point .",
};

// Bodies for ungrounded turns. None of these may contain a verbalization
// template phrase ("is used for", "is related to", ...).
const char* const kUngroundedBodies[] = {
    "it depends on your goals and your budget .",
    "compare the available options and check the terms .",
    "review the fee schedule and the fine print first .",
    "your bank can confirm the exact requirements .",
    "start small and increase once you understand the risks .",
    "check the current rates before you commit .",
};

// Natural query shapes for ungrounded turns; these deliberately stay far
// from the verbalization templates so they do not clear the retrieval
// threshold.
const char* const kUngroundedQueries[] = {
    "what should i do about my {e} ?",
    "how do i apply for a {e} ?",
    "can you please help me with my {e} ?",
    "i am worried about my {e} , what now ?",
    "is a {e} worth it for me ?",
    "when should i review my {e} ?",
    "okay , but how does a {e} work ?",
    "my {e} payment failed on paypal , why ?",
};

// Grounded queries echo the fact verbalization minus its tail; the suffix
// variants all keep cosine similarity against the fact above the 0.7
// retrieval threshold under the default embedder with margin.
const char* const kGroundedSuffixes[] = {"", " ."};

template <std::size_t N>
const char* pick(Rng& rng, const char* const (&bank)[N]) {
    return bank[rng_below(rng, N)];
}

const char* pick_preamble(PolitenessLabel style, Rng& rng) {
    switch (style) {
        case PolitenessLabel::Polite: return pick(rng, kPolitePreambles);
        case PolitenessLabel::Neutral: return pick(rng, kNeutralPreambles);
        case PolitenessLabel::Impolite: return pick(rng, kImpolitePreambles);
    }
    throw Error("unreachable politeness label");
}

const char* pick_closer(PolitenessLabel style, Rng& rng) {
    switch (style) {
        case PolitenessLabel::Polite: return pick(rng, kPoliteClosers);
        case PolitenessLabel::Neutral: return pick(rng, kNeutralClosers);
        case PolitenessLabel::Impolite: return pick(rng, kImpoliteClosers);
    }
    throw Error("unreachable politeness label");
}

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

std::vector<double> default_domain_weights() {
    // Proportions follow the corpus-wide domain histogram the schema models.
    return {453, 185, 141, 150, 114, 52, 66, 102, 69, 85};
}

std::vector<double> default_region_weights() {
    return {2743, 290, 542, 19, 55, 60, 297};
}

}  // namespace

std::vector<DialogueRecord> synthesize_corpus(const SynthConfig& config, std::uint64_t seed) {
    if (config.count < 0) throw Error("synthesize_corpus: count must be >= 0");
    if (config.min_turns < 1 || config.max_turns < config.min_turns) {
        throw Error("synthesize_corpus: invalid turns range");
    }
    if (config.grounding_rate < 0.0 || config.grounding_rate > 1.0) {
        throw Error("synthesize_corpus: grounding rate must be in [0,1]");
    }
    for (double w : config.politeness_mix) {
        if (w < 0.0) throw Error("synthesize_corpus: negative politeness mix weight");
    }
    if (config.efair_rate < 0.0 || config.efair_rate > 1.0) {
        throw Error("synthesize_corpus: efair rate must be in [0,1]");
    }

    std::vector<double> domain_weights = default_domain_weights();
    if (!config.domain_mixture.empty()) {
        domain_weights.assign(kDomainCount, 0.0);
        for (const auto& [tag, w] : config.domain_mixture) {
            if (w < 0.0) throw Error("synthesize_corpus: negative domain weight");
            domain_weights[static_cast<int>(tag)] = w;
        }
    }
    std::vector<double> region_weights = default_region_weights();
    if (!config.region_mixture.empty()) {
        region_weights.assign(kRegionCount, 0.0);
        for (const auto& [tag, w] : config.region_mixture) {
            if (w < 0.0) throw Error("synthesize_corpus: negative region weight");
            region_weights[static_cast<int>(tag)] = w;
        }
    }

    // Entities grouped by domain for mixture-respecting draws.
    std::vector<std::vector<const GroundedEntity*>> by_domain(kDomainCount);
    for (const GroundedEntity& entity : grounded_entities()) {
        by_domain[static_cast<int>(entity.domain)].push_back(&entity);
    }
    for (int d = 0; d < kDomainCount; ++d) {
        if (by_domain[d].empty() && domain_weights[d] > 0.0) {
            throw Error("synthesize_corpus: no entities for domain " +
                        std::string(kDomainNames[d]));
        }
    }

    Rng rng = make_rng(seed, "corpus-synth");
    std::vector<DialogueRecord> records;
    records.reserve(static_cast<std::size_t>(config.count));

    for (int i = 0; i < config.count; ++i) {
        DialogueRecord record;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "syn-%06d", i + 1);
        record.id = idbuf;

        const auto style = static_cast<PolitenessLabel>(rng_weighted(
            rng, {config.politeness_mix[0], config.politeness_mix[1], config.politeness_mix[2]}));
        record.politeness = style;
        record.domain = static_cast<DomainTag>(rng_weighted(rng, domain_weights));
        record.region = static_cast<RegionTag>(rng_weighted(rng, region_weights));

        const int span = config.max_turns - config.min_turns + 1;
        const int n_turns = config.min_turns + static_cast<int>(rng_below(rng, span));

        auto& pool = by_domain[static_cast<int>(record.domain)];
        std::vector<std::size_t> entity_order(pool.size());
        for (std::size_t k = 0; k < pool.size(); ++k) entity_order[k] = k;
        for (std::size_t k = entity_order.size(); k > 1; --k) {
            std::swap(entity_order[k - 1], entity_order[rng_below(rng, k)]);
        }

        for (int t = 0; t < n_turns; ++t) {
            const GroundedEntity& entity = *pool[entity_order[t % entity_order.size()]];
            const bool grounded = rng_real(rng) < config.grounding_rate;

            Turn turn;
            if (grounded) {
                const std::string fact = verbalize(entity.fact).text;
                // Query = verbalization minus tail plus a short suffix.
                const std::string relation_phrase =
                    entity.fact.relation == RelationTag::UsedFor ? " is used for" : " is related to";
                turn.user = entity.fact.head + relation_phrase + pick(rng, kGroundedSuffixes);
                turn.bot = std::string(pick_preamble(style, rng)) + " " + fact + " " +
                           pick(rng, kGroundedFollowups) + " " + pick_closer(style, rng);
            } else {
                std::string q = pick(rng, kUngroundedQueries);
                turn.user = replace_all(q, "{e}", entity.fact.head);
                turn.bot = std::string(pick_preamble(style, rng)) + " " +
                           pick(rng, kUngroundedBodies) + " " + pick_closer(style, rng);
            }
            record.turns.push_back(std::move(turn));
        }

        if (rng_real(rng) < config.efair_rate) {
            EFairScore score;
            score.engagement = 3 + static_cast<int>(rng_below(rng, 3));
            score.fluency = 3 + static_cast<int>(rng_below(rng, 3));
            score.adequacy = 3 + static_cast<int>(rng_below(rng, 3));
            score.information_preservation = 3 + static_cast<int>(rng_below(rng, 3));
            score.readability = 3 + static_cast<int>(rng_below(rng, 3));
            record.efair = score;
        }

        records.push_back(std::move(record));
    }
    return records;
}

}  // namespace finchat
