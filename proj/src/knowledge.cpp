#include "finchat/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace finchat {

using nlohmann::json;

namespace {

const char* const kRelationNames[kRelationCount] = {
    "xIntent", "xWant", "xNeed", "xReason", "xEffect", "RelatedTo", "UsedFor",
};

}  // namespace

const char* to_string(RelationTag tag) { return kRelationNames[static_cast<int>(tag)]; }

RelationTag parse_relation(const std::string& text) {
    for (int i = 0; i < kRelationCount; ++i) {
        if (text == kRelationNames[i]) return static_cast<RelationTag>(i);
    }
    throw Error("unknown relation tag: '" + text + "'");
}

VerbalizedFact verbalize(const KnowledgeTriple& triple) {
    if (trim(triple.head).empty() || trim(triple.tail).empty()) {
        throw Error("verbalize: head and tail must be non-empty");
    }
    std::string text;
    switch (triple.relation) {
        case RelationTag::UsedFor: text = triple.head + " is used for " + triple.tail + "."; break;
        case RelationTag::RelatedTo: text = triple.head + " is related to " + triple.tail + "."; break;
        case RelationTag::xIntent: text = "The user intends " + triple.tail + "."; break;
        case RelationTag::xWant: text = "The user wants " + triple.tail + "."; break;
        case RelationTag::xNeed: text = "The user needs " + triple.tail + "."; break;
        case RelationTag::xReason: text = "The reason is " + triple.tail + "."; break;
        case RelationTag::xEffect: text = "The effect is " + triple.tail + "."; break;
    }
    return VerbalizedFact{text, triple, 0.0};
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

std::vector<double> Embedder::embed(std::string_view text) const {
    if (dim <= 0) throw Error("embedder dimension must be positive");
    std::vector<double> values(static_cast<std::size_t>(dim), 0.0);
    const auto tokens = word_tokenize(text);

    auto accumulate = [&](const std::string& feature) {
        const std::uint64_t h = fnv1a64(feature);
        const auto bucket = static_cast<std::size_t>((h >> 8) % static_cast<std::uint64_t>(dim));
        const double sign = (h & 1u) ? 1.0 : -1.0;
        values[bucket] += sign;
    };

    for (const std::string& t : tokens) {
        accumulate("1|" + t);
    }
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
        accumulate("2|" + tokens[i] + '\x1f' + tokens[i + 1]);
    }

    double norm_sq = 0.0;
    for (double v : values) norm_sq += v * v;
    if (norm_sq > 0.0) {
        const double inv = 1.0 / std::sqrt(norm_sq);
        for (double& v : values) v *= inv;
    }
    return values;
}

std::uint64_t Embedder::fingerprint() const {
    return fnv1a64("finchat-hash-embedder-v1|ngrams=1,2|dim=" + std::to_string(dim));
}

double cosine(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) throw Error("cosine: dimension mismatch");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) return 0.0;
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

// ---------------------------------------------------------------------------
// Index
// ---------------------------------------------------------------------------

KnowledgeIndex build_index(const std::vector<KnowledgeTriple>& triples, const Embedder& embedder,
                           double threshold) {
    if (threshold < 0.0 || threshold > 1.0) throw Error("index threshold must be in [0,1]");
    KnowledgeIndex index;
    index.embedder = embedder;
    index.threshold = threshold;
    index.embedder_fingerprint = embedder.fingerprint();
    index.entries.reserve(triples.size());
    for (const KnowledgeTriple& triple : triples) {
        VerbalizedFact fact = verbalize(triple);
        index.entries.push_back(IndexEntry{triple, fact.text, embedder.embed(fact.text)});
    }
    return index;
}

void save_index(const KnowledgeIndex& index, const std::string& path) {
    json triples = json::array();
    for (const IndexEntry& entry : index.entries) {
        triples.push_back(json{
            {"head", entry.triple.head},
            {"relation", to_string(entry.triple.relation)},
            {"tail", entry.triple.tail},
        });
    }
    json doc{
        {"format", "finchat-knowledge-index-v1"},
        {"embedder", json{{"dim", index.embedder.dim}}},
        {"embedder_fingerprint", index.embedder_fingerprint},
        {"threshold", index.threshold},
        {"triples", triples},
    };
    write_file(path, doc.dump(2) + "\n");
}

KnowledgeIndex load_index(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error("index file " + path + ": parse error: " + e.what());
    }
    if (doc.value("format", "") != "finchat-knowledge-index-v1") {
        throw Error("index file " + path + ": unknown format");
    }
    Embedder embedder;
    embedder.dim = doc.at("embedder").at("dim").get<int>();
    const auto stored_fingerprint = doc.at("embedder_fingerprint").get<std::uint64_t>();
    if (stored_fingerprint != embedder.fingerprint()) {
        throw Error("index file " + path + ": embedder fingerprint mismatch");
    }
    std::vector<KnowledgeTriple> triples;
    for (const json& t : doc.at("triples")) {
        triples.push_back(KnowledgeTriple{
            t.at("head").get<std::string>(),
            parse_relation(t.at("relation").get<std::string>()),
            t.at("tail").get<std::string>(),
        });
    }
    return build_index(triples, embedder, doc.at("threshold").get<double>());
}

std::vector<KnowledgeTriple> load_triples(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open triples file: " + path);
    std::vector<KnowledgeTriple> triples;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos) {
            throw Error(path + ":" + std::to_string(line_no) + ": expected head<TAB>relation<TAB>tail");
        }
        KnowledgeTriple triple;
        triple.head = trim(line.substr(0, t1));
        triple.tail = trim(line.substr(t2 + 1));
        try {
            triple.relation = parse_relation(trim(line.substr(t1 + 1, t2 - t1 - 1)));
        } catch (const Error& e) {
            throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (triple.head.empty() || triple.tail.empty()) {
            throw Error(path + ":" + std::to_string(line_no) + ": empty head or tail");
        }
        triples.push_back(std::move(triple));
    }
    return triples;
}

void save_triples(const std::vector<KnowledgeTriple>& triples, const std::string& path) {
    std::ostringstream out;
    out << "# head<TAB>relation<TAB>tail\n";
    for (const KnowledgeTriple& t : triples) {
        out << t.head << '\t' << to_string(t.relation) << '\t' << t.tail << '\n';
    }
    write_file(path, out.str());
}

std::vector<VerbalizedFact> retrieve(const KnowledgeIndex& index, const Embedder& embedder,
                                     const std::string& query, int k) {
    if (embedder.fingerprint() != index.embedder_fingerprint) {
        throw Error("retrieve: embedder fingerprint mismatch with index");
    }
    if (k < 0) throw Error("retrieve: k must be >= 0");

    const std::vector<double> query_embedding = embedder.embed(query);
    std::vector<VerbalizedFact> hits;
    for (const IndexEntry& entry : index.entries) {
        const double sim = cosine(query_embedding, entry.embedding);
        if (sim >= index.threshold) {
            hits.push_back(VerbalizedFact{entry.fact_text, entry.triple, sim});
        }
    }
    // Descending by similarity; stable_sort keeps insertion order on ties.
    std::stable_sort(hits.begin(), hits.end(),
                     [](const VerbalizedFact& a, const VerbalizedFact& b) {
                         return a.similarity > b.similarity;
                     });
    if (static_cast<int>(hits.size()) > k) hits.resize(static_cast<std::size_t>(k));
    return hits;
}

AugmentedPrompt fuse(const std::string& query, const std::vector<VerbalizedFact>& facts,
                     FusionMode mode) {
    AugmentedPrompt prompt;
    prompt.mode = mode;
    prompt.fact_count = static_cast<int>(facts.size());

    std::string knowledge_segment;
    if (mode == FusionMode::Textual) {
        for (const VerbalizedFact& fact : facts) {
            knowledge_segment += fact.text;
            knowledge_segment += ' ';
        }
    } else {
        Embedder embedder;
        std::vector<double> mean(static_cast<std::size_t>(embedder.dim), 0.0);
        for (const VerbalizedFact& fact : facts) {
            const auto e = embedder.embed(fact.text);
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += e[i];
        }
        if (!facts.empty()) {
            for (double& v : mean) v /= static_cast<double>(facts.size());
        }
        prompt.fact_embedding = std::move(mean);
    }

    prompt.text = "[KNOWLEDGE] " + knowledge_segment + "[QUERY] " + query + " [RESPONSE]";
    return prompt;
}

// ---------------------------------------------------------------------------
// Built-in triple store
// ---------------------------------------------------------------------------

namespace {

std::vector<GroundedEntity> make_grounded_entities() {
    using R = RelationTag;
    using D = DomainTag;
    // Heads are two or three words and tails a single word so the echo-style
    // confirmation queries used by the synthetic grammar clear the 0.7
    // retrieval threshold with margin.
    return {
        {{"stock market", R::RelatedTo, "volatility"}, D::Stock},
        {{"growth stock", R::UsedFor, "appreciation"}, D::Stock},
        {{"value stock", R::RelatedTo, "fundamentals"}, D::Stock},
        {{"penny stock", R::RelatedTo, "speculation"}, D::Stock},
        {{"blue chip", R::UsedFor, "stability"}, D::Stock},
        {{"stock split", R::RelatedTo, "liquidity"}, D::Stock},

        {{"mutual funds", R::UsedFor, "diversification"}, D::Investment},
        {{"index fund", R::UsedFor, "benchmarking"}, D::Investment},
        {{"hedge fund", R::RelatedTo, "leverage"}, D::Investment},
        {{"real estate", R::UsedFor, "rentals"}, D::Investment},
        {{"venture capital", R::UsedFor, "startups"}, D::Investment},
        {{"gold bond", R::UsedFor, "hedging"}, D::Investment},

        {{"emergency fund", R::UsedFor, "emergencies"}, D::PersonalFinance},
        {{"budget plan", R::UsedFor, "discipline"}, D::PersonalFinance},
        {{"expense tracker", R::UsedFor, "awareness"}, D::PersonalFinance},
        {{"retirement plan", R::RelatedTo, "pensions"}, D::PersonalFinance},
        {{"pension fund", R::UsedFor, "annuities"}, D::PersonalFinance},
        {{"insurance policy", R::UsedFor, "protection"}, D::PersonalFinance},

        {{"savings account", R::UsedFor, "liquidity"}, D::Banking},
        {{"checking account", R::UsedFor, "payments"}, D::Banking},
        {{"fixed deposit", R::UsedFor, "safety"}, D::Banking},
        {{"net banking", R::UsedFor, "convenience"}, D::Banking},
        {{"wire transfer", R::UsedFor, "remittance"}, D::Banking},
        {{"minimum balance", R::RelatedTo, "penalties"}, D::Banking},

        {{"home loan", R::RelatedTo, "collateral"}, D::Loan},
        {{"car loan", R::RelatedTo, "depreciation"}, D::Loan},
        {{"student loan", R::UsedFor, "education"}, D::Loan},
        {{"personal loan", R::RelatedTo, "refinancing"}, D::Loan},
        {{"payday loan", R::RelatedTo, "rollover"}, D::Loan},
        {{"loan tenure", R::RelatedTo, "installments"}, D::Loan},

        {{"interest rate", R::RelatedTo, "inflation"}, D::GeneralFinance},
        {{"exchange rate", R::RelatedTo, "currencies"}, D::GeneralFinance},
        {{"inflation rate", R::RelatedTo, "erosion"}, D::GeneralFinance},
        {{"compound interest", R::UsedFor, "compounding"}, D::GeneralFinance},
        {{"credit score", R::RelatedTo, "creditworthiness"}, D::GeneralFinance},
        {{"risk tolerance", R::RelatedTo, "allocation"}, D::GeneralFinance},

        {{"credit card", R::UsedFor, "rewards"}, D::CreditCard},
        {{"annual fee", R::RelatedTo, "perks"}, D::CreditCard},
        {{"late fee", R::RelatedTo, "arrears"}, D::CreditCard},
        {{"credit limit", R::RelatedTo, "utilization"}, D::CreditCard},
        {{"billing cycle", R::RelatedTo, "statements"}, D::CreditCard},
        {{"grace period", R::RelatedTo, "deadlines"}, D::CreditCard},

        {{"tax refund", R::RelatedTo, "overpayment"}, D::Tax},
        {{"capital gain", R::RelatedTo, "taxation"}, D::Tax},
        {{"tax deduction", R::UsedFor, "exemptions"}, D::Tax},
        {{"advance tax", R::RelatedTo, "prepayment"}, D::Tax},
        {{"tax bracket", R::RelatedTo, "slabs"}, D::Tax},
        {{"filing deadline", R::RelatedTo, "extensions"}, D::Tax},

        {{"day trading", R::RelatedTo, "margins"}, D::Trading},
        {{"stop loss", R::UsedFor, "exits"}, D::Trading},
        {{"limit order", R::UsedFor, "precision"}, D::Trading},
        {{"market order", R::UsedFor, "speed"}, D::Trading},
        {{"short selling", R::RelatedTo, "borrowing"}, D::Trading},
        {{"demat account", R::UsedFor, "custody"}, D::Trading},

        {{"digital wallet", R::UsedFor, "checkout"}, D::Others},
        {{"crypto wallet", R::UsedFor, "tokens"}, D::Others},
        {{"kyc process", R::UsedFor, "verification"}, D::Others},
        {{"standing order", R::UsedFor, "automation"}, D::Others},
        {{"direct debit", R::UsedFor, "billing"}, D::Others},
        {{"overdraft fee", R::RelatedTo, "shortfalls"}, D::Others},
    };
}

std::vector<KnowledgeTriple> make_default_triples() {
    std::vector<KnowledgeTriple> triples;
    for (const GroundedEntity& entity : grounded_entities()) {
        triples.push_back(entity.fact);
    }
    // Assorted intent/want/need/reason/effect facts round out the store;
    // their heads do not collide with the grounded inventory.
    using R = RelationTag;
    triples.push_back({"stocks", R::xIntent, "to know the difference"});
    triples.push_back({"bonds", R::xWant, "to buy a bond"});
    triples.push_back({"investing", R::xNeed, "to be interested in investing"});
    triples.push_back({"saving", R::xReason, "to build a safety net"});
    triples.push_back({"budgeting", R::xEffect, "fewer surprises at month end"});
    triples.push_back({"overspending", R::xEffect, "mounting debt"});
    triples.push_back({"retirement", R::RelatedTo, "long-term planning"});
    triples.push_back({"diversification", R::xReason, "to spread the risk"});
    return triples;
}

}  // namespace

const std::vector<GroundedEntity>& grounded_entities() {
    static const std::vector<GroundedEntity> entities = make_grounded_entities();
    return entities;
}

const std::vector<KnowledgeTriple>& default_triples() {
    static const std::vector<KnowledgeTriple> triples = make_default_triples();
    return triples;
}

}  // namespace finchat
