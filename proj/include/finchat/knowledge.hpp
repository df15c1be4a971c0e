#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "finchat/common.hpp"
#include "finchat/corpus.hpp"

namespace finchat {

enum class RelationTag { xIntent, xWant, xNeed, xReason, xEffect, RelatedTo, UsedFor };
constexpr int kRelationCount = 7;

const char* to_string(RelationTag tag);
RelationTag parse_relation(const std::string& text);

struct KnowledgeTriple {
    std::string head;
    RelationTag relation = RelationTag::RelatedTo;
    std::string tail;

    bool operator==(const KnowledgeTriple&) const = default;
};

struct VerbalizedFact {
    std::string text;
    KnowledgeTriple source;
    double similarity = 0.0;  // set at retrieval time
};

// Deterministic template per relation, e.g. UsedFor ->
// "{head} is used for {tail}."
VerbalizedFact verbalize(const KnowledgeTriple& triple);

// Signed feature-hashing text embedder: lowercase, tokenize, word unigrams
// and bigrams, FNV-hash each n-gram into `dim` buckets with a sign bit,
// accumulate, L2-normalize. Empty text maps to the zero vector.
struct Embedder {
    int dim = 256;

    std::vector<double> embed(std::string_view text) const;
    std::uint64_t fingerprint() const;
};

// dot(u,v)/(|u||v|); 0 if either vector is zero. Throws on dimension
// mismatch.
double cosine(const std::vector<double>& u, const std::vector<double>& v);

struct IndexEntry {
    KnowledgeTriple triple;
    std::string fact_text;
    std::vector<double> embedding;
};

struct KnowledgeIndex {
    Embedder embedder;
    double threshold = 0.7;
    std::uint64_t embedder_fingerprint = 0;
    std::vector<IndexEntry> entries;
};

KnowledgeIndex build_index(const std::vector<KnowledgeTriple>& triples, const Embedder& embedder,
                           double threshold = 0.7);

// Index persistence: a JSON document holding the embedder config,
// fingerprint, threshold and triples; embeddings are recomputed on load and
// the fingerprint is verified.
void save_index(const KnowledgeIndex& index, const std::string& path);
KnowledgeIndex load_index(const std::string& path);

// Triple files: UTF-8, `head<TAB>relation<TAB>tail`, '#' comments.
std::vector<KnowledgeTriple> load_triples(const std::string& path);
void save_triples(const std::vector<KnowledgeTriple>& triples, const std::string& path);

// Facts whose cosine similarity against the query is >= index.threshold,
// sorted descending (ties by insertion order), truncated to k. Throws if the
// live embedder's fingerprint differs from the one the index was built with.
std::vector<VerbalizedFact> retrieve(const KnowledgeIndex& index, const Embedder& embedder,
                                     const std::string& query, int k);

enum class FusionMode { Textual, EmbeddingPrefix };

struct AugmentedPrompt {
    std::string text;
    FusionMode mode = FusionMode::Textual;
    // Mean fact embedding; only populated in EmbeddingPrefix mode.
    std::vector<double> fact_embedding;
    int fact_count = 0;
};

// Textual mode: "[KNOWLEDGE] f1 f2 ... [QUERY] query [RESPONSE]".
// EmbeddingPrefix mode: same text with an empty knowledge segment; the mean
// fact embedding rides along for the model to project into prefix slots.
AugmentedPrompt fuse(const std::string& query, const std::vector<VerbalizedFact>& facts,
                     FusionMode mode = FusionMode::Textual);

// The built-in commonsense triple store backing synthetic corpora. One
// grounded (UsedFor / RelatedTo) fact per entity plus assorted
// intent/want/need/reason/effect triples.
const std::vector<KnowledgeTriple>& default_triples();

// Entity inventory the synthesizer grounds against: (head, domain) plus the
// grounded fact for that head.
struct GroundedEntity {
    KnowledgeTriple fact;
    DomainTag domain;
};
const std::vector<GroundedEntity>& grounded_entities();

}  // namespace finchat
