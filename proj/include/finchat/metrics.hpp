#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "finchat/common.hpp"
#include "finchat/knowledge.hpp"

namespace finchat {

struct PrecisionRecallF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Modified n-gram precision BLEU with brevity penalty min(1, e^(1 - r/c)).
// Smoothing (on by default) applies add-one to numerator and denominator of
// any precision whose clipped count is zero; a hypothesis too short to form
// any k-gram scores 0. If `warned` is given it is set when the hypothesis is
// empty (score 0).
double bleu_n(const std::string& hypothesis, const std::vector<std::string>& references, int n,
              bool smoothing = true, bool* warned = nullptr);

// n in {1,2}: clipped n-gram overlap precision/recall/F1. Empty reference is
// an error.
PrecisionRecallF1 rouge_n(const std::string& hypothesis, const std::string& reference, int n);

// LCS-based: P = LCS/|hyp|, R = LCS/|ref|. Both sides empty gives (0,0,0)
// and sets `warned`.
PrecisionRecallF1 rouge_l(const std::string& hypothesis, const std::string& reference,
                          bool* warned = nullptr);

// Simplified METEOR: greedy left-to-right unigram alignment, exact matches
// first then suffix-stripped stem matches; F_mean = 10PR/(R+9P); chunk
// penalty 0.5*(chunks/matches)^3. No synonym dictionary.
double meteor(const std::string& hypothesis, const std::string& reference);

// Fixed suffix-stripping stemmer used by meteor (-ing, -ed, -es, -s rules).
std::string stem(const std::string& word);

// Greedy embedding match: each token is embedded over a 3-word sliding
// window; precision = mean over hypothesis tokens of the best cosine against
// the reference tokens, recall symmetric, F1 harmonic. Empty side is an
// error.
PrecisionRecallF1 embed_score(const std::string& hypothesis, const std::string& reference,
                              const Embedder& embedder);

// Per-setting aggregate, everything reported x100.
struct MetricReport {
    double r1 = 0.0, r2 = 0.0, rl = 0.0;
    double b1 = 0.0, b2 = 0.0, b3 = 0.0, b4 = 0.0;
    double bsp = 0.0, bsr = 0.0, bsf1 = 0.0;
    double politeness = 0.0;
    double meteor = 0.0;
    bool politeness_available = false;
    std::int64_t sample_count = 0;
};

struct SamplePair {
    std::string hypothesis;
    std::vector<std::string> references;
    std::optional<bool> polite;  // classifier verdict, when available
};

// Corpus-level BLEU pools n-gram counts across samples (sentence-mean
// available behind the flag); the other metrics are averaged; bsf1 is the
// harmonic mean of the aggregated bsp/bsr; politeness is the percent of
// polite verdicts.
MetricReport aggregate(const std::vector<SamplePair>& pairs, const Embedder& embedder,
                       bool pooled_bleu = true);

std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(const std::string& text);

}  // namespace finchat
