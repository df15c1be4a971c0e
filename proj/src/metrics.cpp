#include "finchat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

namespace finchat {

using nlohmann::json;

namespace {

using Counts = std::map<std::string, std::int64_t>;

std::string join_gram(const std::vector<std::string>& tokens, std::size_t start, int n) {
    std::string key = tokens[start];
    for (int j = 1; j < n; ++j) {
        key += '\x1f';
        key += tokens[start + static_cast<std::size_t>(j)];
    }
    return key;
}

Counts ngram_counts(const std::vector<std::string>& tokens, int n) {
    Counts counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
        counts[join_gram(tokens, i, n)] += 1;
    }
    return counts;
}

double harmonic_f1(double p, double r) {
    if (p + r <= 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

// Clipped-precision counts for one hypothesis against the per-gram max over
// references.
struct ClippedCounts {
    std::int64_t clipped = 0;
    std::int64_t total = 0;
};

ClippedCounts clipped_ngram_counts(const std::vector<std::string>& hyp,
                                   const std::vector<std::vector<std::string>>& refs, int k) {
    ClippedCounts out;
    const Counts hyp_counts = ngram_counts(hyp, k);
    Counts max_ref;
    for (const auto& ref : refs) {
        for (const auto& [gram, count] : ngram_counts(ref, k)) {
            max_ref[gram] = std::max(max_ref[gram], count);
        }
    }
    for (const auto& [gram, count] : hyp_counts) {
        out.total += count;
        const auto it = max_ref.find(gram);
        if (it != max_ref.end()) out.clipped += std::min(count, it->second);
    }
    return out;
}

// Reference length closest to the hypothesis length (shorter wins ties).
std::int64_t closest_ref_length(std::int64_t hyp_len, const std::vector<std::int64_t>& ref_lens) {
    std::int64_t best = ref_lens.front();
    for (std::int64_t len : ref_lens) {
        const std::int64_t d_new = std::abs(len - hyp_len);
        const std::int64_t d_old = std::abs(best - hyp_len);
        if (d_new < d_old || (d_new == d_old && len < best)) best = len;
    }
    return best;
}

double bleu_from_counts(const std::vector<ClippedCounts>& per_order, std::int64_t hyp_len,
                        std::int64_t ref_len, bool smoothing) {
    double log_sum = 0.0;
    const int n = static_cast<int>(per_order.size());
    for (const ClippedCounts& c : per_order) {
        double p;
        if (c.total == 0) {
            return 0.0;  // hypothesis too short to form this order's grams
        } else if (c.clipped == 0) {
            if (!smoothing) return 0.0;
            p = 1.0 / (static_cast<double>(c.total) + 1.0);
        } else {
            p = static_cast<double>(c.clipped) / static_cast<double>(c.total);
        }
        log_sum += std::log(p);
    }
    const double geo_mean = std::exp(log_sum / static_cast<double>(n));
    const double bp =
        hyp_len >= ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return geo_mean * bp;
}

}  // namespace

double bleu_n(const std::string& hypothesis, const std::vector<std::string>& references, int n,
              bool smoothing, bool* warned) {
    if (n < 1 || n > 4) throw Error("bleu_n: n must be in [1,4]");
    if (references.empty()) throw Error("bleu_n: at least one reference required");
    if (warned) *warned = false;

    const std::vector<std::string> hyp = word_tokenize(hypothesis);
    if (hyp.empty()) {
        if (warned) *warned = true;
        return 0.0;
    }
    std::vector<std::vector<std::string>> refs;
    std::vector<std::int64_t> ref_lens;
    for (const std::string& r : references) {
        refs.push_back(word_tokenize(r));
        ref_lens.push_back(static_cast<std::int64_t>(refs.back().size()));
    }

    std::vector<ClippedCounts> per_order;
    for (int k = 1; k <= n; ++k) per_order.push_back(clipped_ngram_counts(hyp, refs, k));
    return bleu_from_counts(per_order, static_cast<std::int64_t>(hyp.size()),
                            closest_ref_length(static_cast<std::int64_t>(hyp.size()), ref_lens),
                            smoothing);
}

PrecisionRecallF1 rouge_n(const std::string& hypothesis, const std::string& reference, int n) {
    if (n != 1 && n != 2) throw Error("rouge_n: n must be 1 or 2");
    const std::vector<std::string> ref = word_tokenize(reference);
    if (ref.empty()) throw Error("rouge_n: empty reference");
    const std::vector<std::string> hyp = word_tokenize(hypothesis);

    const Counts hyp_counts = ngram_counts(hyp, n);
    const Counts ref_counts = ngram_counts(ref, n);
    std::int64_t overlap = 0;
    std::int64_t hyp_total = 0;
    std::int64_t ref_total = 0;
    for (const auto& [gram, count] : hyp_counts) {
        hyp_total += count;
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) overlap += std::min(count, it->second);
    }
    for (const auto& [gram, count] : ref_counts) ref_total += count;

    PrecisionRecallF1 out;
    out.precision = hyp_total > 0 ? static_cast<double>(overlap) / static_cast<double>(hyp_total) : 0.0;
    out.recall = ref_total > 0 ? static_cast<double>(overlap) / static_cast<double>(ref_total) : 0.0;
    out.f1 = harmonic_f1(out.precision, out.recall);
    return out;
}

PrecisionRecallF1 rouge_l(const std::string& hypothesis, const std::string& reference,
                          bool* warned) {
    if (warned) *warned = false;
    const std::vector<std::string> hyp = word_tokenize(hypothesis);
    const std::vector<std::string> ref = word_tokenize(reference);
    if (hyp.empty() && ref.empty()) {
        if (warned) *warned = true;
        return {};
    }
    if (hyp.empty() || ref.empty()) return {};

    const std::size_t n = hyp.size();
    const std::size_t m = ref.size();
    std::vector<std::int64_t> prev(m + 1, 0);
    std::vector<std::int64_t> cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            cur[j] = hyp[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[m]);

    PrecisionRecallF1 out;
    out.precision = lcs / static_cast<double>(n);
    out.recall = lcs / static_cast<double>(m);
    out.f1 = harmonic_f1(out.precision, out.recall);
    return out;
}

std::string stem(const std::string& word) {
    auto ends_with = [&](const char* suffix) {
        const std::size_t len = std::char_traits<char>::length(suffix);
        return word.size() > len && word.compare(word.size() - len, len, suffix) == 0;
    };
    if (ends_with("ing") && word.size() > 5) return word.substr(0, word.size() - 3);
    if (ends_with("ed") && word.size() > 4) return word.substr(0, word.size() - 2);
    if (ends_with("es") && word.size() > 4) return word.substr(0, word.size() - 2);
    if (ends_with("s") && word.size() > 3) return word.substr(0, word.size() - 1);
    return word;
}

double meteor(const std::string& hypothesis, const std::string& reference) {
    const std::vector<std::string> hyp = word_tokenize(hypothesis);
    const std::vector<std::string> ref = word_tokenize(reference);
    if (hyp.empty() || ref.empty()) return 0.0;

    // alignment[i] = matched reference position for hyp token i, or -1.
    std::vector<int> alignment(hyp.size(), -1);
    std::vector<bool> ref_used(ref.size(), false);

    auto align_stage = [&](auto&& equal) {
        for (std::size_t i = 0; i < hyp.size(); ++i) {
            if (alignment[i] >= 0) continue;
            for (std::size_t j = 0; j < ref.size(); ++j) {
                if (!ref_used[j] && equal(hyp[i], ref[j])) {
                    alignment[i] = static_cast<int>(j);
                    ref_used[j] = true;
                    break;
                }
            }
        }
    };
    align_stage([](const std::string& a, const std::string& b) { return a == b; });
    align_stage([](const std::string& a, const std::string& b) { return stem(a) == stem(b); });

    std::int64_t matches = 0;
    std::int64_t chunks = 0;
    int prev_ref = -2;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
        if (alignment[i] < 0) {
            prev_ref = -2;
            continue;
        }
        ++matches;
        if (alignment[i] != prev_ref + 1) ++chunks;
        prev_ref = alignment[i];
    }
    if (matches == 0) return 0.0;

    const double p = static_cast<double>(matches) / static_cast<double>(hyp.size());
    const double r = static_cast<double>(matches) / static_cast<double>(ref.size());
    const double f_mean = 10.0 * p * r / (r + 9.0 * p);
    const double ratio = static_cast<double>(chunks) / static_cast<double>(matches);
    const double penalty = 0.5 * ratio * ratio * ratio;
    return f_mean * (1.0 - penalty);
}

PrecisionRecallF1 embed_score(const std::string& hypothesis, const std::string& reference,
                              const Embedder& embedder) {
    const std::vector<std::string> hyp = word_tokenize(hypothesis);
    const std::vector<std::string> ref = word_tokenize(reference);
    if (hyp.empty() || ref.empty()) throw Error("embed_score: empty hypothesis or reference");

    auto window_embeddings = [&](const std::vector<std::string>& tokens) {
        std::vector<std::vector<double>> out;
        out.reserve(tokens.size());
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            std::string window;
            const std::size_t lo = i > 0 ? i - 1 : 0;
            const std::size_t hi = std::min(tokens.size() - 1, i + 1);
            for (std::size_t j = lo; j <= hi; ++j) {
                if (!window.empty()) window += ' ';
                window += tokens[j];
            }
            out.push_back(embedder.embed(window));
        }
        return out;
    };

    const auto hyp_vecs = window_embeddings(hyp);
    const auto ref_vecs = window_embeddings(ref);

    auto greedy_mean = [](const std::vector<std::vector<double>>& from,
                          const std::vector<std::vector<double>>& to) {
        double total = 0.0;
        for (const auto& f : from) {
            double best = -1.0;
            for (const auto& t : to) best = std::max(best, cosine(f, t));
            total += best;
        }
        return total / static_cast<double>(from.size());
    };

    PrecisionRecallF1 out;
    out.precision = greedy_mean(hyp_vecs, ref_vecs);
    out.recall = greedy_mean(ref_vecs, hyp_vecs);
    out.f1 = harmonic_f1(out.precision, out.recall);
    return out;
}

MetricReport aggregate(const std::vector<SamplePair>& pairs, const Embedder& embedder,
                       bool pooled_bleu) {
    if (pairs.empty()) throw Error("aggregate: no sample pairs");

    MetricReport report;
    report.sample_count = static_cast<std::int64_t>(pairs.size());

    // Pooled BLEU counts (per order) across the corpus.
    std::vector<ClippedCounts> pooled(4);
    std::int64_t pooled_hyp_len = 0;
    std::int64_t pooled_ref_len = 0;

    double sum_r1 = 0.0, sum_r2 = 0.0, sum_rl = 0.0, sum_ms = 0.0;
    double sum_bsp = 0.0, sum_bsr = 0.0;
    double sum_b[4] = {0.0, 0.0, 0.0, 0.0};
    std::int64_t polite_count = 0;
    std::int64_t polite_total = 0;

    for (const SamplePair& pair : pairs) {
        if (pair.references.empty()) throw Error("aggregate: sample without references");
        const std::string& ref0 = pair.references.front();

        sum_r1 += rouge_n(pair.hypothesis, ref0, 1).f1;
        sum_r2 += rouge_n(pair.hypothesis, ref0, 2).f1;
        sum_rl += rouge_l(pair.hypothesis, ref0).f1;
        sum_ms += meteor(pair.hypothesis, ref0);
        const PrecisionRecallF1 es = word_tokenize(pair.hypothesis).empty()
                                         ? PrecisionRecallF1{}
                                         : embed_score(pair.hypothesis, ref0, embedder);
        sum_bsp += es.precision;
        sum_bsr += es.recall;

        const std::vector<std::string> hyp = word_tokenize(pair.hypothesis);
        std::vector<std::vector<std::string>> refs;
        std::vector<std::int64_t> ref_lens;
        for (const std::string& r : pair.references) {
            refs.push_back(word_tokenize(r));
            ref_lens.push_back(static_cast<std::int64_t>(refs.back().size()));
        }
        if (!hyp.empty()) {
            pooled_hyp_len += static_cast<std::int64_t>(hyp.size());
            pooled_ref_len += closest_ref_length(static_cast<std::int64_t>(hyp.size()), ref_lens);
            for (int k = 1; k <= 4; ++k) {
                const ClippedCounts c = clipped_ngram_counts(hyp, refs, k);
                pooled[static_cast<std::size_t>(k - 1)].clipped += c.clipped;
                pooled[static_cast<std::size_t>(k - 1)].total += c.total;
            }
        } else {
            // An empty hypothesis still counts its reference length so the
            // brevity penalty reflects it.
            pooled_ref_len += closest_ref_length(0, ref_lens);
        }
        for (int k = 1; k <= 4; ++k) {
            sum_b[k - 1] += bleu_n(pair.hypothesis, pair.references, k);
        }

        if (pair.polite.has_value()) {
            ++polite_total;
            if (*pair.polite) ++polite_count;
        }
    }

    const double n = static_cast<double>(pairs.size());
    report.r1 = 100.0 * sum_r1 / n;
    report.r2 = 100.0 * sum_r2 / n;
    report.rl = 100.0 * sum_rl / n;
    report.meteor = 100.0 * sum_ms / n;
    report.bsp = 100.0 * sum_bsp / n;
    report.bsr = 100.0 * sum_bsr / n;
    report.bsf1 = harmonic_f1(report.bsp, report.bsr);

    if (pooled_bleu) {
        for (int k = 1; k <= 4; ++k) {
            std::vector<ClippedCounts> orders(pooled.begin(), pooled.begin() + k);
            const double score =
                pooled_hyp_len == 0
                    ? 0.0
                    : bleu_from_counts(orders, pooled_hyp_len, pooled_ref_len, true);
            (k == 1 ? report.b1 : k == 2 ? report.b2 : k == 3 ? report.b3 : report.b4) =
                100.0 * score;
        }
    } else {
        report.b1 = 100.0 * sum_b[0] / n;
        report.b2 = 100.0 * sum_b[1] / n;
        report.b3 = 100.0 * sum_b[2] / n;
        report.b4 = 100.0 * sum_b[3] / n;
    }

    if (polite_total > 0) {
        report.politeness_available = true;
        report.politeness = 100.0 * static_cast<double>(polite_count) / static_cast<double>(polite_total);
    }
    return report;
}

std::string report_to_json(const MetricReport& report) {
    json obj{
        {"r1", report.r1},     {"r2", report.r2},           {"rl", report.rl},
        {"b1", report.b1},     {"b2", report.b2},           {"b3", report.b3},
        {"b4", report.b4},     {"bsp", report.bsp},         {"bsr", report.bsr},
        {"bsf1", report.bsf1}, {"meteor", report.meteor},   {"sample_count", report.sample_count},
    };
    if (report.politeness_available) {
        obj["politeness"] = report.politeness;
    } else {
        obj["politeness"] = nullptr;
    }
    return obj.dump();
}

MetricReport report_from_json(const std::string& text) {
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(std::string("metric report: parse error: ") + e.what());
    }
    MetricReport report;
    report.r1 = obj.at("r1").get<double>();
    report.r2 = obj.at("r2").get<double>();
    report.rl = obj.at("rl").get<double>();
    report.b1 = obj.at("b1").get<double>();
    report.b2 = obj.at("b2").get<double>();
    report.b3 = obj.at("b3").get<double>();
    report.b4 = obj.at("b4").get<double>();
    report.bsp = obj.at("bsp").get<double>();
    report.bsr = obj.at("bsr").get<double>();
    report.bsf1 = obj.at("bsf1").get<double>();
    report.meteor = obj.at("meteor").get<double>();
    report.sample_count = obj.at("sample_count").get<std::int64_t>();
    if (!obj.at("politeness").is_null()) {
        report.politeness = obj.at("politeness").get<double>();
        report.politeness_available = true;
    }
    return report;
}

}  // namespace finchat
