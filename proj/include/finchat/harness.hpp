#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "finchat/corpus.hpp"
#include "finchat/knowledge.hpp"
#include "finchat/metrics.hpp"
#include "finchat/politeness.hpp"
#include "finchat/training.hpp"

namespace finchat {

enum class AblationSetting { WC, Context, DPO_WC, DPO_Context };
constexpr int kSettingCount = 4;

const char* to_string(AblationSetting setting);   // "wc" | "context" | ...
const char* display_name(AblationSetting setting);  // "WC" | "Context" | "DPO+WC" | "DPO+Context"
AblationSetting parse_setting(const std::string& text);

struct AblationBudget {
    ModelConfig model;  // vocab_size is filled in from the shared tokenizer
    TrainConfig sft;
    DpoConfig dpo;
    SamplerConfig sampler;
    int retrieval_k = 3;
    int classifier_epochs = 6;
};

struct SampleRecord {
    std::string prompt;
    std::string gold;
    std::string generated;
    double rouge_l = 0.0;  // pre-scaling per-sample F1
    double bleu1 = 0.0;
    double meteor = 0.0;
    bool polite = false;
};

struct AblationResult {
    AblationSetting setting = AblationSetting::WC;
    MetricReport report;
    std::string checkpoint_path;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    // Measured, never serialized: repeated runs must produce bit-identical
    // artifacts.
    double wall_clock_seconds = 0.0;
    std::vector<SampleRecord> samples;
};

struct SettingOutcome {
    AblationResult result;
    ModelCheckpoint checkpoint;
};

// One tokenizer for all four settings, built from the Context-style train
// examples (whose prompts and targets cover queries, gold responses, fact
// text and the fusion markers).
Tokenizer shared_tokenizer(const CorpusSplit& split, const KnowledgeIndex& index,
                           const AblationBudget& budget);

// Trains (or, for DPO settings, preference-tunes `sft_base`) and evaluates
// one setting on the test split: generation with the shared sampler config,
// metrics against gold responses, politeness via `classifier`.
SettingOutcome run_setting(const CorpusSplit& split, const KnowledgeIndex& index,
                           AblationSetting setting, std::uint64_t seed,
                           const AblationBudget& budget, const Tokenizer& tokenizer,
                           const PolitenessClassifier& classifier,
                           const ModelCheckpoint* sft_base = nullptr);

struct AblationRun {
    std::vector<AblationResult> results;  // WC, Context, DPO_WC, DPO_Context
    PolitenessClassifier classifier;
};

// Full four-setting pipeline. DPO settings consume the checkpoint of their
// SFT counterpart, never a fresh SFT. When `outdir` is non-empty, writes one
// result record, scorecard file and checkpoint per setting plus the rendered
// table. Asserts the controlled-experiment invariant (equal config hashes).
AblationRun run_ablation(const CorpusSplit& split, const KnowledgeIndex& index, std::uint64_t seed,
                         const AblationBudget& budget, const std::string& outdir = "");

// Table-ordered rendering (R1 R2 RL B1 B2 B3 B4 BSP BSR BSF1 P MS) with the
// per-column maximum emphasized (ANSI bold, or *stars* when color is off).
// Requires exactly one result per setting.
std::string ablation_table(const std::vector<AblationResult>& results, bool use_color = true);

std::string result_to_json(const AblationResult& result);
AblationResult result_from_json(const std::string& text);

// Per-sample scorecards for offline human rating: prompt, gold, generated,
// per-sample metrics, and empty (null) 1-5 rating slots for fluency,
// adequacy, consistency, financial term retention and readability.
void export_scorecards(const AblationResult& result, const std::string& path);

struct ScorecardSummary {
    std::int64_t total = 0;
    // criterion -> (mean over filled ratings, number filled)
    std::vector<std::pair<std::string, std::pair<double, std::int64_t>>> criteria;
};
ScorecardSummary ingest_scorecards(const std::string& path);

}  // namespace finchat
