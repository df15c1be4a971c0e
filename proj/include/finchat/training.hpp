#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "finchat/corpus.hpp"
#include "finchat/knowledge.hpp"
#include "finchat/tinylm.hpp"

namespace finchat {

enum class PromptSetting { WC, Context };

struct SftExample {
    std::string prompt;  // fused (Context) or bare-query (WC) prompt text
    std::string target;  // gold bot response
    FusionMode mode = FusionMode::Textual;
    std::vector<double> fact_embedding;  // EmbeddingPrefix mode only
};

// (prompt, preferred, rejected, chosen) tuple consumed by the DPO loss.
struct PreferenceRecord {
    std::string prompt;
    std::string y_plus;
    std::string y_minus;
    std::string gold;
    int corruption_mode = -1;  // 0 = impolite prefix, 1 = off-policy, 2 = negation
};

struct DpoConfig {
    double beta = 0.1;
    bool use_reference = false;
    int epochs = 2;
    int batch_size = 8;
    double lr = 1e-3;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
};

struct TrainConfig {
    int epochs = 3;
    int batch_size = 8;
    double lr = 1e-3;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    int max_vocab = 8192;
};

// One example per turn. Context fuses facts retrieved for the current query
// via knowledge.fuse; WC uses an empty knowledge segment. Earlier turns of
// the dialogue are prepended to the query, truncated oldest-first to fit the
// context budget.
std::vector<SftExample> build_sft_examples(const std::vector<DialogueRecord>& records,
                                           const KnowledgeIndex& index, PromptSetting setting,
                                           const ModelConfig& model_config,
                                           const Tokenizer& tokenizer, int retrieval_k = 3,
                                           FusionMode mode = FusionMode::Textual);

// Teacher-forced cross-entropy training from a fresh initialization.
// Deterministic per seed; throws if the loss goes non-finite.
ModelCheckpoint train_sft(const std::vector<SftExample>& examples, const ModelConfig& config,
                          const Tokenizer& tokenizer, const TrainConfig& train);

// Preference pairs from Polite-labelled dialogues: y_plus = gold = annotated
// response, y_minus drawn from the seeded corruption menu (impolite prefix /
// off-policy continuation sampled from `policy` / negated factual clause).
std::vector<PreferenceRecord> build_preference_set(const std::vector<DialogueRecord>& records,
                                                   const ModelCheckpoint& policy,
                                                   const KnowledgeIndex& index,
                                                   PromptSetting setting, std::uint64_t seed,
                                                   int retrieval_k = 3);

// The impolite preamble menu used by corruption mode 0.
const std::vector<std::string>& impolite_prefix_menu();

// -log sigmoid(margin) averaged over the batch, where margin =
// beta * (log P(y+|x) - log P(y-|x)); with a reference policy the two
// log-probabilities become log-ratios against it.
double dpo_loss(const ModelConfig& config, const ParamStore& policy,
                const ParamStore* reference, const std::vector<PreferenceRecord>& batch,
                double beta, const Tokenizer& tokenizer);
LossAndGrads dpo_loss_with_grads(const ModelConfig& config, const ParamStore& policy,
                                 const ParamStore* reference,
                                 const std::vector<PreferenceRecord>& batch, double beta,
                                 const Tokenizer& tokenizer);

// Closed-form layer over precomputed log-probabilities (one entry per
// preference pair): mean softplus(-beta * (lp_plus - lp_minus)).
double dpo_loss_from_logprobs(const std::vector<std::pair<double, double>>& logprob_pairs,
                              double beta);

// Mean margin beta * (log P(y+) - log P(y-)) over a preference set.
double mean_margin(const ModelConfig& config, const ParamStore& params,
                   const std::vector<PreferenceRecord>& records, double beta,
                   const Tokenizer& tokenizer);
// Fraction of records with log P(y+|x) > log P(y-|x).
double ranking_accuracy(const ModelConfig& config, const ParamStore& params,
                        const std::vector<PreferenceRecord>& records, const Tokenizer& tokenizer);

// DPO stage on top of an SFT checkpoint. Logs the mean margin per epoch in
// the returned checkpoint's metadata; deterministic per seed.
ModelCheckpoint train_dpo(const ModelCheckpoint& checkpoint,
                          const std::vector<PreferenceRecord>& preference_set,
                          const DpoConfig& config);

// Preference-set persistence: line records with fields prompt, y_plus,
// y_minus, gold, corruption_mode.
void save_preferences(const std::vector<PreferenceRecord>& records, const std::string& path);
std::vector<PreferenceRecord> load_preferences(const std::string& path);

}  // namespace finchat
