#include "finchat/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace finchat {

using nlohmann::json;

namespace {

// Prompt for turn `t` of a dialogue: prior turns (oldest truncated first to
// fit the context budget) prepended to the current query, fused with the
// facts retrieved for the current query alone.
std::optional<SftExample> build_turn_example(const DialogueRecord& record, std::size_t t,
                                             const KnowledgeIndex& index, PromptSetting setting,
                                             const ModelConfig& model_config,
                                             const Tokenizer& tokenizer, int retrieval_k,
                                             FusionMode mode) {
    const Embedder& embedder = index.embedder;
    std::vector<VerbalizedFact> facts;
    if (setting == PromptSetting::Context) {
        facts = retrieve(index, embedder, record.turns[t].user, retrieval_k);
    }

    const std::string target = record.turns[t].bot;
    // One slot is reserved for the <eos> the completion carries.
    const int target_tokens = static_cast<int>(tokenizer.encode(target).size()) + 1;

    for (std::size_t oldest = 0; oldest <= t; ++oldest) {
        std::string query;
        for (std::size_t h = oldest; h < t; ++h) {
            query += record.turns[h].user;
            query += ' ';
            query += record.turns[h].bot;
            query += ' ';
        }
        query += record.turns[t].user;

        AugmentedPrompt prompt = fuse(query, facts, mode);
        const int prompt_tokens = static_cast<int>(tokenizer.encode(prompt.text).size());
        if (prompt_tokens + target_tokens <= model_config.context_length) {
            SftExample example;
            example.prompt = std::move(prompt.text);
            example.target = target;
            example.mode = mode;
            if (mode == FusionMode::EmbeddingPrefix) example.fact_embedding = std::move(prompt.fact_embedding);
            return example;
        }
    }
    return std::nullopt;  // single turn alone exceeds the context budget
}

CeBatchItem encode_example(const SftExample& example, const Tokenizer& tokenizer) {
    CeBatchItem item;
    item.prompt = tokenizer.encode(example.prompt);
    item.completion = tokenizer.encode(example.target);
    item.completion.push_back(Tokenizer::kEos);
    item.fact_embedding = example.fact_embedding;
    return item;
}

}  // namespace

std::vector<SftExample> build_sft_examples(const std::vector<DialogueRecord>& records,
                                           const KnowledgeIndex& index, PromptSetting setting,
                                           const ModelConfig& model_config,
                                           const Tokenizer& tokenizer, int retrieval_k,
                                           FusionMode mode) {
    std::vector<SftExample> examples;
    for (const DialogueRecord& record : records) {
        for (std::size_t t = 0; t < record.turns.size(); ++t) {
            auto example = build_turn_example(record, t, index, setting, model_config, tokenizer,
                                              retrieval_k, mode);
            if (example) examples.push_back(std::move(*example));
        }
    }
    return examples;
}

ModelCheckpoint train_sft(const std::vector<SftExample>& examples, const ModelConfig& config,
                          const Tokenizer& tokenizer, const TrainConfig& train) {
    if (examples.empty()) throw Error("train_sft: no examples");
    if (config.vocab_size != tokenizer.vocab_size()) {
        throw Error("train_sft: config vocab_size does not match tokenizer");
    }
    if (train.batch_size < 1 || train.epochs < 0) throw Error("train_sft: invalid config");

    std::vector<CeBatchItem> items;
    items.reserve(examples.size());
    for (const SftExample& example : examples) items.push_back(encode_example(example, tokenizer));

    ParamStore params = init_parameters(config, train.seed);
    AdamState adam = make_adam_state(params);
    Rng shuffle_rng = make_rng(train.seed, "train-shuffle");

    TrainingMeta meta;
    meta.seed = train.seed;
    meta.stage = "sft";

    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < train.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng_below(shuffle_rng, i)]);
        }
        double epoch_loss = 0.0;
        std::int64_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train.batch_size));
            std::vector<CeBatchItem> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(items[order[i]]);
            LossAndGrads step = loss_ce_with_grads(config, params, batch);
            if (!std::isfinite(step.value)) throw Error("train_sft: loss diverged (non-finite)");
            adam_step(params, step.grads, adam, train.lr, train.weight_decay);
            epoch_loss += step.value;
            ++batches;
            ++meta.steps;
        }
        meta.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
    }

    ModelCheckpoint checkpoint;
    checkpoint.config = config;
    checkpoint.params = std::move(params);
    checkpoint.tokenizer = tokenizer;
    checkpoint.meta = std::move(meta);
    return checkpoint;
}

// ---------------------------------------------------------------------------
// Preference construction
// ---------------------------------------------------------------------------

const std::vector<std::string>& impolite_prefix_menu() {
    static const std::vector<std::string> menu = {
        "okay ! let me spoon-feed you .",
        "that is a silly question .",
        "stop wasting my time with this .",
        "obviously you never read the basics .",
    };
    return menu;
}

namespace {

std::string negate_factual_clause(const std::string& text) {
    for (const auto& [from, to] : {std::pair<const char*, const char*>{" is used for ", " is not used for "},
                                   {" is related to ", " is not related to "}}) {
        const std::size_t pos = text.find(from);
        if (pos != std::string::npos) {
            std::string out = text;
            out.replace(pos, std::char_traits<char>::length(from), to);
            return out;
        }
    }
    const std::size_t pos = text.find(" is ");
    if (pos != std::string::npos) {
        std::string out = text;
        out.replace(pos, 4, " is not ");
        return out;
    }
    return "no , that is wrong . " + text;
}

}  // namespace

std::vector<PreferenceRecord> build_preference_set(const std::vector<DialogueRecord>& records,
                                                   const ModelCheckpoint& policy,
                                                   const KnowledgeIndex& index,
                                                   PromptSetting setting, std::uint64_t seed,
                                                   int retrieval_k) {
    // Two substreams: the mode stream draws exactly one value per preference
    // record (so counts can be re-derived independently), the detail stream
    // covers menu picks and off-policy sampling.
    Rng mode_rng = make_rng(seed, "corruption");
    Rng detail_rng = make_rng(seed, "corruption-detail");

    const auto& menu = impolite_prefix_menu();
    SamplerConfig sampler;
    sampler.max_target_length = 40;

    std::vector<PreferenceRecord> prefs;
    for (const DialogueRecord& record : records) {
        if (record.politeness != PolitenessLabel::Polite) continue;
        for (std::size_t t = 0; t < record.turns.size(); ++t) {
            auto example = build_turn_example(record, t, index, setting, policy.config,
                                              policy.tokenizer, retrieval_k, FusionMode::Textual);
            if (!example) continue;

            PreferenceRecord pref;
            pref.prompt = example->prompt;
            pref.y_plus = example->target;
            pref.gold = example->target;
            pref.corruption_mode = static_cast<int>(rng_below(mode_rng, 3));

            switch (pref.corruption_mode) {
                case 0: {
                    pref.y_minus = menu[rng_below(detail_rng, menu.size())] + " " + pref.gold;
                    break;
                }
                case 1: {
                    const std::vector<int> prompt_ids = policy.tokenizer.encode(pref.prompt);
                    std::vector<int> generated;
                    if (static_cast<int>(prompt_ids.size()) < policy.config.context_length) {
                        generated = sample(policy.config, policy.params, prompt_ids, sampler, detail_rng);
                    }
                    std::string text = policy.tokenizer.decode(generated);
                    if (trim(text).empty() || text == pref.gold) {
                        text = menu[rng_below(detail_rng, menu.size())] + " " + pref.gold;
                    }
                    pref.y_minus = std::move(text);
                    break;
                }
                default: {
                    pref.y_minus = negate_factual_clause(pref.gold);
                    break;
                }
            }
            prefs.push_back(std::move(pref));
        }
    }
    return prefs;
}

// ---------------------------------------------------------------------------
// DPO loss
// ---------------------------------------------------------------------------

double dpo_loss_from_logprobs(const std::vector<std::pair<double, double>>& logprob_pairs,
                              double beta) {
    if (logprob_pairs.empty()) throw Error("dpo_loss: empty batch");
    if (beta < 0.0) throw Error("dpo_loss: beta must be non-negative");
    double total = 0.0;
    for (const auto& [lp_plus, lp_minus] : logprob_pairs) {
        const double margin = beta * (lp_plus - lp_minus);
        // -log sigmoid(m) == softplus(-m), computed stably.
        const double x = -margin;
        total += x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
    return total / static_cast<double>(logprob_pairs.size());
}

namespace {

struct EncodedPreference {
    std::vector<int> prompt;
    std::vector<int> plus;
    std::vector<int> minus;
};

EncodedPreference encode_preference(const PreferenceRecord& record, const Tokenizer& tokenizer) {
    EncodedPreference enc;
    enc.prompt = tokenizer.encode(record.prompt);
    enc.plus = tokenizer.encode(record.y_plus);
    enc.plus.push_back(Tokenizer::kEos);
    enc.minus = tokenizer.encode(record.y_minus);
    enc.minus.push_back(Tokenizer::kEos);
    return enc;
}

Var dpo_loss_node(Tape& tape, const BoundParams& bound, const ModelConfig& config,
                  const ParamStore* reference, const std::vector<PreferenceRecord>& batch,
                  double beta, const Tokenizer& tokenizer) {
    if (batch.empty()) throw Error("dpo_loss: empty batch");
    Var total{};
    for (const PreferenceRecord& record : batch) {
        const EncodedPreference enc = encode_preference(record, tokenizer);
        const Var lp_plus = log_prob_node(tape, bound, config, enc.prompt, enc.plus);
        const Var lp_minus = log_prob_node(tape, bound, config, enc.prompt, enc.minus);
        Var diff = tape.sub(lp_plus, lp_minus);
        if (reference != nullptr) {
            const double ref_plus = log_prob(config, *reference, enc.prompt, enc.plus);
            const double ref_minus = log_prob(config, *reference, enc.prompt, enc.minus);
            Mat ref_diff(1, 1);
            ref_diff(0, 0) = ref_plus - ref_minus;
            diff = tape.sub(diff, tape.constant(std::move(ref_diff)));
        }
        const Var neg_margin = tape.mul_scalar(diff, -beta);
        const Var loss_i = tape.softplus(neg_margin);
        total = total.valid() ? tape.add(total, loss_i) : loss_i;
    }
    return tape.mul_scalar(total, 1.0 / static_cast<double>(batch.size()));
}

}  // namespace

double dpo_loss(const ModelConfig& config, const ParamStore& policy, const ParamStore* reference,
                const std::vector<PreferenceRecord>& batch, double beta,
                const Tokenizer& tokenizer) {
    Tape tape;
    const BoundParams bound = bind_params(tape, policy, /*needs_grad=*/false);
    return tape.value(dpo_loss_node(tape, bound, config, reference, batch, beta, tokenizer))(0, 0);
}

LossAndGrads dpo_loss_with_grads(const ModelConfig& config, const ParamStore& policy,
                                 const ParamStore* reference,
                                 const std::vector<PreferenceRecord>& batch, double beta,
                                 const Tokenizer& tokenizer) {
    Tape tape;
    const BoundParams bound = bind_params(tape, policy, /*needs_grad=*/true);
    const Var loss = dpo_loss_node(tape, bound, config, reference, batch, beta, tokenizer);
    tape.backward(loss);
    LossAndGrads result;
    result.value = tape.value(loss)(0, 0);
    result.grads = collect_grads(tape, bound, policy);
    return result;
}

double mean_margin(const ModelConfig& config, const ParamStore& params,
                   const std::vector<PreferenceRecord>& records, double beta,
                   const Tokenizer& tokenizer) {
    if (records.empty()) throw Error("mean_margin: empty preference set");
    double total = 0.0;
    for (const PreferenceRecord& record : records) {
        const EncodedPreference enc = encode_preference(record, tokenizer);
        total += beta * (log_prob(config, params, enc.prompt, enc.plus) -
                         log_prob(config, params, enc.prompt, enc.minus));
    }
    return total / static_cast<double>(records.size());
}

double ranking_accuracy(const ModelConfig& config, const ParamStore& params,
                        const std::vector<PreferenceRecord>& records, const Tokenizer& tokenizer) {
    if (records.empty()) throw Error("ranking_accuracy: empty preference set");
    std::int64_t correct = 0;
    for (const PreferenceRecord& record : records) {
        const EncodedPreference enc = encode_preference(record, tokenizer);
        if (log_prob(config, params, enc.prompt, enc.plus) >
            log_prob(config, params, enc.prompt, enc.minus)) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

ModelCheckpoint train_dpo(const ModelCheckpoint& checkpoint,
                          const std::vector<PreferenceRecord>& preference_set,
                          const DpoConfig& config) {
    if (preference_set.empty()) throw Error("train_dpo: empty preference set");
    if (config.beta <= 0.0) throw Error("train_dpo: beta must be positive");
    if (config.batch_size < 1 || config.epochs < 0) throw Error("train_dpo: invalid config");
    for (const PreferenceRecord& record : preference_set) {
        if (record.y_plus == record.y_minus) throw Error("train_dpo: y_plus equals y_minus");
        if (record.y_plus.empty() || record.y_minus.empty() || record.prompt.empty()) {
            throw Error("train_dpo: empty preference field");
        }
    }

    ModelCheckpoint result;
    result.config = checkpoint.config;
    result.tokenizer = checkpoint.tokenizer;
    result.params = checkpoint.params;

    const ParamStore* reference = config.use_reference ? &checkpoint.params : nullptr;

    AdamState adam = make_adam_state(result.params);
    Rng shuffle_rng = make_rng(config.seed, "train-shuffle-dpo");

    TrainingMeta meta;
    meta.seed = config.seed;
    meta.stage = "dpo";
    meta.steps = checkpoint.meta.steps;

    std::vector<std::size_t> order(preference_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng_below(shuffle_rng, i)]);
        }
        double epoch_loss = 0.0;
        std::int64_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<PreferenceRecord> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(preference_set[order[i]]);
            LossAndGrads step = dpo_loss_with_grads(result.config, result.params, reference, batch,
                                                    config.beta, result.tokenizer);
            if (!std::isfinite(step.value)) throw Error("train_dpo: loss diverged (non-finite)");
            adam_step(result.params, step.grads, adam, config.lr, config.weight_decay);
            epoch_loss += step.value;
            ++batches;
            ++meta.steps;
        }
        meta.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
        meta.epoch_margins.push_back(mean_margin(result.config, result.params, preference_set,
                                                 config.beta, result.tokenizer));
    }

    result.meta = std::move(meta);
    return result;
}

// ---------------------------------------------------------------------------
// Preference persistence
// ---------------------------------------------------------------------------

void save_preferences(const std::vector<PreferenceRecord>& records, const std::string& path) {
    std::ostringstream out;
    for (const PreferenceRecord& record : records) {
        out << json{{"prompt", record.prompt},
                    {"y_plus", record.y_plus},
                    {"y_minus", record.y_minus},
                    {"gold", record.gold},
                    {"corruption_mode", record.corruption_mode}}
                   .dump()
            << '\n';
    }
    write_file(path, out.str());
}

std::vector<PreferenceRecord> load_preferences(const std::string& path) {
    std::vector<PreferenceRecord> records;
    int line_no = 0;
    for (const std::string& line : read_lines(path)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(path + ":" + std::to_string(line_no) + ": parse error: " + e.what());
        }
        static const std::set<std::string> keys = {"prompt", "y_plus", "y_minus", "gold",
                                                   "corruption_mode"};
        for (const auto& item : obj.items()) {
            if (!keys.count(item.key())) {
                throw Error(path + ":" + std::to_string(line_no) + ": unknown field '" +
                            item.key() + "'");
            }
        }
        PreferenceRecord record;
        record.prompt = obj.at("prompt").get<std::string>();
        record.y_plus = obj.at("y_plus").get<std::string>();
        record.y_minus = obj.at("y_minus").get<std::string>();
        record.gold = obj.at("gold").get<std::string>();
        record.corruption_mode = obj.at("corruption_mode").get<int>();
        if (record.y_plus == record.y_minus) {
            throw Error(path + ":" + std::to_string(line_no) + ": y_plus equals y_minus");
        }
        records.push_back(std::move(record));
    }
    return records;
}

}  // namespace finchat
