#include "finchat/harness.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace finchat {

using nlohmann::json;

namespace {

const char* const kSettingNames[kSettingCount] = {"wc", "context", "dpo_wc", "dpo_context"};
const char* const kSettingDisplay[kSettingCount] = {"WC", "Context", "DPO+WC", "DPO+Context"};

const char* const kScorecardCriteria[5] = {
    "fluency", "adequacy", "consistency", "financial_term_retention", "readability",
};

}  // namespace

const char* to_string(AblationSetting setting) { return kSettingNames[static_cast<int>(setting)]; }
const char* display_name(AblationSetting setting) {
    return kSettingDisplay[static_cast<int>(setting)];
}

AblationSetting parse_setting(const std::string& text) {
    for (int i = 0; i < kSettingCount; ++i) {
        if (text == kSettingNames[i]) return static_cast<AblationSetting>(i);
    }
    throw Error("unknown ablation setting: '" + text + "'");
}

namespace {

PromptSetting prompt_setting_of(AblationSetting setting) {
    return (setting == AblationSetting::Context || setting == AblationSetting::DPO_Context)
               ? PromptSetting::Context
               : PromptSetting::WC;
}

bool is_dpo(AblationSetting setting) {
    return setting == AblationSetting::DPO_WC || setting == AblationSetting::DPO_Context;
}

std::uint64_t compute_config_hash(const CorpusSplit& split, const AblationBudget& budget,
                                  const Tokenizer& tokenizer, std::uint64_t seed) {
    json desc{
        {"seed", seed},
        {"model",
         json{{"d_model", budget.model.d_model},
              {"n_layers", budget.model.n_layers},
              {"n_heads", budget.model.n_heads},
              {"d_ff", budget.model.d_ff},
              {"context_length", budget.model.context_length},
              {"n_prefix", budget.model.n_prefix},
              {"knowledge_dim", budget.model.knowledge_dim}}},
        {"sampler",
         json{{"temperature", budget.sampler.temperature},
              {"top_k", budget.sampler.top_k},
              {"max_target_length", budget.sampler.max_target_length},
              {"do_sample", budget.sampler.do_sample}}},
        {"retrieval_k", budget.retrieval_k},
        {"vocab_size", tokenizer.vocab_size()},
    };
    json test_ids = json::array();
    for (const DialogueRecord& record : split.test) test_ids.push_back(record.id);
    desc["test_ids"] = test_ids;
    return fnv1a64(desc.dump());
}

}  // namespace

Tokenizer shared_tokenizer(const CorpusSplit& split, const KnowledgeIndex& index,
                           const AblationBudget& budget) {
    ModelConfig probe = budget.model;
    probe.vocab_size = Tokenizer::kReservedCount;  // satisfies validate() during probing
    Tokenizer empty_vocab;
    const auto examples = build_sft_examples(split.train, index, PromptSetting::Context, probe,
                                             empty_vocab, budget.retrieval_k);
    std::vector<std::string> texts;
    texts.reserve(examples.size() * 2);
    for (const SftExample& example : examples) {
        texts.push_back(example.prompt);
        texts.push_back(example.target);
    }
    return Tokenizer::build(texts, budget.sft.max_vocab);
}

SettingOutcome run_setting(const CorpusSplit& split, const KnowledgeIndex& index,
                           AblationSetting setting, std::uint64_t seed,
                           const AblationBudget& budget, const Tokenizer& tokenizer,
                           const PolitenessClassifier& classifier,
                           const ModelCheckpoint* sft_base) {
    const auto t0 = std::chrono::steady_clock::now();

    ModelConfig config = budget.model;
    config.vocab_size = tokenizer.vocab_size();
    config.validate();
    const PromptSetting prompts = prompt_setting_of(setting);

    ModelCheckpoint checkpoint;
    if (is_dpo(setting)) {
        if (sft_base == nullptr) {
            throw Error(std::string("run_setting: ") + to_string(setting) +
                        " requires the checkpoint of its SFT counterpart");
        }
        const auto prefs = build_preference_set(split.train, *sft_base, index, prompts, seed,
                                                budget.retrieval_k);
        DpoConfig dpo = budget.dpo;
        dpo.seed = seed;
        checkpoint = train_dpo(*sft_base, prefs, dpo);
    } else {
        const auto examples =
            build_sft_examples(split.train, index, prompts, config, tokenizer, budget.retrieval_k);
        TrainConfig sft = budget.sft;
        sft.seed = seed;
        checkpoint = train_sft(examples, config, tokenizer, sft);
    }

    // Evaluation over the test split: identical prompts, sampler and stream
    // across settings; only the training recipe above differs.
    const auto test_examples =
        build_sft_examples(split.test, index, prompts, config, tokenizer, budget.retrieval_k);
    Rng eval_rng = make_rng(seed, "eval-sampling");

    AblationResult result;
    result.setting = setting;
    result.seed = seed;
    result.config_hash = compute_config_hash(split, budget, tokenizer, seed);

    std::vector<SamplePair> pairs;
    pairs.reserve(test_examples.size());
    for (const SftExample& example : test_examples) {
        const std::vector<int> prompt_ids = tokenizer.encode(example.prompt);
        const std::vector<int> generated_ids =
            sample(config, checkpoint.params, prompt_ids, budget.sampler, eval_rng);
        const std::string generated = tokenizer.decode(generated_ids);

        SampleRecord sample_record;
        sample_record.prompt = example.prompt;
        sample_record.gold = example.target;
        sample_record.generated = generated;
        sample_record.rouge_l = rouge_l(generated, example.target).f1;
        sample_record.bleu1 = bleu_n(generated, {example.target}, 1);
        sample_record.meteor = meteor(generated, example.target);
        sample_record.polite = classify(classifier, generated).label == PolitenessLabel::Polite;
        result.samples.push_back(std::move(sample_record));

        SamplePair pair;
        pair.hypothesis = generated;
        pair.references = {example.target};
        pair.polite = result.samples.back().polite;
        pairs.push_back(std::move(pair));
    }
    result.report = aggregate(pairs, index.embedder);

    result.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    SettingOutcome outcome;
    outcome.result = std::move(result);
    outcome.checkpoint = std::move(checkpoint);
    return outcome;
}

AblationRun run_ablation(const CorpusSplit& split, const KnowledgeIndex& index, std::uint64_t seed,
                         const AblationBudget& budget, const std::string& outdir) {
    if (split.train.empty() || split.test.empty()) {
        throw Error("run_ablation: train and test splits must be non-empty");
    }

    const Tokenizer tokenizer = shared_tokenizer(split, index, budget);

    TrainConfig classifier_train;
    classifier_train.epochs = budget.classifier_epochs;
    classifier_train.lr = 3e-3;
    classifier_train.seed = substream_seed(seed, "politeness");
    AblationRun run;
    run.classifier =
        train_classifier(labeled_utterances(split.train), ClassifierConfig{}, classifier_train);

    const bool save_artifacts = !outdir.empty();
    if (save_artifacts) std::filesystem::create_directories(outdir);

    auto finish_setting = [&](SettingOutcome& outcome) {
        if (save_artifacts) {
            const std::string base =
                (std::filesystem::path(outdir) / to_string(outcome.result.setting)).string();
            save_checkpoint(outcome.checkpoint, base + ".ckpt.json");
            outcome.result.checkpoint_path = base + ".ckpt.json";
            export_scorecards(outcome.result, base + ".scorecards.jsonl");
            write_file(base + ".result.json", result_to_json(outcome.result) + "\n");
        }
        run.results.push_back(outcome.result);
    };

    SettingOutcome wc = run_setting(split, index, AblationSetting::WC, seed, budget, tokenizer,
                                    run.classifier);
    finish_setting(wc);
    SettingOutcome context = run_setting(split, index, AblationSetting::Context, seed, budget,
                                         tokenizer, run.classifier);
    finish_setting(context);
    SettingOutcome dpo_wc = run_setting(split, index, AblationSetting::DPO_WC, seed, budget,
                                        tokenizer, run.classifier, &wc.checkpoint);
    finish_setting(dpo_wc);
    SettingOutcome dpo_context = run_setting(split, index, AblationSetting::DPO_Context, seed,
                                             budget, tokenizer, run.classifier, &context.checkpoint);
    finish_setting(dpo_context);

    for (const AblationResult& result : run.results) {
        if (result.config_hash != run.results.front().config_hash) {
            throw Error("run_ablation: controlled-experiment invariant violated "
                        "(config hashes differ across settings)");
        }
    }

    if (save_artifacts) {
        write_file((std::filesystem::path(outdir) / "table.txt").string(),
                   ablation_table(run.results, /*use_color=*/false));
    }
    return run;
}

// ---------------------------------------------------------------------------
// Table rendering
// ---------------------------------------------------------------------------

std::string ablation_table(const std::vector<AblationResult>& results, bool use_color) {
    std::array<const AblationResult*, kSettingCount> by_setting{};
    for (const AblationResult& result : results) {
        by_setting[static_cast<int>(result.setting)] = &result;
    }
    for (int i = 0; i < kSettingCount; ++i) {
        if (by_setting[static_cast<std::size_t>(i)] == nullptr) {
            throw Error(std::string("ablation_table: missing setting: ") +
                        kSettingDisplay[i]);
        }
    }

    const char* const headers[12] = {"R1", "R2",  "RL",  "B1",   "B2", "B3",
                                     "B4", "BSP", "BSR", "BSF1", "P",  "MS"};
    auto column_value = [](const MetricReport& r, int c) -> std::optional<double> {
        switch (c) {
            case 0: return r.r1;
            case 1: return r.r2;
            case 2: return r.rl;
            case 3: return r.b1;
            case 4: return r.b2;
            case 5: return r.b3;
            case 6: return r.b4;
            case 7: return r.bsp;
            case 8: return r.bsr;
            case 9: return r.bsf1;
            case 10:
                if (!r.politeness_available) return std::nullopt;
                return r.politeness;
            default: return r.meteor;
        }
    };

    // First row (in fixed setting order) holding the column maximum is bold.
    std::array<int, 12> best_row;
    best_row.fill(-1);
    for (int c = 0; c < 12; ++c) {
        double best = -1.0;
        for (int s = 0; s < kSettingCount; ++s) {
            const auto v = column_value(by_setting[static_cast<std::size_t>(s)]->report, c);
            if (v && *v > best) {
                best = *v;
                best_row[static_cast<std::size_t>(c)] = s;
            }
        }
    }

    std::ostringstream out;
    out << std::left << std::setw(14) << "Setting";
    for (const char* h : headers) out << std::right << std::setw(9) << h;
    out << '\n';

    for (int s = 0; s < kSettingCount; ++s) {
        const AblationResult& result = *by_setting[static_cast<std::size_t>(s)];
        out << std::left << std::setw(14) << kSettingDisplay[s];
        for (int c = 0; c < 12; ++c) {
            const auto v = column_value(result.report, c);
            std::ostringstream cell;
            if (v) {
                cell << std::fixed << std::setprecision(2) << *v;
            } else {
                cell << "-";
            }
            std::string text = cell.str();
            if (v && best_row[static_cast<std::size_t>(c)] == s) {
                text = use_color ? "\033[1m" + text + "\033[0m" : "*" + text + "*";
                // ANSI escapes confuse column widths; pad manually.
                const int pad = 9 - static_cast<int>(use_color ? text.size() - 8 : text.size());
                out << std::string(pad > 0 ? static_cast<std::size_t>(pad) : 0, ' ') << text;
            } else {
                out << std::right << std::setw(9) << text;
            }
        }
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Result serialization (wall clock deliberately excluded)
// ---------------------------------------------------------------------------

std::string result_to_json(const AblationResult& result) {
    json samples = json::array();
    for (const SampleRecord& s : result.samples) {
        samples.push_back(json{{"prompt", s.prompt},
                               {"gold", s.gold},
                               {"generated", s.generated},
                               {"rouge_l", s.rouge_l},
                               {"bleu1", s.bleu1},
                               {"meteor", s.meteor},
                               {"polite", s.polite}});
    }
    json obj{
        {"setting", to_string(result.setting)},
        {"seed", result.seed},
        {"config_hash", result.config_hash},
        {"checkpoint", result.checkpoint_path},
        {"report", json::parse(report_to_json(result.report))},
        {"samples", samples},
    };
    return obj.dump(2);
}

AblationResult result_from_json(const std::string& text) {
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(std::string("ablation result: parse error: ") + e.what());
    }
    AblationResult result;
    result.setting = parse_setting(obj.at("setting").get<std::string>());
    result.seed = obj.at("seed").get<std::uint64_t>();
    result.config_hash = obj.at("config_hash").get<std::uint64_t>();
    result.checkpoint_path = obj.at("checkpoint").get<std::string>();
    result.report = report_from_json(obj.at("report").dump());
    for (const json& s : obj.at("samples")) {
        SampleRecord record;
        record.prompt = s.at("prompt").get<std::string>();
        record.gold = s.at("gold").get<std::string>();
        record.generated = s.at("generated").get<std::string>();
        record.rouge_l = s.at("rouge_l").get<double>();
        record.bleu1 = s.at("bleu1").get<double>();
        record.meteor = s.at("meteor").get<double>();
        record.polite = s.at("polite").get<bool>();
        result.samples.push_back(std::move(record));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Scorecards
// ---------------------------------------------------------------------------

void export_scorecards(const AblationResult& result, const std::string& path) {
    std::ostringstream out;
    int index = 0;
    for (const SampleRecord& s : result.samples) {
        json ratings;
        for (const char* criterion : kScorecardCriteria) ratings[criterion] = nullptr;
        json row{
            {"index", index++},
            {"setting", to_string(result.setting)},
            {"prompt", s.prompt},
            {"gold", s.gold},
            {"generated", s.generated},
            {"metrics",
             json{{"rouge_l", s.rouge_l}, {"bleu1", s.bleu1}, {"meteor", s.meteor},
                  {"polite", s.polite}}},
            {"ratings", ratings},
        };
        out << row.dump() << '\n';
    }
    write_file(path, out.str());
}

ScorecardSummary ingest_scorecards(const std::string& path) {
    ScorecardSummary summary;
    std::array<double, 5> sums{};
    std::array<std::int64_t, 5> counts{};
    int line_no = 0;
    for (const std::string& line : read_lines(path)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json row;
        try {
            row = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(path + ":" + std::to_string(line_no) + ": parse error: " + e.what());
        }
        ++summary.total;
        const json& ratings = row.at("ratings");
        for (int c = 0; c < 5; ++c) {
            const json& v = ratings.at(kScorecardCriteria[c]);
            if (v.is_null()) continue;
            const double rating = v.get<double>();
            if (rating < 1.0 || rating > 5.0) {
                throw Error(path + ":" + std::to_string(line_no) + ": rating out of [1,5]");
            }
            sums[static_cast<std::size_t>(c)] += rating;
            counts[static_cast<std::size_t>(c)] += 1;
        }
    }
    for (int c = 0; c < 5; ++c) {
        const double mean = counts[static_cast<std::size_t>(c)] > 0
                                ? sums[static_cast<std::size_t>(c)] /
                                      static_cast<double>(counts[static_cast<std::size_t>(c)])
                                : 0.0;
        summary.criteria.emplace_back(kScorecardCriteria[c],
                                      std::make_pair(mean, counts[static_cast<std::size_t>(c)]));
    }
    return summary;
}

}  // namespace finchat
