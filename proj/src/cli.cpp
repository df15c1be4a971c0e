#include "finchat/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "finchat/corpus.hpp"
#include "finchat/knowledge.hpp"
#include "finchat/metrics.hpp"
#include "finchat/training.hpp"

namespace finchat {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "finchat 1.0.0";

// Output-directory override: relative artifact paths land under
// FINCHAT_OUT_DIR when it is set.
std::string resolve_out(const std::string& path) {
    const char* base = std::getenv("FINCHAT_OUT_DIR");
    if (base == nullptr || *base == '\0' || path.empty()) return path;
    std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    std::filesystem::create_directories(base);
    return (std::filesystem::path(base) / p).string();
}

bool color_enabled() {
    const char* flag = std::getenv("FINCHAT_NO_COLOR");
    return flag == nullptr || *flag == '\0';
}

// Provenance sidecar: the resolved configuration and seed of the command
// that wrote an artifact.
void write_meta(const std::string& artifact_path, const std::string& command, const json& config) {
    json meta{{"artifact", std::filesystem::path(artifact_path).filename().string()},
              {"command", command},
              {"config", config}};
    write_file(artifact_path + ".meta.json", meta.dump(2) + "\n");
}

struct CorpusSynthArgs {
    int count = 0;
    std::uint64_t seed = 0;
    double grounding = 1.0;
    int min_turns = 1;
    int max_turns = 3;
    double polite = 0.6, neutral = 0.2, impolite = 0.2;
    double efair_rate = 0.5;
    std::string out;
};

struct CorpusSplitArgs {
    std::string file;
    double train = 0.8, dev = 0.1, test = 0.1;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
};

struct KnowledgeBuildArgs {
    std::string triples;
    std::string out;
    double threshold = 0.7;
    int dim = 256;
};

struct KnowledgeQueryArgs {
    std::string index;
    std::string text;
    int k = 3;
};

struct ModelDims {
    int d_model = 128;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 512;
    int context_length = 256;
};

void add_model_flags(CLI::App* cmd, ModelDims& dims) {
    cmd->add_option("--d-model", dims.d_model, "model width");
    cmd->add_option("--n-layers", dims.n_layers, "transformer layers");
    cmd->add_option("--n-heads", dims.n_heads, "attention heads");
    cmd->add_option("--d-ff", dims.d_ff, "feed-forward width");
    cmd->add_option("--context-length", dims.context_length, "context budget (tokens)");
}

ModelConfig to_model_config(const ModelDims& dims) {
    ModelConfig config;
    config.d_model = dims.d_model;
    config.n_layers = dims.n_layers;
    config.n_heads = dims.n_heads;
    config.d_ff = dims.d_ff;
    config.context_length = dims.context_length;
    return config;
}

struct TrainSftArgs {
    std::string corpus;
    std::string index;
    std::string setting = "wc";
    std::uint64_t seed = 0;
    std::string out;
    int epochs = 3;
    int batch = 8;
    double lr = 1e-3;
    double weight_decay = 0.01;
    int max_vocab = 8192;
    int k = 3;
    ModelDims dims;
};

struct BuildPrefsArgs {
    std::string corpus;
    std::string checkpoint;
    std::string index;
    std::string setting = "context";
    std::uint64_t seed = 0;
    std::string out;
    int k = 3;
};

struct TrainDpoArgs {
    std::string checkpoint;
    std::string prefs;
    std::uint64_t seed = 0;
    std::string out;
    double beta = 0.1;
    bool reference = false;
    int epochs = 2;
    int batch = 8;
    double lr = 5e-4;
    double weight_decay = 0.01;
};

struct LmSampleArgs {
    std::string checkpoint;
    std::string prompt;
    std::uint64_t seed = 0;
    double temperature = 1.0;
    int top_k = 5;
    int max_len = 1024;
    bool greedy = false;
    bool raw = false;
};

struct PolitenessTrainArgs {
    std::string corpus;
    std::uint64_t seed = 0;
    std::string out;
    int epochs = 6;
    double lr = 3e-3;
};

struct PolitenessScoreArgs {
    std::string checkpoint;
    std::string in_file;
};

struct MetricsScoreArgs {
    std::string hyp;
    std::string ref;
    std::string out;
    std::string classifier;
    bool sentence_bleu = false;
};

struct EvalAblationArgs {
    std::string corpus_dir;
    std::string index;
    std::uint64_t seed = 0;
    std::string out_dir;
    int sft_epochs = 3;
    int dpo_epochs = 2;
    int batch = 8;
    double lr = 1e-3;
    double dpo_lr = 5e-4;
    double beta = 0.1;
    int k = 3;
    int max_vocab = 8192;
    ModelDims dims{64, 2, 4, 256, 192};
};

PromptSetting parse_prompt_setting(const std::string& text) {
    if (text == "wc") return PromptSetting::WC;
    if (text == "context") return PromptSetting::Context;
    throw Error("setting must be 'wc' or 'context', got '" + text + "'");
}

int run_corpus_synth(const CorpusSynthArgs& args, std::ostream& out) {
    SynthConfig config;
    config.count = args.count;
    config.grounding_rate = args.grounding;
    config.min_turns = args.min_turns;
    config.max_turns = args.max_turns;
    config.politeness_mix = {args.polite, args.neutral, args.impolite};
    config.efair_rate = args.efair_rate;
    const auto records = synthesize_corpus(config, args.seed);
    const std::string path = resolve_out(args.out);
    save_corpus(records, path);
    write_meta(path, "corpus synth",
               json{{"count", args.count},
                    {"seed", args.seed},
                    {"grounding", args.grounding},
                    {"min_turns", args.min_turns},
                    {"max_turns", args.max_turns},
                    {"politeness_mix", {args.polite, args.neutral, args.impolite}},
                    {"efair_rate", args.efair_rate}});
    out << "wrote " << records.size() << " records to " << path << "\n";
    return 0;
}

int run_corpus_validate(const std::string& file, std::ostream& out) {
    const auto records = load_corpus(file);
    out << "ok: " << records.size() << " records, all invariants satisfied\n";
    return 0;
}

int run_corpus_stats(const std::string& file, std::ostream& out) {
    const auto records = load_corpus(file);
    const CorpusStats stats = corpus_stats(records);
    out << std::fixed << std::setprecision(2);
    out << "records                   " << records.size() << "\n";
    out << "vocabulary size           " << stats.vocabulary_size << "\n";
    out << "avg user tokens           " << stats.avg_user_tokens << "\n";
    out << "avg bot tokens            " << stats.avg_bot_tokens << "\n";
    out << "avg user sentences        " << stats.avg_user_sentences << "\n";
    out << "avg bot sentences         " << stats.avg_bot_sentences << "\n";
    out << "tokens per conversation   " << stats.words_per_conversation << "\n";
    out << "unique query bigrams      " << stats.unique_bigrams << "\n";
    out << "unique trigrams           " << stats.unique_trigrams << "\n";
    out << "domains:";
    for (const auto& [tag, count] : stats.per_domain_counts) {
        out << " " << to_string(tag) << "=" << count;
    }
    out << "\nregions:";
    for (const auto& [tag, count] : stats.per_region_counts) {
        out << " " << to_string(tag) << "=" << count;
    }
    out << "\n";

    json machine{{"records", records.size()},
                 {"vocabulary_size", stats.vocabulary_size},
                 {"avg_user_tokens", stats.avg_user_tokens},
                 {"avg_bot_tokens", stats.avg_bot_tokens},
                 {"avg_user_sentences", stats.avg_user_sentences},
                 {"avg_bot_sentences", stats.avg_bot_sentences},
                 {"words_per_conversation", stats.words_per_conversation},
                 {"unique_bigrams", stats.unique_bigrams},
                 {"unique_trigrams", stats.unique_trigrams}};
    out << machine.dump() << "\n";
    return 0;
}

int run_corpus_split(const CorpusSplitArgs& args, std::ostream& out) {
    const auto records = load_corpus(args.file);
    const CorpusSplit split =
        split_corpus(records, SplitFractions{args.train, args.dev, args.test}, args.seed);
    const std::string dir = resolve_out(args.out_dir);
    std::filesystem::create_directories(dir);
    save_corpus(split.train, (std::filesystem::path(dir) / "train.jsonl").string());
    save_corpus(split.dev, (std::filesystem::path(dir) / "dev.jsonl").string());
    save_corpus(split.test, (std::filesystem::path(dir) / "test.jsonl").string());
    write_meta((std::filesystem::path(dir) / "split").string(), "corpus split",
               json{{"file", args.file},
                    {"train", args.train},
                    {"dev", args.dev},
                    {"test", args.test},
                    {"seed", args.seed}});
    out << "split " << records.size() << " records into " << split.train.size() << "/"
        << split.dev.size() << "/" << split.test.size() << " under " << dir << "\n";
    return 0;
}

int run_knowledge_build(const KnowledgeBuildArgs& args, std::ostream& out) {
    const auto triples = load_triples(args.triples);
    Embedder embedder;
    embedder.dim = args.dim;
    const KnowledgeIndex index = build_index(triples, embedder, args.threshold);
    const std::string path = resolve_out(args.out);
    save_index(index, path);
    write_meta(path, "knowledge build",
               json{{"triples", args.triples}, {"threshold", args.threshold}, {"dim", args.dim}});
    out << "indexed " << index.entries.size() << " triples into " << path << "\n";
    return 0;
}

int run_knowledge_query(const KnowledgeQueryArgs& args, std::ostream& out) {
    const KnowledgeIndex index = load_index(args.index);
    const auto facts = retrieve(index, index.embedder, args.text, args.k);
    if (facts.empty()) {
        out << "no facts above threshold " << index.threshold << "\n";
        return 0;
    }
    out << std::fixed << std::setprecision(6);
    for (const VerbalizedFact& fact : facts) {
        out << fact.similarity << "  " << fact.text << "  (" << fact.source.head << " | "
            << to_string(fact.source.relation) << " | " << fact.source.tail << ")\n";
    }
    return 0;
}

int run_train_sft(const TrainSftArgs& args, std::ostream& out) {
    const auto records = load_corpus(args.corpus);
    const KnowledgeIndex index = load_index(args.index);
    const PromptSetting setting = parse_prompt_setting(args.setting);

    ModelConfig config = to_model_config(args.dims);

    // Tokenizer covers prompts and targets of the chosen setting.
    config.vocab_size = Tokenizer::kReservedCount;
    Tokenizer empty_vocab;
    auto probe = build_sft_examples(records, index, setting, config, empty_vocab, args.k);
    std::vector<std::string> texts;
    for (const SftExample& example : probe) {
        texts.push_back(example.prompt);
        texts.push_back(example.target);
    }
    const Tokenizer tokenizer = Tokenizer::build(texts, args.max_vocab);
    config.vocab_size = tokenizer.vocab_size();

    const auto examples = build_sft_examples(records, index, setting, config, tokenizer, args.k);
    TrainConfig train;
    train.epochs = args.epochs;
    train.batch_size = args.batch;
    train.lr = args.lr;
    train.weight_decay = args.weight_decay;
    train.seed = args.seed;
    train.max_vocab = args.max_vocab;

    const ModelCheckpoint checkpoint = train_sft(examples, config, tokenizer, train);
    const std::string path = resolve_out(args.out);
    save_checkpoint(checkpoint, path);
    write_meta(path, "train sft",
               json{{"corpus", args.corpus},
                    {"index", args.index},
                    {"setting", args.setting},
                    {"seed", args.seed},
                    {"epochs", args.epochs},
                    {"batch", args.batch},
                    {"lr", args.lr},
                    {"weight_decay", args.weight_decay},
                    {"d_model", config.d_model},
                    {"n_layers", config.n_layers},
                    {"n_heads", config.n_heads},
                    {"d_ff", config.d_ff},
                    {"context_length", config.context_length},
                    {"vocab_size", config.vocab_size},
                    {"retrieval_k", args.k}});
    out << "trained on " << examples.size() << " examples";
    out << std::fixed << std::setprecision(4);
    for (std::size_t e = 0; e < checkpoint.meta.epoch_losses.size(); ++e) {
        out << (e == 0 ? "; epoch losses: " : ", ") << checkpoint.meta.epoch_losses[e];
    }
    out << "\nsaved checkpoint to " << path << "\n";
    return 0;
}

int run_build_prefs(const BuildPrefsArgs& args, std::ostream& out) {
    const auto records = load_corpus(args.corpus);
    const ModelCheckpoint policy = load_checkpoint(args.checkpoint);
    const KnowledgeIndex index = load_index(args.index);
    const auto prefs = build_preference_set(records, policy, index,
                                            parse_prompt_setting(args.setting), args.seed, args.k);
    const std::string path = resolve_out(args.out);
    save_preferences(prefs, path);
    write_meta(path, "train build-prefs",
               json{{"corpus", args.corpus},
                    {"checkpoint", args.checkpoint},
                    {"index", args.index},
                    {"setting", args.setting},
                    {"seed", args.seed},
                    {"retrieval_k", args.k}});
    out << "wrote " << prefs.size() << " preference records to " << path << "\n";
    return 0;
}

int run_train_dpo(const TrainDpoArgs& args, std::ostream& out) {
    const ModelCheckpoint base = load_checkpoint(args.checkpoint);
    const auto prefs = load_preferences(args.prefs);
    DpoConfig config;
    config.beta = args.beta;
    config.use_reference = args.reference;
    config.epochs = args.epochs;
    config.batch_size = args.batch;
    config.lr = args.lr;
    config.weight_decay = args.weight_decay;
    config.seed = args.seed;

    const ModelCheckpoint tuned = train_dpo(base, prefs, config);
    const std::string path = resolve_out(args.out);
    save_checkpoint(tuned, path);
    write_meta(path, "train dpo",
               json{{"checkpoint", args.checkpoint},
                    {"prefs", args.prefs},
                    {"seed", args.seed},
                    {"beta", args.beta},
                    {"reference", args.reference},
                    {"epochs", args.epochs},
                    {"batch", args.batch},
                    {"lr", args.lr},
                    {"weight_decay", args.weight_decay}});
    out << std::fixed << std::setprecision(4);
    out << "tuned on " << prefs.size() << " preference records";
    for (std::size_t e = 0; e < tuned.meta.epoch_margins.size(); ++e) {
        out << (e == 0 ? "; epoch margins: " : ", ") << tuned.meta.epoch_margins[e];
    }
    out << "\nsaved checkpoint to " << path << "\n";
    return 0;
}

int run_lm_sample(const LmSampleArgs& args, std::ostream& out) {
    const ModelCheckpoint checkpoint = load_checkpoint(args.checkpoint);
    SamplerConfig sampler;
    sampler.temperature = args.temperature;
    sampler.top_k = args.top_k;
    sampler.max_target_length = args.max_len;
    sampler.do_sample = !args.greedy;
    sampler.seed = args.seed;

    const std::string prompt_text =
        args.raw ? args.prompt
                 : std::string(Tokenizer::marker_knowledge()) + " " + Tokenizer::marker_query() +
                       " " + args.prompt + " " + Tokenizer::marker_response();
    const std::vector<int> prompt_ids = checkpoint.tokenizer.encode(prompt_text);
    const std::vector<int> generated =
        sample(checkpoint.config, checkpoint.params, prompt_ids, sampler);
    out << checkpoint.tokenizer.decode(generated) << "\n";
    return 0;
}

int run_politeness_train(const PolitenessTrainArgs& args, std::ostream& out) {
    const auto records = load_corpus(args.corpus);
    TrainConfig train;
    train.epochs = args.epochs;
    train.lr = args.lr;
    train.seed = args.seed;
    const PolitenessClassifier classifier =
        train_classifier(labeled_utterances(records), ClassifierConfig{}, train);
    const std::string path = resolve_out(args.out);
    save_classifier(classifier, path);
    write_meta(path, "politeness train",
               json{{"corpus", args.corpus},
                    {"seed", args.seed},
                    {"epochs", args.epochs},
                    {"lr", args.lr}});
    out << "trained classifier on " << records.size() << " dialogues; saved to " << path << "\n";
    return 0;
}

int run_politeness_score(const PolitenessScoreArgs& args, std::ostream& out) {
    const PolitenessClassifier classifier = load_classifier(args.checkpoint);
    std::vector<std::string> responses;
    for (const std::string& line : read_lines(args.in_file)) {
        if (!trim(line).empty()) responses.push_back(line);
    }
    if (responses.empty()) throw Error("politeness score: no responses in " + args.in_file);
    std::array<std::int64_t, 3> counts{};
    for (const std::string& response : responses) {
        counts[static_cast<std::size_t>(classify(classifier, response).label)] += 1;
    }
    out << std::fixed << std::setprecision(2);
    out << "politeness rate: " << politeness_rate(classifier, responses) << "% of "
        << responses.size() << " responses\n";
    out << "verdicts: polite=" << counts[0] << " neutral=" << counts[1]
        << " impolite=" << counts[2] << "\n";
    return 0;
}

int run_metrics_score(const MetricsScoreArgs& args, std::ostream& out) {
    const auto hyp_lines = read_lines(args.hyp);
    const auto ref_lines = read_lines(args.ref);
    if (hyp_lines.size() != ref_lines.size()) {
        throw Error("metrics score: hypothesis and reference files differ in length");
    }
    if (hyp_lines.empty()) throw Error("metrics score: empty input");

    std::optional<PolitenessClassifier> classifier;
    if (!args.classifier.empty()) classifier = load_classifier(args.classifier);

    std::vector<SamplePair> pairs;
    for (std::size_t i = 0; i < hyp_lines.size(); ++i) {
        SamplePair pair;
        pair.hypothesis = hyp_lines[i];
        pair.references = {ref_lines[i]};
        if (classifier) {
            pair.polite = classify(*classifier, hyp_lines[i]).label == PolitenessLabel::Polite;
        }
        pairs.push_back(std::move(pair));
    }
    const Embedder embedder;
    const MetricReport report = aggregate(pairs, embedder, !args.sentence_bleu);

    out << std::left << std::setw(8) << "R1" << std::setw(8) << "R2" << std::setw(8) << "RL"
        << std::setw(8) << "B1" << std::setw(8) << "B2" << std::setw(8) << "B3" << std::setw(8)
        << "B4" << std::setw(8) << "BSP" << std::setw(8) << "BSR" << std::setw(8) << "BSF1"
        << std::setw(8) << "P" << std::setw(8) << "MS" << "\n";
    out << std::fixed << std::setprecision(2);
    out << std::left << std::setw(8) << report.r1 << std::setw(8) << report.r2 << std::setw(8)
        << report.rl << std::setw(8) << report.b1 << std::setw(8) << report.b2 << std::setw(8)
        << report.b3 << std::setw(8) << report.b4 << std::setw(8) << report.bsp << std::setw(8)
        << report.bsr << std::setw(8) << report.bsf1 << std::setw(8);
    if (report.politeness_available) {
        out << report.politeness;
    } else {
        out << "-";
    }
    out << std::setw(8) << report.meteor << "\n";

    const std::string machine = report_to_json(report);
    out << machine << "\n";
    if (!args.out.empty()) {
        const std::string path = resolve_out(args.out);
        write_file(path, machine + "\n");
        write_meta(path, "metrics score",
                   json{{"hyp", args.hyp},
                        {"ref", args.ref},
                        {"classifier", args.classifier},
                        {"sentence_bleu", args.sentence_bleu}});
    }
    return 0;
}

int run_eval_ablation(const EvalAblationArgs& args, std::ostream& out) {
    const auto dir = std::filesystem::path(args.corpus_dir);
    CorpusSplit split;
    split.train = load_corpus((dir / "train.jsonl").string());
    split.dev = load_corpus((dir / "dev.jsonl").string());
    split.test = load_corpus((dir / "test.jsonl").string());
    const KnowledgeIndex index = load_index(args.index);

    AblationBudget budget;
    budget.model = to_model_config(args.dims);
    budget.sft.epochs = args.sft_epochs;
    budget.sft.batch_size = args.batch;
    budget.sft.lr = args.lr;
    budget.sft.max_vocab = args.max_vocab;
    budget.dpo.epochs = args.dpo_epochs;
    budget.dpo.batch_size = args.batch;
    budget.dpo.lr = args.dpo_lr;
    budget.dpo.beta = args.beta;
    budget.retrieval_k = args.k;

    const std::string outdir = resolve_out(args.out_dir);
    const AblationRun run = run_ablation(split, index, args.seed, budget, outdir);
    write_meta((std::filesystem::path(outdir) / "run").string(), "eval ablation",
               json{{"corpus", args.corpus_dir},
                    {"index", args.index},
                    {"seed", args.seed},
                    {"sft_epochs", args.sft_epochs},
                    {"dpo_epochs", args.dpo_epochs},
                    {"batch", args.batch},
                    {"lr", args.lr},
                    {"dpo_lr", args.dpo_lr},
                    {"beta", args.beta},
                    {"retrieval_k", args.k},
                    {"d_model", budget.model.d_model},
                    {"n_layers", budget.model.n_layers},
                    {"n_heads", budget.model.n_heads},
                    {"d_ff", budget.model.d_ff},
                    {"context_length", budget.model.context_length}});

    out << ablation_table(run.results, color_enabled());
    out << std::fixed << std::setprecision(1);
    for (const AblationResult& result : run.results) {
        out << display_name(result.setting) << ": " << result.wall_clock_seconds << "s\n";
    }
    out << "artifacts under " << outdir << "\n";
    return 0;
}

int run_eval_scorecards(const std::string& in_file, std::ostream& out) {
    const ScorecardSummary summary = ingest_scorecards(in_file);
    out << "scorecards: " << summary.total << "\n";
    out << std::fixed << std::setprecision(3);
    for (const auto& [criterion, stats] : summary.criteria) {
        out << std::left << std::setw(26) << criterion;
        if (stats.second > 0) {
            out << "mean " << stats.first << " over " << stats.second << " ratings\n";
        } else {
            out << "no ratings\n";
        }
    }
    return 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Chat REPL
// ---------------------------------------------------------------------------

int chat_repl(const ChatOptions& options, std::istream& in, std::ostream& out) {
    const ModelCheckpoint checkpoint = load_checkpoint(options.checkpoint_path);
    const PolitenessClassifier classifier = load_classifier(options.classifier_path);
    std::optional<KnowledgeIndex> index;
    if (options.setting == PromptSetting::Context) {
        if (options.index_path.empty()) throw Error("chat: Context mode requires --index");
        index = load_index(options.index_path);
    }

    std::ofstream transcript;
    if (!options.transcript_path.empty()) {
        transcript.open(resolve_out(options.transcript_path), std::ios::trunc | std::ios::binary);
        if (!transcript) throw Error("chat: cannot open transcript file");
    }
    auto emit = [&](const std::string& text, bool to_transcript = true) {
        out << text;
        if (transcript.is_open() && to_transcript) transcript << text;
    };

    Rng rng = make_rng(options.sampler.seed, "sampling");
    std::vector<Turn> history;
    bool show_facts = options.show_facts;

    std::string line;
    while (true) {
        out << "user> " << std::flush;
        if (!std::getline(in, line)) break;
        const std::string text = trim(line);
        if (text.empty()) continue;
        if (text == "/quit") break;
        if (text == "/reset") {
            history.clear();
            emit("(history cleared)\n", false);
            continue;
        }
        if (text == "/facts on") {
            show_facts = true;
            continue;
        }
        if (text == "/facts off") {
            show_facts = false;
            continue;
        }

        std::vector<VerbalizedFact> facts;
        if (index) facts = retrieve(*index, index->embedder, text, options.retrieval_k);

        // History and current query fused like a training prompt; oldest
        // turns fall off when the budget is exceeded.
        std::string prompt_text;
        std::vector<int> prompt_ids;
        for (std::size_t oldest = 0; oldest <= history.size(); ++oldest) {
            std::string query;
            for (std::size_t h = oldest; h < history.size(); ++h) {
                query += history[h].user;
                query += ' ';
                query += history[h].bot;
                query += ' ';
            }
            query += text;
            prompt_text = fuse(query, facts).text;
            prompt_ids = checkpoint.tokenizer.encode(prompt_text);
            if (static_cast<int>(prompt_ids.size()) + 8 <= checkpoint.config.context_length) break;
        }

        emit("user> " + text + "\n", true);
        out << "\r";  // the prompt echo above is for the transcript; terminal already shows input
        if (index && show_facts) {
            std::ostringstream fact_lines;
            fact_lines << std::fixed << std::setprecision(3);
            if (facts.empty()) {
                fact_lines << "  (no facts above threshold)\n";
            } else {
                for (const VerbalizedFact& fact : facts) {
                    fact_lines << "  [fact " << fact.similarity << "] " << fact.text << "\n";
                }
            }
            emit(fact_lines.str());
        }

        const std::vector<int> generated =
            sample(checkpoint.config, checkpoint.params, prompt_ids, options.sampler, rng);
        const std::string reply = checkpoint.tokenizer.decode(generated);
        emit("bot> " + reply + "\n");

        const PolitenessVerdict verdict = classify(classifier, reply);
        std::ostringstream verdict_line;
        verdict_line << "  politeness: " << display_name(verdict.label) << " (p=" << std::fixed
                     << std::setprecision(3)
                     << verdict.probabilities[static_cast<std::size_t>(verdict.label)] << ")\n";
        emit(verdict_line.str());

        history.push_back(Turn{text, reply});
    }
    out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

int dispatch(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
             std::ostream& err) {
    CLI::App app{"finchat: knowledge-grounded financial dialogue pipeline"};
    app.set_version_flag("--version", kVersion);
    app.set_config("--config", "", "key-value config file with [command.subcommand] sections");
    app.require_subcommand(0, 1);

    if (args.empty()) {
        out << app.help();
        return 2;
    }

    std::vector<std::function<int()>> actions;

    // corpus ------------------------------------------------------------
    auto* corpus = app.add_subcommand("corpus", "corpus tooling");
    corpus->require_subcommand(1);

    auto* validate = corpus->add_subcommand("validate", "check a corpus file");
    auto validate_file = std::make_shared<std::string>();
    validate->add_option("file", *validate_file, "corpus file")->required();
    validate->callback([&actions, validate_file, &out] {
        actions.push_back([validate_file, &out] { return run_corpus_validate(*validate_file, out); });
    });

    auto* stats = corpus->add_subcommand("stats", "corpus statistics");
    auto stats_file = std::make_shared<std::string>();
    stats->add_option("file", *stats_file, "corpus file")->required();
    stats->callback([&actions, stats_file, &out] {
        actions.push_back([stats_file, &out] { return run_corpus_stats(*stats_file, out); });
    });

    auto* synth = corpus->add_subcommand("synth", "generate a synthetic corpus");
    auto synth_args = std::make_shared<CorpusSynthArgs>();
    synth->add_option("--count", synth_args->count, "number of dialogues")->required();
    synth->add_option("--seed", synth_args->seed, "root seed")->required();
    synth->add_option("--grounding", synth_args->grounding, "fact-grounding rate in [0,1]");
    synth->add_option("--min-turns", synth_args->min_turns, "minimum turns per dialogue");
    synth->add_option("--max-turns", synth_args->max_turns, "maximum turns per dialogue");
    synth->add_option("--polite", synth_args->polite, "polite style weight");
    synth->add_option("--neutral", synth_args->neutral, "neutral style weight");
    synth->add_option("--impolite", synth_args->impolite, "impolite style weight");
    synth->add_option("--efair-rate", synth_args->efair_rate, "fraction of records with E-FAIR");
    synth->add_option("--out", synth_args->out, "output corpus file")->required();
    synth->callback([&actions, synth_args, &out] {
        actions.push_back([synth_args, &out] { return run_corpus_synth(*synth_args, out); });
    });

    auto* split_cmd = corpus->add_subcommand("split", "seeded train/dev/test split");
    auto split_args = std::make_shared<CorpusSplitArgs>();
    split_cmd->add_option("file", split_args->file, "corpus file")->required();
    split_cmd->add_option("--train", split_args->train, "train fraction");
    split_cmd->add_option("--dev", split_args->dev, "dev fraction");
    split_cmd->add_option("--test", split_args->test, "test fraction");
    split_cmd->add_option("--seed", split_args->seed, "root seed")->required();
    split_cmd->add_option("--out-dir", split_args->out_dir, "output directory");
    split_cmd->callback([&actions, split_args, &out] {
        actions.push_back([split_args, &out] { return run_corpus_split(*split_args, out); });
    });

    // knowledge ----------------------------------------------------------
    auto* knowledge = app.add_subcommand("knowledge", "triple store and retrieval");
    knowledge->require_subcommand(1);

    auto* kbuild = knowledge->add_subcommand("build", "build an index from a triple file");
    auto kbuild_args = std::make_shared<KnowledgeBuildArgs>();
    kbuild->add_option("--triples", kbuild_args->triples, "head<TAB>relation<TAB>tail file")->required();
    kbuild->add_option("--out", kbuild_args->out, "index file")->required();
    kbuild->add_option("--threshold", kbuild_args->threshold, "cosine threshold");
    kbuild->add_option("--dim", kbuild_args->dim, "embedding dimension");
    kbuild->callback([&actions, kbuild_args, &out] {
        actions.push_back([kbuild_args, &out] { return run_knowledge_build(*kbuild_args, out); });
    });

    auto* kquery = knowledge->add_subcommand("query", "retrieve facts for a query");
    auto kquery_args = std::make_shared<KnowledgeQueryArgs>();
    kquery->add_option("--index", kquery_args->index, "index file")->required();
    kquery->add_option("--text", kquery_args->text, "query text")->required();
    kquery->add_option("--k", kquery_args->k, "max facts");
    kquery->callback([&actions, kquery_args, &out] {
        actions.push_back([kquery_args, &out] { return run_knowledge_query(*kquery_args, out); });
    });

    // train ----------------------------------------------------------------
    auto* train = app.add_subcommand("train", "SFT and DPO stages");
    train->require_subcommand(1);

    auto* sft = train->add_subcommand("sft", "supervised fine-tuning from scratch");
    auto sft_args = std::make_shared<TrainSftArgs>();
    sft->add_option("--corpus", sft_args->corpus, "training corpus file")->required();
    sft->add_option("--index", sft_args->index, "knowledge index file")->required();
    sft->add_option("--setting", sft_args->setting, "wc | context");
    sft->add_option("--seed", sft_args->seed, "root seed")->required();
    sft->add_option("--out", sft_args->out, "checkpoint file")->required();
    sft->add_option("--epochs", sft_args->epochs, "training epochs");
    sft->add_option("--batch", sft_args->batch, "batch size");
    sft->add_option("--lr", sft_args->lr, "learning rate");
    sft->add_option("--weight-decay", sft_args->weight_decay, "decoupled weight decay");
    sft->add_option("--max-vocab", sft_args->max_vocab, "vocabulary cap");
    sft->add_option("--k", sft_args->k, "facts per query");
    add_model_flags(sft, sft_args->dims);
    sft->callback([&actions, sft_args, &out] {
        actions.push_back([sft_args, &out] { return run_train_sft(*sft_args, out); });
    });

    auto* build_prefs = train->add_subcommand("build-prefs", "construct a preference set");
    auto prefs_args = std::make_shared<BuildPrefsArgs>();
    build_prefs->add_option("--corpus", prefs_args->corpus, "corpus file")->required();
    build_prefs->add_option("--checkpoint", prefs_args->checkpoint, "SFT checkpoint")->required();
    build_prefs->add_option("--index", prefs_args->index, "knowledge index")->required();
    build_prefs->add_option("--setting", prefs_args->setting, "wc | context");
    build_prefs->add_option("--seed", prefs_args->seed, "root seed")->required();
    build_prefs->add_option("--out", prefs_args->out, "preference file")->required();
    build_prefs->add_option("--k", prefs_args->k, "facts per query");
    build_prefs->callback([&actions, prefs_args, &out] {
        actions.push_back([prefs_args, &out] { return run_build_prefs(*prefs_args, out); });
    });

    auto* dpo = train->add_subcommand("dpo", "direct preference optimization");
    auto dpo_args = std::make_shared<TrainDpoArgs>();
    dpo->add_option("--checkpoint", dpo_args->checkpoint, "SFT checkpoint")->required();
    dpo->add_option("--prefs", dpo_args->prefs, "preference file")->required();
    dpo->add_option("--seed", dpo_args->seed, "root seed")->required();
    dpo->add_option("--out", dpo_args->out, "checkpoint file")->required();
    dpo->add_option("--beta", dpo_args->beta, "preference gap scale");
    dpo->add_flag("--reference", dpo_args->reference, "log-ratio margins against the frozen start");
    dpo->add_option("--epochs", dpo_args->epochs, "training epochs");
    dpo->add_option("--batch", dpo_args->batch, "batch size");
    dpo->add_option("--lr", dpo_args->lr, "learning rate");
    dpo->add_option("--weight-decay", dpo_args->weight_decay, "decoupled weight decay");
    dpo->callback([&actions, dpo_args, &out] {
        actions.push_back([dpo_args, &out] { return run_train_dpo(*dpo_args, out); });
    });

    // lm ---------------------------------------------------------------------
    auto* lm = app.add_subcommand("lm", "language-model utilities");
    lm->require_subcommand(1);

    auto* lm_train = lm->add_subcommand("train-sft", "alias of `train sft`");
    auto lm_sft_args = std::make_shared<TrainSftArgs>();
    lm_train->add_option("--corpus", lm_sft_args->corpus, "training corpus file")->required();
    lm_train->add_option("--index", lm_sft_args->index, "knowledge index file")->required();
    lm_train->add_option("--setting", lm_sft_args->setting, "wc | context");
    lm_train->add_option("--seed", lm_sft_args->seed, "root seed")->required();
    lm_train->add_option("--out", lm_sft_args->out, "checkpoint file")->required();
    lm_train->add_option("--epochs", lm_sft_args->epochs, "training epochs");
    lm_train->add_option("--batch", lm_sft_args->batch, "batch size");
    lm_train->add_option("--lr", lm_sft_args->lr, "learning rate");
    lm_train->add_option("--max-vocab", lm_sft_args->max_vocab, "vocabulary cap");
    lm_train->add_option("--k", lm_sft_args->k, "facts per query");
    add_model_flags(lm_train, lm_sft_args->dims);
    lm_train->callback([&actions, lm_sft_args, &out] {
        actions.push_back([lm_sft_args, &out] { return run_train_sft(*lm_sft_args, out); });
    });

    auto* lm_sample = lm->add_subcommand("sample", "generate from a checkpoint");
    auto sample_args = std::make_shared<LmSampleArgs>();
    lm_sample->add_option("--checkpoint", sample_args->checkpoint, "model checkpoint")->required();
    lm_sample->add_option("--prompt", sample_args->prompt, "prompt text")->required();
    lm_sample->add_option("--seed", sample_args->seed, "sampling seed")->required();
    lm_sample->add_option("--temperature", sample_args->temperature, "softmax temperature");
    lm_sample->add_option("--top-k", sample_args->top_k, "top-k truncation");
    lm_sample->add_option("--max-len", sample_args->max_len, "max generated tokens");
    lm_sample->add_flag("--greedy", sample_args->greedy, "argmax decoding");
    lm_sample->add_flag("--raw", sample_args->raw, "do not wrap the prompt in fusion markers");
    lm_sample->callback([&actions, sample_args, &out] {
        actions.push_back([sample_args, &out] { return run_lm_sample(*sample_args, out); });
    });

    // politeness ---------------------------------------------------------
    auto* politeness = app.add_subcommand("politeness", "politeness classifier");
    politeness->require_subcommand(1);

    auto* ptrain = politeness->add_subcommand("train", "train on a labelled corpus");
    auto ptrain_args = std::make_shared<PolitenessTrainArgs>();
    ptrain->add_option("--corpus", ptrain_args->corpus, "corpus file")->required();
    ptrain->add_option("--seed", ptrain_args->seed, "root seed")->required();
    ptrain->add_option("--out", ptrain_args->out, "classifier checkpoint")->required();
    ptrain->add_option("--epochs", ptrain_args->epochs, "training epochs");
    ptrain->add_option("--lr", ptrain_args->lr, "learning rate");
    ptrain->callback([&actions, ptrain_args, &out] {
        actions.push_back([ptrain_args, &out] { return run_politeness_train(*ptrain_args, out); });
    });

    auto* pscore = politeness->add_subcommand("score", "politeness rate of a response file");
    auto pscore_args = std::make_shared<PolitenessScoreArgs>();
    pscore->add_option("--checkpoint", pscore_args->checkpoint, "classifier checkpoint")->required();
    pscore->add_option("--in", pscore_args->in_file, "one response per line")->required();
    pscore->callback([&actions, pscore_args, &out] {
        actions.push_back([pscore_args, &out] { return run_politeness_score(*pscore_args, out); });
    });

    // metrics --------------------------------------------------------------
    auto* metrics = app.add_subcommand("metrics", "evaluation metrics");
    metrics->require_subcommand(1);

    auto* mscore = metrics->add_subcommand("score", "score hypothesis vs reference files");
    auto mscore_args = std::make_shared<MetricsScoreArgs>();
    mscore->add_option("--hyp", mscore_args->hyp, "hypotheses, one per line")->required();
    mscore->add_option("--ref", mscore_args->ref, "references, one per line")->required();
    mscore->add_option("--out", mscore_args->out, "machine-readable report file");
    mscore->add_option("--classifier", mscore_args->classifier, "politeness classifier checkpoint");
    mscore->add_flag("--sentence-bleu", mscore_args->sentence_bleu,
                     "mean of sentence BLEU instead of pooled counts");
    mscore->callback([&actions, mscore_args, &out] {
        actions.push_back([mscore_args, &out] { return run_metrics_score(*mscore_args, out); });
    });

    // eval -------------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "ablation harness");
    eval->require_subcommand(1);

    auto* ablation = eval->add_subcommand("ablation", "run the four-setting ablation");
    auto ablation_args = std::make_shared<EvalAblationArgs>();
    ablation->add_option("--corpus", ablation_args->corpus_dir,
                         "directory with train.jsonl/dev.jsonl/test.jsonl")->required();
    ablation->add_option("--index", ablation_args->index, "knowledge index")->required();
    ablation->add_option("--seed", ablation_args->seed, "root seed")->required();
    ablation->add_option("--out", ablation_args->out_dir, "output directory")->required();
    ablation->add_option("--sft-epochs", ablation_args->sft_epochs, "SFT epochs");
    ablation->add_option("--dpo-epochs", ablation_args->dpo_epochs, "DPO epochs");
    ablation->add_option("--batch", ablation_args->batch, "batch size");
    ablation->add_option("--lr", ablation_args->lr, "SFT learning rate");
    ablation->add_option("--dpo-lr", ablation_args->dpo_lr, "DPO learning rate");
    ablation->add_option("--beta", ablation_args->beta, "DPO beta");
    ablation->add_option("--k", ablation_args->k, "facts per query");
    ablation->add_option("--max-vocab", ablation_args->max_vocab, "vocabulary cap");
    add_model_flags(ablation, ablation_args->dims);
    ablation->callback([&actions, ablation_args, &out] {
        actions.push_back([ablation_args, &out] { return run_eval_ablation(*ablation_args, out); });
    });

    auto* scorecards = eval->add_subcommand("scorecards", "summarize filled scorecards");
    auto scorecards_in = std::make_shared<std::string>();
    scorecards->add_option("--in", *scorecards_in, "scorecard file")->required();
    scorecards->callback([&actions, scorecards_in, &out] {
        actions.push_back([scorecards_in, &out] { return run_eval_scorecards(*scorecards_in, out); });
    });

    // chat -------------------------------------------------------------------
    auto* chat = app.add_subcommand("chat", "interactive REPL");
    auto chat_setting = std::make_shared<std::string>("wc");
    auto chat_options = std::make_shared<ChatOptions>();
    auto chat_greedy = std::make_shared<bool>(false);
    chat->add_option("--checkpoint", chat_options->checkpoint_path, "model checkpoint")->required();
    chat->add_option("--classifier", chat_options->classifier_path, "politeness classifier")->required();
    chat->add_option("--index", chat_options->index_path, "knowledge index (Context mode)");
    chat->add_option("--setting", *chat_setting, "wc | context");
    chat->add_option("--seed", chat_options->sampler.seed, "sampling seed");
    chat->add_option("--temperature", chat_options->sampler.temperature, "softmax temperature");
    chat->add_option("--top-k", chat_options->sampler.top_k, "top-k truncation");
    chat->add_option("--max-len", chat_options->sampler.max_target_length, "max generated tokens");
    chat->add_flag("--greedy", *chat_greedy, "argmax decoding");
    chat->add_option("--k", chat_options->retrieval_k, "facts per query");
    chat->add_option("--transcript", chat_options->transcript_path, "transcript file");
    chat->callback([&actions, chat_options, chat_setting, chat_greedy, &in, &out] {
        actions.push_back([chat_options, chat_setting, chat_greedy, &in, &out] {
            ChatOptions options = *chat_options;
            options.setting = parse_prompt_setting(*chat_setting);
            options.sampler.do_sample = !*chat_greedy;
            options.use_color = color_enabled();
            return chat_repl(options, in, out);
        });
    });

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return 0;
    } catch (const CLI::RequiredError& e) {
        err << "error: missing-flag: " << e.what() << "\n";
        return 3;
    } catch (const CLI::ConfigError& e) {
        err << "error: config: " << e.what() << "\n";
        return 4;
    } catch (const CLI::FileError& e) {
        err << "error: config: " << e.what() << "\n";
        return 4;
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << e.what() << "\n";
        return 2;
    }

    if (actions.empty()) {
        out << app.help();
        return 2;
    }
    try {
        return actions.back()();
    } catch (const Error& e) {
        err << "error: runtime: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: runtime: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace finchat
