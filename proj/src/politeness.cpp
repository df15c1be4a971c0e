#include "finchat/politeness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

#include <json.hpp>

namespace finchat {

using nlohmann::json;

namespace {

// Utterance ids for pooling; an empty tokenization becomes a single <unk> so
// the mean over rows is always defined.
std::vector<int> encode_utterance(const Tokenizer& tokenizer, const std::string& text) {
    std::vector<int> ids = tokenizer.encode(text);
    if (ids.empty()) ids.push_back(Tokenizer::kUnk);
    return ids;
}

Var classifier_logits(Tape& tape, const BoundParams& bound, const std::vector<int>& ids) {
    const Var pooled = tape.mean_rows(tape.gather_rows(bound.at("emb"), ids));
    const Var hidden = tape.tanh_act(
        tape.add_rowvec(tape.matmul(pooled, bound.at("enc.w")), bound.at("enc.b")));
    return tape.add_rowvec(tape.matmul(hidden, bound.at("head.w")), bound.at("head.b"));
}

std::array<double, 3> softmax3(const Mat& logits) {
    const double maxv = logits.maxCoeff();
    std::array<double, 3> probs{};
    double total = 0.0;
    for (int i = 0; i < 3; ++i) {
        probs[static_cast<std::size_t>(i)] = std::exp(logits(0, i) - maxv);
        total += probs[static_cast<std::size_t>(i)];
    }
    for (double& p : probs) p /= total;
    return probs;
}

}  // namespace

PolitenessClassifier init_classifier(const ClassifierConfig& config, const Tokenizer& tokenizer,
                                     std::uint64_t seed) {
    if (config.emb_dim <= 0 || config.hidden_dim <= 0) {
        throw Error("classifier config: dimensions must be positive");
    }
    Rng rng = make_rng(seed, "init-classifier");
    const double std_dev = 0.08;
    auto gauss = [&](int rows, int cols) {
        Mat m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng_gauss(rng) * std_dev;
        return m;
    };

    PolitenessClassifier classifier;
    classifier.config = config;
    classifier.tokenizer = tokenizer;
    classifier.seed = seed;
    classifier.params.add("emb", gauss(tokenizer.vocab_size(), config.emb_dim));
    classifier.params.add("enc.w", gauss(config.emb_dim, config.hidden_dim));
    classifier.params.add("enc.b", Mat::Zero(1, config.hidden_dim));
    classifier.params.add("head.w", gauss(config.hidden_dim, 3));
    classifier.params.add("head.b", Mat::Zero(1, 3));
    return classifier;
}

PolitenessClassifier train_classifier(const std::vector<LabeledUtterance>& examples,
                                      const ClassifierConfig& config, const TrainConfig& train) {
    if (examples.empty()) throw Error("train_classifier: no examples");
    std::array<int, 3> class_counts{};
    for (const LabeledUtterance& example : examples) {
        class_counts[static_cast<std::size_t>(example.label)] += 1;
    }
    for (int c = 0; c < 3; ++c) {
        if (class_counts[static_cast<std::size_t>(c)] == 0) {
            throw Error(std::string("train_classifier: missing class ") +
                        display_name(static_cast<PolitenessLabel>(c)));
        }
    }

    std::vector<std::string> texts;
    texts.reserve(examples.size());
    for (const LabeledUtterance& example : examples) texts.push_back(example.text);
    const Tokenizer tokenizer = Tokenizer::build(texts, config.max_vocab);

    PolitenessClassifier classifier = init_classifier(config, tokenizer, train.seed);

    std::vector<std::vector<int>> encoded;
    encoded.reserve(examples.size());
    for (const LabeledUtterance& example : examples) {
        encoded.push_back(encode_utterance(tokenizer, example.text));
    }

    AdamState adam = make_adam_state(classifier.params);
    Rng shuffle_rng = make_rng(train.seed, "train-shuffle-classifier");
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < train.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng_below(shuffle_rng, i)]);
        }
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train.batch_size));
            Tape tape;
            const BoundParams bound = bind_params(tape, classifier.params, true);
            Var total{};
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t idx = order[i];
                const Var logits = classifier_logits(tape, bound, encoded[idx]);
                const Var log_probs = tape.log_softmax_rows(logits);
                const Var picked = tape.gather_entries(
                    log_probs, {{0, static_cast<int>(examples[idx].label)}});
                total = total.valid() ? tape.add(total, picked) : picked;
            }
            const Var loss = tape.mul_scalar(total, -1.0 / static_cast<double>(end - start));
            if (!std::isfinite(tape.value(loss)(0, 0))) {
                throw Error("train_classifier: loss diverged (non-finite)");
            }
            tape.backward(loss);
            const ParamStore grads = collect_grads(tape, bound, classifier.params);
            adam_step(classifier.params, grads, adam, train.lr, train.weight_decay);
        }
    }
    return classifier;
}

PolitenessVerdict classify(const PolitenessClassifier& classifier, const std::string& utterance) {
    Tape tape;
    const BoundParams bound = bind_params(tape, classifier.params, false);
    const std::vector<int> ids = encode_utterance(classifier.tokenizer, utterance);
    const Mat logits = tape.value(classifier_logits(tape, bound, ids));

    PolitenessVerdict verdict;
    verdict.probabilities = softmax3(logits);
    int best = 0;
    for (int c = 1; c < 3; ++c) {
        if (verdict.probabilities[static_cast<std::size_t>(c)] >
            verdict.probabilities[static_cast<std::size_t>(best)]) {
            best = c;
        }
    }
    verdict.label = static_cast<PolitenessLabel>(best);
    return verdict;
}

double politeness_rate(const PolitenessClassifier& classifier,
                       const std::vector<std::string>& responses) {
    if (responses.empty()) throw Error("politeness_rate: empty response list");
    std::int64_t polite = 0;
    for (const std::string& response : responses) {
        if (classify(classifier, response).label == PolitenessLabel::Polite) ++polite;
    }
    return 100.0 * static_cast<double>(polite) / static_cast<double>(responses.size());
}

double classifier_accuracy(const PolitenessClassifier& classifier,
                           const std::vector<LabeledUtterance>& examples) {
    if (examples.empty()) throw Error("classifier_accuracy: no examples");
    std::int64_t correct = 0;
    for (const LabeledUtterance& example : examples) {
        if (classify(classifier, example.text).label == example.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

std::vector<LabeledUtterance> labeled_utterances(const std::vector<DialogueRecord>& records) {
    std::vector<LabeledUtterance> utterances;
    for (const DialogueRecord& record : records) {
        for (const Turn& turn : record.turns) {
            utterances.push_back(LabeledUtterance{turn.bot, record.politeness});
        }
    }
    return utterances;
}

// ---------------------------------------------------------------------------
// Persistence (same manifest + blob scheme as model checkpoints)
// ---------------------------------------------------------------------------

namespace {

void append_le_double(std::string& out, double value) {
    std::uint64_t bits;
    std::memcpy(&bits, &value, sizeof(bits));
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double read_le_double(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    double value;
    std::memcpy(&value, &bits, sizeof(value));
    return value;
}

}  // namespace

void save_classifier(const PolitenessClassifier& classifier, const std::string& path) {
    std::string blob;
    json tensors = json::array();
    for (const std::string& name : classifier.params.names()) {
        const Mat& t = classifier.params.at(name);
        tensors.push_back(json{{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
        for (Eigen::Index i = 0; i < t.size(); ++i) append_le_double(blob, t.data()[i]);
    }
    const std::string blob_name = std::filesystem::path(path).filename().string() + ".bin";
    json manifest{
        {"format", "finchat-checkpoint-v1"},
        {"kind", "politeness-classifier"},
        {"config", json{{"emb_dim", classifier.config.emb_dim},
                        {"hidden_dim", classifier.config.hidden_dim},
                        {"max_vocab", classifier.config.max_vocab}}},
        {"tokenizer", classifier.tokenizer.tokens()},
        {"seed", classifier.seed},
        {"tensors", tensors},
        {"blob", blob_name},
        {"blob_bytes", blob.size()},
        {"checksum_fnv1a", fnv1a64_bytes(blob.data(), blob.size())},
    };
    const std::string blob_path = (std::filesystem::path(path).parent_path() / blob_name).string();
    write_file(blob_path.empty() ? blob_name : blob_path, blob);
    write_file(path, manifest.dump(2) + "\n");
}

PolitenessClassifier load_classifier(const std::string& path) {
    json manifest;
    try {
        manifest = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error("classifier " + path + ": parse error: " + e.what());
    }
    if (manifest.value("format", "") != "finchat-checkpoint-v1" ||
        manifest.value("kind", "") != "politeness-classifier") {
        throw Error("classifier " + path + ": unknown format");
    }
    const std::string blob_name = manifest.at("blob").get<std::string>();
    const std::string blob_path = (std::filesystem::path(path).parent_path() / blob_name).string();
    const std::string blob = read_file(blob_path.empty() ? blob_name : blob_path);
    if (blob.size() != manifest.at("blob_bytes").get<std::size_t>() ||
        fnv1a64_bytes(blob.data(), blob.size()) != manifest.at("checksum_fnv1a").get<std::uint64_t>()) {
        throw Error("classifier " + path + ": checksum mismatch");
    }

    PolitenessClassifier classifier;
    classifier.config.emb_dim = manifest.at("config").at("emb_dim").get<int>();
    classifier.config.hidden_dim = manifest.at("config").at("hidden_dim").get<int>();
    classifier.config.max_vocab = manifest.at("config").at("max_vocab").get<int>();
    classifier.tokenizer =
        Tokenizer::from_token_list(manifest.at("tokenizer").get<std::vector<std::string>>());
    classifier.seed = manifest.at("seed").get<std::uint64_t>();

    const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
    std::size_t offset = 0;
    for (const json& t : manifest.at("tensors")) {
        const auto rows = t.at("rows").get<Eigen::Index>();
        const auto cols = t.at("cols").get<Eigen::Index>();
        Mat tensor(rows, cols);
        for (Eigen::Index i = 0; i < tensor.size(); ++i) {
            tensor.data()[i] = read_le_double(p + offset + static_cast<std::size_t>(i) * 8);
        }
        offset += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * 8;
        classifier.params.add(t.at("name").get<std::string>(), std::move(tensor));
    }
    return classifier;
}

}  // namespace finchat
