#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "finchat/corpus.hpp"
#include "finchat/tinylm.hpp"
#include "finchat/tokenizer.hpp"
#include "finchat/training.hpp"

namespace finchat {

struct ClassifierConfig {
    int emb_dim = 32;
    int hidden_dim = 32;
    int max_vocab = 4096;
};

// Three-class politeness classifier: mean-pooled token embeddings through
// one tanh layer give the pooled representation r; the head computes
// o = W_p r + b_p over C = 3 classes, probabilities via softmax.
struct PolitenessClassifier {
    ClassifierConfig config;
    ParamStore params;  // emb, enc.w, enc.b, head.w (d x 3), head.b (1 x 3)
    Tokenizer tokenizer;
    std::uint64_t seed = 0;
};

struct PolitenessVerdict {
    PolitenessLabel label = PolitenessLabel::Polite;
    std::array<double, 3> probabilities{};  // Polite, Neutral, Impolite
};

struct LabeledUtterance {
    std::string text;
    PolitenessLabel label = PolitenessLabel::Neutral;
};

PolitenessClassifier init_classifier(const ClassifierConfig& config, const Tokenizer& tokenizer,
                                     std::uint64_t seed);

// 3-class cross-entropy with Adam; requires at least one example per class.
// Deterministic per seed.
PolitenessClassifier train_classifier(const std::vector<LabeledUtterance>& examples,
                                      const ClassifierConfig& config, const TrainConfig& train);

// Argmax verdict; ties resolve in fixed class order Polite < Neutral <
// Impolite.
PolitenessVerdict classify(const PolitenessClassifier& classifier, const std::string& utterance);

// 100 * (#Polite verdicts) / N.
double politeness_rate(const PolitenessClassifier& classifier,
                       const std::vector<std::string>& responses);

double classifier_accuracy(const PolitenessClassifier& classifier,
                           const std::vector<LabeledUtterance>& examples);

// Bot utterances with the dialogue-level politeness label attached.
std::vector<LabeledUtterance> labeled_utterances(const std::vector<DialogueRecord>& records);

void save_classifier(const PolitenessClassifier& classifier, const std::string& path);
PolitenessClassifier load_classifier(const std::string& path);

}  // namespace finchat
