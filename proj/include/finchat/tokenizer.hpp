#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "finchat/common.hpp"

namespace finchat {

// Word-level tokenizer with a corpus-built vocabulary. Text is lowercased;
// runs of [a-z0-9] are words and every other non-space byte is a
// single-character token. The fusion marker literals are matched before
// lowercasing and map to dedicated reserved ids.
class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kKnowledge = 4;
    static constexpr int kQuery = 5;
    static constexpr int kResponse = 6;
    static constexpr int kReservedCount = 7;

    static const char* marker_knowledge() { return "[KNOWLEDGE]"; }
    static const char* marker_query() { return "[QUERY]"; }
    static const char* marker_response() { return "[RESPONSE]"; }

    Tokenizer();

    // Builds the vocabulary from corpus texts: tokens ranked by frequency
    // (ties broken lexicographically), truncated to max_vocab including the
    // reserved ids.
    static Tokenizer build(const std::vector<std::string>& texts, int max_vocab = 8192);

    // Restores a tokenizer from an id-ordered token list (reserved ids
    // first), as stored in checkpoints.
    static Tokenizer from_token_list(const std::vector<std::string>& tokens);

    std::vector<int> encode(std::string_view text) const;
    std::string decode(const std::vector<int>& ids) const;

    int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
    const std::vector<std::string>& tokens() const { return id_to_token_; }
    int token_id(const std::string& token) const;  // kUnk when absent

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace finchat
