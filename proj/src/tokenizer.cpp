#include "finchat/tokenizer.hpp"

#include <algorithm>
#include <map>

namespace finchat {

namespace {

const char* const kReservedNames[Tokenizer::kReservedCount] = {
    "<pad>", "<bos>", "<eos>", "<unk>", "[KNOWLEDGE]", "[QUERY]", "[RESPONSE]",
};

struct Piece {
    std::string text;
    bool is_marker = false;
    int marker_id = -1;
};

// Splits text into marker literals and plain segments. Markers are matched
// case-sensitively before any lowercasing.
std::vector<Piece> split_markers(std::string_view text) {
    const std::pair<const char*, int> markers[] = {
        {Tokenizer::marker_knowledge(), Tokenizer::kKnowledge},
        {Tokenizer::marker_query(), Tokenizer::kQuery},
        {Tokenizer::marker_response(), Tokenizer::kResponse},
    };
    std::vector<Piece> pieces;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t best = std::string_view::npos;
        int best_marker = -1;
        std::size_t best_len = 0;
        for (const auto& [literal, id] : markers) {
            const std::size_t found = text.find(literal, pos);
            if (found != std::string_view::npos && (best == std::string_view::npos || found < best)) {
                best = found;
                best_marker = id;
                best_len = std::char_traits<char>::length(literal);
            }
        }
        if (best == std::string_view::npos) {
            pieces.push_back(Piece{std::string(text.substr(pos)), false, -1});
            break;
        }
        if (best > pos) pieces.push_back(Piece{std::string(text.substr(pos, best - pos)), false, -1});
        pieces.push_back(Piece{std::string(text.substr(best, best_len)), true, best_marker});
        pos = best + best_len;
    }
    return pieces;
}

}  // namespace

Tokenizer::Tokenizer() {
    for (int i = 0; i < kReservedCount; ++i) {
        id_to_token_.push_back(kReservedNames[i]);
        token_to_id_[kReservedNames[i]] = i;
    }
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts, int max_vocab) {
    if (max_vocab <= kReservedCount) throw Error("tokenizer: max_vocab too small");
    std::map<std::string, std::int64_t> counts;
    for (const std::string& text : texts) {
        for (const Piece& piece : split_markers(text)) {
            if (piece.is_marker) continue;
            for (const std::string& token : word_tokenize(piece.text)) {
                counts[token] += 1;
            }
        }
    }
    std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Tokenizer tokenizer;
    for (const auto& [token, count] : ranked) {
        if (tokenizer.vocab_size() >= max_vocab) break;
        tokenizer.token_to_id_[token] = tokenizer.vocab_size();
        tokenizer.id_to_token_.push_back(token);
    }
    return tokenizer;
}

Tokenizer Tokenizer::from_token_list(const std::vector<std::string>& tokens) {
    if (tokens.size() < kReservedCount) throw Error("tokenizer: token list too short");
    for (int i = 0; i < kReservedCount; ++i) {
        if (tokens[static_cast<std::size_t>(i)] != kReservedNames[i]) {
            throw Error("tokenizer: reserved token mismatch at id " + std::to_string(i));
        }
    }
    Tokenizer tokenizer;
    for (std::size_t i = kReservedCount; i < tokens.size(); ++i) {
        if (tokenizer.token_to_id_.count(tokens[i])) {
            throw Error("tokenizer: duplicate token '" + tokens[i] + "'");
        }
        tokenizer.token_to_id_[tokens[i]] = tokenizer.vocab_size();
        tokenizer.id_to_token_.push_back(tokens[i]);
    }
    return tokenizer;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const Piece& piece : split_markers(text)) {
        if (piece.is_marker) {
            ids.push_back(piece.marker_id);
            continue;
        }
        for (const std::string& token : word_tokenize(piece.text)) {
            const auto it = token_to_id_.find(token);
            ids.push_back(it == token_to_id_.end() ? kUnk : it->second);
        }
    }
    return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= vocab_size()) throw Error("decode: id out of range");
        if (!out.empty()) out += ' ';
        out += id_to_token_[static_cast<std::size_t>(id)];
    }
    return out;
}

int Tokenizer::token_id(const std::string& token) const {
    const auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

}  // namespace finchat
