#include "finchat/common.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace finchat {

std::size_t rng_weighted(Rng& rng, const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw Error("rng_weighted: negative weight");
        total += w;
    }
    if (total <= 0.0) throw Error("rng_weighted: weights sum to zero");
    const double r = rng_real(rng) * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (r < acc) return i;
    }
    return weights.size() - 1;
}

std::string to_lower_ascii(std::string_view text) {
    std::string out(text);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

std::string trim(std::string_view text) {
    std::size_t b = 0;
    std::size_t e = text.size();
    while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
    return std::string(text.substr(b, e - b));
}

std::vector<std::string> word_tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
    };
    for (char raw : text) {
        unsigned char c = static_cast<unsigned char>(raw);
        if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
        const bool alnum = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
        if (alnum) {
            word.push_back(static_cast<char>(c));
        } else if (std::isspace(c)) {
            flush();
        } else {
            flush();
            tokens.push_back(std::string(1, static_cast<char>(c)));
        }
    }
    flush();
    return tokens;
}

int sentence_count(std::string_view text) {
    int count = 0;
    bool segment_has_content = false;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        const char c = text[i];
        if (c == '.' || c == '!' || c == '?') {
            std::size_t j = i;
            while (j < n && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
            const bool boundary = j >= n || std::isspace(static_cast<unsigned char>(text[j]));
            if (boundary) {
                if (segment_has_content) ++count;
                segment_has_content = false;
                i = j;
                continue;
            }
            segment_has_content = true;
            i = j;
            continue;
        }
        if (!std::isspace(static_cast<unsigned char>(c))) segment_has_content = true;
        ++i;
    }
    if (segment_has_content) ++count;
    return count;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed: " + path);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

}  // namespace finchat
