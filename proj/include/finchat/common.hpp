#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace finchat {

// Base error for everything the pipeline can throw. `what()` is always a
// single line so the CLI can emit machine-parsable diagnostics.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& message) : std::runtime_error(message) {}
};

// ---------------------------------------------------------------------------
// Hashing (FNV-1a, 64-bit). Used for feature hashing, fingerprints and
// artifact checksums; fully specified so every platform produces the same
// values.
// ---------------------------------------------------------------------------

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

inline std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = kFnvOffset) {
    std::uint64_t h = seed;
    for (unsigned char c : text) {
        h ^= static_cast<std::uint64_t>(c);
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a64_bytes(const void* data, std::size_t n, std::uint64_t seed = kFnvOffset) {
    std::uint64_t h = seed;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<std::uint64_t>(p[i]);
        h *= kFnvPrime;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Randomness. All randomness flows from one root seed through named
// per-stage substreams, so a stage reproduces independently of what ran
// before it. std::mt19937_64 output is pinned by the standard; the draw
// helpers below avoid std::*_distribution, whose mappings are
// implementation-defined.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

inline std::uint64_t substream_seed(std::uint64_t root, std::string_view stage) {
    std::uint64_t h = fnv1a64(stage);
    h ^= root + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
}

inline Rng make_rng(std::uint64_t root, std::string_view stage) {
    return Rng(substream_seed(root, stage));
}

// Uniform integer in [0, n) by rejection sampling (exact, unbiased).
inline std::uint64_t rng_below(Rng& rng, std::uint64_t n) {
    if (n == 0) throw Error("rng_below: bound must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = rng();
    while (v >= limit) v = rng();
    return v % n;
}

// Uniform double in [0, 1) with 53 bits of precision.
inline double rng_real(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller (no cached spare; one value per call).
inline double rng_gauss(Rng& rng) {
    double u1 = rng_real(rng);
    while (u1 <= 0.0) u1 = rng_real(rng);
    const double u2 = rng_real(rng);
    const double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

// Index drawn from non-negative weights proportional to their mass.
std::size_t rng_weighted(Rng& rng, const std::vector<double>& weights);

// ---------------------------------------------------------------------------
// Text utilities. One tokenization rule for the whole repo: lowercase,
// runs of [a-z0-9] are words, every other non-space byte is its own token.
// ---------------------------------------------------------------------------

std::string to_lower_ascii(std::string_view text);
std::string trim(std::string_view text);

std::vector<std::string> word_tokenize(std::string_view text);

// Number of sentences: segments delimited by a run of {. ! ?} followed by
// whitespace or end of text; only segments containing non-space characters
// count.
int sentence_count(std::string_view text);

// ---------------------------------------------------------------------------
// Small file helpers.
// ---------------------------------------------------------------------------

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);
std::vector<std::string> read_lines(const std::string& path);

}  // namespace finchat
