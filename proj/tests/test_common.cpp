#include <doctest.h>

#include "finchat/common.hpp"

using namespace finchat;

TEST_CASE("word_tokenize lowercases and splits punctuation") {
    CHECK(word_tokenize("Hello, World!") == std::vector<std::string>{"hello", ",", "world", "!"});
    CHECK(word_tokenize("  a  b ") == std::vector<std::string>{"a", "b"});
    CHECK(word_tokenize("") == std::vector<std::string>{});
    CHECK(word_tokenize("3.5% fee") == std::vector<std::string>{"3", ".", "5", "%", "fee"});
}

TEST_CASE("sentence_count follows the terminator-plus-whitespace rule") {
    CHECK(sentence_count("hello world.") == 1);
    CHECK(sentence_count("a. b?") == 2);
    CHECK(sentence_count("no terminator") == 1);
    CHECK(sentence_count("") == 0);
    CHECK(sentence_count("wait... what?! ok.") == 3);
    CHECK(sentence_count("version 3.5 is out.") == 1);  // inner dot is not a boundary
}

TEST_CASE("rng substreams are deterministic and stage-separated") {
    Rng a1 = make_rng(7, "corpus-synth");
    Rng a2 = make_rng(7, "corpus-synth");
    Rng b = make_rng(7, "sampling");
    CHECK(a1() == a2());
    CHECK(make_rng(7, "corpus-synth")() != b());
}

TEST_CASE("rng_below stays in range and rng_real in [0,1)") {
    Rng rng = make_rng(1, "test");
    for (int i = 0; i < 1000; ++i) {
        CHECK(rng_below(rng, 7) < 7);
        const double r = rng_real(rng);
        CHECK(r >= 0.0);
        CHECK(r < 1.0);
    }
    CHECK_THROWS_AS(rng_below(rng, 0), Error);
}

TEST_CASE("rng_weighted respects zero weights") {
    Rng rng = make_rng(3, "test");
    for (int i = 0; i < 200; ++i) {
        const std::size_t pick = rng_weighted(rng, {0.0, 1.0, 0.0});
        CHECK(pick == 1);
    }
    CHECK_THROWS_AS(rng_weighted(rng, {0.0, 0.0}), Error);
}

TEST_CASE("fnv1a64 matches known vectors") {
    // Reference values of the standard 64-bit FNV-1a parameters.
    CHECK(fnv1a64("") == 14695981039346656037ULL);
    CHECK(fnv1a64("a") == 12638187200555641996ULL);
}
