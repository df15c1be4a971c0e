#!/usr/bin/env python3
"""Independent word-count oracle for the corpus statistics fixture.

Regenerates the frozen expected values:

    python3 tests/oracle/corpus_stats_oracle.py tests/fixtures/stats_corpus.jsonl \
        > tests/fixtures/stats_expected.json
"""

import json
import sys


def tokenize(text: str) -> list[str]:
    tokens = []
    word = []
    for ch in text.encode("utf-8"):
        if 65 <= ch <= 90:
            ch += 32
        alnum = (97 <= ch <= 122) or (48 <= ch <= 57)
        if alnum:
            word.append(ch)
        elif ch in b" \t\n\r\x0b\x0c":
            if word:
                tokens.append(bytes(word).decode())
                word = []
        else:
            if word:
                tokens.append(bytes(word).decode())
                word = []
            tokens.append(bytes([ch]).decode("latin-1"))
    if word:
        tokens.append(bytes(word).decode())
    return tokens


def sentence_count(text: str) -> int:
    count = 0
    has_content = False
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c in ".!?":
            j = i
            while j < n and text[j] in ".!?":
                j += 1
            if j >= n or text[j].isspace():
                if has_content:
                    count += 1
                has_content = False
                i = j
                continue
            has_content = True
            i = j
            continue
        if not c.isspace():
            has_content = True
        i += 1
    if has_content:
        count += 1
    return count


def main():
    path = sys.argv[1]
    records = [json.loads(line) for line in open(path) if line.strip()]

    vocab = set()
    bigrams = set()
    trigrams = set()
    user_turns = bot_turns = 0
    user_tokens = bot_tokens = 0
    user_sentences = bot_sentences = 0
    total_tokens = 0

    for record in records:
        for turn in record["turns"]:
            u = tokenize(turn["user"])
            b = tokenize(turn["bot"])
            user_turns += 1
            bot_turns += 1
            user_tokens += len(u)
            bot_tokens += len(b)
            user_sentences += sentence_count(turn["user"])
            bot_sentences += sentence_count(turn["bot"])
            total_tokens += len(u) + len(b)
            vocab.update(u)
            vocab.update(b)
            for i in range(len(u) - 1):
                bigrams.add((u[i], u[i + 1]))
            for seq in (u, b):
                for i in range(len(seq) - 2):
                    trigrams.add((seq[i], seq[i + 1], seq[i + 2]))

    out = {
        "vocabulary_size": len(vocab),
        "avg_user_tokens": user_tokens / user_turns,
        "avg_bot_tokens": bot_tokens / bot_turns,
        "avg_user_sentences": user_sentences / user_turns,
        "avg_bot_sentences": bot_sentences / bot_turns,
        "words_per_conversation": total_tokens / len(records),
        "unique_bigrams": len(bigrams),
        "unique_trigrams": len(trigrams),
    }
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
