#!/usr/bin/env python3
"""Independent reference implementation of the evaluation metrics.

Regenerates the frozen worksheet the C++ metric tests compare against:

    python3 tests/oracle/metrics_oracle.py > tests/fixtures/metrics_worksheet.jsonl

Everything here is implemented from the documented definitions only, without
looking at the C++ code paths, so the two sides can disagree when either has
a bug.
"""

import json
import math

FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211
MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & MASK64
    return h


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


def ngrams(tokens, n):
    out = {}
    for i in range(len(tokens) - n + 1):
        key = "\x1f".join(tokens[i : i + n])
        out[key] = out.get(key, 0) + 1
    return out


def closest_ref_length(hyp_len, ref_lens):
    best = ref_lens[0]
    for length in ref_lens:
        if abs(length - hyp_len) < abs(best - hyp_len) or (
            abs(length - hyp_len) == abs(best - hyp_len) and length < best
        ):
            best = length
    return best


def bleu_n(hyp_text, ref_texts, n, smoothing=True):
    hyp = tokenize(hyp_text)
    if not hyp:
        return 0.0
    refs = [tokenize(r) for r in ref_texts]
    log_sum = 0.0
    for k in range(1, n + 1):
        hyp_counts = ngrams(hyp, k)
        max_ref = {}
        for ref in refs:
            for gram, count in ngrams(ref, k).items():
                max_ref[gram] = max(max_ref.get(gram, 0), count)
        total = sum(hyp_counts.values())
        clipped = sum(min(c, max_ref.get(g, 0)) for g, c in hyp_counts.items())
        if total == 0:
            return 0.0
        if clipped == 0:
            if not smoothing:
                return 0.0
            p = 1.0 / (total + 1.0)
        else:
            p = clipped / total
        log_sum += math.log(p)
    geo = math.exp(log_sum / n)
    ref_len = closest_ref_length(len(hyp), [len(r) for r in refs])
    bp = 1.0 if len(hyp) >= ref_len else math.exp(1.0 - ref_len / len(hyp))
    return geo * bp


def f1(p, r):
    return 0.0 if p + r <= 0 else 2.0 * p * r / (p + r)


def rouge_n(hyp_text, ref_text, n):
    hyp = tokenize(hyp_text)
    ref = tokenize(ref_text)
    hyp_counts = ngrams(hyp, n)
    ref_counts = ngrams(ref, n)
    overlap = sum(min(c, ref_counts.get(g, 0)) for g, c in hyp_counts.items())
    hyp_total = sum(hyp_counts.values())
    ref_total = sum(ref_counts.values())
    p = overlap / hyp_total if hyp_total else 0.0
    r = overlap / ref_total if ref_total else 0.0
    return p, r, f1(p, r)


def rouge_l(hyp_text, ref_text):
    hyp = tokenize(hyp_text)
    ref = tokenize(ref_text)
    if not hyp or not ref:
        return 0.0, 0.0, 0.0
    prev = [0] * (len(ref) + 1)
    for i in range(1, len(hyp) + 1):
        cur = [0] * (len(ref) + 1)
        for j in range(1, len(ref) + 1):
            cur[j] = prev[j - 1] + 1 if hyp[i - 1] == ref[j - 1] else max(prev[j], cur[j - 1])
        prev = cur
    lcs = prev[len(ref)]
    p = lcs / len(hyp)
    r = lcs / len(ref)
    return p, r, f1(p, r)


def stem(word):
    if word.endswith("ing") and len(word) > 5:
        return word[:-3]
    if word.endswith("ed") and len(word) > 4:
        return word[:-2]
    if word.endswith("es") and len(word) > 4:
        return word[:-2]
    if word.endswith("s") and len(word) > 3:
        return word[:-1]
    return word


def meteor(hyp_text, ref_text):
    hyp = tokenize(hyp_text)
    ref = tokenize(ref_text)
    if not hyp or not ref:
        return 0.0
    alignment = [-1] * len(hyp)
    used = [False] * len(ref)
    for predicate in (lambda a, b: a == b, lambda a, b: stem(a) == stem(b)):
        for i in range(len(hyp)):
            if alignment[i] >= 0:
                continue
            for j in range(len(ref)):
                if not used[j] and predicate(hyp[i], ref[j]):
                    alignment[i] = j
                    used[j] = True
                    break
    matches = 0
    chunks = 0
    prev_ref = -2
    for a in alignment:
        if a < 0:
            prev_ref = -2
            continue
        matches += 1
        if a != prev_ref + 1:
            chunks += 1
        prev_ref = a
    if matches == 0:
        return 0.0
    p = matches / len(hyp)
    r = matches / len(ref)
    f_mean = 10.0 * p * r / (r + 9.0 * p)
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1.0 - penalty)


def embed(text, dim=256):
    tokens = tokenize(text)
    values = [0.0] * dim
    feats = [f"1|{t}" for t in tokens]
    feats += [f"2|{tokens[i]}\x1f{tokens[i+1]}" for i in range(len(tokens) - 1)]
    for feat in feats:
        h = fnv1a64(feat.encode("latin-1"))
        bucket = (h >> 8) % dim
        values[bucket] += 1.0 if (h & 1) else -1.0
    norm = math.sqrt(sum(v * v for v in values))
    if norm > 0:
        values = [v / norm for v in values]
    return values


def cosine(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0 or nv == 0:
        return 0.0
    return dot / (nu * nv)


def embed_score(hyp_text, ref_text):
    hyp = tokenize(hyp_text)
    ref = tokenize(ref_text)

    def windows(tokens):
        out = []
        for i in range(len(tokens)):
            lo = max(0, i - 1)
            hi = min(len(tokens) - 1, i + 1)
            out.append(embed(" ".join(tokens[lo : hi + 1])))
        return out

    hv = windows(hyp)
    rv = windows(ref)
    p = sum(max(cosine(h, r) for r in rv) for h in hv) / len(hv)
    r = sum(max(cosine(r_, h) for h in hv) for r_ in rv) / len(rv)
    return p, r, f1(p, r)


PAIRS = [
    ("the cat sat", "the cat sat on the mat"),
    ("the cat sat on mat", "the cat sat on the mat"),
    ("c b a", "a b c"),
    ("interest compounds daily on this account", "interest compounds daily on this account"),
    ("please check your credit card statement", "kindly review your credit card statement today"),
    ("mutual funds spread risk across assets", "mutual funds are used for diversifying investments"),
    ("a stop loss protects against sudden drops", "set a stop loss to protect against sudden drops"),
    ("pay the minimum balance before the deadline", "always pay the minimum balance before the due date"),
    ("your loan request was approved yesterday", "unrelated words entirely here"),
    ("savings", "savings account"),
    ("the the the fee", "the fee"),
    ("refunds arrive within ten business days", "refunds arrive within ten business days usually"),
    ("index funds track a market benchmark closely", "an index fund tracks its market benchmark"),
    ("he invested early and retired comfortably", "she invests early and retires comfortably"),
    ("what is a demat account ?", "a demat account holds securities in custody"),
    ("transfer failed , try again later", "the transfer failed ; please try again later"),
    ("budgeting reduces month end surprises", "careful budgeting reduces surprises at month end"),
    ("THE CAT SAT", "the cat sat on the mat"),
    ("rates rise when inflation stays high", "rates usually rise when inflation is high"),
    ("diversify , then rebalance every quarter", "diversify your portfolio and rebalance each quarter"),
]


def main():
    for hyp, ref in PAIRS:
        row = {
            "hyp": hyp,
            "ref": ref,
            "bleu": [bleu_n(hyp, [ref], n) for n in (1, 2, 3, 4)],
            "bleu_nosmooth": [bleu_n(hyp, [ref], n, smoothing=False) for n in (1, 2, 3, 4)],
            "rouge1": rouge_n(hyp, ref, 1),
            "rouge2": rouge_n(hyp, ref, 2),
            "rougeL": rouge_l(hyp, ref),
            "meteor": meteor(hyp, ref),
            "embed": embed_score(hyp, ref),
        }
        print(json.dumps(row))


if __name__ == "__main__":
    main()
