"""Corpus BLEU, ROUGE-L and exact match, all reported on a 0-100 scale."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

Tokens = Sequence[str]

METRIC_NAMES = ("bleu2", "bleu4", "rougeL", "exact_match")


def tokenize(text: str, mode: str = "whitespace") -> list[str]:
    if mode == "whitespace":
        return text.split()
    if mode == "chars":
        return [c for c in text if not c.isspace()]
    raise ValueError(f"unknown tokenization mode {mode!r}")


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(c: int, refs: Sequence[Tokens]) -> int:
    return min((abs(len(r) - c), len(r)) for r in refs)[1]


def _bleu_stats(candidate: Tokens, references: Sequence[Tokens], n: int) -> tuple[list[int], list[int], int, int]:
    if not references:
        raise ValueError("BLEU needs at least one reference")
    matches, totals = [], []
    for k in range(1, n + 1):
        cand = _ngrams(candidate, k)
        max_ref: Counter = Counter()
        for r in references:
            max_ref |= _ngrams(r, k)
        matches.append(sum(min(c, max_ref[g]) for g, c in cand.items()))
        totals.append(max(len(candidate) - k + 1, 0))
    return matches, totals, len(candidate), _closest_ref_len(len(candidate), references)


def _combine(p_logs: list[float], c: int, r: int) -> float:
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(sum(p_logs) / len(p_logs))


def corpus_bleu(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]], n: int = 4) -> float:
    """Corpus BLEU-n with uniform weights and brevity penalty, no smoothing.

    n-gram matches and lengths are summed over the corpus before any ratio is
    taken. Any order with zero matches gives 0.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} reference sets")
    if not candidates:
        raise ValueError("empty corpus")
    m_sum, t_sum, c_sum, r_sum = [0] * n, [0] * n, 0, 0
    for cand, refs in zip(candidates, references):
        m, t, c, r = _bleu_stats(cand, refs, n)
        m_sum = [a + b for a, b in zip(m_sum, m)]
        t_sum = [a + b for a, b in zip(t_sum, t)]
        c_sum += c
        r_sum += r
    if c_sum == 0 or min(m_sum) == 0:
        return 0.0
    return _combine([math.log(m / t) for m, t in zip(m_sum, t_sum)], c_sum, r_sum)


def sentence_bleu(candidate: Tokens, references: Sequence[Tokens], n: int = 4, epsilon: float = 0.1) -> float:
    """Single-sentence BLEU; zero match counts are floored at ``epsilon``."""
    m, t, c, r = _bleu_stats(candidate, references, n)
    if c == 0:
        return 0.0
    p_logs = [math.log((mk if mk else epsilon) / max(tk, 1)) for mk, tk in zip(m, t)]
    return _combine(p_logs, c, r)


def bleu(candidate, references, n: int = 4) -> float:
    """BLEU-n of one tokenised candidate against its references (0-100)."""
    return corpus_bleu([candidate], [references], n)


def lcs_length(a: Tokens, b: Tokens) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, reference: Tokens, beta: float = 1.0) -> float:
    """LCS-based F-measure; ``beta`` weights recall over precision."""
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    b2 = beta * beta
    return 100.0 * (1 + b2) * p * r / (r + b2 * p)


def corpus_rouge_l(candidates: Sequence[Tokens], references: Sequence[Tokens], beta: float = 1.0) -> float:
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        return 0.0
    return sum(rouge_l(c, r, beta) for c, r in zip(candidates, references)) / len(candidates)


def exact_match(candidates: Sequence, references: Sequence) -> float:
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        return 0.0
    return 100.0 * sum(list(c) == list(r) for c, r in zip(candidates, references)) / len(candidates)


def score(metric: str, hypotheses: Sequence[str], references: Sequence[str], mode: str = "whitespace") -> float:
    """Score raw strings under one of ``bleu2``, ``bleu4``, ``rougeL``, ``exact_match``."""
    if metric == "exact_match":
        return exact_match([h.strip() for h in hypotheses], [r.strip() for r in references])
    hyp = [tokenize(h, mode) for h in hypotheses]
    ref = [tokenize(r, mode) for r in references]
    if metric in ("bleu2", "bleu4"):
        return corpus_bleu(hyp, [[r] for r in ref], int(metric[-1]))
    if metric == "rougeL":
        return corpus_rouge_l(hyp, ref)
    raise ValueError(f"unknown metric {metric!r}")
