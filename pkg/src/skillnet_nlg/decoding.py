"""Greedy and beam-search generation.

Hypothesis scores are cumulative log-probabilities divided by the number of
generated tokens (EOS included, BOS excluded). Ties are broken towards the
lexicographically smaller token sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import BOS, EOS
from .transformer import pad_batch


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 4
    max_target_length: int = 64
    length_normalize: bool = True

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_target_length < 1:
            raise ValueError("max_target_length must be >= 1")


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]  # generated ids, BOS excluded
    logprob: float
    finished: bool = True

    @property
    def score(self) -> float:
        return self.logprob / max(len(self.tokens), 1)

    def text_ids(self, eos_id: int = EOS) -> list[int]:
        return [t for t in self.tokens if t != eos_id]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _encode(model, src, skills):
    src = np.asarray(src, dtype=np.int64)
    with T.no_grad():
        enc = model.encode(src, skills=skills)
    return enc, (src == model.pad_id)


def _rank(score: float, tokens: tuple[int, ...]):
    return (-score, tokens)


def greedy_decode(model, src, skills=None, max_target_length: int = 64,
                  bos_id: int = BOS, eos_id: int = EOS) -> Hypothesis:
    if max_target_length < 1:
        raise ValueError("max_target_length must be >= 1")
    enc, src_pad = _encode(model, src, skills)
    tokens: tuple[int, ...] = ()
    cum = 0.0
    for _ in range(max_target_length):
        logp = log_softmax(model.decode_step(enc, [bos_id, *tokens], skills, src_pad).data)
        totals = cum + logp
        tok = int(np.argmax(totals))
        cum = float(totals[tok])
        tokens += (tok,)
        if tok == eos_id:
            break
    return Hypothesis(tokens, cum, True)


def beam_search(model, src, skills=None, cfg: BeamConfig | None = None,
                bos_id: int = BOS, eos_id: int = EOS) -> Hypothesis:
    """Best hypothesis under length-normalised cumulative log-probability.

    Live hypotheses all share a length, so they are pruned to ``beam_size``
    by raw cumulative log-probability. A kept candidate that ends in EOS or
    reaches ``max_target_length`` moves to the finished pool, which is ranked
    by the normalised score at the end.
    """
    cfg = cfg or BeamConfig()
    enc, src_pad = _encode(model, src, skills)
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[Hypothesis] = []
    for step in range(cfg.max_target_length):
        prefixes = np.asarray([[bos_id, *toks] for toks, _ in live], dtype=np.int64)
        logp = log_softmax(model.decode_step(enc, prefixes, skills, src_pad).data)
        if logp.ndim == 1:
            logp = logp[None]
        cands = []
        for (toks, cum), row in zip(live, logp):
            totals = cum + row
            for tok in range(row.shape[0]):
                cands.append((float(totals[tok]), toks + (tok,)))
        cands.sort(key=lambda c: _rank(c[0], c[1]))
        live = []
        last = step == cfg.max_target_length - 1
        for cum, toks in cands[: cfg.beam_size]:
            if toks[-1] == eos_id or last:
                finished.append(Hypothesis(toks, cum, True))
            else:
                live.append((toks, cum))
        if not live:
            break
    key = (lambda h: _rank(h.score, h.tokens)) if cfg.length_normalize else (lambda h: _rank(h.logprob, h.tokens))
    return min(finished, key=key)


def greedy_decode_batch(model, srcs, skills=None, max_target_length: int = 64,
                        bos_id: int = BOS, eos_id: int = EOS) -> list[list[int]]:
    """Greedy decoding of many sources at once; returns generated ids without EOS."""
    src = pad_batch(srcs, model.pad_id)
    src_pad = src == model.pad_id
    with T.no_grad():
        enc = model.encode(src, src_pad, skills)
    n = src.shape[0]
    out = np.full((n, 1), bos_id, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    for _ in range(max_target_length):
        logits = model.decode_step(enc, out, skills, src_pad).data
        nxt = np.where(done, model.pad_id, logits.argmax(axis=-1))
        out = np.concatenate([out, nxt[:, None]], axis=1)
        done |= nxt == eos_id
        if done.all():
            break
    results = []
    for row in out[:, 1:]:
        toks = []
        for t in row:
            if t == eos_id or t == model.pad_id:
                break
            toks.append(int(t))
        results.append(toks)
    return results
