import itertools

import numpy as np
import pytest

from skillnet_nlg.config import toy_config
from skillnet_nlg.decoding import BeamConfig, beam_search, greedy_decode, greedy_decode_batch, log_softmax
from skillnet_nlg.skills import SkillSet
from skillnet_nlg.transformer import Seq2SeqTransformer

EOS = 2


def tiny_model(registry, seed, vocab=5):
    return Seq2SeqTransformer(toy_config(vocab_size=vocab, d_model=16, d_ff=16, max_positions=16), registry, seed=seed)


def exhaustive_best(model, src, skills, vocab, max_len):
    """Argmax of length-normalised log-prob over every length-``max_len`` token string,
    each truncated at its first EOS."""
    enc = model.encode(np.asarray(src), skills=skills)
    src_pad = np.asarray(src) == model.pad_id
    cache = {}

    def step_logp(prefix):
        if prefix not in cache:
            cache[prefix] = log_softmax(model.decode_step(enc, [1, *prefix], skills, src_pad).data)
        return cache[prefix]

    seen = {}
    for seq in itertools.product(range(vocab), repeat=max_len):
        if EOS in seq:
            seq = seq[: seq.index(EOS) + 1]
        if seq in seen:
            continue
        lp = sum(step_logp(seq[:i])[seq[i]] for i in range(len(seq)))
        seen[seq] = lp / len(seq)
    return min(seen, key=lambda s: (-seen[s], s)), seen


def test_beam_config_validation():
    with pytest.raises(ValueError):
        BeamConfig(beam_size=0)
    with pytest.raises(ValueError):
        BeamConfig(max_target_length=0)


@pytest.mark.parametrize("seed", range(5))
def test_beam_one_equals_greedy(registry, seed):
    model = Seq2SeqTransformer(toy_config(), registry, seed=seed)
    S = SkillSet(registry, ["question"])
    src = list(np.random.default_rng(seed).integers(5, 261, 6))
    g = greedy_decode(model, src, S, max_target_length=8)
    b = beam_search(model, src, S, BeamConfig(beam_size=1, max_target_length=8))
    assert g.tokens == b.tokens and g.logprob == b.logprob


@pytest.mark.parametrize("seed", range(10))
def test_wide_beam_is_exhaustive(registry, seed):
    model = tiny_model(registry, seed)
    S = SkillSet(registry, ["open-end"])
    src = list(np.random.default_rng(seed).integers(1, 5, 4))
    best, scores = exhaustive_best(model, src, S, 5, 3)
    hyp = beam_search(model, src, S, BeamConfig(beam_size=125, max_target_length=3))
    assert hyp.tokens == best
    assert hyp.score == pytest.approx(scores[best], abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_beam_not_worse_than_greedy(registry, seed):
    model = tiny_model(registry, 100 + seed, vocab=7)
    S = SkillSet(registry, [])
    src = list(np.random.default_rng(seed).integers(1, 7, 5))
    g = greedy_decode(model, src, S, max_target_length=5)
    for k in (2, 4, 8):
        assert beam_search(model, src, S, BeamConfig(k, 5)).score >= g.score - 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_widening_never_lowers_score(registry, seed):
    model = tiny_model(registry, 200 + seed, vocab=6)
    S = SkillSet(registry, ["conversation"])
    src = list(np.random.default_rng(seed).integers(1, 6, 4))
    scores = [beam_search(model, src, S, BeamConfig(k, 4)).score for k in (1, 2, 4, 16, 256)]
    assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


def test_hypothesis_invariants(registry):
    model = tiny_model(registry, 3)
    S = SkillSet(registry, [])
    hyp = beam_search(model, [3, 4, 1], S, BeamConfig(3, 4))
    assert hyp.logprob <= 0
    assert hyp.finished and (hyp.tokens[-1] == EOS or len(hyp.tokens) == 4)


def test_batch_greedy_matches_single(registry):
    model = Seq2SeqTransformer(toy_config(), registry, seed=4)
    S = SkillSet(registry, ["data-to-text"])
    rng = np.random.default_rng(0)
    srcs = [list(rng.integers(5, 261, n)) for n in (3, 6, 4)]
    batch = greedy_decode_batch(model, srcs, S, max_target_length=6)
    for src, out in zip(srcs, batch):
        single = greedy_decode(model, src, S, max_target_length=6)
        assert out == [t for t in single.tokens if t != EOS]
