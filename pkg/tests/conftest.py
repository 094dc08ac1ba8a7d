import numpy as np
import pytest

from skillnet_nlg.config import toy_config
from skillnet_nlg.skills import SkillRegistry
from skillnet_nlg.transformer import Seq2SeqTransformer


def central_difference(f, param, idx, h=1e-5):
    """d f / d param[idx] by central differences; restores the entry afterwards."""
    orig = param.data[idx]
    param.data[idx] = orig + h
    fp = f()
    param.data[idx] = orig - h
    fm = f()
    param.data[idx] = orig
    return (fp - fm) / (2 * h)


def block_rel_err(analytic, numeric, floor=1e-6):
    """Max abs difference over the block, relative to the block's largest magnitude.

    Magnitudes below ``floor`` are treated as ``floor``: central differences on
    an O(1) loss carry ~1e-11 roundoff, so blocks whose true gradient is zero
    (e.g. key biases, which softmax ignores) can only be checked absolutely.
    """
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def sample_indices(grad, rng, n_top=3, n_rand=3):
    """Largest-gradient entries plus a few random ones."""
    flat = np.abs(grad).ravel()
    top = list(np.argsort(flat)[-n_top:])
    rand = list(rng.choice(flat.size, size=min(n_rand, flat.size), replace=False))
    return [np.unravel_index(i, grad.shape) for i in dict.fromkeys(top + rand)]


def random_batch(rng, vocab, batch=2, src_len=(3, 7), tgt_len=(3, 6), low=5):
    """Ragged random (src, tgt) id lists; targets start with BOS=1 and end with EOS=2."""
    srcs, tgts = [], []
    for _ in range(batch):
        srcs.append(list(rng.integers(low, vocab, rng.integers(*src_len))))
        tgts.append([1] + list(rng.integers(low, vocab, rng.integers(*tgt_len))) + [2])
    return srcs, tgts


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def registry():
    return SkillRegistry.default()


@pytest.fixture
def toy_model(registry):
    return Seq2SeqTransformer(toy_config(), registry, seed=7)


# ---------------------------------------------------------------- acceptance verdict lines

ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
