"""Synthetic string-transduction tasks for desk-scale experiments."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import TaskSpec, write_jsonl

ALPHABET = "abcdefgh"

TRANSFORMS = {
    "copy": lambda s: s,
    "reverse": lambda s: s[::-1],
    "rotate": lambda s: s[1:] + s[:1],
    "swap-halves": lambda s: s[len(s) // 2:] + s[: len(s) // 2],
}

# skills each synthetic task routes to (general is implied)
SYNTHETIC_SKILLS = {
    "copy": ("non-open-end",),
    "reverse": ("data-to-text",),
    "rotate": ("non-open-end",),
    "swap-halves": ("data-to-text",),
}


def make_pairs(kind: str, n: int, seed: int = 0, alphabet: str = ALPHABET,
               min_len: int = 3, max_len: int = 8) -> list[tuple[str, str]]:
    if kind not in TRANSFORMS:
        raise KeyError(f"unknown synthetic task {kind!r}; choose from {sorted(TRANSFORMS)}")
    rng = np.random.default_rng(seed)
    fn = TRANSFORMS[kind]
    pairs = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        s = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), length))
        pairs.append((s, fn(s)))
    return pairs


def make_task(kind: str, n_train: int = 2000, n_dev: int = 100, n_test: int = 100, seed: int = 0,
              metric: str = "exact_match", **kw) -> TaskSpec:
    """In-memory task; dev/test strings use different seeds from train."""
    return TaskSpec(
        name=kind,
        prefix=kind,
        skills=SYNTHETIC_SKILLS[kind],
        metric=metric,
        train=make_pairs(kind, n_train, seed, **kw),
        dev=make_pairs(kind, n_dev, seed + 10_000, **kw),
        test=make_pairs(kind, n_test, seed + 20_000, **kw),
    )


def write_task(kind: str, directory: str | Path, **kw) -> TaskSpec:
    """Write ``{kind}.{train,dev,test}.jsonl`` and return a spec pointing at them."""
    directory = Path(directory)
    task = make_task(kind, **kw)
    for split in ("train", "dev", "test"):
        path = directory / f"{kind}.{split}.jsonl"
        write_jsonl(path, ({"source": s, "target": t} for s, t in getattr(task, split)))
        setattr(task, f"{split}_path", str(path))
    return task
