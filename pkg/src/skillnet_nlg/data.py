"""Byte-level vocabulary, task definitions and the temperature-scaled task sampler."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .metrics import METRIC_NAMES as METRICS

PAD, BOS, EOS, UNK, SEP = 0, 1, 2, 3, 4


class Vocabulary:
    """Bytes 0..255 map to ids ``offset..offset+255``; ids below are reserved."""

    pad_id = PAD
    bos_id = BOS
    eos_id = EOS
    unk_id = UNK
    sep_id = SEP
    offset = 5

    def __len__(self) -> int:
        return self.offset + 256

    @property
    def size(self) -> int:
        return len(self)

    def encode_bytes(self, data: bytes) -> list[int]:
        return [b + self.offset for b in data]

    def decode_bytes(self, ids: Iterable[int]) -> bytes:
        return bytes(i - self.offset for i in ids if self.offset <= i < self.offset + 256)

    def encode(self, text: str) -> list[int]:
        return self.encode_bytes(text.encode("utf-8"))

    def decode(self, ids: Iterable[int]) -> str:
        """Reserved ids are dropped; invalid UTF-8 is replaced rather than raised."""
        return self.decode_bytes(ids).decode("utf-8", errors="replace")


@dataclass
class TaskSpec:
    name: str
    prefix: str = ""
    train_path: str | None = None
    dev_path: str | None = None
    test_path: str | None = None
    skills: tuple[str, ...] = ()
    metric: str = "rougeL"
    n_examples: int | None = None
    train: list[tuple[str, str]] = field(default_factory=list, repr=False)
    dev: list[tuple[str, str]] = field(default_factory=list, repr=False)
    test: list[tuple[str, str]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.prefix:
            self.prefix = self.name
        if self.metric not in METRICS:
            raise ValueError(f"unsupported metric {self.metric!r}; choose from {METRICS}")
        self.skills = tuple(self.skills)

    @property
    def size(self) -> int:
        """Number of training examples (n_i in the mixing formula)."""
        if self.train:
            return len(self.train)
        return int(self.n_examples or 0)

    def load(self, root: str | Path | None = None) -> "TaskSpec":
        base = Path(root) if root else Path(".")
        for split in ("train", "dev", "test"):
            path = getattr(self, f"{split}_path")
            if path:
                setattr(self, split, read_jsonl_pairs(base / path))
        return self


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_jsonl(path: str | Path, rows: Iterable[Mapping]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_jsonl_pairs(path: str | Path) -> list[tuple[str, str]]:
    rows = read_jsonl(path)
    for i, r in enumerate(rows):
        if "source" not in r or "target" not in r:
            raise ValueError(f"{path}:{i + 1}: expected fields 'source' and 'target'")
    return [(r["source"], r["target"]) for r in rows]


def encode_example(task: TaskSpec, src: str, tgt: str, vocab: Vocabulary | None = None,
                   max_source_length: int | None = None, max_target_length: int | None = None) -> tuple[list[int], list[int]]:
    """``prefix ++ SEP ++ src`` and ``BOS ++ tgt ++ EOS`` as token ids."""
    vocab = vocab or Vocabulary()
    src_ids = vocab.encode(task.prefix) + [vocab.sep_id] + vocab.encode(src)
    body = vocab.encode(tgt)
    if max_source_length is not None:
        src_ids = src_ids[:max_source_length]
    if max_target_length is not None:
        body = body[: max(max_target_length - 2, 0)]
    return src_ids, [vocab.bos_id] + body + [vocab.eos_id]


# ---------------------------------------------------------------- sampling plan

@dataclass(frozen=True)
class SamplerPlan:
    tasks: tuple[str, ...]
    sizes: tuple[int, ...]
    capped: tuple[int, ...]
    probs: tuple[float, ...]
    temperature: float
    cap: int
    seed: int = 0

    def prob(self, task: str) -> float:
        return self.probs[self.tasks.index(task)]

    def table(self) -> str:
        lines = [f"# K={self.cap} T={self.temperature:g}", f"{'task':<28}{'n_i':>12}{'D_i':>12}{'p_i':>12}"]
        for row in zip(self.tasks, self.sizes, self.capped, self.probs):
            lines.append(f"{row[0]:<28}{row[1]:>12d}{row[2]:>12d}{row[3]:>12.6f}")
        return "\n".join(lines)


def build_plan(tasks: Sequence[TaskSpec] | Mapping[str, int], K: int, T: float, seed: int = 0) -> SamplerPlan:
    """Task probabilities ``p_i = D_i^(1/T) / sum_j D_j^(1/T)`` with ``D_i = min(n_i, K)``."""
    if K < 1:
        raise ValueError("cap K must be >= 1")
    if not T > 0:
        raise ValueError("temperature T must be > 0")
    items = list(tasks.items()) if isinstance(tasks, Mapping) else [(t.name, t.size) for t in tasks]
    if not items:
        raise ValueError("at least one task is required")
    names = tuple(n for n, _ in items)
    sizes = tuple(int(s) for _, s in items)
    capped = tuple(min(s, K) for s in sizes)
    if not any(capped):
        raise ValueError("every task has zero training examples")
    D = np.asarray(capped, dtype=np.float64)
    # scale by max before the power to stay finite for tiny T
    w = np.where(D > 0, (D / D.max()) ** (1.0 / T), 0.0)
    p = w / w.sum()
    return SamplerPlan(names, sizes, capped, tuple(float(x) for x in p), float(T), int(K), int(seed))


class MultiTaskSampler:
    """Draws single-task mini-batches according to a :class:`SamplerPlan`.

    Within a task, examples are taken without replacement and reshuffled at
    each epoch boundary. One generator drives both task draws and shuffles.
    """

    def __init__(self, plan: SamplerPlan, tasks: Sequence[TaskSpec], vocab: Vocabulary | None = None,
                 max_source_length: int | None = None, max_target_length: int | None = None):
        self.plan = plan
        self.vocab = vocab or Vocabulary()
        by_name = {t.name: t for t in tasks}
        missing = [n for n in plan.tasks if n not in by_name]
        if missing:
            raise KeyError(f"plan names tasks without data: {missing}")
        self.tasks = [by_name[n] for n in plan.tasks]
        self.encoded = [
            [encode_example(t, s, g, self.vocab, max_source_length, max_target_length) for s, g in t.train]
            for t in self.tasks
        ]
        self.rng = np.random.default_rng(plan.seed)
        self._perm: list[np.ndarray | None] = [None] * len(self.tasks)
        self._cursor = [0] * len(self.tasks)

    def draw_task(self) -> int:
        return int(self.rng.choice(len(self.plan.tasks), p=self.plan.probs))

    def _take(self, k: int, batch_size: int) -> list[int]:
        n = len(self.encoded[k])
        if n == 0:
            raise ValueError(f"task {self.plan.tasks[k]!r} has an empty training set")
        out: list[int] = []
        while len(out) < batch_size:
            if self._perm[k] is None or self._cursor[k] >= n:
                self._perm[k] = self.rng.permutation(n)
                self._cursor[k] = 0
            take = min(batch_size - len(out), n - self._cursor[k])
            out.extend(int(i) for i in self._perm[k][self._cursor[k]: self._cursor[k] + take])
            self._cursor[k] += take
        return out

    def next_batch(self, batch_size: int) -> tuple[str, list[list[int]], list[list[int]]]:
        k = self.draw_task()
        idx = self._take(k, batch_size)
        data = self.encoded[k]
        return self.plan.tasks[k], [data[i][0] for i in idx], [data[i][1] for i in idx]

    def state_dict(self) -> dict:
        return {
            "rng": self.rng.bit_generator.state,
            "perm": [None if p is None else p.tolist() for p in self._perm],
            "cursor": list(self._cursor),
        }

    def load_state_dict(self, state: dict) -> None:
        self.rng.bit_generator.state = state["rng"]
        self._perm = [None if p is None else np.asarray(p, dtype=np.int64) for p in state["perm"]]
        self._cursor = list(state["cursor"])


# Training-set sizes of the five multi-task datasets, used by sampler-plan demos.
REFERENCE_TASK_SIZES = {
    "LCSTS": 2_160_000,
    "AdGen": 114_000,
    "MATINF-QA": 740_000,
    "KdConv": 63_000,
    "NLPCC": 1_200_000,
}
REFERENCE_CAP_K = 2 ** 21
