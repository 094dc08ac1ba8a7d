"""Skill registry, task routing, skill FFN banks and parameter accounting.

A modified layer holds one FFN per registered skill. A task activates a
subset ``S`` of skills; only those FFNs run, and their outputs are averaged
to stand in for the single FFN output of a plain transformer layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import yaml

from . import tensor as T
from .config import ModelConfig

OPEN_END = "open-end"
NON_OPEN_END = "non-open-end"
CONVERSATION = "conversation"
DATA_TO_TEXT = "data-to-text"
QUESTION = "question"
GENERAL = "general"

SKILL_DEFINITIONS = {
    OPEN_END: "open-ended text generation",
    NON_OPEN_END: "non-open-ended text generation",
    CONVERSATION: "understand the conversational contexts",
    DATA_TO_TEXT: "generate text from structured data",
    QUESTION: "understand natural language questions",
    GENERAL: "generic skill",
}


class SkillRegistry:
    """Ordered, immutable list of skill names with one designated general skill."""

    def __init__(self, names: Iterable[str], general: str = GENERAL):
        names = tuple(names)
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate skill names in {names}")
        if general not in names:
            raise ValueError(f"general skill {general!r} missing from registry {names}")
        self.names = names
        self.general = general
        self.general_index = names.index(general)
        self._index = {n: i for i, n in enumerate(names)}

    @classmethod
    def default(cls) -> "SkillRegistry":
        return cls(tuple(SKILL_DEFINITIONS))

    @classmethod
    def single(cls) -> "SkillRegistry":
        return cls((GENERAL,))

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __eq__(self, other) -> bool:
        return isinstance(other, SkillRegistry) and (self.names, self.general) == (other.names, other.general)

    def __hash__(self) -> int:
        return hash((self.names, self.general))

    def __repr__(self) -> str:
        return f"SkillRegistry({list(self.names)})"

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown skill {name!r}; registered: {', '.join(self.names)}") from None

    def skillset(self, skills: Iterable[str | int] = ()) -> "SkillSet":
        return SkillSet(self, skills)

    def all(self) -> "SkillSet":
        return SkillSet(self, range(len(self)))


class SkillSet:
    """Sorted set of active skill indices; the general skill is always included."""

    __slots__ = ("registry", "indices")

    def __init__(self, registry: SkillRegistry, skills: Iterable[str | int] = ()):
        idx = {registry.general_index}
        for s in skills:
            if isinstance(s, str):
                idx.add(registry.index(s))
            else:
                i = int(s)
                if not 0 <= i < len(registry):
                    raise IndexError(f"skill index {i} outside registry of size {len(registry)}")
                idx.add(i)
        self.registry = registry
        self.indices = tuple(sorted(idx))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.registry.names[i] for i in self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, item) -> bool:
        if isinstance(item, str):
            return item in self.registry._index and self.registry.index(item) in self.indices
        return item in self.indices

    def __eq__(self, other) -> bool:
        if isinstance(other, SkillSet):
            return self.registry == other.registry and self.indices == other.indices
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self.registry, self.indices))

    def __repr__(self) -> str:
        return f"SkillSet({set(self.names)})"


# Relevant skills per task. Training tasks first, then the adaptation tasks.
TABLE2_ROUTING: dict[str, tuple[str, ...]] = {
    "text-summarization": (NON_OPEN_END, GENERAL),
    "advertisement-generation": (OPEN_END, DATA_TO_TEXT, GENERAL),
    "question-answering": (OPEN_END, QUESTION, GENERAL),
    "dialogue-generation": (OPEN_END, CONVERSATION, QUESTION, GENERAL),
    "grammatical-error-correction": (NON_OPEN_END, GENERAL),
    "topic-to-essay-generation": (OPEN_END, DATA_TO_TEXT, GENERAL),
    "paraphrase-generation": (NON_OPEN_END, GENERAL),
    "story-generation": (OPEN_END, GENERAL),
}

TASK_ALIASES = {
    "summarization": "text-summarization",
    "advertisement": "advertisement-generation",
    "qa": "question-answering",
    "dialogue": "dialogue-generation",
    "gec": "grammatical-error-correction",
    "topic-to-essay": "topic-to-essay-generation",
    "paraphrase": "paraphrase-generation",
    "story": "story-generation",
}


class TaskSkillMap(Mapping):
    """Immutable mapping from task name to its :class:`SkillSet`."""

    def __init__(self, registry: SkillRegistry, table: Mapping[str, Iterable[str]], aliases: Mapping[str, str] | None = None):
        self.registry = registry
        self._map = {task: SkillSet(registry, skills) for task, skills in table.items()}
        self.aliases = dict(aliases or {})

    @classmethod
    def default(cls, registry: SkillRegistry | None = None) -> "TaskSkillMap":
        return cls(registry or SkillRegistry.default(), TABLE2_ROUTING, TASK_ALIASES)

    def __getitem__(self, task: str) -> SkillSet:
        return self._map[self.aliases.get(task, task)]

    def __contains__(self, task) -> bool:
        return self.aliases.get(task, task) in self._map

    def __iter__(self):
        return iter(self._map)

    def __len__(self) -> int:
        return len(self._map)

    def with_task(self, task: str, skills: Iterable[str]) -> "TaskSkillMap":
        table = {t: s.names for t, s in self._map.items()}
        table[task] = tuple(skills)
        return TaskSkillMap(self.registry, table, self.aliases)

    def to_yaml(self) -> str:
        doc = {
            "skills": list(self.registry.names),
            "general": self.registry.general,
            "tasks": {t: list(s.names) for t, s in self._map.items()},
        }
        return yaml.safe_dump(doc, sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "TaskSkillMap":
        doc = yaml.safe_load(text) or {}
        registry = SkillRegistry(doc.get("skills", SKILL_DEFINITIONS), doc.get("general", GENERAL))
        return cls(registry, doc.get("tasks", {}))


def route(task, skill_map: TaskSkillMap, skills: Iterable[str] | None = None) -> SkillSet:
    """Resolve the active skills for ``task`` (a name or an object with ``.name``).

    Explicit ``skills`` (or a task object carrying a non-empty ``.skills``) take
    precedence over the map, which is how new tasks get routed.
    """
    name = task if isinstance(task, str) else task.name
    if skills is None and not isinstance(task, str):
        skills = getattr(task, "skills", None) or None
    if skills is not None:
        if isinstance(skills, SkillSet):
            return skills
        return SkillSet(skill_map.registry, skills)
    if name in skill_map:
        return skill_map[name]
    raise KeyError(f"unknown task {name!r} and no explicit skills given; known tasks: {', '.join(skill_map)}")


# ---------------------------------------------------------------- skill FFN bank

def ffn(x: T.Tensor, w1: T.Tensor, b1: T.Tensor, w2: T.Tensor, b2: T.Tensor, activation: str = "gelu") -> T.Tensor:
    act = T.gelu if activation == "gelu" else T.relu
    return T.matmul(act(T.matmul(x, w1) + b1), w2) + b2


@dataclass
class SkillLayerBank:
    """One FFN parameter block ``(w1, b1, w2, b2)`` per registered skill."""

    registry: SkillRegistry
    blocks: list[tuple[T.Tensor, T.Tensor, T.Tensor, T.Tensor]]
    activation: str = "gelu"
    name: str = field(default="")

    def __post_init__(self):
        if len(self.blocks) != len(self.registry):
            raise ValueError(f"bank has {len(self.blocks)} FFNs for {len(self.registry)} skills")
        shapes = {tuple(p.shape for p in blk) for blk in self.blocks}
        if len(shapes) != 1:
            raise ValueError("all skill FFNs in a bank must share shapes")

    @classmethod
    def init(cls, registry: SkillRegistry, d_model: int, d_ff: int, rng: np.random.Generator, activation: str = "gelu", name: str = "") -> "SkillLayerBank":
        from .transformer import glorot

        blocks = []
        for skill in registry.names:
            blocks.append((
                T.Tensor(glorot(rng, d_model, d_ff), requires_grad=True, name=f"{name}.{skill}.w1"),
                T.Tensor(np.zeros(d_ff), requires_grad=True, name=f"{name}.{skill}.b1"),
                T.Tensor(glorot(rng, d_ff, d_model), requires_grad=True, name=f"{name}.{skill}.w2"),
                T.Tensor(np.zeros(d_model), requires_grad=True, name=f"{name}.{skill}.b2"),
            ))
        return cls(registry, blocks, activation, name)

    def parameters(self, skill: int | None = None) -> list[T.Tensor]:
        if skill is not None:
            return list(self.blocks[skill])
        return [p for blk in self.blocks for p in blk]


def skill_layer_forward(bank: SkillLayerBank, x: T.Tensor, active: SkillSet | Iterable[int]) -> T.Tensor:
    """Average of the active skills' FFN outputs on the shared attention output ``x``.

    FFNs outside ``active`` are never evaluated, so they never enter the graph.
    """
    idx = sorted(set(active.indices if isinstance(active, SkillSet) else (int(i) for i in active)))
    if not idx:
        raise ValueError("active skill set is empty")
    for i in idx:
        if not 0 <= i < len(bank.blocks):
            raise IndexError(f"skill index {i} not in bank of size {len(bank.blocks)}")
    out = None
    for i in idx:
        h = ffn(x, *bank.blocks[i], activation=bank.activation)
        out = h if out is None else out + h
    return out * (1.0 / len(idx))


# ---------------------------------------------------------------- accounting

def ffn_block_params(d_model: int, d_ff: int) -> int:
    return 2 * d_model * d_ff + d_ff + d_model


def _shared_params(cfg: ModelConfig) -> int:
    d = cfg.d_model
    attn = 4 * (d * d + d)
    n = cfg.vocab_size * d  # token embedding (tied output)
    if not cfg.tie_embeddings:
        n += cfg.vocab_size * d
    n += 2 * cfg.max_positions * d  # encoder + decoder positions
    n += 2 * 2 * d  # embedding layer norms
    n += cfg.n_enc_layers * (attn + 2 * 2 * d)
    n += cfg.n_dec_layers * (2 * attn + 3 * 2 * d)
    if cfg.pre_norm:
        n += 2 * 2 * d  # final stack norms
    return n


def count_params(config: ModelConfig, active: SkillSet | Iterable | int) -> dict[str, int]:
    """Closed-form parameter counts for a skill model of shape ``config``.

    ``activated`` counts shared parameters plus, in modified layers, only the
    FFN blocks of active skills. ``dense`` is the equivalent plain transformer.
    """
    n_active = active if isinstance(active, int) else len(active if isinstance(active, SkillSet) else list(active))
    if not 1 <= n_active <= config.skill_count:
        raise ValueError(f"{n_active} active skills outside [1, {config.skill_count}]")
    block = ffn_block_params(config.d_model, config.d_ff)
    n_mod = config.n_modified_layers
    n_plain = config.n_enc_layers + config.n_dec_layers - n_mod
    base = _shared_params(config) + n_plain * block
    return {
        "total": base + n_mod * config.skill_count * block,
        "activated": base + n_mod * n_active * block,
        "dense": base + n_mod * block,
        "per_skill": n_mod * block,
    }


def grad_sparsity_report(model, batch, active: SkillSet) -> dict[str, float]:
    """Max-abs gradient per skill, over all modified layers, after one backward pass.

    ``batch`` is ``(src_ids, tgt_ids)`` as padded id arrays or lists of sequences.
    Skills outside ``active`` report exactly 0.0.
    """
    model.zero_grad()
    loss = model.loss(batch[0], batch[1], active)
    loss.backward()
    report = {}
    for k, name in enumerate(model.registry.names):
        m = 0.0
        for bank in model.banks():
            for p in bank.parameters(k):
                if p.grad is not None:
                    m = max(m, float(np.abs(p.grad).max()))
        report[name] = m
    model.zero_grad()
    return report
