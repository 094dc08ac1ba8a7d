"""Multi-task training, checkpointing and adaptation to new tasks."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt
from .config import ModelConfig
from .data import MultiTaskSampler, SamplerPlan, TaskSpec, Vocabulary, build_plan, encode_example
from .decoding import greedy_decode_batch
from .metrics import score as metric_score
from .skills import SkillRegistry, SkillSet, TaskSkillMap, route
from .transformer import Seq2SeqTransformer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Schedule:
    """Linear warmup from 0 to ``peak_lr`` then linear decay to 0 at ``total_steps``."""

    peak_lr: float = 3e-5
    warmup_steps: int = 10_000
    total_steps: int = 100_000

    def __post_init__(self):
        if self.warmup_steps < 0 or self.total_steps < self.warmup_steps:
            raise ValueError("need 0 <= warmup_steps <= total_steps")

    def lr(self, step: int) -> float:
        if step <= 0 or step >= self.total_steps:
            return 0.0
        if step < self.warmup_steps:
            return self.peak_lr * step / self.warmup_steps
        return self.peak_lr * (self.total_steps - step) / (self.total_steps - self.warmup_steps)


class Adam:
    """Adam without weight decay.

    Only parameters whose ``grad`` is not ``None`` are touched, and each keeps
    its own step count for bias correction, so a skill FFN that sits out a
    batch keeps its values and moments bit for bit.
    """

    def __init__(self, params: dict, betas=(0.9, 0.999), eps: float = 1e-8, grad_clip: float | None = None):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.steps = {k: 0 for k in params}
        self.step_count = 0

    def step(self, lr: float) -> float:
        """Apply one update; returns the global gradient norm before clipping."""
        live = [(k, p) for k, p in self.params.items() if p.grad is not None]
        norm = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for _, p in live))
        scale = 1.0
        if self.grad_clip and norm > self.grad_clip:
            scale = self.grad_clip / norm
        b1, b2 = self.beta1, self.beta2
        for k, p in live:
            g = p.grad * scale if scale != 1.0 else p.grad
            self.steps[k] += 1
            t = self.steps[k]
            m = self.m[k] = b1 * self.m[k] + (1 - b1) * g
            v = self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)
        self.step_count += 1
        return norm

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state(self, arrays: dict[str, np.ndarray], steps: dict[str, int], step_count: int) -> None:
        for k in self.params:
            self.m[k] = arrays[f"m.{k}"].copy()
            self.v[k] = arrays[f"v.{k}"].copy()
        self.steps = {k: int(steps[k]) for k in self.params}
        self.step_count = int(step_count)


@dataclass
class TrainConfig:
    batch_size: int = 32
    steps: int = 2000
    peak_lr: float = 3e-5
    warmup_steps: int = 10_000
    total_steps: int | None = None  # defaults to ``steps``
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float | None = None
    K: int = 2 ** 21
    T: float = 4.0
    max_source_length: int = 64
    max_target_length: int = 64
    eval_every: int = 0
    eval_max_examples: int | None = None
    metric_tokenization: str = "chars"
    checkpoint_every: int = 0
    seed: int = 0

    def schedule(self) -> Schedule:
        total = self.total_steps if self.total_steps is not None else self.steps
        return Schedule(self.peak_lr, min(self.warmup_steps, total), total)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


class TrainRun:
    """Model, sampler, optimizer and schedule plus the per-step loss log."""

    def __init__(self, model: Seq2SeqTransformer, tasks: Sequence[TaskSpec], cfg: TrainConfig,
                 skill_map: TaskSkillMap | None = None, vocab: Vocabulary | None = None):
        self.model = model
        self.tasks = list(tasks)
        self.cfg = cfg
        self.vocab = vocab or Vocabulary()
        self.plan: SamplerPlan = build_plan(self.tasks, cfg.K, cfg.T, cfg.seed)
        self.sampler = MultiTaskSampler(self.plan, self.tasks, self.vocab, cfg.max_source_length, cfg.max_target_length)
        self.optimizer = Adam(model.params, cfg.betas, cfg.eps, cfg.grad_clip)
        self.schedule = cfg.schedule()
        self.skill_map = skill_map or (TaskSkillMap.default(model.registry) if model.registry is not None else None)
        self.task_skills: dict[str, SkillSet | None] = {t.name: self._skills_for(t) for t in self.tasks}
        self.loss_log: list[tuple[int, str, float, float]] = []
        self.eval_log: list[dict] = []
        self.step = 0

    def _skills_for(self, task: TaskSpec) -> SkillSet | None:
        if self.model.registry is None:
            return None
        return route(task, self.skill_map, task.skills or None)

    # ------------------------------------------------------------ stepping

    def train_step(self) -> dict:
        task, src, tgt = self.sampler.next_batch(self.cfg.batch_size)
        skills = self.task_skills[task]
        self.model.zero_grad()
        loss = self.model.loss(src, tgt, skills)
        value = loss.item()
        lr = self.schedule.lr(self.step + 1)
        if not math.isfinite(value):
            raise FloatingPointError(f"non-finite loss {value} at step {self.step + 1} (task={task}, lr={lr:g})")
        loss.backward()
        self.optimizer.step(lr)
        self.model.zero_grad()
        self.step += 1
        self.loss_log.append((self.step, task, value, lr))
        return {"step": self.step, "task": task, "loss": value, "lr": lr}

    # ------------------------------------------------------------ evaluation

    def generate(self, task: TaskSpec, sources: Sequence[str], max_target_length: int | None = None) -> list[str]:
        srcs = [encode_example(task, s, "", self.vocab, self.cfg.max_source_length)[0] for s in sources]
        outs = greedy_decode_batch(self.model, srcs, self.task_skills[task.name],
                                   max_target_length or self.cfg.max_target_length)
        return [self.vocab.decode(o) for o in outs]

    def evaluate(self, split: str = "dev") -> dict[str, float]:
        """Per-task score on ``split`` under each task's metric, plus their unweighted ``avg``."""
        scores = {}
        for task in self.tasks:
            pairs = getattr(task, split)
            if self.cfg.eval_max_examples:
                pairs = pairs[: self.cfg.eval_max_examples]
            if not pairs:
                continue
            hyps = self.generate(task, [s for s, _ in pairs])
            scores[task.name] = metric_score(task.metric, hyps, [t for _, t in pairs], self.cfg.metric_tokenization)
        if scores:
            scores["avg"] = float(np.mean(list(scores.values())))
        return scores

    # ------------------------------------------------------------ persistence

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        extra = {
            "step": self.step,
            "optimizer": {"steps": self.optimizer.steps, "step_count": self.optimizer.step_count},
            "sampler": self.sampler.state_dict(),
            "train_config": asdict(self.cfg),
            "tasks": {t.name: {"prefix": t.prefix, "skills": list(self.task_skills[t.name].names) if self.task_skills[t.name] else [], "metric": t.metric} for t in self.tasks},
        }
        ckpt.save_model(directory, self.model, extra)
        ckpt.write_arrays(directory, "optimizer", self.optimizer.state_arrays())
        self.write_loss_log(directory / "loss.csv")
        return directory

    def restore(self, directory: str | Path) -> None:
        """Resume model, optimizer and sampler state from a checkpoint written by :meth:`save`."""
        meta = ckpt.read_meta(directory)
        self.model.load_state_dict(ckpt.read_arrays(directory, "params"))
        self.optimizer.load_state(ckpt.read_arrays(directory, "optimizer"), meta["optimizer"]["steps"], meta["optimizer"]["step_count"])
        self.sampler.load_state_dict(meta["sampler"])
        self.step = int(meta["step"])
        path = Path(directory) / "loss.csv"
        if path.exists():
            self.loss_log = read_loss_log(path)

    def write_loss_log(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "task", "loss", "lr"])
            for step, task, loss, lr in self.loss_log:
                w.writerow([step, task, repr(loss), repr(lr)])


def read_loss_log(path: str | Path) -> list[tuple[int, str, float, float]]:
    with open(path, newline="") as f:
        return [(int(r["step"]), r["task"], float(r["loss"]), float(r["lr"])) for r in csv.DictReader(f)]


@dataclass
class TrainResult:
    final_state: dict[str, np.ndarray]
    best_state: dict[str, np.ndarray]
    best_score: float | None
    best_step: int
    loss_log: list = field(repr=False)
    eval_log: list = field(repr=False)


def train(run: TrainRun, steps: int, out_dir: str | Path | None = None) -> TrainResult:
    """Run ``steps`` training steps with periodic dev evaluation.

    The best snapshot is chosen by the unweighted mean dev score over tasks.
    Without evaluation the best snapshot is the final one.
    """
    cfg = run.cfg
    best_state, best_score, best_step = None, None, run.step
    for _ in range(steps):
        report = run.train_step()
        if cfg.eval_every and run.step % cfg.eval_every == 0:
            scores = run.evaluate("dev")
            run.eval_log.append({"step": run.step, **scores})
            log.info("step %d dev %s", run.step, json.dumps(scores))
            if scores and (best_score is None or scores["avg"] > best_score):
                best_score, best_step, best_state = scores["avg"], run.step, run.model.state_dict()
        if out_dir and cfg.checkpoint_every and run.step % cfg.checkpoint_every == 0:
            run.save(Path(out_dir) / f"step-{run.step}")
        if report["step"] % 100 == 0:
            log.debug("step %d task %s loss %.4f", report["step"], report["task"], report["loss"])
    final = run.model.state_dict()
    result = TrainResult(final, best_state if best_state is not None else final, best_score, best_step, run.loss_log, run.eval_log)
    if out_dir:
        run.save(Path(out_dir) / "final")
        if best_state is not None:
            live = run.model.state_dict()
            run.model.load_state_dict(best_state)
            ckpt.save_model(Path(out_dir) / "best", run.model, {"step": best_step, "dev_avg": best_score})
            run.model.load_state_dict(live)
    return result


def adapt(checkpoint: str | Path | Seq2SeqTransformer, new_task: TaskSpec, skills: Sequence[str] | SkillSet,
          cfg: TrainConfig, out_dir: str | Path | None = None) -> tuple[Seq2SeqTransformer, TrainRun]:
    """Fine-tune a trained model on ``new_task`` with only ``skills`` (+ general) active.

    All parameters reachable under the chosen skills are tuned; FFNs of other
    skills are never evaluated and stay bitwise unchanged. A fresh optimizer
    and schedule are used.
    """
    if isinstance(checkpoint, Seq2SeqTransformer):
        model = checkpoint
    else:
        model = ckpt.load_model(checkpoint)
    if model.registry is None:
        raise ValueError("adaptation needs a skill model")
    skill_set = skills if isinstance(skills, SkillSet) else SkillSet(model.registry, skills)
    task = TaskSpec(new_task.name, new_task.prefix, new_task.train_path, new_task.dev_path, new_task.test_path,
                    skill_set.names, new_task.metric, new_task.n_examples, new_task.train, new_task.dev, new_task.test)
    run = TrainRun(model, [task], cfg)
    train(run, cfg.steps, out_dir)
    return model, run


def steps_to_threshold(run: TrainRun, threshold: float, max_steps: int, window: int = 10) -> int | None:
    """Train until the mean loss over the last ``window`` steps drops below ``threshold``."""
    recent: list[float] = []
    for _ in range(max_steps):
        recent.append(run.train_step()["loss"])
        recent = recent[-window:]
        if len(recent) == window and sum(recent) / window < threshold:
            return run.step
    return None


def build_model(config: ModelConfig, registry: SkillRegistry | None = "default", seed: int = 0) -> Seq2SeqTransformer:
    if registry == "default":
        registry = SkillRegistry.default() if config.skill_count == 6 else SkillRegistry.single()
    return Seq2SeqTransformer(config, registry, seed)
