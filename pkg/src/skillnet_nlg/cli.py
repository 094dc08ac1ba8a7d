"""Command-line entry point: ``skillnet-nlg <command>``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Set ``SKILLNET_LOG`` (e.g. ``INFO``, ``DEBUG``) for log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import checkpoint as ckpt
from .config import PRESETS, ModelConfig
from .data import REFERENCE_CAP_K, REFERENCE_TASK_SIZES, TaskSpec, Vocabulary, build_plan, encode_example, read_jsonl, write_jsonl
from .decoding import BeamConfig, beam_search
from .metrics import METRIC_NAMES, score
from .skills import SkillRegistry, SkillSet, TaskSkillMap, count_params, route
from .training import TrainConfig, TrainRun, adapt, build_model, train

log = logging.getLogger("skillnet_nlg")


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- config loading

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    doc["_root"] = str(p.parent)
    return doc


def model_config(doc: dict, preset: str | None = None) -> ModelConfig:
    section = dict(doc.get("model") or {})
    name = preset or section.pop("preset", "desk")
    section.pop("preset", None)
    if name not in PRESETS:
        raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}")
    try:
        return PRESETS[name](**section)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid model config: {e}") from e


def skill_map(doc: dict) -> TaskSkillMap:
    path = doc.get("routing")
    if not path:
        return TaskSkillMap.default()
    full = Path(doc.get("_root", ".")) / path
    if not full.is_file():
        raise ConfigError(f"routing file not found: {full}")
    return TaskSkillMap.from_yaml(full.read_text(encoding="utf-8"))


def task_specs(doc: dict, key: str = "tasks", load: bool = True) -> list[TaskSpec]:
    specs = []
    for entry in doc.get(key) or []:
        try:
            spec = TaskSpec(
                name=entry["name"],
                prefix=entry.get("prefix", ""),
                train_path=entry.get("train"),
                dev_path=entry.get("dev"),
                test_path=entry.get("test"),
                skills=tuple(entry.get("skills", ())),
                metric=entry.get("metric", "rougeL"),
                n_examples=entry.get("n_examples"),
            )
        except (KeyError, ValueError) as e:
            raise ConfigError(f"bad task entry {entry!r}: {e}") from e
        if load:
            for split in ("train_path", "dev_path", "test_path"):
                rel = getattr(spec, split)
                if rel and not (Path(doc.get("_root", ".")) / rel).is_file():
                    raise ConfigError(f"task {spec.name}: file not found: {rel}")
            spec.load(doc.get("_root"))
        specs.append(spec)
    return specs


def train_config(doc: dict, args, section: str = "training") -> TrainConfig:
    values = dict(doc.get("training") or {})
    if section != "training":
        values.update(doc.get(section) or {})
    if "seed" in doc:
        values.setdefault("seed", doc["seed"])
    for flag, key in (("seed", "seed"), ("steps", "steps"), ("temperature", "T"), ("cap_K", "K")):
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    try:
        return TrainConfig.from_dict(values)
    except TypeError as e:
        raise ConfigError(f"invalid training config: {e}") from e


def parse_skills(text: str | None) -> list[str] | None:
    if not text:
        return None
    return [s.strip() for s in text.split(",") if s.strip()]


# ---------------------------------------------------------------- commands

def cmd_dump_routing(args) -> int:
    text = TaskSkillMap.default().to_yaml()
    if getattr(args, "output", None):
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_count_params(args) -> int:
    doc = load_config(args.config)
    cfg = model_config(doc, args.preset)
    smap = skill_map(doc)
    if cfg.skill_count != len(smap.registry):
        raise ConfigError(f"model skill_count={cfg.skill_count} but routing registers {len(smap.registry)} skills")
    base = count_params(cfg, 1)
    print(f"# total={base['total']} dense={base['dense']} per_skill_delta={base['per_skill']}")
    print(f"{'task':<32}{'|S|':>5}{'activated':>16}{'total':>16}")
    for task in smap:
        c = count_params(cfg, smap[task])
        print(f"{task:<32}{len(smap[task]):>5}{c['activated']:>16}{c['total']:>16}")
    return 0


def cmd_sampler_plan(args) -> int:
    doc = load_config(args.config)
    if args.sizes:
        try:
            sizes = {k: int(v) for k, v in (item.split("=") for item in args.sizes.split(","))}
        except ValueError as e:
            raise ConfigError(f"--sizes expects name=count,...: {e}") from e
    elif doc.get("tasks"):
        sizes = {t.name: t.size for t in task_specs(doc)}
    else:
        sizes = dict(REFERENCE_TASK_SIZES)
    training = doc.get("training") or {}
    K = args.cap_K if args.cap_K is not None else training.get("K", REFERENCE_CAP_K)
    T = args.temperature if args.temperature is not None else training.get("T", 4.0)
    try:
        plan = build_plan(sizes, K, T)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    print(plan.table())
    return 0


def _out_dir(doc: dict, args, default: str) -> Path:
    if args.output:
        return Path(args.output)
    return Path(doc.get("_root", ".")) / doc.get("output_dir", default)


def cmd_train(args) -> int:
    doc = load_config(args.config)
    cfg = model_config(doc)
    tc = train_config(doc, args)
    tasks = task_specs(doc)
    if not tasks:
        raise ConfigError("config lists no tasks")
    smap = skill_map(doc)
    model = build_model(cfg, smap.registry if cfg.skill_count == len(smap.registry) else "default", seed=tc.seed)
    run = TrainRun(model, tasks, tc, smap)
    out = _out_dir(doc, args, "runs/train")
    result = train(run, tc.steps, out)
    print(json.dumps({"output": str(out), "steps": run.step, "final_loss": run.loss_log[-1][2] if run.loss_log else None,
                      "best_step": result.best_step, "best_dev": result.best_score}, sort_keys=True))
    return 0


def cmd_adapt(args) -> int:
    doc = load_config(args.config)
    if not args.checkpoint:
        raise ConfigError("adapt needs --checkpoint")
    candidates = {t.name: t for t in task_specs(doc, "new_tasks") + task_specs(doc, "tasks")}
    if args.task not in candidates:
        raise ConfigError(f"task {args.task!r} not in config; known: {sorted(candidates)}")
    task = candidates[args.task]
    skills = parse_skills(args.skills) or list(task.skills)
    if not skills:
        skills = list(TaskSkillMap.default()[task.name].names) if task.name in TaskSkillMap.default() else []
    tc = train_config(doc, args, "adaptation")
    out = _out_dir(doc, args, f"runs/adapt-{task.name}")
    model, run = adapt(args.checkpoint, task, skills, tc, out)
    print(json.dumps({"output": str(out), "task": task.name, "skills": list(run.task_skills[task.name].names),
                      "steps": run.step}, sort_keys=True))
    return 0


def cmd_generate(args) -> int:
    if not args.checkpoint or not args.input or not args.output:
        raise ConfigError("generate needs --checkpoint, --input and --output")
    doc = load_config(args.config)
    model = ckpt.load_model(args.checkpoint)
    meta = ckpt.read_meta(args.checkpoint)
    known = dict(meta.get("tasks") or {})
    for t in task_specs(doc, "tasks", load=False) + task_specs(doc, "new_tasks", load=False):
        known.setdefault(t.name, {"prefix": t.prefix, "skills": list(t.skills)})
    if args.task not in known:
        raise ConfigError(f"task {args.task!r} unknown to checkpoint/config; known: {sorted(known)}")
    info = known[args.task]
    spec = TaskSpec(args.task, info.get("prefix") or args.task)
    skills = None
    if model.registry is not None:
        names = parse_skills(args.skills) or info.get("skills") or None
        skills = SkillSet(model.registry, names) if names else route(args.task, TaskSkillMap.default(model.registry))
    decoding = doc.get("decoding") or {}
    beam = BeamConfig(args.beam_size or decoding.get("beam_size", 4),
                      args.max_length or decoding.get("max_target_length", 64))
    max_src = (doc.get("training") or {}).get("max_source_length", model.config.max_positions)
    vocab = Vocabulary()
    rows = []
    for row in read_jsonl(args.input):
        src_ids, _ = encode_example(spec, row["source"], "", vocab, min(max_src, model.config.max_positions))
        hyp = beam_search(model, src_ids, skills, beam)
        out = {"source": row["source"], "hypothesis": vocab.decode(hyp.text_ids()), "logprob": hyp.logprob}
        if "target" in row:
            out["reference"] = row["target"]
        rows.append(out)
    write_jsonl(args.output, rows)
    return 0


def cmd_eval(args) -> int:
    if not args.input:
        raise ConfigError("eval needs --input")
    rows = read_jsonl(args.input)
    hyps, refs = [], []
    for i, r in enumerate(rows):
        ref = r.get("reference", r.get("target"))
        if "hypothesis" not in r or ref is None:
            raise ConfigError(f"{args.input}:{i + 1}: needs 'hypothesis' and 'reference' fields")
        hyps.append(r["hypothesis"])
        refs.append(ref)
    metrics = parse_skills(args.metrics) or list(METRIC_NAMES)
    unknown = [m for m in metrics if m not in METRIC_NAMES]
    if unknown:
        raise ConfigError(f"unknown metrics {unknown}; choose from {METRIC_NAMES}")
    report = {"n": len(rows), "tokenize": args.tokenize}
    report.update({m: score(m, hyps, refs, args.tokenize) for m in metrics})
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "train": cmd_train,
    "adapt": cmd_adapt,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "count-params": cmd_count_params,
    "sampler-plan": cmd_sampler_plan,
    "dump-routing": cmd_dump_routing,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skillnet-nlg", description="Skill-routed encoder-decoder toolkit.")
    parser.add_argument("--dump-routing", action="store_true", help="print the built-in task->skill table and exit")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML config file")
        return p

    p = add("train", "multi-task training")
    for a, t in (("--seed", int), ("--steps", int), ("--temperature", float), ("--cap-K", int)):
        p.add_argument(a, type=t, dest=a.lstrip("-").replace("-", "_"))
    p.add_argument("--output", help="output directory (overrides output_dir)")

    p = add("adapt", "fine-tune a checkpoint on a new task")
    p.add_argument("--checkpoint")
    p.add_argument("--task", required=True)
    p.add_argument("--skills", help="comma-separated skill names; general is always added")
    for a, t in (("--seed", int), ("--steps", int)):
        p.add_argument(a, type=t, dest=a.lstrip("-"))
    p.add_argument("--output")

    p = add("generate", "beam-search generation from JSONL sources")
    p.add_argument("--checkpoint")
    p.add_argument("--task", required=True)
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--skills")
    p.add_argument("--beam-size", type=int, dest="beam_size")
    p.add_argument("--max-length", type=int, dest="max_length")
    p.add_argument("--seed", type=int)

    p = add("eval", "score hypothesis/reference JSONL")
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--metrics", help=f"comma list from {','.join(METRIC_NAMES)}")
    p.add_argument("--tokenize", default="chars", choices=("chars", "whitespace"))

    p = add("count-params", "parameter counts per task")
    p.add_argument("--preset", choices=sorted(PRESETS))

    p = add("sampler-plan", "task sampling probabilities")
    p.add_argument("--sizes", help="name=count,... (defaults to config tasks or the five reference datasets)")
    p.add_argument("--temperature", type=float)
    p.add_argument("--cap-K", type=int, dest="cap_K")

    p = add("dump-routing", "print the built-in task->skill table")
    p.add_argument("--output")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("SKILLNET_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dump_routing and args.command is None:
        return cmd_dump_routing(args)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"skillnet-nlg {args.command}: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"skillnet-nlg {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
