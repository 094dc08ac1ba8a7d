"""The ten acceptance criteria, one test each.

Each test prints ``[PASS] criterion N: ...`` or ``[FAIL] criterion N: ...``;
the same lines are repeated in the terminal summary. Run just this file with

    pytest tests/test_acceptance.py -v -s
"""

import functools
import itertools
import time

import mpmath
import numpy as np
import pytest
from scipy.stats import chisquare

from skillnet_nlg import tensor as T
from skillnet_nlg.config import bart_large_config, toy_config
from skillnet_nlg.data import REFERENCE_CAP_K, REFERENCE_TASK_SIZES, MultiTaskSampler, TaskSpec, build_plan
from skillnet_nlg.decoding import BeamConfig, beam_search, greedy_decode, log_softmax
from skillnet_nlg.skills import SkillLayerBank, SkillRegistry, SkillSet, TaskSkillMap, count_params, ffn, skill_layer_forward
from skillnet_nlg.synthetic import make_task
from skillnet_nlg.training import Adam, TrainConfig, TrainRun, build_model, steps_to_threshold, train
from skillnet_nlg.transformer import Seq2SeqTransformer

from conftest import ACCEPTANCE, block_rel_err, central_difference, random_batch, sample_indices

EOS = 2


def criterion(n, title):
    """Record a PASS/FAIL line for criterion ``n``; the test returns a detail string."""
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
            except BaseException as e:
                msg = str(e).splitlines()[0] if str(e) else ""
                _record(f"[FAIL] criterion {n}: {title} -- {type(e).__name__}: {msg}")
                raise
            _record(f"[PASS] criterion {n}: {title} -- {detail} ({time.perf_counter() - t0:.1f}s)")
        return wrapper
    return deco


def _record(line):
    ACCEPTANCE.append(line)
    print(line)


def states_equal(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def toy_train_config(**kw):
    base = dict(batch_size=32, steps=2000, peak_lr=3e-3, warmup_steps=100, T=4.0,
                max_source_length=32, max_target_length=16, seed=0)
    base.update(kw)
    return TrainConfig(**base)


# ---------------------------------------------------------------- 1

@criterion(1, "parameter accounting at BART-large shape")
def test_criterion_1_parameter_accounting():
    cfg = bart_large_config()
    assert (cfg.n_enc_layers, cfg.n_dec_layers, cfg.d_model, cfg.d_ff, cfg.modified_layer_stride, cfg.skill_count) == (12, 12, 1024, 4096, 2, 6)
    c = {s: count_params(cfg, s) for s in (1, 2, 3, 4)}
    deltas = {c[s + 1]["activated"] - c[s]["activated"] for s in (1, 2, 3)}
    assert len(deltas) == 1
    delta = deltas.pop()
    extra = c[1]["total"] - c[1]["dense"]
    d_err = abs(delta - 100.75e6) / 100.75e6
    e_err = abs(extra - 503.74e6) / 503.74e6
    assert d_err < 0.005 and e_err < 0.005
    return f"delta={delta / 1e6:.2f}M (err {d_err:.1e}), total-dense={extra / 1e6:.2f}M (err {e_err:.1e})"


# ---------------------------------------------------------------- 2

@criterion(2, "average pooling: linearity, permutation invariance, |S|=1 is a plain FFN")
def test_criterion_2_pooling():
    rng = np.random.default_rng(2)
    reg = SkillRegistry.default()
    worst = 0.0
    for _ in range(100):
        d, f = int(rng.integers(2, 12)), int(rng.integers(2, 20))
        bank = SkillLayerBank.init(reg, d, f, rng)
        x = T.Tensor(rng.normal(size=(int(rng.integers(1, 6)), d)))
        S = list(rng.choice(6, size=int(rng.integers(1, 7)), replace=False))
        out = skill_layer_forward(bank, x, S).data
        mean = np.mean([skill_layer_forward(bank, x, [k]).data for k in S], axis=0)
        worst = max(worst, float(np.abs(out - mean).max()))
        for perm in itertools.islice(itertools.permutations(S), 6):
            worst = max(worst, float(np.abs(skill_layer_forward(bank, x, list(perm)).data - out).max()))
        k = int(rng.integers(0, 6))
        assert np.array_equal(skill_layer_forward(bank, x, [k]).data, ffn(x, *bank.blocks[k]).data)
    assert worst <= 1e-12
    return f"100 banks, max deviation {worst:.1e}"


# ---------------------------------------------------------------- 3

@criterion(3, "inactive skill FFNs get no gradient and keep their Adam state")
def test_criterion_3_sparsity():
    rng = np.random.default_rng(3)
    reg = SkillRegistry.default()
    table = TaskSkillMap.default()
    model = build_model(toy_config(), seed=3)
    opt = Adam(model.params)
    checked = 0
    for draw in range(20):
        if draw % 2 == 0:
            S = table[str(rng.choice(sorted(table)))]
        else:
            S = SkillSet(reg, [str(x) for x in rng.choice(reg.names[:-1], size=int(rng.integers(0, 6)), replace=False)])
        task = TaskSpec(f"t{draw}", prefix=f"t{draw}", skills=S.names,
                        train=[(s, t) for s, t in make_task("copy", 16, 1, 1, seed=draw).train])
        run = TrainRun(model, [task], toy_train_config(batch_size=4, warmup_steps=1, steps=50, seed=draw))
        run.optimizer = opt
        run.step = draw
        idle = [n for s in reg.names if s not in S.names for n in model.skill_parameter_names(s)]
        before = {n: (model.params[n].data.copy(), opt.m[n].copy(), opt.v[n].copy(), opt.steps[n]) for n in idle}

        # the gradient itself, before the optimizer sees it
        model.zero_grad()
        _, src, tgt = run.sampler.next_batch(4)
        model.loss(src, tgt, S).backward()
        for n in idle:
            g = model.params[n].grad
            assert g is None or not np.any(g), n
        model.zero_grad()

        run.train_step()
        for n in idle:
            p, m, v, steps = before[n]
            assert np.array_equal(model.params[n].data, p), n
            assert np.array_equal(opt.m[n], m) and np.array_equal(opt.v[n], v) and opt.steps[n] == steps, n
            checked += 1
        active = model.skill_parameter_names(S.names[0])[0]
        assert opt.steps[active] > 0
    return f"20 draws, {checked} inactive tensors checked"


# ---------------------------------------------------------------- 4

@criterion(4, "finite-difference check of every parameter block, toy model")
def test_criterion_4_gradcheck():
    rng = np.random.default_rng(4)
    cfg = toy_config()
    assert (cfg.n_enc_layers, cfg.n_dec_layers, cfg.d_model) == (2, 2, 32)
    reg = SkillRegistry.default()
    model = Seq2SeqTransformer(cfg, reg, seed=4)
    S = reg.all()
    src, tgt = random_batch(rng, cfg.vocab_size, batch=2)
    model.loss(src, tgt, S).backward()
    f = lambda: model.loss(src, tgt, S).item()
    worst, worst_name = 0.0, ""
    for name, p in model.params.items():
        assert p.grad is not None, name
        idx = sample_indices(p.grad, rng, 3, 3)
        err = block_rel_err([p.grad[i] for i in idx], [central_difference(f, p, i) for i in idx])
        if err > worst:
            worst, worst_name = err, name
    assert worst < 1e-4, worst_name
    return f"{len(model.params)} blocks, worst rel. err {worst:.1e} ({worst_name})"


# ---------------------------------------------------------------- 5

@criterion(5, "temperature-scaled task sampler")
def test_criterion_5_sampler():
    mpmath.mp.dps = 40
    worst = 0.0
    for temp in (1, 4, 1024):
        plan = build_plan(REFERENCE_TASK_SIZES, REFERENCE_CAP_K, float(temp))
        w = [mpmath.mpf(min(n, REFERENCE_CAP_K)) ** (mpmath.mpf(1) / temp) for n in REFERENCE_TASK_SIZES.values()]
        exact = [float(x / sum(w)) for x in w]
        worst = max(worst, float(np.abs(np.asarray(plan.probs) - exact).max()))
    assert worst <= 1e-12
    flat = build_plan(REFERENCE_TASK_SIZES, REFERENCE_CAP_K, 1024.0).probs
    spread = max(flat) - min(flat)
    assert spread < 0.005

    plan = build_plan(REFERENCE_TASK_SIZES, REFERENCE_CAP_K, 4.0, seed=5)
    sampler = MultiTaskSampler(plan, [TaskSpec(n, train=[("a", "b")]) for n in REFERENCE_TASK_SIZES])
    counts = np.bincount([sampler.draw_task() for _ in range(50_000)], minlength=5)
    p = chisquare(counts, np.asarray(plan.probs) * 50_000).pvalue
    assert p > 0.001
    return f"max |err| {worst:.1e}, T=1024 spread {spread:.4f}, chi2 p={p:.3f}"


# ---------------------------------------------------------------- 6

@criterion(6, "one-skill model equals the plain transformer")
def test_criterion_6_dense_equivalence():
    rng = np.random.default_rng(6)
    reg = SkillRegistry.single()
    skill = Seq2SeqTransformer(toy_config(skill_count=1), reg, seed=6)
    dense = skill.dense_equivalent()
    assert dense.num_parameters() == skill.num_parameters()
    worst = 0.0
    for _ in range(50):
        src, tgt = random_batch(rng, 261, batch=int(rng.integers(1, 4)), src_len=(1, 12), tgt_len=(1, 10))
        a = skill.forward_teacher_forced(src, tgt, SkillSet(reg)).data
        b = dense.forward_teacher_forced(src, tgt).data
        worst = max(worst, float(np.abs(a - b).max()))
    assert worst <= 1e-12
    return f"50 inputs, max |logit diff| {worst:.1e}"


# ---------------------------------------------------------------- 7

def exhaustive_argmax(model, src, skills, vocab=5, max_len=3):
    enc = model.encode(np.asarray(src), skills=skills)
    src_pad = np.asarray(src) == model.pad_id
    cache = {}

    def logp(prefix):
        if prefix not in cache:
            cache[prefix] = log_softmax(model.decode_step(enc, [1, *prefix], skills, src_pad).data)
        return cache[prefix]

    scores = {}
    for seq in itertools.product(range(vocab), repeat=max_len):
        if EOS in seq:
            seq = seq[: seq.index(EOS) + 1]
        if seq not in scores:
            scores[seq] = sum(logp(seq[:i])[seq[i]] for i in range(len(seq))) / len(seq)
    return min(scores, key=lambda s: (-scores[s], s))


@criterion(7, "wide beam equals exhaustive search; beam 1 equals greedy")
def test_criterion_7_beam_oracle():
    rng = np.random.default_rng(7)
    reg = SkillRegistry.default()
    hits = 0
    for trial in range(100):
        cfg = toy_config(vocab_size=5, d_model=16, d_ff=16, max_positions=16)
        model = Seq2SeqTransformer(cfg, reg, seed=1000 + trial)
        S = SkillSet(reg, [str(x) for x in rng.choice(reg.names[:-1], size=int(rng.integers(0, 4)), replace=False)])
        src = list(rng.integers(1, 5, int(rng.integers(1, 6))))
        best = exhaustive_argmax(model, src, S)
        hits += beam_search(model, src, S, BeamConfig(125, 3)).tokens == best
        g = greedy_decode(model, src, S, 3)
        b = beam_search(model, src, S, BeamConfig(1, 3))
        assert g.tokens == b.tokens and g.logprob == b.logprob
    assert hits == 100
    return f"{hits}/100 exhaustive matches, beam-1 == greedy in 100/100"


# ---------------------------------------------------------------- 8, 9 share one multi-task run

@pytest.fixture(scope="module")
def multitask_run():
    tasks = [make_task("copy", seed=1), make_task("reverse", seed=2)]
    model = build_model(toy_config(), seed=0)
    run = TrainRun(model, tasks, toy_train_config())
    exclusive = {t.name: [n for s in run.task_skills[t.name].names if s != "general"
                          for n in model.skill_parameter_names(s)] for t in tasks}
    assert not set(exclusive["copy"]) & set(exclusive["reverse"])
    other = {"copy": "reverse", "reverse": "copy"}
    violations = 0
    t0 = time.perf_counter()
    for _ in range(run.cfg.steps):
        snap = {t: {n: (model.params[n].data, run.optimizer.m[n], run.optimizer.steps[n]) for n in exclusive[t]} for t in exclusive}
        task = run.train_step()["task"]
        for n, (p, m, steps) in snap[other[task]].items():
            if not (np.array_equal(model.params[n].data, p) and np.array_equal(run.optimizer.m[n], m)
                    and run.optimizer.steps[n] == steps):
                violations += 1
    train_seconds = time.perf_counter() - t0
    scores = run.evaluate("dev")
    return {"run": run, "scores": scores, "violations": violations, "seconds": train_seconds,
            "state": model.state_dict()}


@criterion(8, "two-task toy run: dev exact match >= 95 and exclusive skills isolated")
def test_criterion_8_multitask(multitask_run):
    s = multitask_run["scores"]
    counts = {t: sum(1 for _, name, _, _ in multitask_run["run"].loss_log if name == t) for t in ("copy", "reverse")}
    assert multitask_run["violations"] == 0
    assert min(counts.values()) > 0
    assert s["copy"] >= 95.0 and s["reverse"] >= 95.0, s
    return (f"copy {s['copy']:.0f}%, reverse {s['reverse']:.0f}%, steps {counts}, "
            f"0 cross-task changes, train {multitask_run['seconds']:.0f}s")


ADAPT_THRESHOLD = 0.1
ADAPT_MAX_STEPS = 1000


def steps_for(model, task, seed):
    cfg = toy_train_config(steps=ADAPT_MAX_STEPS, warmup_steps=50, seed=seed)
    run = TrainRun(model, [task], cfg)
    n = steps_to_threshold(run, ADAPT_THRESHOLD, ADAPT_MAX_STEPS)
    return n if n is not None else float("inf")


@criterion(9, "adapting the multi-task checkpoint beats random init on a new task")
def test_criterion_9_adaptation(multitask_run):
    rotate = make_task("rotate", seed=3)
    rotate = TaskSpec("rotate", "rotate", skills=("non-open-end",), metric="exact_match", train=rotate.train)
    pairs = []
    for seed in range(5):
        warm = build_model(toy_config(), seed=seed)
        warm.load_state_dict(multitask_run["state"])
        cold = build_model(toy_config(), seed=100 + seed)
        pairs.append((steps_for(warm, rotate, seed), steps_for(cold, rotate, seed)))
    wins = sum(w < c for w, c in pairs)
    assert wins >= 4, pairs
    return f"{wins}/5 wins, steps (checkpoint, scratch) = {pairs}"


# ---------------------------------------------------------------- 10

@criterion(10, "determinism and invisible mid-run checkpointing")
def test_criterion_10_determinism(tmp_path):
    tasks = lambda: [make_task("copy", 300, 5, 5, seed=1), make_task("reverse", 300, 5, 5, seed=2)]
    cfg = toy_train_config(steps=200, warmup_steps=20)

    def fresh():
        return TrainRun(build_model(toy_config(), seed=10), tasks(), cfg)

    a, b = fresh(), fresh()
    train(a, 200)
    train(b, 200)
    assert states_equal(a.model.state_dict(), b.model.state_dict())

    c = fresh()
    train(c, 80)
    c.save(tmp_path / "mid")
    d = TrainRun(build_model(toy_config(), seed=999), tasks(), cfg)
    d.restore(tmp_path / "mid")
    train(d, 120)
    assert states_equal(a.model.state_dict(), d.model.state_dict())
    assert a.loss_log == d.loss_log
    return "200-step runs bitwise equal; save at step 80 + reload into a differently seeded model gives the same final state"
