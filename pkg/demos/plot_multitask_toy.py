"""
Two string tasks, two skills
============================

copy routes to non-open-end, reverse to data-to-text. Both share general.
The copy skill is never touched on reverse batches, and vice versa.
Takes about half a minute.
"""

import numpy as np

from skillnet_nlg.config import toy_config
from skillnet_nlg.synthetic import make_task
from skillnet_nlg.training import TrainConfig, TrainRun, build_model, train

tasks = [make_task("copy", 1000, 50, 50, seed=1), make_task("reverse", 1000, 50, 50, seed=2)]
model = build_model(toy_config(), seed=0)
cfg = TrainConfig(batch_size=32, steps=1000, peak_lr=3e-3, warmup_steps=100,
                  max_source_length=32, max_target_length=16, eval_every=250)
run = TrainRun(model, tasks, cfg)

copy_w = model.params[model.skill_parameter_names("non-open-end")[0]].data.copy()
result = train(run, cfg.steps)

for entry in run.eval_log:
    print(f"step {entry['step']:>5}  copy {entry['copy']:5.1f}  reverse {entry['reverse']:5.1f}")

losses = np.array([loss for _, _, loss, _ in run.loss_log])
print("loss first/last 50:", losses[:50].mean().round(3), losses[-50:].mean().round(3))
print("copy skill moved:", not np.array_equal(copy_w, model.params[model.skill_parameter_names("non-open-end")[0]].data))

for src in ["abcde", "hgfa"]:
    print(src, "->", run.generate(tasks[1], [src])[0], "(reverse)")
