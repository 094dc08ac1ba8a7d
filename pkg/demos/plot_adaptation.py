"""
Adapting to a new task
======================

Train copy + reverse, then fine-tune on rotate with the non-open-end
skill. Compare with the same budget from a fresh random model.
Takes about a minute.
"""

from skillnet_nlg.config import toy_config
from skillnet_nlg.data import TaskSpec
from skillnet_nlg.synthetic import make_task
from skillnet_nlg.training import TrainConfig, TrainRun, build_model, steps_to_threshold, train

base = build_model(toy_config(), seed=0)
cfg = TrainConfig(batch_size=32, steps=1500, peak_lr=3e-3, warmup_steps=100,
                  max_source_length=32, max_target_length=16)
train(TrainRun(base, [make_task("copy", seed=1), make_task("reverse", seed=2)], cfg), cfg.steps)
state = base.state_dict()

rotate = make_task("rotate", seed=3)
rotate = TaskSpec("rotate", "rotate", skills=("non-open-end",), train=rotate.train)
adapt_cfg = TrainConfig(batch_size=32, steps=1000, peak_lr=3e-3, warmup_steps=50,
                        max_source_length=32, max_target_length=16)

warm = build_model(toy_config(), seed=1)
warm.load_state_dict(state)
cold = build_model(toy_config(), seed=1)

for label, model in (("from checkpoint", warm), ("from scratch", cold)):
    n = steps_to_threshold(TrainRun(model, [rotate], adapt_cfg), 0.1, 1000)
    print(f"{label:<16} reaches mean loss < 0.1 after {n} steps")
