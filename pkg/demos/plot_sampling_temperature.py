"""
Task mixing under a temperature
===============================

Tasks are drawn with probability proportional to min(n, K) ** (1 / T).
T = 1 follows dataset size, large T approaches uniform.
"""

import numpy as np

from skillnet_nlg.data import REFERENCE_CAP_K, REFERENCE_TASK_SIZES, build_plan

print("sizes:", REFERENCE_TASK_SIZES)
print("cap K = 2**21 =", REFERENCE_CAP_K)

for temp in (1, 2, 4, 16, 1024):
    plan = build_plan(REFERENCE_TASK_SIZES, REFERENCE_CAP_K, temp)
    row = "  ".join(f"{p:.4f}" for p in plan.probs)
    print(f"T={temp:<5} {row}   spread={max(plan.probs) - min(plan.probs):.4f}")

# the full table, as printed by `skillnet-nlg sampler-plan`
print()
print(build_plan(REFERENCE_TASK_SIZES, REFERENCE_CAP_K, 4.0).table())

# draw counts over 10k batches
plan = build_plan(REFERENCE_TASK_SIZES, REFERENCE_CAP_K, 4.0, seed=0)
rng = np.random.default_rng(0)
counts = np.bincount(rng.choice(len(plan.probs), size=10_000, p=plan.probs), minlength=len(plan.probs))
print("\ndraws per task:", dict(zip(plan.tasks, counts.tolist())))
