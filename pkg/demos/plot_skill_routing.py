"""
Which skills does each task switch on?
======================================

Every task activates a subset of the skill FFNs plus ``general``.
The layer output is the plain mean of the active FFN outputs.
"""

import numpy as np

from skillnet_nlg import tensor as T
from skillnet_nlg.skills import SkillLayerBank, SkillRegistry, SkillSet, TaskSkillMap, skill_layer_forward

registry = SkillRegistry.default()
table = TaskSkillMap.default(registry)

for task in table:
    print(f"{task:<30} {', '.join(table[task].names)}")

# a custom task just names its skills; general is added for you
tables = SkillSet(registry, ["data-to-text"])
print("\ncustom task ->", tables.names)

# one bank of six FFNs, d_model 8, d_ff 16
rng = np.random.default_rng(0)
bank = SkillLayerBank.init(registry, 8, 16, rng)
x = T.Tensor(rng.normal(size=(3, 8)))

dialogue = table["dialogue-generation"]
pooled = skill_layer_forward(bank, x, dialogue).data
by_hand = np.mean([skill_layer_forward(bank, x, [k]).data for k in dialogue.indices], axis=0)
print("pooled == mean of single skills:", np.allclose(pooled, by_hand, atol=1e-12))
