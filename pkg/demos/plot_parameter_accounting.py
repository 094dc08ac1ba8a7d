"""
Parameter accounting at BART-large shape
========================================

Only the active skill FFNs count toward a task's parameters. Each extra
skill adds one FFN block to every modified layer.
"""

from skillnet_nlg.config import bart_large_config, desk_config
from skillnet_nlg.skills import TaskSkillMap, count_params, ffn_block_params

cfg = bart_large_config()
print(f"modified layers: {cfg.n_modified_layers} of {cfg.n_enc_layers + cfg.n_dec_layers}")
print(f"one FFN block: {ffn_block_params(cfg.d_model, cfg.d_ff):,}")

base = count_params(cfg, 1)
print(f"dense model:      {base['dense'] / 1e6:8.2f}M")
print(f"all six skills:   {base['total'] / 1e6:8.2f}M")
print(f"per extra skill:  {base['per_skill'] / 1e6:8.2f}M")

print()
table = TaskSkillMap.default()
for task in table:
    c = count_params(cfg, table[task])
    print(f"{task:<30} |S|={len(table[task])}  activated={c['activated'] / 1e6:7.2f}M")

# the desk model used in the tests is tiny by comparison
d = count_params(desk_config(), 6)
print(f"\ndesk config total: {d['total']:,}")
