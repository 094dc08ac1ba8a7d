"""
Beam search against brute force
===============================

On a 5-token vocabulary with at most 3 output tokens there are only 85
distinct outputs, so a beam of 125 must find the best one.
"""

import itertools

import numpy as np

from skillnet_nlg.config import toy_config
from skillnet_nlg.decoding import BeamConfig, beam_search, greedy_decode, log_softmax
from skillnet_nlg.skills import SkillRegistry, SkillSet
from skillnet_nlg.transformer import Seq2SeqTransformer

EOS = 2
registry = SkillRegistry.default()
model = Seq2SeqTransformer(toy_config(vocab_size=5, d_model=16, d_ff=16, max_positions=16), registry, seed=3)
skills = SkillSet(registry, ["open-end"])
src = [3, 4, 1, 3]

enc = model.encode(np.asarray(src), skills=skills)
mask = np.asarray(src) == 0
scores = {}
for seq in itertools.product(range(5), repeat=3):
    if EOS in seq:
        seq = seq[: seq.index(EOS) + 1]
    if seq in scores:
        continue
    lp = sum(log_softmax(model.decode_step(enc, [1, *seq[:i]], skills, mask).data)[seq[i]] for i in range(len(seq)))
    scores[seq] = lp / len(seq)

best = max(scores, key=scores.get)
print(f"{len(scores)} candidates, best {best} score {scores[best]:.4f}")

for k in (1, 2, 4, 125):
    hyp = beam_search(model, src, skills, BeamConfig(k, 3))
    print(f"beam {k:>3}: {tuple(hyp.tokens)} score {hyp.score:.4f}")

g = greedy_decode(model, src, skills, 3)
print("greedy:  ", tuple(g.tokens))
