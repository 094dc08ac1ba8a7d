"""Sparsely activated skill-routed encoder-decoder transformer at desk scale."""

from .config import ModelConfig, bart_large_config, desk_config, toy_config
from .data import MultiTaskSampler, SamplerPlan, TaskSpec, Vocabulary, build_plan, encode_example
from .decoding import BeamConfig, Hypothesis, beam_search, greedy_decode
from .metrics import corpus_bleu, rouge_l
from .skills import (
    SkillLayerBank,
    SkillRegistry,
    SkillSet,
    TaskSkillMap,
    count_params,
    grad_sparsity_report,
    route,
    skill_layer_forward,
)
from .tensor import Tensor
from .training import Adam, Schedule, TrainConfig, TrainRun, adapt, build_model, train
from .transformer import Seq2SeqTransformer

__version__ = "0.1.0"
