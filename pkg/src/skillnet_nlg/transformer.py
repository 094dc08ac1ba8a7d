"""Encoder-decoder transformer whose FFN slots may be skill banks.

Post-norm (original Transformer / BART) wiring by default, learned absolute
positions, and tied input/output embeddings. Layers selected by
``ModelConfig.is_modified`` replace their FFN with a :class:`SkillLayerBank`
when the model is built with a skill registry; ``registry=None`` gives the
plain dense transformer.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .skills import SkillLayerBank, SkillRegistry, SkillSet, ffn, skill_layer_forward

PAD_ID = 0
MASK_VALUE = -1e9


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out))


def pad_batch(seqs, pad_id: int = PAD_ID) -> np.ndarray:
    """Right-pad a list of id sequences into an int array ``[batch, max_len]``."""
    if isinstance(seqs, np.ndarray):
        return seqs.astype(np.int64, copy=False)
    seqs = [list(s) for s in seqs]
    width = max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), width), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def _as_batch(ids) -> tuple[np.ndarray, bool]:
    """Returns ``(ids[B, T], was_single)``."""
    if isinstance(ids, np.ndarray):
        if ids.ndim == 1:
            return ids[None, :].astype(np.int64), True
        return ids.astype(np.int64, copy=False), False
    ids = list(ids)
    if ids and np.isscalar(ids[0]):
        return np.asarray(ids, dtype=np.int64)[None, :], True
    return pad_batch(ids), False


class Seq2SeqTransformer:
    """Parameters live in ``self.params`` (ordered ``name -> Tensor``)."""

    def __init__(self, config: ModelConfig, registry: SkillRegistry | None = None, seed: int = 0, pad_id: int = PAD_ID):
        if registry is not None and len(registry) != config.skill_count:
            raise ValueError(f"registry has {len(registry)} skills but config.skill_count={config.skill_count}")
        self.config = config
        self.registry = registry
        self.pad_id = pad_id
        self.seed = seed
        self.params: dict[str, T.Tensor] = {}
        self._banks: dict[str, SkillLayerBank] = {}
        rng = np.random.default_rng(seed)
        c = config
        d = c.d_model

        self._param("embed.tokens", glorot(rng, c.vocab_size, d))
        if not c.tie_embeddings:
            self._param("lm_head", glorot(rng, d, c.vocab_size))
        for stack, n_layers in (("enc", c.n_enc_layers), ("dec", c.n_dec_layers)):
            self._param(f"{stack}.positions", glorot(rng, c.max_positions, d))
            self._norm(f"{stack}.embed_norm")
            for i in range(n_layers):
                p = f"{stack}.{i}"
                self._attention(rng, f"{p}.self_attn")
                self._norm(f"{p}.self_attn_norm")
                if stack == "dec":
                    self._attention(rng, f"{p}.cross_attn")
                    self._norm(f"{p}.cross_attn_norm")
                if registry is not None and c.is_modified(i):
                    bank = SkillLayerBank.init(registry, d, c.d_ff, rng, c.activation, name=f"{p}.ffn")
                    for skill, blk in zip(registry.names, bank.blocks):
                        for suffix, t in zip(("w1", "b1", "w2", "b2"), blk):
                            self.params[f"{p}.ffn.{skill}.{suffix}"] = t
                    self._banks[p] = bank
                else:
                    self._param(f"{p}.ffn.w1", glorot(rng, d, c.d_ff))
                    self._param(f"{p}.ffn.b1", np.zeros(c.d_ff))
                    self._param(f"{p}.ffn.w2", glorot(rng, c.d_ff, d))
                    self._param(f"{p}.ffn.b2", np.zeros(d))
                self._norm(f"{p}.ffn_norm")
            if c.pre_norm:
                self._norm(f"{stack}.final_norm")

    # ------------------------------------------------------------ construction

    def _param(self, name: str, value: np.ndarray) -> T.Tensor:
        t = T.Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def _norm(self, name: str) -> None:
        self._param(f"{name}.gain", np.ones(self.config.d_model))
        self._param(f"{name}.bias", np.zeros(self.config.d_model))

    def _attention(self, rng, name: str) -> None:
        d = self.config.d_model
        for proj in ("q", "k", "v", "o"):
            self._param(f"{name}.{proj}.w", glorot(rng, d, d))
            self._param(f"{name}.{proj}.b", np.zeros(d))

    # ------------------------------------------------------------ parameter access

    @property
    def is_dense(self) -> bool:
        return self.registry is None

    def parameters(self) -> list[T.Tensor]:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def banks(self) -> list[SkillLayerBank]:
        return list(self._banks.values())

    def bank(self, stack: str, layer: int) -> SkillLayerBank:
        return self._banks[f"{stack}.{layer}"]

    def skill_parameter_names(self, skill: str) -> list[str]:
        return [n for n in self.params if any(n.startswith(f"{b}.ffn.{skill}.") for b in self._banks)]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def num_parameters(self, skills: SkillSet | None = None) -> int:
        """Brute-force count; with ``skills`` only the active skill FFNs are counted."""
        if skills is None or self.is_dense:
            return sum(p.size for p in self.params.values())
        inactive = {n for k, s in enumerate(self.registry.names) if k not in skills.indices for n in self.skill_parameter_names(s)}
        return sum(p.size for n, p in self.params.items() if n not in inactive)

    def dense_equivalent(self) -> "Seq2SeqTransformer":
        """Plain transformer with identical parameters; needs a one-skill registry."""
        if self.registry is None:
            raise ValueError("model is already dense")
        if len(self.registry) != 1:
            raise ValueError("dense equivalence needs a registry of size 1")
        dense = Seq2SeqTransformer(self.config.replace(skill_count=1), None, self.seed, self.pad_id)
        skill = self.registry.names[0]
        state = {k.replace(f".ffn.{skill}.", ".ffn."): v for k, v in self.state_dict().items()}
        dense.load_state_dict(state)
        return dense

    # ------------------------------------------------------------ blocks

    def _ln(self, x: T.Tensor, name: str) -> T.Tensor:
        return T.layer_norm(x, self.params[f"{name}.gain"], self.params[f"{name}.bias"], self.config.ln_eps)

    def _linear(self, x: T.Tensor, name: str) -> T.Tensor:
        return T.matmul(x, self.params[f"{name}.w"]) + self.params[f"{name}.b"]

    def _mha(self, name: str, q_in: T.Tensor, kv_in: T.Tensor, mask: np.ndarray | None) -> T.Tensor:
        """Multi-head attention; ``mask`` is boolean ``[B, 1, Tq|1, Tk]`` with True = blocked."""
        B, Tq, d = q_in.shape
        Tk = kv_in.shape[1]
        H = self.config.n_heads
        dh = d // H
        q = T.transpose(T.reshape(self._linear(q_in, f"{name}.q"), (B, Tq, H, dh)), (0, 2, 1, 3))
        k = T.transpose(T.reshape(self._linear(kv_in, f"{name}.k"), (B, Tk, H, dh)), (0, 2, 3, 1))
        v = T.transpose(T.reshape(self._linear(kv_in, f"{name}.v"), (B, Tk, H, dh)), (0, 2, 1, 3))
        scores = T.matmul(q, k) * (1.0 / math.sqrt(dh))
        if mask is not None:
            scores = T.masked_fill(scores, mask, MASK_VALUE)
        ctx = T.matmul(T.softmax(scores, axis=-1), v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, Tq, d))
        return self._linear(ctx, f"{name}.o")

    def _ffn_slot(self, x: T.Tensor, prefix: str, skills: SkillSet | None) -> T.Tensor:
        bank = self._banks.get(prefix)
        if bank is None:
            p = self.params
            return ffn(x, p[f"{prefix}.ffn.w1"], p[f"{prefix}.ffn.b1"], p[f"{prefix}.ffn.w2"], p[f"{prefix}.ffn.b2"], self.config.activation)
        return skill_layer_forward(bank, x, skills)

    def _sublayer(self, x: T.Tensor, fn, norm: str) -> T.Tensor:
        if self.config.pre_norm:
            return x + fn(self._ln(x, norm))
        return self._ln(x + fn(x), norm)

    def _check_skills(self, skills: SkillSet | None) -> SkillSet | None:
        if self.is_dense:
            return None
        if skills is None:
            raise ValueError("a skill model needs an active SkillSet")
        if not isinstance(skills, SkillSet):
            skills = SkillSet(self.registry, skills)
        if skills.registry != self.registry:
            raise ValueError("SkillSet built against a different registry")
        return skills

    def _embed(self, ids: np.ndarray, stack: str) -> T.Tensor:
        n = ids.shape[1]
        if n > self.config.max_positions:
            raise ValueError(f"sequence length {n} exceeds max_positions={self.config.max_positions}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValueError(f"token id outside [0, vocab_size={self.config.vocab_size})")
        pos = self.params[f"{stack}.positions"]
        x = T.embedding(self.params["embed.tokens"], ids) + T.embedding(pos, np.arange(n))
        return self._ln(x, f"{stack}.embed_norm")

    # ------------------------------------------------------------ forward

    def encode(self, tokens, pad_mask=None, skills: SkillSet | None = None) -> T.Tensor:
        """Contextual source states: ``[steps, d_model]`` for one sequence, else ``[B, steps, d_model]``."""
        ids, single = _as_batch(tokens)
        if pad_mask is None:
            pad_mask = ids == self.pad_id
        pad_mask = np.asarray(pad_mask, dtype=bool).reshape(ids.shape)
        out = self._encode(ids, pad_mask, self._check_skills(skills))
        return T.reshape(out, out.shape[1:]) if single else out

    def _encode(self, ids: np.ndarray, pad_mask: np.ndarray, skills) -> T.Tensor:
        x = self._embed(ids, "enc")
        mask = pad_mask[:, None, None, :]
        for i in range(self.config.n_enc_layers):
            p = f"enc.{i}"
            x = self._sublayer(x, lambda h: self._mha(f"{p}.self_attn", h, h, mask), f"{p}.self_attn_norm")
            x = self._sublayer(x, lambda h: self._ffn_slot(h, p, skills), f"{p}.ffn_norm")
        if self.config.pre_norm:
            x = self._ln(x, "enc.final_norm")
        return x

    def _decode(self, enc_out: T.Tensor, src_pad: np.ndarray, tgt_in: np.ndarray, skills) -> T.Tensor:
        B, n = tgt_in.shape
        x = self._embed(tgt_in, "dec")
        causal = np.triu(np.ones((n, n), dtype=bool), k=1)[None, None]
        self_mask = causal | (tgt_in == self.pad_id)[:, None, None, :]
        cross_mask = src_pad[:, None, None, :]
        for i in range(self.config.n_dec_layers):
            p = f"dec.{i}"
            x = self._sublayer(x, lambda h: self._mha(f"{p}.self_attn", h, h, self_mask), f"{p}.self_attn_norm")
            x = self._sublayer(x, lambda h: self._mha(f"{p}.cross_attn", h, enc_out, cross_mask), f"{p}.cross_attn_norm")
            x = self._sublayer(x, lambda h: self._ffn_slot(h, p, skills), f"{p}.ffn_norm")
        if self.config.pre_norm:
            x = self._ln(x, "dec.final_norm")
        if self.config.tie_embeddings:
            return T.matmul(x, T.transpose(self.params["embed.tokens"]))
        return T.matmul(x, self.params["lm_head"])

    def forward_teacher_forced(self, src, tgt, skills: SkillSet | None = None) -> T.Tensor:
        """Logits predicting ``tgt[1:]`` from ``tgt[:-1]``: ``[steps-1, vocab]`` or ``[B, steps-1, vocab]``."""
        src_ids, single = _as_batch(src)
        tgt_ids, _ = _as_batch(tgt)
        if tgt_ids.shape[1] < 2:
            raise ValueError("target must hold at least BOS and EOS")
        skills = self._check_skills(skills)
        src_pad = src_ids == self.pad_id
        enc = self._encode(src_ids, src_pad, skills)
        logits = self._decode(enc, src_pad, tgt_ids[:, :-1], skills)
        return T.reshape(logits, logits.shape[1:]) if single else logits

    def decode_step(self, encoder_out: T.Tensor, prefix, skills: SkillSet | None = None, src_pad_mask=None) -> T.Tensor:
        """Next-token logits after ``prefix``: ``[vocab]`` for one prefix, ``[B, vocab]`` for a batch.

        Inference only; no graph is recorded.
        """
        ids, single = _as_batch(prefix)
        if ids.shape[1] == 0:
            raise ValueError("prefix must be non-empty (start with BOS)")
        enc = encoder_out.data if encoder_out.ndim == 3 else encoder_out.data[None]
        if src_pad_mask is None:
            src_pad = np.zeros(enc.shape[:2], dtype=bool)
        else:
            src_pad = np.asarray(src_pad_mask, dtype=bool).reshape(-1, enc.shape[1])
        if enc.shape[0] != ids.shape[0]:
            if enc.shape[0] != 1:
                raise ValueError(f"encoder batch {enc.shape[0]} does not match prefix batch {ids.shape[0]}")
            enc = np.repeat(enc, ids.shape[0], axis=0)
            src_pad = np.repeat(src_pad, ids.shape[0], axis=0)
        with T.no_grad():
            logits = self._decode(T.Tensor(enc), src_pad, ids, self._check_skills(skills))
        last = logits.data[:, -1, :]
        return T.Tensor(last[0] if single else last)

    def loss(self, src, tgt, skills: SkillSet | None = None) -> T.Tensor:
        src_ids, _ = _as_batch(src)
        tgt_ids, _ = _as_batch(tgt)
        logits = self.forward_teacher_forced(src_ids, tgt_ids, skills)
        return T.cross_entropy(logits, tgt_ids[:, 1:], self.pad_id)
