"""Model shape configuration and named presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace


@dataclass(frozen=True)
class ModelConfig:
    n_enc_layers: int = 4
    n_dec_layers: int = 4
    d_model: int = 128
    d_ff: int = 512
    n_heads: int = 4
    vocab_size: int = 261
    max_positions: int = 128
    # layers with index >= offset and (index - offset) % stride == 0 hold skill banks
    modified_layer_stride: int = 2
    modified_layer_offset: int = 0
    skill_count: int = 6
    activation: str = "gelu"
    pre_norm: bool = False
    tie_embeddings: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.modified_layer_stride < 1:
            raise ValueError("modified_layer_stride must be >= 1")
        if self.modified_layer_offset < 0:
            raise ValueError("modified_layer_offset must be >= 0")
        if self.skill_count < 1:
            raise ValueError("skill_count must be >= 1")
        if self.activation not in ("gelu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        for name in ("n_enc_layers", "n_dec_layers", "d_model", "d_ff", "n_heads", "vocab_size", "max_positions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def is_modified(self, layer: int) -> bool:
        off = self.modified_layer_offset
        return layer >= off and (layer - off) % self.modified_layer_stride == 0

    def modified_layers(self, n_layers: int) -> list[int]:
        return [i for i in range(n_layers) if self.is_modified(i)]

    @property
    def n_modified_layers(self) -> int:
        return len(self.modified_layers(self.n_enc_layers)) + len(self.modified_layers(self.n_dec_layers))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def replace(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


def desk_config(**kw) -> ModelConfig:
    """Default desk-scale shape: 4+4 layers, d_model 128, d_ff 512, 4 modified layers."""
    return ModelConfig(**kw)


def toy_config(**kw) -> ModelConfig:
    """Small enough for finite-difference checks over every parameter block."""
    base = dict(n_enc_layers=2, n_dec_layers=2, d_model=32, d_ff=64, n_heads=4, max_positions=64)
    base.update(kw)
    return ModelConfig(**base)


def bart_large_config(**kw) -> ModelConfig:
    """BART-large shape with a 21128-token Chinese vocabulary.

    HuggingFace BART stores 1024 + 2 learned positions per stack. With these
    values the dense parameter count is 376,455,168.
    """
    base = dict(
        n_enc_layers=12, n_dec_layers=12, d_model=1024, d_ff=4096, n_heads=16,
        vocab_size=21128, max_positions=1026,
    )
    base.update(kw)
    return ModelConfig(**base)


PRESETS = {"desk": desk_config, "toy": toy_config, "bart-large": bart_large_config}
