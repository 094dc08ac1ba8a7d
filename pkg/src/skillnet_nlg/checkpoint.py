"""Checkpoint directories: text manifest + little-endian float64 blob.

Layout of a checkpoint directory::

    meta.json             model config, skill registry, run state
    params.manifest       one line per tensor: name<TAB>shape<TAB>byte offset
    params.bin            concatenated little-endian float64 data
    optimizer.manifest    same format, Adam moments (optional sidecar)
    optimizer.bin

Shapes are comma-separated dimension sizes (empty for scalars).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .config import ModelConfig
from .skills import SkillRegistry
from .transformer import Seq2SeqTransformer

HEADER = "# skillnet-nlg tensors v1 float64-le"
_DTYPE = np.dtype("<f8")


def write_arrays(directory: str | Path, stem: str, arrays: Mapping[str, np.ndarray]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [HEADER]
    offset = 0
    with open(directory / f"{stem}.bin", "wb") as blob:
        for name, arr in arrays.items():
            if any(c.isspace() for c in name):
                raise ValueError(f"tensor name {name!r} contains whitespace")
            data = np.ascontiguousarray(arr, dtype=_DTYPE)
            blob.write(data.tobytes())
            lines.append(f"{name}\t{','.join(str(n) for n in data.shape)}\t{offset}")
            offset += data.nbytes
    (directory / f"{stem}.manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_arrays(directory: str | Path, stem: str) -> dict[str, np.ndarray]:
    directory = Path(directory)
    raw = (directory / f"{stem}.bin").read_bytes()
    out: dict[str, np.ndarray] = {}
    for line in (directory / f"{stem}.manifest").read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        name, shape_s, offset_s = line.split("\t")
        shape = tuple(int(n) for n in shape_s.split(",")) if shape_s else ()
        count = int(np.prod(shape, dtype=np.int64))
        offset = int(offset_s)
        if offset + count * 8 > len(raw):
            raise ValueError(f"{stem}.bin is truncated at tensor {name!r}")
        out[name] = np.frombuffer(raw, dtype=_DTYPE, count=count, offset=offset).reshape(shape).astype(np.float64)
    return out


def save_model(directory: str | Path, model: Seq2SeqTransformer, extra: dict | None = None) -> Path:
    directory = Path(directory)
    write_arrays(directory, "params", model.state_dict())
    meta = {
        "config": model.config.to_dict(),
        "registry": None if model.registry is None else {"skills": list(model.registry.names), "general": model.registry.general},
        "seed": model.seed,
        "pad_id": model.pad_id,
    }
    meta.update(extra or {})
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    return directory


def read_meta(directory: str | Path) -> dict:
    return json.loads((Path(directory) / "meta.json").read_text(encoding="utf-8"))


def load_model(directory: str | Path) -> Seq2SeqTransformer:
    meta = read_meta(directory)
    reg = meta.get("registry")
    registry = SkillRegistry(reg["skills"], reg["general"]) if reg else None
    model = Seq2SeqTransformer(ModelConfig.from_dict(meta["config"]), registry, meta.get("seed", 0), meta.get("pad_id", 0))
    model.load_state_dict(read_arrays(directory, "params"))
    return model
