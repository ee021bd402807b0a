"""Checkpoint directories: ``metadata.json`` plus one raw little-endian file per matrix.

``metadata.json`` records the format version, training config, vocabulary,
epoch, metrics, the storage dtype and, for every matrix, its file name,
shape, byte length and CRC32.  Matrices are stored row-major as float32 by
default (float64 on request); the optimizer moments are stored alongside.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Vocab
from .errors import CheckpointError, ConfigError
from .scoring import EmbeddingTable
from .train import AdamState, TrainConfig

FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocab
    table: EmbeddingTable
    epoch: int = 0
    metrics: dict = field(default_factory=dict)
    optimizer: AdamState | None = None
    extra: dict = field(default_factory=dict)


def _arrays(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    out = dict(ckpt.table.matrices())
    if ckpt.optimizer is not None:
        for name in EmbeddingTable.MATRICES:
            if name in ckpt.optimizer.m:
                out[f"adam_m.{name}"] = ckpt.optimizer.m[name]
                out[f"adam_v.{name}"] = ckpt.optimizer.v[name]
    return out


def metadata_bytes(meta: dict) -> bytes:
    return (json.dumps(meta, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def save_checkpoint(path: str | Path, ckpt: Checkpoint, dtype: str = "float32") -> Path:
    """Write ``ckpt`` into directory ``path`` (created if needed); returns the path."""
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    matrices = {}
    for name, arr in _arrays(ckpt).items():
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        fname = f"{name}.bin"
        (path / fname).write_bytes(raw)
        matrices[name] = {
            "file": fname,
            "shape": list(arr.shape),
            "nbytes": len(raw),
            "crc32": zlib.crc32(raw),
        }
    meta = {
        "format_version": FORMAT_VERSION,
        "dtype": dtype,
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.to_dict(),
        "epoch": ckpt.epoch,
        "metrics": ckpt.metrics,
        "optimizer": None
        if ckpt.optimizer is None
        else {
            "step": ckpt.optimizer.step,
            "beta1": ckpt.optimizer.beta1,
            "beta2": ckpt.optimizer.beta2,
            "eps": ckpt.optimizer.eps,
        },
        "extra": ckpt.extra,
        "matrices": matrices,
    }
    (path / "metadata.json").write_bytes(metadata_bytes(meta))
    return path


def _read_matrix(path: Path, name: str, info: dict, dtype: str) -> np.ndarray:
    f = path / info["file"]
    if not f.is_file():
        raise CheckpointError(f"{f}: matrix file missing")
    raw = f.read_bytes()
    if len(raw) != info["nbytes"]:
        raise CheckpointError(f"{f}: expected {info['nbytes']} bytes, found {len(raw)} (truncated?)")
    itemsize = np.dtype(_DTYPES[dtype]).itemsize
    if int(np.prod(info["shape"])) * itemsize != len(raw):
        raise CheckpointError(f"{f}: shape {info['shape']} does not match byte length")
    if zlib.crc32(raw) != info["crc32"]:
        raise CheckpointError(f"{f}: CRC32 mismatch")
    return np.frombuffer(raw, dtype=_DTYPES[dtype]).reshape(info["shape"]).astype(np.float64)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    meta_file = path / "metadata.json"
    if not meta_file.is_file():
        raise CheckpointError(f"{meta_file}: not found")
    try:
        meta = json.loads(meta_file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{meta_file}: invalid JSON ({exc})") from None
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version!r}, expected {FORMAT_VERSION}")
    try:
        dtype = meta["dtype"]
        if dtype not in _DTYPES:
            raise CheckpointError(f"{path}: unknown storage dtype {dtype!r}")
        config = TrainConfig.from_dict(meta["config"])
        vocab = Vocab.from_dict(meta["vocab"])
        arrays = {name: _read_matrix(path, name, info, dtype) for name, info in meta["matrices"].items()}
        table = EmbeddingTable(*(arrays[n] for n in EmbeddingTable.MATRICES), model=config.model)
        opt = None
        if meta.get("optimizer") is not None:
            o = meta["optimizer"]
            names = [n for n in EmbeddingTable.MATRICES if f"adam_m.{n}" in arrays]
            opt = AdamState(
                {n: arrays[f"adam_m.{n}"] for n in names},
                {n: arrays[f"adam_v.{n}"] for n in names},
                o["step"],
                o["beta1"],
                o["beta2"],
                o["eps"],
            )
    except KeyError as exc:
        raise CheckpointError(f"{path}: metadata lacks {exc}") from None
    except ConfigError as exc:
        raise CheckpointError(f"{path}: invalid stored config ({exc})") from None
    if table.n_entities != vocab.n_entities or table.n_relations != vocab.n_relations:
        raise CheckpointError(f"{path}: matrix shapes disagree with the vocabulary")
    return Checkpoint(config, vocab, table, meta["epoch"], meta["metrics"], opt, meta.get("extra", {}))
