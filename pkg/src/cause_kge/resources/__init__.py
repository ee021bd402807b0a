"""Bundled desk-scale fixture: a 50-entity synthetic KG and its training config.

The data files were written by ``generate_synthetic_kg(50, 4, 0.6, rng=0)``
and are shipped so the CLI and the noise-robustness experiment can run
without regenerating them.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from ..data import Dataset, Vocab, load_dataset
from ..train import TrainConfig

FIXTURE = "synthetic50"
CONFIG = "synthetic50.json"


def _root() -> Path:
    return Path(str(resources.files(__name__)))


def synthetic50_dir() -> Path:
    """Directory holding train.txt / valid.txt / test.txt of the fixture."""
    return _root() / FIXTURE


def synthetic50_config_path() -> Path:
    return _root() / CONFIG


def load_synthetic50() -> Dataset:
    """The fixture indexed exactly as the generator indexed it (``e00``.., ``r0``..).

    Loading the directory without a vocabulary (as the CLI does) numbers
    entities in first-appearance order instead; the KG is the same.
    """
    return load_dataset(synthetic50_dir(), Vocab.synthetic(50, 4))


def synthetic50_config() -> TrainConfig:
    """The training config used for the desk-scale noise experiment."""
    return TrainConfig.from_json(synthetic50_config_path())
