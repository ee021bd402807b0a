"""Training configuration, sparse Adam, and the CausE training loop."""

from __future__ import annotations

import ctypes
import ctypes.util
import functools
import json
import logging
import sys
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .data import FilterIndex, TripleSet, Vocab, build_filter_index, sample_negatives
from .errors import ConfigError, TrainingDivergence
from .evaluation import evaluate
from .objectives import LOSS_NAMES, LossBreakdown, ObjectiveResult, RowGrad, cause_objective
from .scoring import VIEWS, EmbeddingTable, InterventionOp, ScoreModel, init_embeddings

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run.

    Defaults sit inside the usual search grid for this family of models
    (d in {256, 512, 1024}, margin in {0, 4, 6, 8}, batch in {512, 1024},
    temperature in {1, 2}, negatives in {64, 128, 256}, lr in {1e-3, 1e-4, 2e-5}).
    ``eval_every=0`` disables validation; ``patience=0`` disables early stopping.
    """

    d_e: int = 256
    d_r: int | None = None
    gamma: float = 6.0
    alpha: float = 1.0
    negatives: int = 128
    batch_size: int = 512
    lr: float = 1e-3
    epochs: int = 100
    model: ScoreModel = field(default_factory=ScoreModel)
    op: InterventionOp = InterventionOp.ADD
    seed: int = 0
    loss_weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0)
    eval_every: int = 10
    patience: int = 0
    eval_view: str = "causal"

    def __post_init__(self):
        if isinstance(self.model, str):
            object.__setattr__(self, "model", ScoreModel(self.model))
        try:
            object.__setattr__(self, "op", InterventionOp(self.op))
        except ValueError:
            raise ConfigError(f"unknown intervention operator {self.op!r}") from None
        if self.d_r is None:
            object.__setattr__(self, "d_r", self.model.relation_dim(self.d_e))
        lw = tuple(float(w) for w in self.loss_weights)
        if len(lw) != len(LOSS_NAMES):
            raise ConfigError(f"loss_weights needs {len(LOSS_NAMES)} entries, got {len(lw)}")
        object.__setattr__(self, "loss_weights", lw)
        for name in ("negatives", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("epochs", "eval_every", "patience", "seed"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ConfigError("gamma must be a finite non-negative number")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if any(w < 0 or not math.isfinite(w) for w in lw):
            raise ConfigError("loss weights must be finite and non-negative")
        if self.eval_view not in VIEWS:
            raise ConfigError(f"eval_view must be one of {VIEWS}")
        self.model.check_dims(self.d_e, self.d_r)

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "d_e": self.d_e,
            "d_r": self.d_r,
            "gamma": self.gamma,
            "alpha": self.alpha,
            "negatives": self.negatives,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "epochs": self.epochs,
            "model": self.model.kind,
            "norm_p": self.model.norm_p,
            "op": self.op.value,
            "seed": self.seed,
            "loss_weights": dict(zip(LOSS_NAMES, self.loss_weights)),
            "eval_every": self.eval_every,
            "patience": self.patience,
            "eval_view": self.eval_view,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version!r}")
        known = {f.name for f in fields(cls)} | {"norm_p"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        model = ScoreModel(d.pop("model", "DistMult"), d.pop("norm_p", None))
        lw = d.pop("loss_weights", None)
        if isinstance(lw, dict):
            bad = sorted(set(lw) - set(LOSS_NAMES))
            if bad:
                raise ConfigError(f"unknown loss name(s): {', '.join(bad)}")
            lw = tuple(float(lw.get(n, 1.0)) for n in LOSS_NAMES)
        if lw is not None:
            d["loss_weights"] = lw
        try:
            return cls(model=model, **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "TrainConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return TrainConfig(**d)


# ------------------------------------------------------------------ Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})

    def copy(self) -> "AdamState":
        return AdamState(
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step,
            self.beta1,
            self.beta2,
            self.eps,
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, RowGrad], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam step, in place, touching only the rows in ``grads``.

    Moments of rows absent from ``grads`` are left as they are (lazy/sparse
    Adam); the step counter advances regardless.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, g in grads.items():
        p = params[name]
        if g.values.shape[1:] != p.shape[1:]:
            raise ValueError(f"gradient for {name} has shape {g.values.shape}, parameter {p.shape}")
        rows = g.rows
        m = b1 * state.m[name][rows] + (1.0 - b1) * g.values
        v = b2 * state.v[name][rows] + (1.0 - b2) * (g.values * g.values)
        state.m[name][rows] = m
        state.v[name][rows] = v
        p[rows] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ----------------------------------------------------------------- loop


@functools.cache
def tune_allocator() -> bool:
    """Keep batch-sized temporaries on the heap (glibc only; best effort).

    Every step allocates and frees a few dozen arrays of about half a
    megabyte.  glibc serves blocks that size with mmap and returns them on
    free, so each step pays fresh page faults, which costs more than the
    arithmetic and roughly doubles the time per step.  Raising the mmap and
    trim thresholds lets the freed blocks be reused.  This has no effect on
    results.
    """
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        m_trim_threshold, m_mmap_threshold = -1, -3
        ok = libc.mallopt(m_mmap_threshold, 32 << 20) and libc.mallopt(m_trim_threshold, 128 << 20)
    except (OSError, AttributeError):
        return False
    return bool(ok)


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for initialisation, shuffling and negative sampling."""
    init, shuffle, negatives = np.random.SeedSequence(seed).spawn(3)
    return {
        "init": np.random.default_rng(init),
        "shuffle": np.random.default_rng(shuffle),
        "negatives": np.random.default_rng(negatives),
    }


@dataclass
class TrainResult:
    table: EmbeddingTable
    optimizer: AdamState
    log: list[dict]
    epoch: int
    best_metric: float | None = None


def batch_loss(pos: np.ndarray, table: EmbeddingTable, config: TrainConfig, rng) -> ObjectiveResult:
    """Draw one shared negative batch for ``pos`` and evaluate the full objective.

    The same ``K`` corruptions feed all three score channels; the result
    carries the loss breakdown and sparse row gradients for all four matrices.
    """
    pos = np.asarray(pos, dtype=np.int64).reshape(-1, 3)
    if len(pos) == 0:
        raise ValueError("batch_loss needs at least one positive triple")
    neg, _ = sample_negatives(pos, config.negatives, table.n_entities, rng)
    return cause_objective(table, pos, neg, config.gamma, config.alpha, config.op, config.loss_weights)


def _epoch_record(epoch, sums, n) -> dict:
    rec = {"epoch": epoch}
    for k, v in sums.items():
        rec[k] = v / n
    return rec


def _check_finite(bd: LossBreakdown, epoch: int):
    for name, value in bd.items():
        if not math.isfinite(value):
            raise TrainingDivergence(name, epoch, value)


def train(
    config: TrainConfig,
    vocab: Vocab | tuple[int, int],
    train_set: TripleSet,
    valid_set: TripleSet | None = None,
    *,
    filter_index: FilterIndex | None = None,
    initial_table: EmbeddingTable | None = None,
    threads: int = 1,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train CausE embeddings with shuffled mini-batches and sparse Adam.

    Validation (filtered MRR of ``config.eval_view``) runs every
    ``config.eval_every`` epochs and after the last one; the table with the
    best validation MRR is returned.  Without validation the final table is
    returned.  Runs are deterministic given ``config.seed``.

    Raises:
        TrainingDivergence: a loss term or a parameter became non-finite.
    """
    n_ent, n_rel = vocab if isinstance(vocab, tuple) else (vocab.n_entities, vocab.n_relations)
    tune_allocator()
    streams = seed_streams(config.seed)
    if initial_table is None:
        table = init_embeddings((n_ent, n_rel), config.d_e, config.d_r, config.model, streams["init"])
    else:
        table = initial_table.copy()
    params = table.matrices()
    state = AdamState.zeros_like(params)

    validate = config.eval_every > 0 and valid_set is not None and len(valid_set) > 0
    if validate and filter_index is None:
        filter_index = build_filter_index(train_set, valid_set)
    best = None
    best_metric = None
    stale = 0
    log: list[dict] = []
    data = train_set.array
    n = len(data)
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        perm = streams["shuffle"].permutation(n)
        sums = dict.fromkeys(LOSS_NAMES + ("total",), 0.0)
        for start in range(0, n, config.batch_size):
            pos = data[perm[start : start + config.batch_size]]
            res = batch_loss(pos, table, config, streams["negatives"])
            _check_finite(res.breakdown, epoch)
            adam_step(params, res.grads, state, config.lr)
            for k, v in res.breakdown.items():
                sums[k] += v * len(pos)
        if not table.is_finite():
            raise TrainingDivergence("parameters", epoch, float("nan"))
        rec = _epoch_record(epoch, sums, max(n, 1))

        if validate and (epoch % config.eval_every == 0 or epoch == config.epochs):
            mrr = evaluate(table, valid_set, filter_index, config.eval_view, config.op, threads).mrr
            rec["valid_mrr"] = mrr
            if best_metric is None or mrr > best_metric:
                best_metric = mrr
                best = (table.copy(), state.copy(), epoch)
                stale = 0
            else:
                stale += 1
        log.append(rec)
        logger.debug("epoch %d: %s", epoch, rec)
        if on_epoch is not None:
            on_epoch(rec)
        if validate and config.patience and stale >= config.patience:
            logger.info("early stop at epoch %d (best valid MRR %.4f)", epoch, best_metric)
            break

    if best is not None:
        return TrainResult(best[0], best[1], log, best[2], best_metric)
    return TrainResult(table, state, log, epoch, None)
