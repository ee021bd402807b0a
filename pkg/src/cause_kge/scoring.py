"""Energy functions, their gradients, and the disentangled embedding table.

All energies follow one convention: lower means more plausible.  The
semantic-matching models (DistMult, ComplEx) therefore return the negated
trilinear product.  Every function broadcasts over leading axes and reduces
over the last one, so the same code scores a single triple, a batch of
negatives, or a query against every entity.

Complex-valued models store a vector of ``d/2`` complex numbers as the real
array ``(real parts || imaginary parts)``.  RotatE relations are stored as
``d_e/2`` rotation phases.  PairRE relations are ``(r_head || r_tail)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError

KINDS = ("TransE", "DistMult", "ComplEx", "RotatE", "PairRE")
VIEWS = ("causal", "confounder", "intervention")
_DEFAULT_P = {"TransE": 1, "RotatE": 2, "PairRE": 1}


class InterventionOp(str, Enum):
    ADD = "add"
    SUBTRACT = "subtract"
    MULTIPLY = "multiply"
    CONCAT = "concat"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class ScoreModel:
    """Which energy function to use.

    ``norm_p`` selects the L1 or L2 norm for the distance models (TransE,
    RotatE, PairRE); ``None`` means the model's customary norm.  It is
    ignored by DistMult and ComplEx.
    """

    kind: str = "DistMult"
    norm_p: int | None = None

    def __post_init__(self):
        lookup = {k.lower(): k for k in KINDS}
        kind = lookup.get(str(self.kind).lower())
        if kind is None:
            raise ConfigError(f"unknown score function {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if self.norm_p not in (None, 1, 2):
            raise ConfigError(f"norm_p must be 1 or 2, got {self.norm_p!r}")

    @property
    def p(self) -> int | None:
        if self.kind not in _DEFAULT_P:
            return None
        return self.norm_p or _DEFAULT_P[self.kind]

    def relation_dim(self, d_e: int) -> int:
        """The relation width this model pairs with entity width ``d_e``."""
        if self.kind == "RotatE":
            return d_e // 2
        if self.kind == "PairRE":
            return 2 * d_e
        return d_e

    def check_dims(self, d_e: int, d_r: int) -> None:
        if d_e < 1:
            raise ConfigError(f"entity dimension must be positive, got {d_e}")
        if self.kind in ("ComplEx", "RotatE") and d_e % 2:
            raise ConfigError(f"{self.kind} needs an even entity dimension, got {d_e}")
        if d_r != self.relation_dim(d_e):
            raise ConfigError(
                f"{self.kind} with d_e={d_e} needs d_r={self.relation_dim(d_e)}, got {d_r}"
            )

    @property
    def entity_blocks(self) -> int:
        """Number of contiguous halves an entity vector is made of (for concat)."""
        return 2 if self.kind in ("ComplEx", "RotatE") else 1

    @property
    def relation_blocks(self) -> int:
        return 2 if self.kind in ("ComplEx", "PairRE") else 1

    def to_dict(self) -> dict:
        return {"kind": self.kind, "norm_p": self.norm_p}


@dataclass(frozen=True)
class TripleGradients:
    d_head: np.ndarray
    d_rel: np.ndarray
    d_tail: np.ndarray


# ---------------------------------------------------------------- energies


def _norm(x: np.ndarray, p: int, grad: bool):
    if p == 1:
        n = np.abs(x).sum(axis=-1)
        return n, (np.sign(x) if grad else None)
    n = np.sqrt((x * x).sum(axis=-1))
    if not grad:
        return n, None
    safe = np.where(n > 0, n, 1.0)
    # zero subgradient at the kink
    g = np.where((n > 0)[..., None], x / safe[..., None], 0.0)
    return n, g


def _full(a, shape):
    return np.broadcast_to(a, shape).copy() if a.shape != shape else a


def _transe(h, r, t, p, grad):
    x = h + r - t
    e, g = _norm(x, p, grad)
    if not grad:
        return e, None
    return e, (g, g.copy(), -g)


def _distmult(h, r, t, p, grad):
    hr = h * r
    e = -(hr * t).sum(axis=-1)
    if not grad:
        return e, None
    shape = np.broadcast_shapes(h.shape, r.shape, t.shape)
    return e, (_full(-r * t, shape), _full(-h * t, shape), _full(-hr, shape))


def _halves(x):
    k = x.shape[-1] // 2
    return x[..., :k], x[..., k:]


def _complex(h, r, t, p, grad):
    hr, hi = _halves(h)
    rr, ri = _halves(r)
    tr, ti = _halves(t)
    e = -(hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr).sum(axis=-1)
    if not grad:
        return e, None
    shape = np.broadcast_shapes(hr.shape, rr.shape, tr.shape)
    dh = np.concatenate([_full(-(rr * tr + ri * ti), shape), _full(-(rr * ti - ri * tr), shape)], axis=-1)
    dr = np.concatenate([_full(-(hr * tr + hi * ti), shape), _full(-(hr * ti - hi * tr), shape)], axis=-1)
    dt = np.concatenate([_full(-(hr * rr - hi * ri), shape), _full(-(hi * rr + hr * ri), shape)], axis=-1)
    return e, (dh, dr, dt)


def _rotate(h, r, t, p, grad):
    hr, hi = _halves(h)
    tr, ti = _halves(t)
    c, s = np.cos(r), np.sin(r)
    a = hr * c - hi * s
    b = hr * s + hi * c
    u = a - tr
    v = b - ti
    if p == 2:
        e = np.sqrt((u * u + v * v).sum(axis=-1))
        if not grad:
            return e, None
        safe = np.where(e > 0, e, 1.0)[..., None]
        nz = (e > 0)[..., None]
        gu = np.where(nz, u / safe, 0.0)
        gv = np.where(nz, v / safe, 0.0)
    else:
        m = np.sqrt(u * u + v * v)
        e = m.sum(axis=-1)
        if not grad:
            return e, None
        safe = np.where(m > 0, m, 1.0)
        gu = np.where(m > 0, u / safe, 0.0)
        gv = np.where(m > 0, v / safe, 0.0)
    dh = np.concatenate([gu * c + gv * s, gv * c - gu * s], axis=-1)
    dr = gv * a - gu * b
    dt = np.concatenate([-gu, -gv], axis=-1)
    return e, (dh, dr, dt)


def _pairre(h, r, t, p, grad):
    rh, rt = _halves(r)
    x = h * rh - t * rt
    e, g = _norm(x, p, grad)
    if not grad:
        return e, None
    dh = g * rh
    dr = np.concatenate([g * h, -g * t], axis=-1)
    dt = -g * rt
    return e, (dh, dr, dt)


_ENERGIES = {
    "TransE": _transe,
    "DistMult": _distmult,
    "ComplEx": _complex,
    "RotatE": _rotate,
    "PairRE": _pairre,
}


def _check_shapes(model: ScoreModel, h, r, t):
    d_e = h.shape[-1]
    if t.shape[-1] != d_e:
        raise ShapeError(f"head has dimension {d_e} but tail has {t.shape[-1]}")
    if model.kind in ("ComplEx", "RotatE") and d_e % 2:
        raise ShapeError(f"{model.kind} needs an even entity dimension, got {d_e}")
    if r.shape[-1] != model.relation_dim(d_e):
        raise ShapeError(
            f"{model.kind} with entity dimension {d_e} needs relation dimension "
            f"{model.relation_dim(d_e)}, got {r.shape[-1]}"
        )


def energy(model: ScoreModel, h, r, t) -> np.ndarray | float:
    """Energy of ``(h, r, t)``; broadcasts over all but the last axis."""
    h, r, t = (np.asarray(v, dtype=float) for v in (h, r, t))
    _check_shapes(model, h, r, t)
    e, _ = _ENERGIES[model.kind](h, r, t, model.p, False)
    return float(e) if e.ndim == 0 else e


def energy_grad(model: ScoreModel, h, r, t) -> tuple[np.ndarray | float, TripleGradients]:
    """Energy and its gradient with respect to each of the three input vectors.

    The gradients have the full broadcast shape of the inputs.  At the
    non-differentiable points of the L1/L2 norms the zero subgradient is used.
    """
    h, r, t = (np.asarray(v, dtype=float) for v in (h, r, t))
    _check_shapes(model, h, r, t)
    e, (dh, dr, dt) = _ENERGIES[model.kind](h, r, t, model.p, True)
    return (float(e) if e.ndim == 0 else e), TripleGradients(dh, dr, dt)


# ----------------------------------------------------------- intervention


def _blockwise(x, blocks):
    k = x.shape[-1] // blocks
    return [x[..., i * k : (i + 1) * k] for i in range(blocks)]


def intervene(caus, conf, op: InterventionOp | str = InterventionOp.ADD, blocks: int = 1) -> np.ndarray:
    """Recombine causal and confounder vectors into the intervention vector.

    ``concat`` joins the two vectors; with ``blocks > 1`` each vector is
    treated as that many contiguous parts (e.g. real and imaginary halves)
    and the parts are joined pairwise, so the layout the energy function
    expects is preserved at double width.
    """
    op = InterventionOp(op)
    caus = np.asarray(caus, dtype=float)
    conf = np.asarray(conf, dtype=float)
    if caus.shape[-1] != conf.shape[-1]:
        raise ShapeError(f"cannot combine vectors of dimension {caus.shape[-1]} and {conf.shape[-1]}")
    if op is InterventionOp.ADD:
        return caus + conf
    if op is InterventionOp.SUBTRACT:
        return caus - conf
    if op is InterventionOp.MULTIPLY:
        return caus * conf
    if caus.shape[-1] % blocks:
        raise ShapeError(f"dimension {caus.shape[-1]} does not split into {blocks} blocks")
    parts = []
    for a, b in zip(_blockwise(caus, blocks), _blockwise(conf, blocks)):
        parts += [a, b]
    return np.concatenate(parts, axis=-1)


def intervene_backward(caus, conf, grad, op: InterventionOp | str, blocks: int = 1):
    """Pull a gradient w.r.t. the intervention vector back onto both inputs."""
    op = InterventionOp(op)
    if op is InterventionOp.ADD:
        return grad, grad
    if op is InterventionOp.SUBTRACT:
        return grad, -grad
    if op is InterventionOp.MULTIPLY:
        return grad * conf, grad * caus
    parts = _blockwise(grad, 2 * blocks)
    return np.concatenate(parts[0::2], axis=-1), np.concatenate(parts[1::2], axis=-1)


# ------------------------------------------------------------------ table


@dataclass
class EmbeddingTable:
    """Causal and confounder embeddings for every entity and relation.

    The arrays are float64; training updates them in place.
    """

    ent_causal: np.ndarray
    ent_conf: np.ndarray
    rel_causal: np.ndarray
    rel_conf: np.ndarray
    model: ScoreModel

    MATRICES = ("ent_causal", "ent_conf", "rel_causal", "rel_conf")

    def __post_init__(self):
        if self.ent_causal.shape != self.ent_conf.shape:
            raise ShapeError("causal and confounder entity matrices differ in shape")
        if self.rel_causal.shape != self.rel_conf.shape:
            raise ShapeError("causal and confounder relation matrices differ in shape")
        self.model.check_dims(self.d_e, self.d_r)

    @property
    def n_entities(self) -> int:
        return self.ent_causal.shape[0]

    @property
    def n_relations(self) -> int:
        return self.rel_causal.shape[0]

    @property
    def d_e(self) -> int:
        return self.ent_causal.shape[1]

    @property
    def d_r(self) -> int:
        return self.rel_causal.shape[1]

    def matrices(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.MATRICES}

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(*(m.copy() for m in self.matrices().values()), model=self.model)

    def is_finite(self) -> bool:
        return all(np.isfinite(m).all() for m in self.matrices().values())

    def view_matrices(self, view: str, op: InterventionOp | str = InterventionOp.ADD):
        """Whole ``(entity, relation)`` matrices as seen by one score channel."""
        if view == "causal":
            return self.ent_causal, self.rel_causal
        if view == "confounder":
            return self.ent_conf, self.rel_conf
        if view == "intervention":
            return (
                intervene(self.ent_causal, self.ent_conf, op, self.model.entity_blocks),
                intervene(self.rel_causal, self.rel_conf, op, self.model.relation_blocks),
            )
        raise ValueError(f"unknown view {view!r}; expected one of {VIEWS}")


def init_embeddings(vocab, d_e: int, d_r: int | None, model: ScoreModel, rng) -> EmbeddingTable:
    """Draw all four matrices from U(-sqrt(6/d), sqrt(6/d)), d being each matrix's width.

    RotatE relation phases are drawn from U(-pi, pi) instead.  ``vocab`` may be
    a :class:`~cause_kge.data.Vocab` or an ``(n_entities, n_relations)`` pair.
    Matrices are drawn in the order ent_causal, rel_causal, ent_conf, rel_conf.
    """
    if d_r is None:
        d_r = model.relation_dim(d_e)
    model.check_dims(d_e, d_r)
    if isinstance(vocab, tuple):
        n_ent, n_rel = vocab
    else:
        n_ent, n_rel = vocab.n_entities, vocab.n_relations
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng

    def ent():
        b = np.sqrt(6.0 / d_e)
        return rng.uniform(-b, b, size=(n_ent, d_e))

    def rel():
        if model.kind == "RotatE":
            return rng.uniform(-np.pi, np.pi, size=(n_rel, d_r))
        b = np.sqrt(6.0 / d_r)
        return rng.uniform(-b, b, size=(n_rel, d_r))

    ent_causal = ent()
    rel_causal = rel()
    ent_conf = ent()
    rel_conf = rel()
    return EmbeddingTable(ent_causal, ent_conf, rel_causal, rel_conf, model)


def gather(table: EmbeddingTable, triples: np.ndarray, view: str, op=InterventionOp.ADD):
    """Head, relation and tail vectors of a ``(..., 3)`` index array under one view."""
    triples = np.asarray(triples, dtype=np.int64)
    h_idx, r_idx, t_idx = triples[..., 0], triples[..., 1], triples[..., 2]
    if view == "intervention":
        m = table.model
        return (
            intervene(table.ent_causal[h_idx], table.ent_conf[h_idx], op, m.entity_blocks),
            intervene(table.rel_causal[r_idx], table.rel_conf[r_idx], op, m.relation_blocks),
            intervene(table.ent_causal[t_idx], table.ent_conf[t_idx], op, m.entity_blocks),
        )
    ent, rel = table.view_matrices(view, op)
    return ent[h_idx], rel[r_idx], ent[t_idx]


def triple_energy(table: EmbeddingTable, triple, view: str = "causal", op=InterventionOp.ADD):
    """Energy of one or many triples (``(..., 3)`` indices) under a view."""
    triples = np.asarray(triple, dtype=np.int64)
    if triples.shape[-1] != 3:
        raise ShapeError("triples must have a trailing axis of length 3")
    if triples.size and (
        triples[..., [0, 2]].min() < 0
        or triples[..., [0, 2]].max() >= table.n_entities
        or triples[..., 1].min() < 0
        or triples[..., 1].max() >= table.n_relations
    ):
        raise IndexError("triple index out of range for this embedding table")
    h, r, t = gather(table, triples, view, op)
    return energy(table.model, h, r, t)
