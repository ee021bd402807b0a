"""The five CausE training objectives and their gradients.

For a positive triple with K shared negatives, three channels score the
same triples from different embeddings: causal, confounder and intervention
(causal and confounder embeddings recombined by an operator).  The
objectives are

* ``l_caus``  sigmoid margin loss on causal energies
* ``l_conf``  squared gap between the positive confounder energy and the
  self-adversarially weighted mean of the negatives' confounder energies
* ``l_inter`` sigmoid margin loss on intervention energies
* ``l_aux1``  positive scored better causally than after intervention
* ``l_aux2``  positive scored better after intervention than by confounders

Self-adversarial weights are constants in the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit, log_expit

from .scoring import (
    EmbeddingTable,
    InterventionOp,
    energy,
    energy_grad,
    gather,
    intervene,
    intervene_backward,
)

LOSS_NAMES = ("l_caus", "l_conf", "l_inter", "l_aux1", "l_aux2")
CHANNELS = ("causal", "confounder", "intervention")


def self_adv_weights(neg_energies, alpha: float) -> np.ndarray:
    """Softmax of ``-alpha * energy`` over the last axis.

    Low energy means plausible, so the hardest negatives get the largest weight.
    """
    z = -alpha * np.asarray(neg_energies, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def sigmoid_margin_loss(pos_e, neg_e, weights, gamma: float):
    """``-log s(gamma - pos) - sum_i w_i log s(neg_i - gamma)``, s the logistic function."""
    pos_e = np.asarray(pos_e, dtype=float)
    neg_e = np.asarray(neg_e, dtype=float)
    out = -log_expit(gamma - pos_e) - (np.asarray(weights) * log_expit(neg_e - gamma)).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def conf_mse_loss(pos_e_conf, neg_e_conf, weights):
    res = np.asarray(pos_e_conf, dtype=float) - (np.asarray(weights) * np.asarray(neg_e_conf)).sum(axis=-1)
    out = res * res
    return float(out) if np.ndim(out) == 0 else out


def aux_contrast_loss(better_e, worse_e, gamma: float):
    """Pushes ``better_e`` below the margin and ``worse_e`` above it."""
    out = -log_expit(gamma - np.asarray(better_e, dtype=float)) - log_expit(np.asarray(worse_e, dtype=float) - gamma)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class LossBreakdown:
    l_caus: float
    l_conf: float
    l_inter: float
    l_aux1: float
    l_aux2: float
    total: float

    @classmethod
    def combine(cls, parts, loss_weights) -> "LossBreakdown":
        total = 0.0
        for w, v in zip(loss_weights, parts):
            total += w * v
        return cls(*(float(p) for p in parts), float(total))

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def items(self):
        return self.as_dict().items()


@dataclass
class RowGrad:
    """Gradient restricted to the rows of one matrix it touches (rows sorted, unique)."""

    rows: np.ndarray
    values: np.ndarray


def row_plan(idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stable sort order, segment starts and unique rows for a flat index array."""
    order = np.argsort(idx, kind="stable")
    idx = idx[order]
    starts = np.flatnonzero(np.r_[True, idx[1:] != idx[:-1]])
    return order, starts, idx[starts]


def scatter_rows(contribs: list[tuple[np.ndarray, np.ndarray]], width: int, plan=None) -> RowGrad:
    """Sum per-occurrence gradient rows into unique rows, in a fixed order.

    ``plan`` is a precomputed ``row_plan`` of the concatenated indices, for
    callers scattering several matrices over the same occurrences.
    """
    if plan is None:
        plan = row_plan(np.concatenate([i.reshape(-1) for i, _ in contribs]))
    order, starts, rows = plan
    vals = np.concatenate([v.reshape(-1, width) for _, v in contribs])
    # segments are summed in occurrence order
    return RowGrad(rows, np.add.reduceat(vals[order], starts, axis=0))


def triple_plans(trip):
    """Entity and relation ``row_plan``s for a ``(B, 1 + K, 3)`` triple block."""
    ent = np.concatenate([trip[..., 0].reshape(-1), trip[..., 2].reshape(-1)])
    return row_plan(ent), row_plan(trip[:, 0, 1].copy())


def triple_row_grads(trip, d_head, d_rel, d_tail, plans=None) -> tuple[RowGrad, RowGrad]:
    """Entity and relation row gradients from per-triple vector gradients.

    ``trip`` is ``(B, 1 + K, 3)``: a positive followed by its negatives, which
    all share the positive's relation.
    """
    ent_plan, rel_plan = plans if plans is not None else (None, None)
    ent = scatter_rows([(trip[..., 0], d_head), (trip[..., 2], d_tail)], d_head.shape[-1], ent_plan)
    rel = scatter_rows([(trip[:, 0, 1], d_rel.sum(axis=1))], d_rel.shape[-1], rel_plan)
    return ent, rel


def margin_energy_grads(pos_e, neg_e, weights, gamma):
    """d(sigmoid margin loss)/d(energies), shaped ``(B,)`` and ``(B, K)``."""
    return expit(pos_e - gamma), -weights * expit(gamma - neg_e)


@dataclass
class ObjectiveResult:
    breakdown: LossBreakdown
    grads: dict[str, RowGrad]
    weights: dict[str, np.ndarray]
    energies: dict[str, np.ndarray]


def cause_objective(
    table: EmbeddingTable,
    pos: np.ndarray,
    neg: np.ndarray,
    gamma: float,
    alpha: float,
    op: InterventionOp | str = InterventionOp.ADD,
    loss_weights=(1.0, 1.0, 1.0, 1.0, 1.0),
    fixed_weights: dict[str, np.ndarray] | None = None,
    with_grad: bool = True,
) -> ObjectiveResult:
    """Batch-averaged CausE loss and its sparse gradient.

    Args:
        table: current embeddings.
        pos: ``(B, 3)`` positive triples.
        neg: ``(B, K, 3)`` negatives, shared by all three channels.
        gamma: margin.
        alpha: self-adversarial temperature.
        op: intervention operator.
        loss_weights: multipliers of the five terms, in ``LOSS_NAMES`` order.
        fixed_weights: per-channel ``(B, K)`` self-adversarial weights to use
            instead of recomputing them (gradient checking holds them fixed).
        with_grad: skip the backward pass when False.

    Terms with zero weight contribute nothing to the gradient, and a channel
    none of whose terms is active is not differentiated at all.
    """
    op = InterventionOp(op)
    lw = tuple(float(w) for w in loss_weights)
    model = table.model
    pos = np.asarray(pos, dtype=np.int64).reshape(-1, 3)
    neg = np.asarray(neg, dtype=np.int64)
    b = len(pos)
    trip = np.concatenate([pos[:, None, :], neg], axis=1)

    raw = {
        "causal": gather(table, trip, "causal"),
        "confounder": gather(table, trip, "confounder"),
    }
    eb, rb = model.entity_blocks, model.relation_blocks
    inter_vecs = tuple(
        intervene(c, f, op, blocks)
        for c, f, blocks in zip(raw["causal"], raw["confounder"], (eb, rb, eb))
    )
    vecs = {**raw, "intervention": inter_vecs}

    need = {
        "causal": with_grad and bool(lw[0] or lw[3]),
        "confounder": with_grad and bool(lw[1] or lw[4]),
        "intervention": with_grad and bool(lw[2] or lw[3] or lw[4]),
    }
    energies, egrads = {}, {}
    for ch in CHANNELS:
        if need[ch]:
            energies[ch], egrads[ch] = energy_grad(model, *vecs[ch])
        else:
            energies[ch] = energy(model, *vecs[ch])

    if fixed_weights is None:
        weights = {ch: self_adv_weights(energies[ch][:, 1:], alpha) for ch in CHANNELS}
    else:
        weights = {ch: np.asarray(fixed_weights[ch], dtype=float) for ch in CHANNELS}

    ec, ef, ei = energies["causal"], energies["confounder"], energies["intervention"]
    wc, wf, wi = weights["causal"], weights["confounder"], weights["intervention"]
    residual = ef[:, 0] - (wf * ef[:, 1:]).sum(axis=-1)
    parts = (
        sigmoid_margin_loss(ec[:, 0], ec[:, 1:], wc, gamma).mean(),
        (residual * residual).mean(),
        sigmoid_margin_loss(ei[:, 0], ei[:, 1:], wi, gamma).mean(),
        aux_contrast_loss(ec[:, 0], ei[:, 0], gamma).mean(),
        aux_contrast_loss(ei[:, 0], ef[:, 0], gamma).mean(),
    )
    breakdown = LossBreakdown.combine(parts, lw)
    if not with_grad:
        return ObjectiveResult(breakdown, {}, weights, energies)

    coef = {ch: np.zeros_like(energies[ch]) for ch in CHANNELS}
    if lw[0]:
        gp, gn = margin_energy_grads(ec[:, 0], ec[:, 1:], wc, gamma)
        coef["causal"][:, 0] += lw[0] * gp
        coef["causal"][:, 1:] += lw[0] * gn
    if lw[1]:
        coef["confounder"][:, 0] += lw[1] * 2.0 * residual
        coef["confounder"][:, 1:] += lw[1] * (-2.0 * residual[:, None] * wf)
    if lw[2]:
        gp, gn = margin_energy_grads(ei[:, 0], ei[:, 1:], wi, gamma)
        coef["intervention"][:, 0] += lw[2] * gp
        coef["intervention"][:, 1:] += lw[2] * gn
    if lw[3]:
        coef["causal"][:, 0] += lw[3] * expit(ec[:, 0] - gamma)
        coef["intervention"][:, 0] += lw[3] * -expit(gamma - ei[:, 0])
    if lw[4]:
        coef["intervention"][:, 0] += lw[4] * expit(ei[:, 0] - gamma)
        coef["confounder"][:, 0] += lw[4] * -expit(gamma - ef[:, 0])
    for ch in CHANNELS:
        coef[ch] /= b

    # per matrix: summed d(loss)/d(head, relation, tail vectors) over channels
    acc: dict[str, list] = {}

    def add(name, dh, dr, dt):
        if name in acc:
            for a, b in zip(acc[name], (dh, dr, dt)):
                a += b
        else:
            acc[name] = [dh, dr, dt]

    for ch, suffix in (("causal", "causal"), ("confounder", "conf")):
        if need[ch]:
            g, c = egrads[ch], coef[ch][..., None]
            add(suffix, g.d_head * c, g.d_rel * c, g.d_tail * c)
    if need["intervention"]:
        g, c = egrads["intervention"], coef["intervention"][..., None]
        (hc, rc, tc), (hf, rf, tf) = raw["causal"], raw["confounder"]
        dh_c, dh_f = intervene_backward(hc, hf, g.d_head * c, op, eb)
        dr_c, dr_f = intervene_backward(rc, rf, g.d_rel * c, op, rb)
        dt_c, dt_f = intervene_backward(tc, tf, g.d_tail * c, op, eb)
        add("causal", dh_c, dr_c, dt_c)
        add("conf", dh_f, dr_f, dt_f)

    grads = {}
    plans = triple_plans(trip)
    for suffix, (dh, dr, dt) in acc.items():
        grads[f"ent_{suffix}"], grads[f"rel_{suffix}"] = triple_row_grads(trip, dh, dr, dt, plans)
    return ObjectiveResult(breakdown, grads, weights, energies)
