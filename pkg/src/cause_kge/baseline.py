"""Plain single-embedding KGE training with the self-adversarial sigmoid loss.

This is the model CausE is compared against: one embedding per entity and
relation, one score, one loss.  It shares the sampler, energy functions and
optimizer with the CausE trainer so that results differ only by the objective.
"""

from __future__ import annotations

import math

import numpy as np

from .data import FilterIndex, TripleSet, Vocab, build_filter_index, sample_negatives
from .errors import TrainingDivergence
from .evaluation import evaluate
from .objectives import margin_energy_grads, self_adv_weights, sigmoid_margin_loss, triple_row_grads
from .scoring import EmbeddingTable, energy_grad, init_embeddings
from .train import AdamState, TrainConfig, TrainResult, adam_step, seed_streams, tune_allocator


def plain_objective(ent, rel, model, pos, neg, gamma, alpha):
    """Mean sigmoid margin loss of a batch and its row gradients for ``ent``/``rel``."""
    b = len(pos)
    trip = np.concatenate([pos[:, None, :], neg], axis=1)
    h_idx, r_idx, t_idx = trip[..., 0], trip[..., 1], trip[..., 2]
    e, g = energy_grad(model, ent[h_idx], rel[r_idx], ent[t_idx])
    w = self_adv_weights(e[:, 1:], alpha)
    loss = sigmoid_margin_loss(e[:, 0], e[:, 1:], w, gamma).mean()

    coef = np.zeros_like(e)
    gp, gn = margin_energy_grads(e[:, 0], e[:, 1:], w, gamma)
    coef[:, 0] += gp
    coef[:, 1:] += gn
    coef /= b
    c = coef[..., None]
    grads = {}
    grads["ent_causal"], grads["rel_causal"] = triple_row_grads(trip, g.d_head * c, g.d_rel * c, g.d_tail * c)
    return float(loss), grads


def train_plain(
    config: TrainConfig,
    vocab: Vocab | tuple[int, int],
    train_set: TripleSet,
    valid_set: TripleSet | None = None,
    *,
    filter_index: FilterIndex | None = None,
    threads: int = 1,
) -> TrainResult:
    """Baseline training; only ``gamma``, ``alpha``, sizes, ``lr`` and schedule are used.

    The returned table holds the learned embeddings in its causal matrices
    and zeros in the confounder matrices.
    """
    n_ent, n_rel = vocab if isinstance(vocab, tuple) else (vocab.n_entities, vocab.n_relations)
    tune_allocator()
    streams = seed_streams(config.seed)
    init = init_embeddings((n_ent, n_rel), config.d_e, config.d_r, config.model, streams["init"])
    table = EmbeddingTable(
        init.ent_causal,
        np.zeros_like(init.ent_conf),
        init.rel_causal,
        np.zeros_like(init.rel_conf),
        config.model,
    )
    params = {"ent_causal": table.ent_causal, "rel_causal": table.rel_causal}
    state = AdamState.zeros_like(params)

    validate = config.eval_every > 0 and valid_set is not None and len(valid_set) > 0
    if validate and filter_index is None:
        filter_index = build_filter_index(train_set, valid_set)
    best, best_metric, stale = None, None, 0
    log = []
    data = train_set.array
    n = len(data)
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        perm = streams["shuffle"].permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            pos = data[perm[start : start + config.batch_size]]
            neg, _ = sample_negatives(pos, config.negatives, n_ent, streams["negatives"])
            loss, grads = plain_objective(
                table.ent_causal, table.rel_causal, config.model, pos, neg, config.gamma, config.alpha
            )
            if not math.isfinite(loss):
                raise TrainingDivergence("loss", epoch, loss)
            adam_step(params, grads, state, config.lr)
            total += loss * len(pos)
        rec = {"epoch": epoch, "loss": total / max(n, 1)}
        if validate and (epoch % config.eval_every == 0 or epoch == config.epochs):
            mrr = evaluate(table, valid_set, filter_index, "causal", threads=threads).mrr
            rec["valid_mrr"] = mrr
            if best_metric is None or mrr > best_metric:
                best_metric, best, stale = mrr, (table.copy(), state.copy(), epoch), 0
            else:
                stale += 1
        log.append(rec)
        if validate and config.patience and stale >= config.patience:
            break
    if best is not None:
        return TrainResult(best[0], best[1], log, best[2], best_metric)
    return TrainResult(table, state, log, epoch, None)
