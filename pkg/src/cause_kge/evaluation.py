"""Filtered link-prediction ranking and metrics.

Every test triple yields a tail query ``(h, r, ?)`` and a head query
``(?, r, t)``.  All entities are scored as candidates; candidates that form a
known true triple (other than the target) are removed, and the target's rank
is ``1 + #lower + #ties / 2`` among the survivors.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .data import FilterIndex, Triple, TripleSet, as_generator, sample_negatives
from .errors import DataError
from .scoring import VIEWS, EmbeddingTable, InterventionOp, energy

DIRECTIONS = ("head", "tail")
HITS_AT = (1, 3, 10)
# caps the (queries x entities x dim) temporary built per block
_BLOCK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class RankResult:
    triple: Triple
    direction: str
    rank: float


@dataclass(frozen=True)
class Metrics:
    direction: str
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    n_queries: int

    @classmethod
    def from_ranks(cls, ranks, direction: str) -> "Metrics":
        ranks = np.asarray(ranks, dtype=float)
        if ranks.size == 0:
            raise DataError("cannot summarise an empty set of ranks")
        # fsum: correctly rounded, hence independent of query order
        return cls(
            direction,
            math.fsum((1.0 / ranks).tolist()) / ranks.size,
            float(np.mean(ranks <= 1)),
            float(np.mean(ranks <= 3)),
            float(np.mean(ranks <= 10)),
            int(ranks.size),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EvalReport:
    both: Metrics
    head: Metrics
    tail: Metrics

    @property
    def mrr(self) -> float:
        return self.both.mrr

    @property
    def hits1(self) -> float:
        return self.both.hits1

    @property
    def hits3(self) -> float:
        return self.both.hits3

    @property
    def hits10(self) -> float:
        return self.both.hits10

    @property
    def n_queries(self) -> int:
        return self.both.n_queries

    def to_dict(self) -> dict:
        out = self.both.to_dict()
        out["per_direction"] = [self.head.to_dict(), self.tail.to_dict()]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        both = {k: d[k] for k in ("direction", "mrr", "hits1", "hits3", "hits10", "n_queries")}
        per = {p["direction"]: Metrics(**p) for p in d["per_direction"]}
        return cls(Metrics(**both), per["head"], per["tail"])


def _check_view(view: str):
    if view not in VIEWS:
        raise ValueError(f"unknown view {view!r}; expected one of {VIEWS}")


def _ranks_block(model, ent, rel, queries, direction, filt: FilterIndex) -> np.ndarray:
    h_idx, r_idx, t_idx = queries[:, 0], queries[:, 1], queries[:, 2]
    if direction == "tail":
        e = energy(model, ent[h_idx][:, None, :], rel[r_idx][:, None, :], ent[None, :, :])
        target = t_idx
    else:
        e = energy(model, ent[None, :, :], rel[r_idx][:, None, :], ent[t_idx][:, None, :])
        target = h_idx
    q = np.arange(len(queries))
    e_target = e[q, target][:, None]
    keep = np.ones(e.shape, dtype=bool)
    for i, (h, r, t) in enumerate(queries.tolist()):
        known = filt.true_tails(h, r) if direction == "tail" else filt.true_heads(r, t)
        if known:
            keep[i, list(known)] = False
    keep[q, target] = True
    lower = ((e < e_target) & keep).sum(axis=1)
    ties = ((e == e_target) & keep).sum(axis=1) - 1
    return 1.0 + lower + ties / 2.0


def rank_triples(
    table: EmbeddingTable,
    triples: np.ndarray,
    direction: str,
    filt: FilterIndex,
    view: str = "causal",
    op: InterventionOp | str = InterventionOp.ADD,
    threads: int = 1,
) -> np.ndarray:
    """Filtered ranks of the ``direction`` query of every row of a ``(N, 3)`` array."""
    _check_view(view)
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be 'head' or 'tail', got {direction!r}")
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    ent, rel = table.view_matrices(view, op)
    width = max(ent.shape[1], 1) * ent.shape[0]
    block = max(1, _BLOCK_ELEMENTS // width)
    if threads > 1:
        block = min(block, -(-len(triples) // threads))
    chunks = [triples[i : i + block] for i in range(0, len(triples), block)]
    if not chunks:
        return np.empty(0)

    def work(chunk):
        return _ranks_block(table.model, ent, rel, chunk, direction, filt)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return np.concatenate(parts)


def rank_query(
    table: EmbeddingTable,
    triple,
    direction: str,
    filt: FilterIndex,
    view: str = "causal",
    op: InterventionOp | str = InterventionOp.ADD,
) -> RankResult:
    triple = Triple(*map(int, triple))
    if not (0 <= triple.head < table.n_entities and 0 <= triple.tail < table.n_entities):
        raise IndexError(f"entity index out of range in {triple}")
    rank = rank_triples(table, np.array([triple]), direction, filt, view, op)[0]
    return RankResult(triple, direction, float(rank))


def evaluate(
    table: EmbeddingTable,
    test: TripleSet,
    filt: FilterIndex,
    view: str = "causal",
    op: InterventionOp | str = InterventionOp.ADD,
    threads: int = 1,
) -> EvalReport:
    """Filtered MRR and Hits@{1,3,10} over head and tail queries of ``test``.

    The combined figures weight both directions equally.
    """
    if len(test) == 0:
        raise DataError("cannot evaluate an empty triple set")
    ranks = {d: rank_triples(table, test.array, d, filt, view, op, threads) for d in DIRECTIONS}
    return EvalReport(
        Metrics.from_ranks(np.concatenate([ranks["head"], ranks["tail"]]), "both"),
        Metrics.from_ranks(ranks["head"], "head"),
        Metrics.from_ranks(ranks["tail"], "tail"),
    )


def auc(pos_scores, neg_scores) -> float:
    """Probability that a positive outscores a negative, ties counting one half."""
    pos_scores = np.asarray(pos_scores, dtype=float)
    neg_scores = np.asarray(neg_scores, dtype=float)
    n_pos, n_neg = len(pos_scores), len(neg_scores)
    r = rankdata(np.concatenate([pos_scores, neg_scores]))
    return float((r[:n_pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def score_separation(
    table: EmbeddingTable,
    test: TripleSet,
    rng,
    op: InterventionOp | str = InterventionOp.ADD,
    min_triples: int = 50,
) -> tuple[float, float, float]:
    """AUC of each view at telling test triples from one random corruption each.

    Returns ``(auc_causal, auc_conf, auc_inter)``; 0.5 means the view's
    energies carry no signal about which triples are true.
    """
    if len(test) < min_triples:
        raise DataError(f"score separation needs at least {min_triples} triples, got {len(test)}")
    neg, _ = sample_negatives(test.array, 1, table.n_entities, as_generator(rng))
    out = []
    for view in VIEWS:
        ent, rel = table.view_matrices(view, op)
        e_pos = energy(table.model, ent[test.array[:, 0]], rel[test.array[:, 1]], ent[test.array[:, 2]])
        n = neg[:, 0]
        e_neg = energy(table.model, ent[n[:, 0]], rel[n[:, 1]], ent[n[:, 2]])
        out.append(auc(-e_pos, -e_neg))
    return tuple(out)
