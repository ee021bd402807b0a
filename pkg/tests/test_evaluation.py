import json

import numpy as np
import pytest

from cause_kge.data import TripleSet, build_filter_index, generate_synthetic_kg
from cause_kge.errors import DataError
from cause_kge.evaluation import (
    EvalReport,
    Metrics,
    auc,
    evaluate,
    rank_query,
    rank_triples,
    score_separation,
)
from cause_kge.scoring import EmbeddingTable, ScoreModel, init_embeddings

from oracles import brute_force_metrics, brute_force_rank


def _table_from(ent, rel, kind="DistMult"):
    ent = np.asarray(ent, dtype=float)
    rel = np.asarray(rel, dtype=float)
    return EmbeddingTable(ent, np.zeros_like(ent), rel, np.zeros_like(rel), ScoreModel(kind))


def _hand_table():
    # 6 entities, 1 relation, DistMult with r = 1: energy(h, t) = -<h, t>
    ent = [[1, 0], [0.9, 0.1], [0.5, 0.5], [0.2, 0.8], [0, 1], [-1, 0]]
    return _table_from(ent, [[1, 1]])


def test_metrics_hand_example():
    m = Metrics.from_ranks([1, 2, 4], "both")
    assert m.mrr == pytest.approx((1 + 1 / 2 + 1 / 4) / 3, abs=1e-15)
    assert m.hits1 == pytest.approx(1 / 3) and m.hits3 == pytest.approx(2 / 3) and m.hits10 == 1.0


def test_rank_only_survivor_is_one():
    table = _hand_table()
    everything = TripleSet([(0, 0, t) for t in range(6)])
    filt = build_filter_index(everything)
    assert rank_query(table, (0, 0, 5), "tail", filt).rank == 1.0


def test_rank_matches_exhaustive_sort():
    table = _hand_table()
    known = TripleSet([(0, 0, 3), (0, 0, 1), (2, 0, 4)])
    filt = build_filter_index(known)
    known_set = known.as_set()
    for triple in known.as_set():
        for direction in ("head", "tail"):
            r = rank_query(table, triple, direction, filt).rank
            assert r == brute_force_rank(table, triple, direction, known_set, (table.ent_causal, table.rel_causal))
    # (0, 0, 3): tail energies -<e0, e_t> = [-1, -.9, -.5, -.2, 0, 1]; e1 filtered -> e0, e2 lower
    assert rank_query(table, (0, 0, 3), "tail", filt).rank == 3.0


def test_ties_take_mean_position():
    ent = np.ones((5, 2))
    table = _table_from(ent, [[1, 1]])
    filt = build_filter_index(TripleSet([(0, 0, 1)]))
    # target ties with 4 other candidates (all energies equal): rank (1+5)/2
    assert rank_query(table, (0, 0, 1), "tail", filt).rank == 3.0


def test_all_rank_one_gives_perfect_scores():
    ent = np.eye(4) * 5
    table = _table_from(ent, np.ones((1, 4)))
    test = TripleSet([(i, 0, i) for i in range(4)], "test")
    rep = evaluate(table, test, build_filter_index(test))
    assert rep.mrr == rep.hits1 == 1.0


def _random_setup(seed, n_e=30, kind="TransE"):
    kg = generate_synthetic_kg(n_e, 3, 0.5, seed)
    table = init_embeddings(kg.vocab, 8, None, ScoreModel(kind), seed)
    filt = build_filter_index(kg.train, kg.valid, kg.test)
    return kg, table, filt


@pytest.mark.parametrize("kind", ["TransE", "ComplEx", "PairRE"])
@pytest.mark.parametrize("view", ["causal", "confounder", "intervention"])
def test_evaluate_matches_brute_force(kind, view):
    kg, table, filt = _random_setup(2, kind=kind)
    known = kg.all_triples()
    mats = table.view_matrices(view, "add")
    ranks = [
        brute_force_rank(table, t, d, known, mats) for d in ("head", "tail") for t in kg.test.as_set()
    ]
    rep = evaluate(table, TripleSet(sorted(kg.test.as_set()), "test"), filt, view, "add")
    ref = brute_force_metrics(ranks)
    assert rep.mrr == ref["mrr"]
    for k in ("hits1", "hits3", "hits10"):
        assert getattr(rep, k) == ref[k]


def test_filtered_never_worse_than_raw():
    kg, table, filt = _random_setup(1)
    empty = build_filter_index()
    for d in ("head", "tail"):
        f = rank_triples(table, kg.test.array, d, filt)
        raw = rank_triples(table, kg.test.array, d, empty)
        assert np.all(f <= raw) and np.all(f >= 1) and np.all(raw <= kg.vocab.n_entities)


def test_order_invariance_and_threads():
    kg, table, filt = _random_setup(3)
    rep = evaluate(table, kg.test, filt)
    shuffled = TripleSet(kg.test.array[::-1], "test")
    assert evaluate(table, shuffled, filt) == rep
    import cause_kge.evaluation as ev

    old = ev._BLOCK_ELEMENTS
    ev._BLOCK_ELEMENTS = 8 * 30 * 2  # force many blocks
    try:
        threaded = evaluate(table, kg.test, filt, threads=4)
    finally:
        ev._BLOCK_ELEMENTS = old
    assert threaded == rep


def test_monotone_transform_invariance():
    kg, table, filt = _random_setup(4, kind="DistMult")
    scaled = table.copy()
    # DistMult energy is trilinear: scaling entities by 2 scales energies by 4 (exactly, a power of two)
    scaled.ent_causal *= 2.0
    for d in ("head", "tail"):
        assert np.array_equal(
            rank_triples(table, kg.test.array, d, filt), rank_triples(scaled, kg.test.array, d, filt)
        )


def test_report_json_keys_and_round_trip():
    kg, table, filt = _random_setup(5)
    rep = evaluate(table, kg.test, filt)
    d = json.loads(rep.to_json())
    for key in ("mrr", "hits1", "hits3", "hits10", "direction", "n_queries"):
        assert key in d
    assert d["n_queries"] == 2 * len(kg.test)
    assert [p["direction"] for p in d["per_direction"]] == ["head", "tail"]
    assert EvalReport.from_dict(d) == rep
    assert rep.hits1 <= rep.hits3 <= rep.hits10 and 0 < rep.mrr <= 1


def test_evaluate_empty_raises():
    kg, table, filt = _random_setup(0)
    with pytest.raises(DataError):
        evaluate(table, TripleSet([], "test"), filt)


# -------------------------------------------------------------- separation


def test_auc_cases():
    assert auc([5, 6, 7], [1, 2, 3]) == 1.0
    assert auc([1, 2], [1, 2]) == 0.5
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 5000))
    assert abs(auc(x[0], x[1]) - 0.5) < 0.03


def test_separation_of_untrained_table_is_null():
    rng = np.random.default_rng(0)
    n_e = 200
    flat = rng.choice(n_e * 4 * n_e, size=1000, replace=False)
    test = TripleSet(np.stack(np.unravel_index(flat, (n_e, 4, n_e)), axis=1), "test")
    table = init_embeddings((n_e, 4), 16, None, ScoreModel("DistMult"), 1)
    for a in score_separation(table, test, 2):
        assert 0.4 <= a <= 0.6


def test_separation_perfect_and_too_few():
    # positives (i, 0, i) on orthogonal unit vectors: every corruption scores 0, positives -25
    n = 60
    table = _table_from(np.eye(n) * 5, np.ones((1, n)))
    test = TripleSet([(i, 0, i) for i in range(n)], "test")
    a_caus, a_conf, a_inter = score_separation(table, test, 0)
    assert a_caus == 1.0 and a_inter == 1.0 and a_conf == 0.5
    with pytest.raises(DataError):
        score_separation(table, TripleSet(test.array[:10], "test"), 0)
