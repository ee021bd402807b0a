import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cause_kge.data import sample_negatives
from cause_kge.objectives import (
    LOSS_NAMES,
    LossBreakdown,
    aux_contrast_loss,
    cause_objective,
    conf_mse_loss,
    self_adv_weights,
    sigmoid_margin_loss,
)
from cause_kge.scoring import KINDS, InterventionOp, ScoreModel, init_embeddings, triple_energy

from oracles import direct_sigmoid_loss, direct_softmax_neg, objective_fd_check

LN2 = math.log(2.0)


# ------------------------------------------------------- self-adversarial


def test_single_negative_weight_one():
    assert self_adv_weights([3.7], 1.0).tolist() == [1.0]


def test_equal_energies_uniform():
    for alpha in (0.01, 1.0, 50.0):
        w = self_adv_weights(np.full(7, 2.5), alpha)
        assert np.allclose(w, 1 / 7, atol=1e-12, rtol=0)


def test_hand_computed_softmax():
    w = self_adv_weights([-math.log(2), 0.0], 1.0)
    assert w == pytest.approx([2 / 3, 1 / 3], abs=1e-15)


def test_stable_for_huge_energies():
    w = self_adv_weights([1e4, 1e4 + 1, -1e4], 1.0)
    assert np.isfinite(w).all() and w[2] == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=10), st.floats(0.1, 3), st.randoms())
def test_weights_permutation_equivariant(energies, alpha, rnd):
    e = np.array(energies)
    perm = list(range(len(e)))
    rnd.shuffle(perm)
    w = self_adv_weights(e, alpha)
    assert np.allclose(self_adv_weights(e[perm], alpha), w[perm], rtol=1e-12, atol=1e-15)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(w, direct_softmax_neg(energies, alpha), rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------- losses


def test_sigmoid_loss_at_margin():
    assert sigmoid_margin_loss(4.0, [4.0, 4.0, 4.0], [0.2, 0.3, 0.5], 4.0) == pytest.approx(2 * LN2, abs=1e-12)


def test_sigmoid_loss_saturates():
    assert sigmoid_margin_loss(-1e3, [1e3], [1.0], 6.0) < 1e-300


def test_sigmoid_loss_matches_direct_formula():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pos = rng.normal(scale=5)
        neg = rng.normal(scale=5, size=4)
        w = self_adv_weights(neg, 1.3)
        assert sigmoid_margin_loss(pos, neg, w, 2.0) == pytest.approx(
            direct_sigmoid_loss(pos, neg, w, 2.0), rel=1e-12
        )


def test_conf_mse_cases():
    e = np.array([1.0, 3.0])
    w = np.array([0.25, 0.75])
    assert conf_mse_loss(w @ e, e, w) == 0.0
    assert conf_mse_loss(2.0, [0.0], [1.0]) == 4.0
    rng = np.random.default_rng(1)
    neg = rng.normal(size=3)
    w = self_adv_weights(neg, 1.0)
    expected = (0.4 - sum(a * b for a, b in zip(w, neg))) ** 2
    assert conf_mse_loss(0.4, neg, w) == pytest.approx(expected, rel=1e-12)


def test_aux_loss_cases():
    assert aux_contrast_loss(3.0, 3.0, 3.0) == pytest.approx(2 * LN2, abs=1e-12)
    assert aux_contrast_loss(-100.0, 100.0, 0.0) < 1e-40
    assert aux_contrast_loss(1.0, 2.0, 1.5) != aux_contrast_loss(2.0, 1.0, 1.5)


def test_breakdown_total_is_weighted_sum():
    bd = LossBreakdown.combine((1.5, 0.25, 2.0, 0.125, 3.0), (1, 0.5, 2, 0, 1))
    assert bd.total == 1.5 + 0.125 + 4.0 + 3.0
    assert list(bd.as_dict()) == list(LOSS_NAMES) + ["total"]


# ------------------------------------------------------------ objective


def _instance(kind, seed, d=4, b=2, k=2, n_e=6, n_r=3):
    rng = np.random.default_rng(seed)
    table = init_embeddings((n_e, n_r), d, None, ScoreModel(kind), rng)
    pos = np.stack([rng.integers(n_e, size=b), rng.integers(n_r, size=b), rng.integers(n_e, size=b)], axis=1)
    neg, _ = sample_negatives(pos, k, n_e, rng)
    return table, pos, neg


def test_objective_parts_match_per_triple_reference():
    table, pos, neg = _instance("TransE", 3, b=3, k=4)
    gamma, alpha = 2.0, 1.5
    res = cause_objective(table, pos, neg, gamma, alpha, "multiply")
    parts = np.zeros(5)
    for i in range(len(pos)):
        e = {
            v: [triple_energy(table, pos[i], v, "multiply")] + [triple_energy(table, n, v, "multiply") for n in neg[i]]
            for v in ("causal", "confounder", "intervention")
        }
        wc, wf, wi = (direct_softmax_neg(e[v][1:], alpha) for v in ("causal", "confounder", "intervention"))
        parts[0] += direct_sigmoid_loss(e["causal"][0], e["causal"][1:], wc, gamma)
        parts[1] += (e["confounder"][0] - sum(a * b for a, b in zip(wf, e["confounder"][1:]))) ** 2
        parts[2] += direct_sigmoid_loss(e["intervention"][0], e["intervention"][1:], wi, gamma)
        parts[3] += direct_sigmoid_loss(e["causal"][0], [e["intervention"][0]], [1.0], gamma)
        parts[4] += direct_sigmoid_loss(e["intervention"][0], [e["confounder"][0]], [1.0], gamma)
    parts /= len(pos)
    got = [getattr(res.breakdown, n) for n in LOSS_NAMES]
    assert got == pytest.approx(parts.tolist(), rel=1e-12)
    assert res.breakdown.total == pytest.approx(parts.sum(), rel=1e-12)
    assert res.breakdown.l_conf >= 0


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("op", list(InterventionOp))
def test_objective_gradient_finite_differences(kind, op):
    table, pos, neg = _instance(kind, 11, d=4 if kind != "RotatE" else 6)
    assert objective_fd_check(table, pos, neg, 1.0, 1.0, op, (1, 1, 1, 1, 1)) < 1e-5


@pytest.mark.parametrize("weights", [(1, 0, 0, 0, 0), (0, 1, 0, 0, 0), (0, 0, 1, 0, 0), (0, 0, 0, 1, 0), (0, 0, 0, 0, 1), (0.5, 2, 0, 1, 0.1)])
def test_objective_gradient_each_term(weights):
    table, pos, neg = _instance("ComplEx", 5)
    assert objective_fd_check(table, pos, neg, 1.5, 2.0, "add", weights) < 1e-5


def test_zero_weight_terms_produce_no_gradient_rows():
    table, pos, neg = _instance("DistMult", 2)
    res = cause_objective(table, pos, neg, 1.0, 1.0, "add", (1, 0, 0, 0, 0))
    assert set(res.grads) == {"ent_causal", "rel_causal"}
    res = cause_objective(table, pos, neg, 1.0, 1.0, "add", (0, 1, 0, 0, 0))
    assert set(res.grads) == {"ent_conf", "rel_conf"}


def test_gradients_touch_only_batch_rows():
    table, pos, neg = _instance("TransE", 4, n_e=40, n_r=5)
    res = cause_objective(table, pos, neg, 1.0, 1.0, "add")
    ents = set(pos[:, [0, 2]].ravel()) | set(neg[..., [0, 2]].ravel())
    rels = set(pos[:, 1])
    for name, g in res.grads.items():
        expected = ents if name.startswith("ent") else rels
        assert set(g.rows.tolist()) == expected
        assert np.all(np.diff(g.rows) > 0)
