import json
from collections import Counter

import numpy as np
import pytest

from cause_kge.baseline import train_plain
from cause_kge.data import TripleSet, build_filter_index, generate_synthetic_kg
from cause_kge.errors import ConfigError, TrainingDivergence
from cause_kge.evaluation import evaluate
from cause_kge.objectives import LOSS_NAMES, RowGrad
from cause_kge.scoring import EmbeddingTable, InterventionOp, ScoreModel, init_embeddings
from cause_kge.train import AdamState, TrainConfig, adam_step, batch_loss, seed_streams, train

from oracles import ScalarAdam

SMALL = dict(d_e=16, negatives=8, batch_size=64, lr=1e-2, gamma=4.0, eval_every=0, model=ScoreModel("DistMult"))


@pytest.fixture(scope="module")
def kg():
    return generate_synthetic_kg(50, 4, 0.5, 0)


# ----------------------------------------------------------------- config


def test_config_round_trip_and_json(tmp_path):
    cfg = TrainConfig(d_e=8, model=ScoreModel("PairRE"), op="concat", loss_weights=(1, 0, 1, 1, 0.5), seed=3)
    assert cfg.d_r == 16
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert TrainConfig.from_json(p) == cfg
    assert cfg.to_dict()["loss_weights"] == dict(zip(LOSS_NAMES, (1.0, 0.0, 1.0, 1.0, 0.5)))


@pytest.mark.parametrize(
    "bad",
    [
        {"gama": 1.0},
        {"version": 7},
        {"alpha": 0},
        {"negatives": 0},
        {"model": "QuatE"},
        {"op": "divide"},
        {"model": "ComplEx", "d_e": 5},
        {"loss_weights": [1, 1]},
        {"loss_weights": {"l_bogus": 1}},
        {"eval_view": "both"},
    ],
)
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        TrainConfig.from_dict(bad)


def test_config_defaults_inside_grid():
    cfg = TrainConfig()
    assert cfg.d_e in (256, 512, 1024) and cfg.gamma in (0, 4, 6, 8)
    assert cfg.batch_size in (512, 1024) and cfg.alpha in (1.0, 2.0)
    assert cfg.negatives in (64, 128, 256) and cfg.lr in (1e-3, 1e-4, 2e-5)
    assert cfg.loss_weights == (1.0,) * 5 and cfg.op == InterventionOp.ADD


# ------------------------------------------------------------------- adam


def test_adam_matches_scalar_reference():
    params = {"w": np.array([[0.3, -1.0], [2.0, 0.5]])}
    state = AdamState.zeros_like(params)
    ref = ScalarAdam(0.3, lr=0.1)
    for g in (0.5, -1.25, 3.0):
        adam_step(params, {"w": RowGrad(np.array([0]), np.array([[g, 0.0]]))}, state, 0.1)
        assert params["w"][0, 0] == pytest.approx(ref.step(g), abs=1e-12)
    assert state.step == 3
    assert params["w"][1].tolist() == [2.0, 0.5]


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.ones((3, 2))}
    state = AdamState.zeros_like(params)
    adam_step(params, {"w": RowGrad(np.array([1]), np.zeros((1, 2)))}, state, 0.5)
    adam_step(params, {}, state, 0.5)
    assert np.array_equal(params["w"], np.ones((3, 2))) and state.step == 2


def test_adam_constant_gradient_monotone():
    params = {"w": np.zeros((1, 2))}
    state = AdamState.zeros_like(params)
    trace = []
    for _ in range(50):
        adam_step(params, {"w": RowGrad(np.array([0]), np.array([[2.0, -3.0]]))}, state, 0.01)
        trace.append(params["w"][0].copy())
    trace = np.array(trace)
    assert np.all(np.diff(trace[:, 0]) < 0) and np.all(np.diff(trace[:, 1]) > 0)


def test_adam_shape_mismatch():
    params = {"w": np.ones((3, 2))}
    with pytest.raises(ValueError):
        adam_step(params, {"w": RowGrad(np.array([0]), np.zeros((1, 3)))}, AdamState.zeros_like(params), 0.1)


# ------------------------------------------------------------------- loop


def test_zero_epochs_returns_initial_table(kg):
    cfg = TrainConfig(epochs=0, **SMALL)
    res = train(cfg, kg.vocab, kg.train, kg.valid)
    init = init_embeddings(kg.vocab, cfg.d_e, cfg.d_r, cfg.model, seed_streams(cfg.seed)["init"])
    for name in EmbeddingTable.MATRICES:
        assert np.array_equal(getattr(res.table, name), getattr(init, name))
    assert res.log == [] and res.epoch == 0


def test_training_reduces_loss_and_logs_every_term(kg):
    cfg = TrainConfig(epochs=200, **SMALL)
    res = train(cfg, kg.vocab, kg.train)
    assert len(res.log) == 200
    assert res.log[-1]["total"] < res.log[0]["total"]
    for rec in res.log:
        assert set(LOSS_NAMES) | {"epoch", "total"} <= set(rec)
        assert rec["total"] == pytest.approx(sum(rec[n] for n in LOSS_NAMES), rel=1e-12)
    assert res.table.is_finite()


def test_training_deterministic(kg):
    cfg = TrainConfig(epochs=5, seed=4, **SMALL)
    a = train(cfg, kg.vocab, kg.train)
    b = train(cfg, kg.vocab, kg.train)
    for name in EmbeddingTable.MATRICES:
        assert np.array_equal(getattr(a.table, name), getattr(b.table, name))
    assert a.log == b.log
    c = train(cfg.replace(seed=5), kg.vocab, kg.train)
    assert not np.array_equal(a.table.ent_causal, c.table.ent_causal)


def test_validation_and_best_selection(kg):
    cfg = TrainConfig(epochs=6, **{**SMALL, "eval_every": 2})
    res = train(cfg, kg.vocab, kg.train, kg.valid)
    mrrs = {r["epoch"]: r["valid_mrr"] for r in res.log if "valid_mrr" in r}
    assert sorted(mrrs) == [2, 4, 6]
    assert res.best_metric == max(mrrs.values())
    assert res.epoch == max(mrrs, key=lambda e: (mrrs[e], -e))
    filt = build_filter_index(kg.train, kg.valid)
    assert evaluate(res.table, kg.valid, filt).mrr == res.best_metric


def test_patience_stops_early(kg):
    cfg = TrainConfig(epochs=100, **{**SMALL, "eval_every": 1, "patience": 2, "lr": 5.0})
    res = train(cfg, kg.vocab, kg.train, kg.valid)
    assert len(res.log) < 100


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_the_term(kg):
    cfg = TrainConfig(epochs=20, **{**SMALL, "lr": 1e200})
    with pytest.raises(TrainingDivergence) as exc:
        train(cfg, kg.vocab, kg.train)
    assert exc.value.term in LOSS_NAMES + ("total", "parameters")
    assert exc.value.term in str(exc.value)


def test_batch_loss_shares_negatives(kg):
    cfg = TrainConfig(**SMALL)
    table = init_embeddings(kg.vocab, cfg.d_e, None, cfg.model, 0)
    res = batch_loss(kg.train.array[:5], table, cfg, np.random.default_rng(0))
    for ch in ("causal", "confounder", "intervention"):
        assert res.energies[ch].shape == (5, 1 + cfg.negatives)
    with pytest.raises(ValueError):
        batch_loss(np.empty((0, 3), dtype=np.int64), table, cfg, 0)


@pytest.mark.parametrize("kind", ["TransE", "RotatE"])
def test_reduction_to_plain_training(kg, kind):
    cfg = TrainConfig(epochs=2, loss_weights=(1, 0, 0, 0, 0), **{**SMALL, "model": ScoreModel(kind)})
    plain = train_plain(cfg, kg.vocab, kg.train)
    init = init_embeddings(kg.vocab, cfg.d_e, cfg.d_r, cfg.model, seed_streams(cfg.seed)["init"])
    init.ent_conf[:] = 0
    init.rel_conf[:] = 0
    cause = train(cfg, kg.vocab, kg.train, initial_table=init)
    assert np.array_equal(cause.table.ent_causal, plain.table.ent_causal)
    assert np.array_equal(cause.table.rel_causal, plain.table.rel_causal)
    assert [r["l_caus"] for r in cause.log] == [r["loss"] for r in plain.log]


def _frequency_mrr(kg):
    """Filtered MRR of ranking candidates by how often they fill that slot in train."""
    tails = Counter(kg.train.array[:, 2].tolist())
    heads = Counter(kg.train.array[:, 0].tolist())
    known = kg.all_triples()
    rr = []
    for h, r, t in kg.test.as_set():
        for direction, counts, target in (("tail", tails, t), ("head", heads, h)):
            score = {}
            for e in range(kg.vocab.n_entities):
                cand = (h, r, e) if direction == "tail" else (e, r, t)
                if cand in known and e != target:
                    continue
                score[e] = counts[e]
            better = sum(1 for e, s in score.items() if s > score[target])
            ties = sum(1 for e, s in score.items() if s == score[target]) - 1
            rr.append(1.0 / (1 + better + ties / 2))
    return float(np.mean(rr))


def test_fixture_is_learnable(kg):
    cfg = TrainConfig(epochs=200, **{**SMALL, "d_e": 32})
    res = train_plain(cfg, kg.vocab, kg.train)
    filt = build_filter_index(kg.train, kg.valid, kg.test)
    learned = evaluate(res.table, kg.test, filt).mrr
    assert _frequency_mrr(kg) < learned
