import math

import numpy as np
import pytest
import oracles

from kgebench.checkpoint import Checkpoint
from kgebench.core import TripleStore
from kgebench.models import ModelConfig, init
from kgebench.trainer import (
    LEARNING_RATE_GRID,
    MARGIN_GRID,
    NumericalError,
    TrainConfig,
    adversarial_weights,
    epoch_rng,
    loss,
    sample_batch,
    sample_negatives,
    train,
    train_epoch,
)


# --- sampling ---------------------------------------------------------------


def test_sample_count_and_rejection():
    negs = sample_negatives((3, 0, 4), 60, 10, np.random.default_rng(0))
    assert negs.shape == (60, 3)
    assert not any(tuple(n) == (3, 0, 4) for n in negs)
    # exactly one slot differs from the positive
    changed = (negs[:, 0] != 3).astype(int) + (negs[:, 2] != 4).astype(int)
    assert np.all(changed == 1) and np.all(negs[:, 1] == 0)


def test_two_entity_vocabulary():
    negs = sample_negatives((0, 0, 1), 200, 2, np.random.default_rng(1))
    assert {tuple(n) for n in negs} == {(1, 0, 1), (0, 0, 0)}


def test_corruption_side_is_fair():
    pos = np.array([[0, 0, 1]] * 1000, dtype=np.int64)
    _, flip = sample_batch(pos, 100, 50, np.random.default_rng(2))
    assert abs(flip.mean() - 0.5) <= 0.01


def test_single_entity_rejected():
    with pytest.raises(ValueError):
        sample_negatives((0, 0, 0), 3, 1, np.random.default_rng(0))


# --- loss -------------------------------------------------------------------


def test_loss_saturates():
    value, _, _ = loss(50.0, [-50.0, -60.0], 1.0)
    assert value < 1e-20


def test_uniform_weights_at_zero_temperature():
    assert np.array_equal(adversarial_weights([0.3, 0.3], 0.0), [0.5, 0.5])
    assert np.allclose(adversarial_weights([1.0, -2.0, 5.0], 0.0), 1 / 3)


def test_weights_sum_to_one():
    rng = np.random.default_rng(0)
    for _ in range(100):
        w = adversarial_weights(rng.normal(scale=30, size=20), float(rng.uniform(0, 5)))
        assert abs(w.sum() - 1.0) < 1e-9


def test_loss_value_matches_oracle():
    rng = np.random.default_rng(1)
    s_neg = rng.normal(size=7)
    assert loss(0.4, s_neg, 1.3)[0] == pytest.approx(oracles.adversarial_loss(0.4, list(s_neg), 1.3), rel=1e-12)


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(20):
        s = rng.normal(scale=2, size=9)
        _, d_pos, d_neg = loss(s[0], s[1:], 1.0)
        fd = oracles.central_diff(lambda x: oracles.adversarial_loss(x[0], list(x[1:]), 1.0), s)
        assert np.max(np.abs(np.r_[d_pos, d_neg] - fd)) < 1e-6


def test_loss_needs_a_negative():
    with pytest.raises(ValueError):
        loss(0.0, [], 1.0)


# --- epochs -----------------------------------------------------------------


def _toy(n=100, ne=30, nr=3, seed=0):
    rng = np.random.default_rng(seed)
    tri = set()
    while len(tri) < n:
        tri.add((int(rng.integers(ne)), int(rng.integers(nr)), int(rng.integers(ne))))
    return TripleStore(sorted(tri))


def test_single_triple_descent():
    store = TripleStore([(0, 0, 1)])
    mc = ModelConfig("TransE", dim=8)
    tab = init(mc, 5, 1, 0)
    cfg = TrainConfig(learning_rate=1e-3, num_negative=4, batch_size=1)
    losses = [train_epoch(tab, store, cfg, mc, np.random.default_rng(0), e) for e in range(10)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


@pytest.mark.parametrize("kind", ["TransE", "ComplEx", "RotatE"])
def test_zero_learning_rate_epochs(kind):
    mc = ModelConfig(kind, dim=8)
    tab = init(mc, 30, 3, 0)
    before = tab.copy()
    cfg = TrainConfig(learning_rate=0.0, num_negative=5, batch_size=16)
    for e in range(3):
        train_epoch(tab, _toy(), cfg, mc, epoch_rng(0, e), e)
    assert np.array_equal(tab.entity, before.entity) and np.array_equal(tab.relation, before.relation)


def test_deterministic_single_worker():
    mc = ModelConfig("ComplEx", dim=8)
    cfg = TrainConfig(learning_rate=0.05, num_negative=5, batch_size=16, seed=4)
    tabs = []
    for _ in range(2):
        tab = init(mc, 30, 3, 4)
        for e in range(1, 4):
            train_epoch(tab, _toy(), cfg, mc, epoch_rng(4, e), e)
        tabs.append(tab)
    assert np.array_equal(tabs[0].entity, tabs[1].entity)
    assert np.array_equal(tabs[0].relation, tabs[1].relation)


def test_parallel_epoch_runs():
    mc = ModelConfig("DistMult", dim=8)
    tab = init(mc, 30, 3, 0)
    cfg = TrainConfig(learning_rate=0.05, num_negative=5, batch_size=8, worker_count=4)
    value = train_epoch(tab, _toy(), cfg, mc, epoch_rng(0, 1), 1)
    assert math.isfinite(value) and np.all(np.isfinite(tab.entity))


def test_mean_loss_strictly_decreasing_in_most_runs():
    # full batch with many negatives keeps sampling noise below the per-epoch descent
    passed = 0
    for seed in range(20):
        store = _toy(seed=seed)
        mc = ModelConfig("TransE", dim=16, margin=4.0, adversarial_temperature=0.0)
        tab = init(mc, 30, 3, seed)
        cfg = TrainConfig(learning_rate=0.002, num_negative=256, batch_size=100, seed=seed)
        ls = [train_epoch(tab, store, cfg, mc, epoch_rng(seed, e), e) for e in range(1, 51)]
        passed += all(b < a for a, b in zip(ls, ls[1:]))
    assert passed >= 18


def test_numerical_failure_is_diagnosed():
    mc = ModelConfig("DistMult", dim=4)
    tab = init(mc, 30, 3, 0)
    tab.entity[:] = 1e200
    cfg = TrainConfig(learning_rate=0.1, num_negative=3, batch_size=10)
    with pytest.raises(NumericalError, match=r"epoch 7, batch 0, triple \(\d+, \d+, \d+\)"):
        train_epoch(tab, _toy(), cfg, mc, epoch_rng(0, 7), 7)


# --- train ------------------------------------------------------------------


def _chain():
    s = TripleStore([(0, 0, 1), (1, 0, 2)])
    return {"train": s, "valid": TripleStore([(0, 0, 1)]), "test": TripleStore([(1, 0, 2)])}


def test_chain_reaches_perfect_mrr():
    mc = ModelConfig("TransE", dim=8, margin=2.0)
    cfg = TrainConfig(learning_rate=0.05, num_negative=4, num_epoch=200, batch_size=2, eval_every=20)
    ckpt = train(_chain(), cfg, mc)
    assert ckpt.valid_mrr == 1.0


def test_zero_epochs_returns_initial_table():
    mc = ModelConfig("TransE", dim=8)
    cfg = TrainConfig(num_epoch=0, seed=3)
    ckpt = train(_chain(), cfg, mc)
    assert ckpt.epoch == 0 and not math.isnan(ckpt.valid_mrr)
    assert np.array_equal(ckpt.table.entity, init(mc, 3, 1, 3).entity)


def test_grid_point_echoed_in_metadata():
    assert 6.0 in MARGIN_GRID and 1e-4 in LEARNING_RATE_GRID
    mc = ModelConfig("TransE", dim=8, margin=6.0)
    cfg = TrainConfig(learning_rate=1e-4, num_epoch=1)
    meta = train(_chain(), cfg, mc).metadata
    assert meta["model"]["margin"] == 6.0 and meta["model"]["kind"] == "TransE"
    assert meta["train"]["learning_rate"] == 1e-4


def test_best_checkpoint_tracks_history():
    mc = ModelConfig("DistMult", dim=8)
    cfg = TrainConfig(learning_rate=0.1, num_negative=4, num_epoch=30, batch_size=2, eval_every=5)
    ckpt = train(_chain(), cfg, mc)
    evaluated = [h for h in ckpt.history if not math.isnan(h["valid_mrr"])]
    assert ckpt.valid_mrr == max(h["valid_mrr"] for h in evaluated)
    assert len(ckpt.history) == 31
    assert ckpt.last_table is not None


def test_resume_continues_epochs():
    mc = ModelConfig("TransE", dim=8)
    cfg = TrainConfig(learning_rate=0.01, num_negative=2, num_epoch=3, batch_size=2, eval_every=1)
    first = train(_chain(), cfg, mc)
    resumed = train(_chain(), cfg, mc, resume=Checkpoint(first.last_table, 3, first.valid_mrr))
    assert [h["epoch"] for h in resumed.history] == [3, 4, 5, 6]


def test_resume_kind_mismatch():
    mc = ModelConfig("TransE", dim=8)
    tab = init(ModelConfig("DistMult", dim=8), 3, 1, 0)
    with pytest.raises(ValueError):
        train(_chain(), TrainConfig(num_epoch=1), mc, resume=Checkpoint(tab, 1))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(num_negative=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
