import os
import subprocess
import sys

import numpy as np
import pytest
import oracles
from conftest import random_table

from kgebench import _pykernels, kernels
from kgebench.models import ModelConfig, ModelKind
from kgebench.trainer import sample_batch

KINDS = list(ModelKind)

try:
    from kgebench import _ckernels
except ImportError:  # pragma: no cover - exercised only without a compiler
    _ckernels = None

BACKENDS = [_pykernels] + ([_ckernels] if _ckernels else [])
needs_compiled = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def _batch(cfg, ne, nr, B, K, seed):
    rng = np.random.default_rng(seed)
    tab = random_table(cfg, ne, nr, seed)
    tab.entity *= 0.5
    pos = np.stack([rng.integers(0, ne, B), rng.integers(0, nr, B), rng.integers(0, ne, B)], 1).astype(np.int64)
    neg, flip = sample_batch(pos, K, ne, rng)
    return tab, pos, neg, flip.astype(np.uint8)


def _run(mod, cfg, tab, pos, neg, flip, alpha, reg, lr):
    return mod.train_batch(cfg.kind.code, tab.entity, tab.relation, pos, neg, flip,
                           cfg.margin, cfg.p_norm, alpha, reg, lr)


@needs_compiled
@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("alpha, reg", [(0.0, 0.0), (1.0, 0.0), (0.5, 0.01)])
def test_backends_agree(kind, alpha, reg):
    cfg = ModelConfig(kind, dim=8, margin=4.0)
    tab, pos, neg, flip = _batch(cfg, 12, 3, 16, 5, 1)
    a, b = tab.copy(), tab.copy()
    la = _run(_pykernels, cfg, a, pos, neg, flip, alpha, reg, 0.05)
    lb = _run(_ckernels, cfg, b, pos, neg, flip, alpha, reg, 0.05)
    assert la == pytest.approx(lb, rel=1e-12)
    assert np.allclose(a.entity, b.entity, atol=1e-12, rtol=0)
    assert np.allclose(a.relation, b.relation, atol=1e-12, rtol=0)


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.BACKEND)
@pytest.mark.parametrize("kind", KINDS)
def test_zero_learning_rate_leaves_table(mod, kind):
    cfg = ModelConfig(kind, dim=8)
    tab, pos, neg, flip = _batch(cfg, 10, 2, 8, 4, 2)
    before = tab.copy()
    _run(mod, cfg, tab, pos, neg, flip, 1.0, 0.1, 0.0)
    assert np.array_equal(tab.entity, before.entity) and np.array_equal(tab.relation, before.relation)


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.BACKEND)
@pytest.mark.parametrize("kind", KINDS)
def test_update_is_gradient_of_batch_objective(mod, kind):
    cfg = ModelConfig(kind, dim=4, margin=3.0)
    tab, pos, neg, flip = _batch(cfg, 6, 2, 3, 4, 5)
    alpha, reg = 0.8, 0.05
    loss = oracles.batch_loss(kind, tab.entity, tab.relation, pos, neg, flip, cfg.margin, 1, alpha, reg)
    after = tab.copy()
    got = _run(mod, cfg, after, pos, neg, flip, alpha, reg, 1.0)
    assert got == pytest.approx(loss, rel=1e-12)
    g_ent = tab.entity - after.entity
    g_rel = tab.relation - after.relation

    def f_ent(x):
        return oracles.batch_loss(kind, x.reshape(tab.entity.shape), tab.relation, pos, neg, flip, 3.0, 1, alpha, reg)

    def f_rel(x):
        return oracles.batch_loss(kind, tab.entity, x.reshape(tab.relation.shape), pos, neg, flip, 3.0, 1, alpha, reg)

    assert oracles.max_rel_err(g_ent.ravel(), oracles.central_diff(f_ent, tab.entity.ravel())) < 1e-5
    assert oracles.max_rel_err(g_rel.ravel(), oracles.central_diff(f_rel, tab.relation.ravel())) < 1e-5


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.BACKEND)
def test_non_finite_batch_keeps_table(mod):
    cfg = ModelConfig("DistMult", dim=4)
    tab, pos, neg, flip = _batch(cfg, 6, 2, 4, 3, 0)
    tab.entity[:] = 1e200
    before = tab.copy()
    with np.errstate(all="ignore"):
        total = _run(mod, cfg, tab, pos, neg, flip, 1.0, 0.0, 0.1)
    assert not np.isfinite(total)
    assert np.array_equal(tab.entity, before.entity)


def test_env_forces_python_backend():
    env = dict(os.environ, KGEBENCH_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from kgebench import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_get_backend():
    assert kernels.get_backend("python") is _pykernels
    assert kernels.get_backend() is kernels.backend
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
