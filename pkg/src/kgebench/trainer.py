"""Negative-sampling SGD training with a self-adversarial log-sigmoid objective.

For a positive score ``s+`` and negative scores ``s_1..s_K``::

    loss = -log sigmoid(s+) - sum_k p_k log sigmoid(-s_k)
    p    = softmax(alpha * s)

The weights ``p`` are part of the objective, so the gradient includes
their dependence on the negative scores. ``alpha = 0`` gives uniform
weights.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import kernels
from .checkpoint import Checkpoint
from .core import TripleStore, Vocabulary
from .evaluation import FilterSet, link_prediction
from .models import EmbeddingTable, ModelConfig, init, score_rows

logger = logging.getLogger(__name__)

MARGIN_GRID = (4.0, 6.0, 8.0, 10.0)
LEARNING_RATE_GRID = (5e-4, 1e-4, 5e-5, 1e-5)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    num_negative: int = 60
    num_epoch: int = 2000
    batch_size: int = 256
    eval_every: int = 50
    eval_sample: int = 5000
    seed: int = 0
    worker_count: int = 1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        for name in ("num_negative", "batch_size", "eval_every", "worker_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.num_epoch < 0 or self.eval_sample < 0:
            raise ValueError("num_epoch and eval_sample must be non-negative")


# --- sampling and loss ------------------------------------------------------


def sample_batch(pos: np.ndarray, n: int, num_entities: int, rng: np.random.Generator):
    """Corrupt each positive ``n`` times. Returns (entity ids, corrupt-head flags).

    A fair coin picks the slot; the replacement is uniform over entities.
    Draws that reproduce the positive itself are redrawn (coin included).
    """
    if num_entities < 2:
        raise ValueError("negative sampling needs at least two entities")
    B = len(pos)
    heads = np.repeat(pos[:, 0:1], n, axis=1)
    tails = np.repeat(pos[:, 2:3], n, axis=1)
    ents = rng.integers(0, num_entities, size=(B, n))
    flip = rng.random((B, n)) < 0.5
    bad = np.where(flip, ents == heads, ents == tails)
    while bad.any():
        k = int(bad.sum())
        ents[bad] = rng.integers(0, num_entities, size=k)
        flip[bad] = rng.random(k) < 0.5
        bad = np.where(flip, ents == heads, ents == tails)
    return ents, flip


def sample_negatives(triple, n: int, num_entities: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` corrupted copies of ``triple`` as an ``(n, 3)`` array."""
    pos = np.asarray([triple], dtype=np.int64)
    ents, flip = sample_batch(pos, n, num_entities, rng)
    out = np.repeat(pos, n, axis=0)
    out[flip[0], 0] = ents[0, flip[0]]
    out[~flip[0], 2] = ents[0, ~flip[0]]
    return out


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def adversarial_weights(neg_scores, alpha: float) -> np.ndarray:
    z = alpha * np.asarray(neg_scores, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def loss(pos_score: float, neg_scores, alpha: float):
    """Return ``(loss, d loss / d s+, d loss / d s_k)``."""
    neg = np.asarray(neg_scores, dtype=np.float64)
    if neg.size < 1:
        raise ValueError("need at least one negative score")
    p = adversarial_weights(neg, alpha)
    ell = -_log_sigmoid(-neg)
    mean_ell = float((p * ell).sum())
    value = float(-_log_sigmoid(pos_score)) + mean_ell
    d_pos = -float(np.exp(_log_sigmoid(-pos_score)))
    d_neg = p * np.exp(_log_sigmoid(neg)) + alpha * p * (ell - mean_ell)
    return value, d_pos, d_neg


# --- epochs -----------------------------------------------------------------


def _diagnose(table, model_cfg, pos, neg, flip):
    """Index of the first triple in a batch whose loss is not finite."""
    E, R = table.entity, table.relation
    with np.errstate(all="ignore"):
        return _first_bad(E, R, model_cfg, pos, neg, flip)


def _first_bad(E, R, model_cfg, pos, neg, flip):
    for b in range(len(pos)):
        h, r, t = pos[b]
        hs = np.where(flip[b], neg[b], h)
        ts = np.where(flip[b], t, neg[b])
        s_pos = score_rows(model_cfg, E[h], R[r], E[t])
        s_neg = score_rows(model_cfg, E[hs], R[r][None, :], E[ts])
        value, _, _ = loss(float(s_pos), s_neg, model_cfg.adversarial_temperature)
        if not math.isfinite(value):
            return b
    return 0


def train_epoch(
    table: EmbeddingTable,
    train: TripleStore | np.ndarray,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    rng: np.random.Generator,
    epoch: int = 0,
    backend=None,
) -> float:
    """One shuffled pass over ``train``; updates ``table`` in place. Returns mean loss.

    Each batch draws its negatives from its own generator, seeded from
    ``rng``, so sampling does not depend on how batches are scheduled.
    With ``cfg.worker_count > 1`` batches run concurrently on threads that
    update the shared table without locks.
    """
    kern = backend or kernels.backend
    arr = train.array if isinstance(train, TripleStore) else np.asarray(train, dtype=np.int64)
    n = len(arr)
    if n == 0:
        return 0.0
    order = rng.permutation(n)
    starts = range(0, n, cfg.batch_size)
    seeds = rng.integers(0, 2**63 - 1, size=len(starts))
    ne = table.num_entities
    mc = model_cfg

    def run(i):
        pos = np.ascontiguousarray(arr[order[starts[i] : starts[i] + cfg.batch_size]])
        brng = np.random.default_rng(int(seeds[i]))
        neg, flip = sample_batch(pos, cfg.num_negative, ne, brng)
        flip = flip.astype(np.uint8)
        total = kern.train_batch(
            mc.kind.code, table.entity, table.relation, pos, neg, flip,
            float(mc.margin), int(mc.p_norm), float(mc.adversarial_temperature),
            float(mc.regularization), float(cfg.learning_rate),
        )
        if not math.isfinite(total):
            b = _diagnose(table, mc, pos, neg, flip)
            raise NumericalError(
                f"non-finite loss at epoch {epoch}, batch {i}, triple {tuple(int(x) for x in pos[b])}"
            )
        return total

    if cfg.worker_count <= 1:
        totals = [run(i) for i in range(len(starts))]
    else:
        with ThreadPoolExecutor(cfg.worker_count) as pool:
            totals = list(pool.map(run, range(len(starts))))
    return float(sum(totals) / n)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def validation_sample(valid: TripleStore, size: int, seed: int) -> np.ndarray:
    arr = valid.array
    if size == 0 or len(arr) <= size:
        return arr
    idx = np.sort(np.random.default_rng([seed, 104729]).choice(len(arr), size, replace=False))
    return arr[idx]


def train(
    stores: Mapping[str, TripleStore],
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    vocab: Vocabulary | None = None,
    extra_filter: TripleStore | None = None,
    resume: Checkpoint | None = None,
    on_epoch: Callable[[dict], None] | None = None,
    backend=None,
) -> Checkpoint:
    """Train for ``cfg.num_epoch`` epochs and return the best-validation checkpoint.

    Filtered validation MRR (target ``both``) is measured on a fixed
    subsample of the valid split before the first epoch, every
    ``eval_every`` epochs and after the last one. Without a valid split the
    final table is returned.
    """
    train_store = stores["train"]
    valid = stores.get("valid")
    if vocab is not None:
        ne, nr = vocab.num_entities, vocab.num_relations
    else:
        ne = 1 + max(int(s.array[:, [0, 2]].max()) for s in stores.values() if len(s))
        nr = 1 + max(int(s.array[:, 1].max()) for s in stores.values() if len(s))

    if resume is not None:
        table = resume.table.copy()
        start = resume.epoch
        if table.kind is not model_cfg.kind or table.dim != model_cfg.dim:
            raise ValueError("checkpoint model kind/dim do not match the configuration")
    else:
        table = init(model_cfg, ne, nr, cfg.seed)
        start = 0

    metadata = {
        "model": {k: (v.value if hasattr(v, "value") else v) for k, v in dataclasses.asdict(model_cfg).items()},
        "train": dataclasses.asdict(cfg),
        "backend": (backend or kernels.backend).BACKEND,
    }
    names_e = list(vocab.entities.names) if vocab else []
    names_r = list(vocab.relations.names) if vocab else []

    filt = None
    sample = None
    if valid is not None and len(valid):
        filt = FilterSet(s for s in stores.values())
        if extra_filter is not None:
            filt.update(extra_filter)
        sample = validation_sample(valid, cfg.eval_sample, cfg.seed)

    def evaluate() -> float:
        if sample is None:
            return float("nan")
        return link_prediction(sample, table, model_cfg, filt, "both", workers=cfg.worker_count).metrics["MRR"]

    history: list[dict] = []
    best = None

    def consider(epoch: int, mean_loss: float, mrr: float):
        nonlocal best
        rec = {"epoch": epoch, "loss": mean_loss, "valid_mrr": mrr}
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if best is None or (mrr > best.valid_mrr) or (math.isnan(best.valid_mrr) and not math.isnan(mrr)):
            best = Checkpoint(table.copy(), epoch, mrr, metadata, names_e, names_r)

    consider(start, float("nan"), evaluate())
    end = start + cfg.num_epoch
    t0 = time.perf_counter()
    for epoch in range(start + 1, end + 1):
        mean_loss = train_epoch(table, train_store, cfg, model_cfg, epoch_rng(cfg.seed, epoch), epoch, backend)
        if epoch % cfg.eval_every == 0 or epoch == end:
            mrr = evaluate()
            consider(epoch, mean_loss, mrr)
            logger.info("epoch %d loss %.5f valid MRR %.4f (%.1fs)", epoch, mean_loss, mrr, time.perf_counter() - t0)
        else:
            history.append({"epoch": epoch, "loss": mean_loss, "valid_mrr": float("nan")})
            if on_epoch is not None:
                on_epoch(history[-1])

    if sample is None:
        best = Checkpoint(table.copy(), end, float("nan"), metadata, names_e, names_r)
    return dataclasses.replace(best, history=history, last_table=table)
