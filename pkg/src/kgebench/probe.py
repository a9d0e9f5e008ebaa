"""Embedding-quality probes.

* Linear classification of entities by semantic type or group, trained
  with cross-entropy SGD on a stratified split shared by all models.
* Bootstrap power: how often cosine similarity separates known related
  pairs from random pairs drawn from the same semantic categories.
"""

from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .core import InputError, SemanticLabels

logger = logging.getLogger(__name__)

LABEL_KINDS = ("semantic_type", "semantic_group")


@dataclass(frozen=True)
class ProbeConfig:
    dropout: float = 0.1
    train_fraction: float = 0.9
    epochs: int = 100
    learning_rate: float = 0.1
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")


# --- classification ---------------------------------------------------------


def stratified_split(targets: Sequence[str], train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split; every class keeps at least one training item."""
    targets = np.asarray(targets)
    rng = np.random.default_rng([seed, 7])
    train, test = [], []
    for cls in sorted(set(targets.tolist())):
        idx = np.flatnonzero(targets == cls)
        idx = idx[rng.permutation(len(idx))]
        n_test = min(int(round(len(idx) * (1.0 - train_fraction))), len(idx) - 1)
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def classify(
    features: np.ndarray,
    targets: Sequence[str],
    cfg: ProbeConfig = ProbeConfig(),
    split: tuple[np.ndarray, np.ndarray] | None = None,
) -> float:
    """Held-out accuracy of a linear softmax probe.

    Inverted dropout is applied to the inputs during training only. Without
    an explicit ``split`` a stratified one is drawn from ``cfg``.
    """
    x = np.asarray(features, dtype=np.float64)
    y_names = np.asarray(targets)
    if x.ndim != 2 or len(x) != len(y_names):
        raise ValueError("features must be (n, d) with one target per row")
    train_idx, test_idx = split if split is not None else stratified_split(y_names, cfg.train_fraction, cfg.seed)
    classes = sorted(set(y_names.tolist()))
    missing = set(classes) - set(y_names[train_idx].tolist())
    if missing:
        raise InputError(f"classes absent from the training split: {sorted(missing)}")
    if len(test_idx) == 0:
        raise InputError("empty test split")
    col = {c: i for i, c in enumerate(classes)}
    y = np.array([col[c] for c in y_names.tolist()])

    rng = np.random.default_rng([cfg.seed, 11])
    d, k = x.shape[1], len(classes)
    w = np.zeros((d, k))
    b = np.zeros(k)
    keep = 1.0 - cfg.dropout
    xt, yt = x[train_idx], y[train_idx]
    for _ in range(cfg.epochs):
        order = rng.permutation(len(xt))
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            xb = xt[idx]
            if cfg.dropout > 0:
                xb = xb * (rng.random(xb.shape) < keep) / keep
            g = _softmax(xb @ w + b)
            g[np.arange(len(idx)), yt[idx]] -= 1.0
            g /= len(idx)
            w -= cfg.learning_rate * (xb.T @ g)
            b -= cfg.learning_rate * g.sum(axis=0)
    pred = np.argmax(x[test_idx] @ w + b, axis=1)
    return float(np.mean(pred == y[test_idx]))


@dataclass
class ProbeDataset:
    """Entities covered by every embedding set, with one shared split."""

    entities: list[str]
    features: list[np.ndarray]  # one (n, d_m) matrix per embedding set
    types: np.ndarray
    groups: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    def targets(self, label_kind: str) -> np.ndarray:
        if label_kind == "semantic_type":
            return self.types
        if label_kind == "semantic_group":
            return self.groups
        raise ValueError(f"label_kind must be one of {LABEL_KINDS}, got {label_kind!r}")

    def accuracy(self, model: int, label_kind: str, cfg: ProbeConfig = ProbeConfig()) -> float:
        return classify(self.features[model], self.targets(label_kind), cfg, (self.train_idx, self.test_idx))


def build_probe_dataset(
    sets: Sequence[tuple[Sequence[str], np.ndarray]],
    labels: SemanticLabels,
    cfg: ProbeConfig = ProbeConfig(),
) -> ProbeDataset:
    """Intersect ``(names, matrix)`` embedding sets over labeled entities.

    Entities are sorted by name, and the split is stratified by semantic
    type, so it depends only on the intersection and the seed.
    """
    if not sets:
        raise InputError("need at least one embedding set")
    common = set(labels.types)
    for names, _ in sets:
        common &= set(names)
    if not common:
        raise InputError("embedding sets share no labeled entity")
    entities = sorted(common)
    features = []
    for names, mat in sets:
        pos = {n: i for i, n in enumerate(names)}
        features.append(np.asarray(mat, dtype=np.float64)[[pos[e] for e in entities]])
    types = np.array([labels.types[e] for e in entities])
    groups = np.array([labels.groups[e] for e in entities])
    train_idx, test_idx = stratified_split(types, cfg.train_fraction, cfg.seed)
    return ProbeDataset(entities, features, types, groups, train_idx, test_idx)


# --- bootstrap power --------------------------------------------------------


@dataclass
class PowerTask:
    """Observed related pairs of one relationship and the category pools.

    ``pairs`` holds ``(head, tail, head_category, tail_category)``.
    """

    label: str
    pairs: list[tuple[str, str, str, str]]
    pools: Mapping[str, Sequence[str]]
    sample_count: int = 10_000
    percentile: float = 95.0

    def __post_init__(self):
        if self.sample_count < 1000:
            raise ValueError(f"sample_count must be at least 1000, got {self.sample_count}")
        if not 0 < self.percentile < 100:
            raise ValueError("percentile must be in (0, 100)")
        if not self.pairs:
            raise InputError(f"task {self.label!r} has no observed pairs")
        for _, _, hc, tc in self.pairs:
            for cat in (hc, tc):
                if not self.pools.get(cat):
                    raise InputError(f"task {self.label!r}: category {cat!r} has an empty pool")


class PowerResult(NamedTuple):
    power: float
    threshold: float  # of the null covering the most observed pairs
    thresholds: dict[tuple[str, str], float]


class _Unit:
    """Row-normalized embeddings with name lookup."""

    def __init__(self, names: Sequence[str], matrix: np.ndarray):
        m = np.asarray(matrix, dtype=np.float64)
        norms = np.linalg.norm(m, axis=1)
        self.index = {n: i for i, n in enumerate(names)}
        self.names = list(names)
        self.norms = norms
        with np.errstate(invalid="ignore", divide="ignore"):
            self.unit = m / norms[:, None]

    def rows(self, names: Sequence[str]) -> np.ndarray:
        idx = []
        for n in names:
            i = self.index.get(n)
            if i is None:
                raise InputError(f"no embedding for entity {n!r}")
            if self.norms[i] == 0:
                raise InputError(f"zero embedding vector for entity {n!r}")
            idx.append(i)
        return np.asarray(idx, dtype=np.int64)


def nearest_rank(sorted_values: np.ndarray, percentile: float) -> float:
    k = max(1, math.ceil(percentile / 100.0 * len(sorted_values)))
    return float(sorted_values[k - 1])


def bootstrap_power(
    embeddings: tuple[Sequence[str], np.ndarray] | _Unit,
    task: PowerTask,
    rng: np.random.Generator,
) -> PowerResult:
    """Fraction of observed pairs whose cosine exceeds the null percentile.

    One null is drawn per (head category, tail category): ``sample_count``
    pairs sampled uniformly with replacement from the two pools.
    """
    emb = embeddings if isinstance(embeddings, _Unit) else _Unit(*embeddings)
    by_cats: dict[tuple[str, str], list[tuple[str, str]]] = {}
    for h, t, hc, tc in task.pairs:
        by_cats.setdefault((hc, tc), []).append((h, t))
    thresholds = {}
    hits = 0
    for cats in sorted(by_cats):
        xs = emb.rows(task.pools[cats[0]])
        ys = emb.rows(task.pools[cats[1]])
        xi = xs[rng.integers(0, len(xs), task.sample_count)]
        yi = ys[rng.integers(0, len(ys), task.sample_count)]
        null = np.sort(np.einsum("ij,ij->i", emb.unit[xi], emb.unit[yi]))
        thr = nearest_rank(null, task.percentile)
        thresholds[cats] = thr
        pairs = by_cats[cats]
        hi = emb.rows([h for h, _ in pairs])
        ti = emb.rows([t for _, t in pairs])
        obs = np.einsum("ij,ij->i", emb.unit[hi], emb.unit[ti])
        hits += int(np.count_nonzero(obs > thr))
    main = max(sorted(by_cats), key=lambda c: len(by_cats[c]))
    return PowerResult(hits / len(task.pairs), thresholds[main], thresholds)


def task_rng(seed: int, label: str) -> np.random.Generator:
    """Generator keyed by task label, independent of task order."""
    return np.random.default_rng([seed, zlib.crc32(label.encode("utf-8"))])


def run_power_tasks(
    embeddings: tuple[Sequence[str], np.ndarray],
    tasks: Sequence[PowerTask],
    seed: int = 0,
    workers: int = 1,
) -> list[PowerResult]:
    emb = _Unit(*embeddings)

    def one(task):
        return bootstrap_power(emb, task, task_rng(seed, task.label))

    if workers <= 1:
        return [one(t) for t in tasks]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(one, tasks))


def read_power_tasks(
    path: str | Path,
    labels: SemanticLabels,
    available: Sequence[str] | None = None,
    sample_count: int = 10_000,
    percentile: float = 95.0,
) -> list[PowerTask]:
    """Parse ``head, tail, relationship, head_category, tail_category`` TSV rows.

    A category names a semantic group, or failing that a semantic type. Its
    pool is every labeled entity in it, limited to ``available`` when given.
    Tasks come back in first-seen relationship order.
    """
    rows: dict[str, list[tuple[str, str, str, str]]] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            f = [x.strip() for x in line.split("\t")]
            if len(f) != 5:
                raise InputError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(f)}")
            h, t, rel, hc, tc = f
            rows.setdefault(rel, []).append((h, t, hc, tc))
    allowed = None if available is None else set(available)
    by_group: dict[str, list[str]] = {}
    by_type: dict[str, list[str]] = {}
    for ent in sorted(labels.types):
        if allowed is not None and ent not in allowed:
            continue
        by_group.setdefault(labels.groups[ent], []).append(ent)
        by_type.setdefault(labels.types[ent], []).append(ent)
    pools = {}
    for pairs in rows.values():
        for _, _, hc, tc in pairs:
            for cat in (hc, tc):
                if cat not in pools:
                    pools[cat] = by_group.get(cat) or by_type.get(cat) or []
    return [PowerTask(rel, pairs, pools, sample_count, percentile) for rel, pairs in rows.items()]


def format_probe_report(
    accuracies: Sequence[tuple[str, str, float]],
    powers: Sequence[tuple[str, str, float, float]] = (),
) -> str:
    lines = ["model\tlabel_kind\taccuracy"]
    lines += [f"{m}\t{k}\t{a:.6f}" for m, k, a in accuracies]
    if powers:
        lines.append("")
        lines.append("model\ttask\tpower\tthreshold")
        lines += [f"{m}\t{t}\t{p:.6f}\t{thr:.6f}" for m, t, p, thr in powers]
    return "\n".join(lines) + "\n"
