"""Filtered ranking evaluation: link prediction, relation prediction and
per-category breakdowns of relation-prediction metrics.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import InputError, SemanticLabels, TripleStore, Vocabulary
from .models import EmbeddingTable, ModelConfig, score_candidates

logger = logging.getLogger(__name__)

HITS_AT = (1, 3, 10)
SLOTS = ("head", "tail", "relation")


class FilterSet:
    """Known triples from any number of stores, indexed for candidate filtering."""

    def __init__(self, stores: Iterable[TripleStore] = ()):
        self._triples: set[tuple[int, int, int]] = set()
        self._by_hr: dict[tuple[int, int], list[int]] = defaultdict(list)
        self._by_rt: dict[tuple[int, int], list[int]] = defaultdict(list)
        self._by_ht: dict[tuple[int, int], list[int]] = defaultdict(list)
        for s in stores:
            self.update(s)

    def update(self, triples: Iterable[Sequence[int]]) -> None:
        for h, r, t in triples:
            key = (int(h), int(r), int(t))
            if key in self._triples:
                continue
            self._triples.add(key)
            self._by_hr[key[0], key[1]].append(key[2])
            self._by_rt[key[1], key[2]].append(key[0])
            self._by_ht[key[0], key[2]].append(key[1])

    def __contains__(self, t) -> bool:
        return tuple(int(x) for x in t) in self._triples

    def __len__(self) -> int:
        return len(self._triples)

    def known(self, h: int, r: int, t: int, slot: str) -> list[int]:
        """Ids that complete the query's open slot into a known triple."""
        if slot == "tail":
            return self._by_hr.get((h, r), [])
        if slot == "head":
            return self._by_rt.get((r, t), [])
        if slot == "relation":
            return self._by_ht.get((h, t), [])
        raise ValueError(f"unknown slot {slot!r}")


def filtered_rank(scores: np.ndarray, true_idx: int, known: Sequence[int]) -> tuple[int, int]:
    """Pessimistic filtered rank of ``true_idx`` and the size of the filtered pool.

    Candidates in ``known`` other than the true one are removed. Remaining
    candidates that score strictly higher or exactly equal count as ahead.
    """
    keep = np.ones(len(scores), dtype=bool)
    if len(known):
        keep[np.asarray(known, dtype=np.int64)] = False
    keep[true_idx] = True
    target = scores[true_idx]
    pool = scores[keep]
    if np.isnan(target):
        return int(pool.size), int(pool.size)
    ahead = int(np.count_nonzero(pool >= target)) - 1
    if ahead < 0:
        raise RuntimeError("true candidate missing from its own pool")
    return 1 + ahead, int(pool.size)


def rank(triple, slot: str, table: EmbeddingTable, cfg: ModelConfig, filt: FilterSet) -> tuple[int, int]:
    h, r, t = (int(x) for x in triple)
    if slot == "tail":
        scores, true_idx = score_candidates(table, cfg, h, r, None), t
    elif slot == "head":
        scores, true_idx = score_candidates(table, cfg, None, r, t), h
    elif slot == "relation":
        scores, true_idx = score_candidates(table, cfg, h, None, t), r
    else:
        raise ValueError(f"unknown slot {slot!r}")
    return filtered_rank(scores, true_idx, filt.known(h, r, t, slot))


def mq100(rank: int, pool_size: int) -> float:
    """Quantile of the pool ranked below the truth, zero past rank 100."""
    if pool_size < 2:
        raise ValueError(f"pool size must be at least 2, got {pool_size}")
    if not 1 <= rank <= pool_size:
        raise ValueError(f"rank {rank} outside 1..{pool_size}")
    if rank > 100:
        return 0.0
    return (pool_size - rank) / (pool_size - 1)


def _quantile(rank: int, pool: int) -> float:
    # a single-candidate pool has the truth trivially on top
    return 1.0 if pool < 2 else mq100(rank, pool)


@dataclass
class RankingOutcome:
    """Per-query ranks plus per-triple averaged metrics.

    ``ranks`` and ``pools`` have one row per ranked triple and one column
    per slot. With several slots, metrics are averaged per triple first and
    then over triples.
    """

    slots: tuple[str, ...]
    triples: np.ndarray  # (n, 3) id triples that were ranked
    ranks: np.ndarray  # (n, len(slots))
    pools: np.ndarray  # (n, len(slots))
    metrics: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.metrics and len(self.triples):
            self.metrics = aggregate(self.ranks, self.pools)

    def per_triple(self) -> dict[str, np.ndarray]:
        return per_triple_metrics(self.ranks, self.pools)

    def subset(self, mask: np.ndarray) -> "RankingOutcome":
        return RankingOutcome(self.slots, self.triples[mask], self.ranks[mask], self.pools[mask])

    def __len__(self) -> int:
        return len(self.triples)


def per_triple_metrics(ranks: np.ndarray, pools: np.ndarray) -> dict[str, np.ndarray]:
    ranks = ranks.astype(np.float64)
    q = np.vectorize(_quantile, otypes=[float])(ranks.astype(np.int64), pools) if ranks.size else ranks
    out = {
        "MR": ranks.mean(axis=1),
        "MRR": (1.0 / ranks).mean(axis=1),
        "MQ100": q.mean(axis=1),
    }
    for k in HITS_AT:
        out[f"H@{k}"] = (ranks <= k).mean(axis=1)
    return out


def aggregate(ranks: np.ndarray, pools: np.ndarray) -> dict[str, float]:
    per = per_triple_metrics(ranks, pools)
    out = {name: float(v.mean()) for name, v in per.items()}
    out["count"] = int(ranks.shape[0])
    return out


def _rank_all(store_arr, slots, table, cfg, filt, workers):
    def job(chunk):
        return [[rank(tr, s, table, cfg, filt) for s in slots] for tr in chunk]

    if workers <= 1 or len(store_arr) < 2:
        rows = job(store_arr)
    else:
        chunks = np.array_split(store_arr, workers)
        with ThreadPoolExecutor(workers) as pool:
            rows = [r for part in pool.map(job, chunks) for r in part]
    res = np.asarray(rows, dtype=np.int64).reshape(len(store_arr), len(slots), 2)
    return res[..., 0], res[..., 1]


def link_prediction(
    test: TripleStore | np.ndarray,
    table: EmbeddingTable,
    cfg: ModelConfig,
    filt: FilterSet,
    target: str = "both",
    workers: int = 1,
) -> RankingOutcome:
    """Filtered entity ranking for the head, tail, or both slots of every test triple."""
    slots = {"head": ("head",), "tail": ("tail",), "both": ("head", "tail")}.get(target)
    if slots is None:
        raise ValueError(f"target must be head, tail or both, got {target!r}")
    arr = test.array if isinstance(test, TripleStore) else np.asarray(test, dtype=np.int64)
    if len(arr) == 0:
        raise InputError("cannot evaluate an empty test set")
    ranks, pools = _rank_all(arr, slots, table, cfg, filt, workers)
    return RankingOutcome(slots, arr, ranks, pools)


def relation_prediction(
    test: TripleStore | np.ndarray,
    table: EmbeddingTable,
    cfg: ModelConfig,
    filt: FilterSet,
    workers: int = 1,
) -> RankingOutcome:
    """Filtered ranking over all relation types for ``(h, ?, t)``."""
    arr = test.array if isinstance(test, TripleStore) else np.asarray(test, dtype=np.int64)
    if len(arr) == 0:
        raise InputError("cannot evaluate an empty test set")
    ranks, pools = _rank_all(arr, ("relation",), table, cfg, filt, workers)
    return RankingOutcome(("relation",), arr, ranks, pools)


# --- relation categories ----------------------------------------------------


@dataclass(frozen=True)
class RelationCategory:
    head_many: bool
    tail_many: bool
    homogeneous: bool
    head_groups: frozenset[str] = frozenset()
    tail_groups: frozenset[str] = frozenset()

    @property
    def label(self) -> str:
        base = f"{'M' if self.head_many else '1'}-{'M' if self.tail_many else '1'}"
        return base + "-hom" if self.homogeneous else base


def categorize_relation(
    rel: int, stores: Iterable[TripleStore], labels: SemanticLabels, vocab: Vocabulary
) -> RelationCategory:
    """Cardinality from the groups spanned by heads and tails; homogeneous when
    every observed head group pairs only with the identical tail group."""
    names = vocab.entities.names
    heads, tails, pairs = set(), set(), set()
    for store in stores:
        for h, r, t in store:
            if r != rel:
                continue
            gh, gt = labels.groups.get(names[h]), labels.groups.get(names[t])
            if gh is None or gt is None:
                missing = names[h] if gh is None else names[t]
                raise InputError(f"entity {missing!r} has no semantic label")
            heads.add(gh)
            tails.add(gt)
            pairs.add((gh, gt))
    if not pairs:
        raise InputError(f"relation {vocab.relations.name(rel)!r} has no triples")
    hom = all(a == b for a, b in pairs)
    return RelationCategory(len(heads) > 1, len(tails) > 1, hom, frozenset(heads), frozenset(tails))


def categorize_all(stores: Sequence[TripleStore], labels: SemanticLabels, vocab: Vocabulary) -> dict[int, RelationCategory]:
    used = set()
    for s in stores:
        used |= s.relations()
    return {r: categorize_relation(r, stores, labels, vocab) for r in sorted(used)}


def stratified_metrics(
    outcome: RankingOutcome,
    categories: Mapping[int, RelationCategory] | None = None,
    relations: Mapping[str, int] | None = None,
) -> dict[str, dict[str, float]]:
    """Aggregate metrics per relation category label and per named relation."""
    rel_ids = outcome.triples[:, 1]
    out: dict[str, dict[str, float]] = {}
    if categories is not None:
        labels = np.array([categories[int(r)].label for r in rel_ids])
        for lab in sorted(set(labels)):
            out[lab] = outcome.subset(labels == lab).metrics
    for name, rid in (relations or {}).items():
        mask = rel_ids == rid
        if mask.any():
            out[name] = outcome.subset(mask).metrics
    return out


def format_report(rows: Iterable[tuple[str, str, str, Mapping[str, float]]]) -> str:
    """TSV report: model, target, group, then one column per metric."""
    cols = ["MR", "MRR", "MQ100"] + [f"H@{k}" for k in HITS_AT] + ["count"]
    lines = ["\t".join(["model", "target", "group"] + cols)]
    for model, target, group, m in rows:
        vals = [str(m["count"]) if c == "count" else f"{m[c]:.6f}" for c in cols]
        lines.append("\t".join([model, target, group] + vals))
    return "\n".join(lines) + "\n"
