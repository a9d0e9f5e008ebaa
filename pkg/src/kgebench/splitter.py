"""Leakage-free train/valid/test splitting.

A triple and its reciprocal (``(h, r, t)`` and ``(t, r', h)`` with ``r'``
the declared inverse of ``r``) always land in the same split. After
splitting, valid/test triples that mention entities or relations never
seen in train are moved into train.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import InputError, Triple, TripleStore, Vocabulary

logger = logging.getLogger(__name__)


class ReciprocalMap(dict):
    """Relation id -> inverse relation id, kept symmetric.

    A relation maps to itself only when declared symmetric.
    """

    def declare(self, a: int, b: int) -> None:
        for x, y in ((a, b), (b, a)):
            if self.get(x, y) != y:
                raise InputError(f"relation {x} already paired with {self[x]}")
        self[a] = b
        self[b] = a

    @classmethod
    def from_names(cls, pairs: Iterable[tuple[str, str]], vocab: Vocabulary) -> "ReciprocalMap":
        """Build from name pairs; pairs naming absent relations are ignored."""
        out = cls()
        for a, b in pairs:
            if a in vocab.relations and b in vocab.relations:
                out.declare(vocab.relations[a], vocab.relations[b])
        return out


def read_reciprocal_pairs(path: str | Path) -> list[tuple[str, str]]:
    """Read ``rel<TAB>inverse_rel`` lines. A single name declares a symmetric relation."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) == 1:
                pairs.append((fields[0], fields[0]))
            elif len(fields) == 2:
                pairs.append((fields[0].strip(), fields[1].strip()))
            else:
                raise InputError(f"{path}:{lineno}: expected 1 or 2 fields")
    return pairs


@dataclass
class SplitSpec:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    reciprocals: ReciprocalMap = field(default_factory=ReciprocalMap)

    def __post_init__(self):
        if len(self.ratios) != 3 or any(not (r > 0) for r in self.ratios):
            raise InputError(f"split ratios must be three positive numbers, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise InputError(f"split ratios must sum to 1, got {sum(self.ratios)}")


def pair_reciprocals(store: TripleStore, rmap: ReciprocalMap) -> list[list[int]]:
    """Group triple indices so each triple sits with its stored reciprocal."""
    position = {t: i for i, t in enumerate(store)}
    assigned = np.zeros(len(store), dtype=bool)
    groups = []
    for i, (h, r, t) in enumerate(store):
        if assigned[i]:
            continue
        assigned[i] = True
        group = [i]
        inv = rmap.get(r)
        if inv is not None:
            j = position.get(Triple(t, inv, h))
            if j is not None and not assigned[j]:
                assigned[j] = True
                group.append(j)
        groups.append(group)
    return groups


def split(
    store: TripleStore, groups: Sequence[Sequence[int]], spec: SplitSpec
) -> tuple[TripleStore, TripleStore, TripleStore]:
    """Assign whole groups to train/valid/test after a seeded shuffle.

    Groups are taken in shuffled order and poured into train until its
    share of triples is met, then valid, then test.
    """
    n = sum(len(g) for g in groups)
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(groups))
    targets = (spec.ratios[0] * n, (spec.ratios[0] + spec.ratios[1]) * n)
    buckets: list[list[int]] = [[], [], []]
    filled = 0
    for gi in order:
        g = groups[gi]
        # place by the midpoint of the group so boundary rounding is symmetric
        mid = filled + len(g) / 2.0
        k = 0 if mid <= targets[0] else (1 if mid <= targets[1] else 2)
        buckets[k].extend(g)
        filled += len(g)
    out = []
    for name, idx in zip(("train", "valid", "test"), buckets):
        out.append(TripleStore((store[i] for i in sorted(idx)), split=name))
    return tuple(out)


def repair_unseen(
    train: TripleStore,
    valid: TripleStore,
    test: TripleStore,
    rmap: ReciprocalMap | None = None,
) -> tuple[TripleStore, TripleStore, TripleStore, int]:
    """Move valid/test triples with entities or relations unseen in train into train.

    Triples are visited in stored order, valid before test, and passes repeat
    until nothing moves. With ``rmap``, a moved triple's reciprocal partner
    in the same split moves too. Returns the new stores and the moved count.
    """
    rmap = rmap or ReciprocalMap()
    train_list = list(train)
    seen_e = train.entities()
    seen_r = train.relations()
    held = {"valid": list(valid), "test": list(test)}
    moved = 0
    changed = True
    while changed:
        changed = False
        for name in ("valid", "test"):
            keep = []
            members = set(held[name])
            pulled: set[Triple] = set()
            for tr in held[name]:
                if tr in pulled:
                    continue
                h, r, t = tr
                if h in seen_e and t in seen_e and r in seen_r:
                    keep.append(tr)
                    continue
                batch = [tr]
                inv = rmap.get(r)
                if inv is not None:
                    partner = Triple(t, inv, h)
                    if partner != tr and partner in members:
                        batch.append(partner)
                for x in batch:
                    pulled.add(x)
                    train_list.append(x)
                    seen_e.update((x.head, x.tail))
                    seen_r.add(x.rel)
                    moved += 1
                changed = True
            held[name] = [x for x in keep if x not in pulled]
    if moved:
        logger.info("moved %d triples into train to remove unseen entities/relations", moved)
    return (
        TripleStore(train_list, split="train"),
        TripleStore(held["valid"], split="valid"),
        TripleStore(held["test"], split="test"),
        moved,
    )


def unseen_counts(train: TripleStore, other: TripleStore) -> tuple[int, int]:
    """Number of distinct entities and relations in ``other`` absent from ``train``."""
    return (len(other.entities() - train.entities()), len(other.relations() - train.relations()))


def split_stats(vocab_size: tuple[int, int], train, valid, test, moved: int) -> str:
    n = len(train) + len(valid) + len(test)
    ue_v, ur_v = unseen_counts(train, valid)
    ue_t, ur_t = unseen_counts(train, test)
    lines = [
        f"Entities\t{vocab_size[0]}",
        f"Relation types\t{vocab_size[1]}",
        f"Facts\t{n}",
        f" - Train\t{len(train)}",
        f" - Valid / Test\t{len(valid)} / {len(test)}",
        f"Moved to train\t{moved}",
        f"Unseen entities valid/test\t{ue_v} / {ue_t}",
        f"Unseen relations valid/test\t{ur_v} / {ur_t}",
    ]
    return "\n".join(lines) + "\n"


def crossing_pairs(stores: Sequence[TripleStore], rmap: ReciprocalMap) -> int:
    """Count reciprocal pairs whose members sit in different stores."""
    where = {}
    for k, s in enumerate(stores):
        for tr in s:
            where[tr] = k
    n = 0
    for tr, k in where.items():
        inv = rmap.get(tr.rel)
        if inv is None:
            continue
        other = where.get(Triple(tr.tail, inv, tr.head))
        if other is not None and other != k:
            n += 1
    return n // 2
