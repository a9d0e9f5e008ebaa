"""Shared data model: vocabularies, triple stores and semantic labels."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_GROUPS = ("ANAT", "CHEM", "CONC", "DEVI", "DISO", "PHEN", "PHYS", "PROC")

SPLITS = ("train", "valid", "test", "closure")


class InputError(ValueError):
    """Raised for malformed or inconsistent input data."""


class Triple(NamedTuple):
    head: int
    rel: int
    tail: int


class Interner:
    """Bidirectional name <-> dense id mapping, ids in first-seen order."""

    def __init__(self, names: Iterable[str] = ()):
        self.names: list[str] = []
        self.index: dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self.index.get(name)
        if idx is None:
            idx = len(self.names)
            self.names.append(name)
            self.index[name] = idx
        return idx

    def __getitem__(self, name: str) -> int:
        return self.index[name]

    def __contains__(self, name: str) -> bool:
        return name in self.index

    def __len__(self) -> int:
        return len(self.names)

    def name(self, idx: int) -> str:
        return self.names[idx]


@dataclass
class Vocabulary:
    entities: Interner = field(default_factory=Interner)
    relations: Interner = field(default_factory=Interner)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @classmethod
    def from_names(cls, entity_names: Sequence[str], relation_names: Sequence[str]) -> "Vocabulary":
        ents = Interner(entity_names)
        rels = Interner(relation_names)
        if len(ents) != len(entity_names) or len(rels) != len(relation_names):
            raise InputError("duplicate names in vocabulary")
        return cls(ents, rels)


def build_vocabulary(raw_triples: Iterable[tuple[str, str, str]]) -> Vocabulary:
    """Intern every head/tail as an entity and every relation, first-seen order.

    >>> v = build_vocabulary([("A", "isa", "B"), ("B", "isa", "C")])
    >>> v.entities.names, v.relations.names
    (['A', 'B', 'C'], ['isa'])
    """
    vocab = Vocabulary()
    for h, r, t in raw_triples:
        vocab.entities.add(h)
        vocab.relations.add(r)
        vocab.entities.add(t)
    return vocab


class TripleStore:
    """Ordered, deduplicated id-triples with O(1) containment.

    Triples are kept as an ``(n, 3)`` int64 array of ``(head, rel, tail)``
    rows. An optional split tag marks which split the store represents.
    """

    def __init__(self, triples: Iterable[Sequence[int]] = (), split: str | None = None):
        self.split = split
        self._list: list[Triple] = []
        self._index: set[Triple] = set()
        self.dropped_duplicates = 0
        for t in triples:
            self.add(Triple(int(t[0]), int(t[1]), int(t[2])))
        self._array: np.ndarray | None = None

    def add(self, t: Triple) -> bool:
        if t in self._index:
            self.dropped_duplicates += 1
            return False
        self._index.add(t)
        self._list.append(t)
        self._array = None
        return True

    def __len__(self) -> int:
        return len(self._list)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._list)

    def __getitem__(self, i: int) -> Triple:
        return self._list[i]

    def __contains__(self, t) -> bool:
        return tuple(t) in self._index

    @property
    def triples(self) -> list[Triple]:
        return self._list

    @property
    def array(self) -> np.ndarray:
        if self._array is None:
            if self._list:
                self._array = np.asarray(self._list, dtype=np.int64)
            else:
                self._array = np.zeros((0, 3), dtype=np.int64)
        return self._array

    def entities(self) -> set[int]:
        return {t.head for t in self._list} | {t.tail for t in self._list}

    def relations(self) -> set[int]:
        return {t.rel for t in self._list}

    def __repr__(self) -> str:
        return f"TripleStore(n={len(self)}, split={self.split!r})"


def encode_triples(
    raw: Iterable[tuple[str, str, str]], vocab: Vocabulary, split: str | None = None
) -> TripleStore:
    """Map string triples to ids, dropping repeats but keeping first-occurrence order."""
    store = TripleStore(split=split)
    for lineno, (h, r, t) in enumerate(raw, start=1):
        try:
            ids = Triple(vocab.entities[h], vocab.relations[r], vocab.entities[t])
        except KeyError as exc:
            raise InputError(f"line {lineno}: unknown name {exc.args[0]!r}") from None
        store.add(ids)
    if store.dropped_duplicates:
        logger.info("dropped %d duplicate triples", store.dropped_duplicates)
    return store


def decode_triples(store: TripleStore, vocab: Vocabulary) -> list[tuple[str, str, str]]:
    ent, rel = vocab.entities.names, vocab.relations.names
    return [(ent[h], rel[r], ent[t]) for h, r, t in store]


def contains(stores: TripleStore | Sequence[TripleStore], t: Sequence[int]) -> bool:
    """True iff ``t`` is in any of the given stores."""
    if isinstance(stores, TripleStore):
        stores = [stores]
    key = Triple(int(t[0]), int(t[1]), int(t[2]))
    return any(key in s for s in stores)


@dataclass
class SemanticLabels:
    """Per-entity semantic type and group. Every type belongs to one group."""

    types: dict[str, str] = field(default_factory=dict)
    groups: dict[str, str] = field(default_factory=dict)
    group_vocab: tuple[str, ...] = DEFAULT_GROUPS

    def add(self, entity: str, sem_type: str, group: str) -> None:
        if entity in self.types:
            raise InputError(f"entity {entity!r} labeled twice")
        prev = self.type_group().get(sem_type)
        if prev is not None and prev != group:
            raise InputError(f"semantic type {sem_type!r} mapped to both {prev} and {group}")
        if group not in self.group_vocab:
            self.group_vocab = self.group_vocab + (group,)
        self.types[entity] = sem_type
        self.groups[entity] = group
        self._type_group = None

    def type_group(self) -> dict[str, str]:
        cached = getattr(self, "_type_group", None)
        if cached is None:
            cached = {}
            for ent, sty in self.types.items():
                cached.setdefault(sty, self.groups[ent])
            self._type_group = cached
        return cached

    def __contains__(self, entity: str) -> bool:
        return entity in self.types

    def __len__(self) -> int:
        return len(self.types)

    def restrict(self, entities: Iterable[str]) -> "SemanticLabels":
        out = SemanticLabels(group_vocab=self.group_vocab)
        for e in entities:
            if e in self.types:
                out.types[e] = self.types[e]
                out.groups[e] = self.groups[e]
        return out


# --- TSV io -----------------------------------------------------------------


def read_triples_tsv(path: str | Path) -> list[tuple[str, str, str]]:
    """Read ``head<TAB>relation<TAB>tail`` lines; blank lines are skipped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise InputError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
            out.append((fields[0].strip(), fields[1].strip(), fields[2].strip()))
    return out


def write_triples_tsv(path: str | Path, triples: Iterable[tuple[str, str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in triples:
            fh.write(f"{h}\t{r}\t{t}\n")


def read_labels_tsv(path: str | Path, group_vocab: Sequence[str] = DEFAULT_GROUPS) -> SemanticLabels:
    labels = SemanticLabels(group_vocab=tuple(group_vocab))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = [f.strip() for f in line.split("\t")]
            if len(fields) != 3:
                raise InputError(f"{path}:{lineno}: expected entity, type, group")
            try:
                labels.add(*fields)
            except InputError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    return labels


def write_labels_tsv(path: str | Path, labels: SemanticLabels) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ent, sty in labels.types.items():
            fh.write(f"{ent}\t{sty}\t{labels.groups[ent]}\n")


def load_splits(
    train: str | Path, valid: str | Path | None = None, test: str | Path | None = None
) -> tuple[Vocabulary, dict[str, TripleStore]]:
    """Read split TSVs into one shared vocabulary (train names interned first)."""
    raw = {"train": read_triples_tsv(train)}
    if valid is not None:
        raw["valid"] = read_triples_tsv(valid)
    if test is not None:
        raw["test"] = read_triples_tsv(test)
    vocab = build_vocabulary(x for rows in raw.values() for x in rows)
    stores = {name: encode_triples(rows, vocab, split=name) for name, rows in raw.items()}
    return vocab, stores
