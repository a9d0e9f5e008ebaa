"""Readers for UMLS RRF tables and transitive-closure files.

Column defaults follow the 2019AB release layout:

* MRCONSO: CUI=0, SAB=11, SUPPRESS=16
* MRREL:   CUI1=0, REL=3, CUI2=4, RELA=7, SAB=10, SUPPRESS=14
* MRSTY:   CUI=0, TUI=1, STY=3

Every index can be overridden through :class:`RrfConfig`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .core import (
    DEFAULT_GROUPS,
    InputError,
    SemanticLabels,
    Triple,
    TripleStore,
    Vocabulary,
)

logger = logging.getLogger(__name__)

CONSO_COLUMNS = {"cui": 0, "sab": 11, "suppress": 16}
REL_COLUMNS = {"cui1": 0, "rel": 3, "cui2": 4, "rela": 7, "sab": 10, "suppress": 14}
STY_COLUMNS = {"cui": 0, "tui": 1, "sty": 3}


@dataclass
class RrfConfig:
    conso_columns: dict[str, int] = field(default_factory=lambda: dict(CONSO_COLUMNS))
    rel_columns: dict[str, int] = field(default_factory=lambda: dict(REL_COLUMNS))
    sty_columns: dict[str, int] = field(default_factory=lambda: dict(STY_COLUMNS))
    source: str = "SNOMEDCT_US"
    excluded_suppress: frozenset[str] = frozenset({"O", "E", "Y"})
    allowed_groups: frozenset[str] = frozenset(DEFAULT_GROUPS)
    excluded_types: frozenset[str] = frozenset()
    # which MRSTY field is the semantic-type code: "tui" or "sty"
    type_field: str = "tui"
    # REL describes CUI2 relative to CUI1, so rows become (CUI2, rel, CUI1)
    flip_direction: bool = False
    group_vocab: tuple[str, ...] = DEFAULT_GROUPS

    def __post_init__(self):
        for kind, cols in (
            ("MRCONSO", self.conso_columns),
            ("MRREL", self.rel_columns),
            ("MRSTY", self.sty_columns),
        ):
            if len(set(cols.values())) != len(cols):
                raise InputError(f"{kind} column indices must be distinct: {cols}")
        unknown = set(self.allowed_groups) - set(self.group_vocab)
        if unknown:
            raise InputError(f"allowed groups not in group vocabulary: {sorted(unknown)}")
        if self.type_field not in ("tui", "sty"):
            raise InputError(f"type_field must be 'tui' or 'sty', got {self.type_field!r}")


def _rows(path: str | Path, width: int) -> Iterator[tuple[int, list[str]]]:
    """Yield (line number, fields) for a pipe-delimited file with trailing pipe."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip()
            if not line:
                continue
            fields = line.split("|")
            if fields[-1] == "":
                fields.pop()
            if len(fields) < width:
                raise InputError(
                    f"{path}:{lineno}: expected at least {width} columns, found {len(fields)}"
                )
            yield lineno, fields


def parse_concepts(path: str | Path, cfg: RrfConfig) -> set[str]:
    """Active concept ids from MRCONSO restricted to ``cfg.source``."""
    c = cfg.conso_columns
    width = max(c.values()) + 1
    out = set()
    for _, f in _rows(path, width):
        if f[c["sab"]] != cfg.source or f[c["suppress"]] in cfg.excluded_suppress:
            continue
        out.add(f[c["cui"]])
    return out


def parse_relations(path: str | Path, cfg: RrfConfig, concepts: set[str]) -> list[tuple[str, str, str]]:
    """String triples from MRREL whose endpoints are both in ``concepts``.

    The label is RELA when present, otherwise REL.
    """
    c = cfg.rel_columns
    width = max(c.values()) + 1
    out = []
    for _, f in _rows(path, width):
        if f[c["sab"]] != cfg.source or f[c["suppress"]] in cfg.excluded_suppress:
            continue
        cui1, cui2 = f[c["cui1"]], f[c["cui2"]]
        if cui1 not in concepts or cui2 not in concepts:
            continue
        label = f[c["rela"]] or f[c["rel"]]
        if cfg.flip_direction:
            out.append((cui1, label, cui2))
        else:
            out.append((cui2, label, cui1))
    return out


def parse_semantics(
    path: str | Path,
    cfg: RrfConfig,
    group_map: dict[str, str],
    concepts: set[str] | None = None,
) -> SemanticLabels:
    """Semantic type/group per concept from MRSTY.

    Rows whose type is excluded or whose group is not allowed are not
    retained. For concepts with several retained rows the first one wins.
    When ``concepts`` is given it is pruned in place to the labeled set.
    """
    c = cfg.sty_columns
    width = max(c.values()) + 1
    labels = SemanticLabels(group_vocab=cfg.group_vocab)
    missing = set()
    multi = 0
    for lineno, f in _rows(path, width):
        cui = f[c["cui"]]
        if concepts is not None and cui not in concepts:
            continue
        sty = f[c[cfg.type_field]]
        if sty in cfg.excluded_types:
            continue
        group = group_map.get(sty)
        if group is None:
            missing.add(sty)
            continue
        if group not in cfg.allowed_groups:
            continue
        if cui in labels:
            multi += 1
            logger.warning("%s:%d: %s has several semantic types; keeping %s",
                           path, lineno, cui, labels.types[cui])
            continue
        labels.add(cui, sty, group)
    if missing:
        raise InputError(f"semantic types missing from group map: {sorted(missing)}")
    if multi:
        logger.warning("%d extra semantic-type rows ignored", multi)
    if concepts is not None:
        concepts.intersection_update(labels.types)
    return labels


def load_group_map(path: str | Path, type_field: str = "tui") -> dict[str, str]:
    """Read a Semantic Network ``SemGroups.txt`` (GROUP|Group name|TUI|Type name)."""
    key = 2 if type_field == "tui" else 3
    out = {}
    for lineno, f in _rows(path, 4):
        out[f[key]] = f[0]
    return out


def load_closure(path: str | Path, vocab: Vocabulary) -> TripleStore:
    """Encode closure triples against ``vocab``; rows with unknown names are skipped."""
    store = TripleStore(split="closure")
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = [x.strip() for x in line.split("\t")]
            if len(fields) != 3:
                skipped += 1
                continue
            h, r, t = fields
            ents, rels = vocab.entities, vocab.relations
            if h not in ents or t not in ents or r not in rels:
                skipped += 1
                continue
            store.add(Triple(ents[h], rels[r], ents[t]))
    store.skipped = skipped
    if skipped:
        logger.warning("closure: skipped %d rows with unknown names", skipped)
    return store
