import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kgebench.core import build_vocabulary, encode_triples  # noqa: E402
from kgebench.splitter import ReciprocalMap, SplitSpec, pair_reciprocals, repair_unseen, split  # noqa: E402
from kgebench.synthetic import hierarchical_kg  # noqa: E402


def rrf_line(fields):
    return "|".join(fields) + "|\n"


def conso_row(cui, sab="SNOMEDCT_US", suppress="N"):
    f = [""] * 18
    f[0], f[1], f[11], f[14], f[16] = cui, "ENG", sab, f"term {cui}", suppress
    return rrf_line(f)


def rel_row(cui1, rel, cui2, rela="", sab="SNOMEDCT_US", suppress="N"):
    f = [""] * 16
    f[0], f[3], f[4], f[7], f[10], f[14] = cui1, rel, cui2, rela, sab, suppress
    return rrf_line(f)


def sty_row(cui, tui, sty):
    return rrf_line([cui, tui, "A1.2", sty, "AT0", ""])


SEMGROUPS = (
    "DISO|Disorders|T047|Disease or Syndrome\n"
    "DISO|Disorders|T184|Sign or Symptom\n"
    "ANAT|Anatomy|T023|Body Part, Organ, or Organ Component\n"
    "CHEM|Chemicals & Drugs|T121|Pharmacologic Substance\n"
    "CONC|Concepts & Ideas|T071|Entity\n"
)


def write_rrf_fixture(d: Path) -> dict:
    """Small RRF directory used by the ingest and prep tests."""
    conso = [
        conso_row("C1"),
        conso_row("C2"),
        conso_row("C3"),
        conso_row("C4"),
        conso_row("C5", sab="MSH"),
        conso_row("C6", suppress="O"),
        conso_row("C2"),
    ]
    rel = [
        rel_row("C1", "RB", "C2", "isa"),
        rel_row("C2", "RN", "C1", "inverse_isa"),
        rel_row("C3", "RO", "C1", "finding_site_of"),
        rel_row("C1", "RO", "C4", "associated_with"),  # C4 dropped by group filter
        rel_row("C1", "RB", "C2", "isa"),  # duplicate
        rel_row("C2", "RO", "C3", ""),  # generic label
        rel_row("C1", "RO", "C5", "isa"),  # C5 wrong source
        rel_row("C3", "RO", "C2", "isa", suppress="E"),
    ]
    sty = [
        sty_row("C1", "T047", "Disease or Syndrome"),
        sty_row("C2", "T184", "Sign or Symptom"),
        sty_row("C2", "T047", "Disease or Syndrome"),  # second type row ignored
        sty_row("C3", "T023", "Body Part, Organ, or Organ Component"),
        sty_row("C4", "T071", "Entity"),
    ]
    paths = {}
    for name, rows in (("MRCONSO.RRF", conso), ("MRREL.RRF", rel), ("MRSTY.RRF", sty)):
        p = d / name
        p.write_text("".join(rows), encoding="utf-8")
        paths[name] = p
    p = d / "SemGroups.txt"
    p.write_text(SEMGROUPS, encoding="utf-8")
    paths["SemGroups.txt"] = p
    return paths


# (CUI2, label, CUI1) per row, first occurrence order, C4 excluded
RRF_EXPECTED_TSV = "C2\tisa\tC1\nC1\tinverse_isa\tC2\nC1\tfinding_site_of\tC3\nC3\tRO\tC2\n"


@pytest.fixture
def rrf_dir(tmp_path):
    write_rrf_fixture(tmp_path)
    return tmp_path


def hier_splits(seed=0):
    """Criterion-5 KG, split 0.8/0.1/0.1 with reciprocal pairing and repair."""
    triples, labels, pairs = hierarchical_kg(seed)
    vocab = build_vocabulary(triples)
    store = encode_triples(triples, vocab)
    rmap = ReciprocalMap.from_names(pairs, vocab)
    tr, va, te = split(store, pair_reciprocals(store, rmap), SplitSpec((0.8, 0.1, 0.1), seed, rmap))
    tr, va, te, _ = repair_unseen(tr, va, te, rmap)
    return vocab, {"train": tr, "valid": va, "test": te}, labels, rmap


def random_table(cfg, ne, nr, seed):
    from kgebench.models import init

    table = init(cfg, ne, nr, seed)
    rng = np.random.default_rng(seed + 1000)
    # spread values beyond the init range so products are not tiny
    table.entity[:] = rng.normal(size=table.entity.shape)
    if cfg.kind.value != "RotatE":
        table.relation[:] = rng.normal(size=table.relation.shape)
    return table


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
