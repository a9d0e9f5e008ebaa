import json
from pathlib import Path

import numpy as np
import pytest
from conftest import RRF_EXPECTED_TSV

from kgebench.checkpoint import load_checkpoint
from kgebench.cli import ckpt_model_config, main
from kgebench.core import Vocabulary, encode_triples, read_triples_tsv, write_labels_tsv, write_triples_tsv
from kgebench.evaluation import FilterSet, link_prediction
from kgebench.synthetic import hierarchical_kg

TOY_FLAGS = ["--model", "TransE", "--dim", "8", "--margin", "2", "--learning-rate", "0.05",
             "--num-negative", "2", "--num-epoch", "40", "--batch-size", "2", "--eval-every", "10"]


@pytest.fixture
def toy(tmp_path):
    """Three-entity chain whose valid triple is exhaustively rankable."""
    (tmp_path / "train.tsv").write_text("a\tr\tb\nb\tr\tc\n")
    (tmp_path / "valid.tsv").write_text("a\tr\tb\n")
    (tmp_path / "test.tsv").write_text("b\tr\tc\n")
    return tmp_path


def _paths(d):
    return ["--train", str(d / "train.tsv"), "--valid", str(d / "valid.tsv"), "--test", str(d / "test.tsv")]


@pytest.fixture
def hier(tmp_path):
    triples, labels, pairs = hierarchical_kg(0, per_group=13)
    write_triples_tsv(tmp_path / "triples.tsv", triples)
    write_labels_tsv(tmp_path / "labels.tsv", labels)
    (tmp_path / "recip.tsv").write_text("".join(f"{a}\t{b}\n" for a, b in pairs))
    out = tmp_path / "split"
    assert main(["split", "--triples", str(tmp_path / "triples.tsv"), "--out-dir", str(out),
                 "--reciprocals", str(tmp_path / "recip.tsv"), "--seed", "0"]) == 0
    return tmp_path


# --- prep -------------------------------------------------------------------


def test_prep_rrf_golden(rrf_dir, tmp_path):
    out = tmp_path / "prep"
    code = main(["prep", "--mrconso", str(rrf_dir / "MRCONSO.RRF"), "--mrrel", str(rrf_dir / "MRREL.RRF"),
                 "--mrsty", str(rrf_dir / "MRSTY.RRF"), "--semgroups", str(rrf_dir / "SemGroups.txt"),
                 "--groups", "DISO,ANAT,CHEM", "--out-dir", str(out)])
    assert code == 0
    assert (out / "triples.tsv").read_bytes() == RRF_EXPECTED_TSV.encode()
    assert (out / "prep.config").read_text().startswith("# kgebench prep ")
    labels = (out / "labels.tsv").read_text()
    assert "C4" not in labels and "C2\tT184" in labels


def test_prep_missing_file_names_path(rrf_dir, tmp_path, capsys):
    missing = rrf_dir / "NOPE.RRF"
    code = main(["prep", "--mrconso", str(missing), "--mrrel", str(rrf_dir / "MRREL.RRF"),
                 "--mrsty", str(rrf_dir / "MRSTY.RRF"), "--semgroups", str(rrf_dir / "SemGroups.txt"),
                 "--out-dir", str(tmp_path / "o")])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_prep_tsv_passthrough_dedups(tmp_path):
    src = tmp_path / "in.tsv"
    src.write_text("a\tr\tb\nb\tr\tc\na\tr\tb\n")
    assert main(["prep", "--tsv", str(src), "--out-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "triples.tsv").read_text() == "a\tr\tb\nb\tr\tc\n"
    assert json.loads((tmp_path / "o" / "prep_stats.json").read_text())["duplicates_dropped"] == 1


def test_usage_errors_exit_2(capsys):
    assert main([]) == 2
    assert main(["split", "--bogus"]) == 2


# --- split ------------------------------------------------------------------


def test_split_deterministic_and_clean(hier, tmp_path):
    again = tmp_path / "again"
    assert main(["split", "--triples", str(hier / "triples.tsv"), "--out-dir", str(again),
                 "--reciprocals", str(hier / "recip.tsv"), "--seed", "0"]) == 0
    for name in ("train.tsv", "valid.tsv", "test.tsv", "split_stats.tsv"):
        assert (hier / "split" / name).read_bytes() == (again / name).read_bytes()
    stats = (again / "split_stats.tsv").read_text()
    assert "Reciprocal pairs across splits\t0" in stats
    train = read_triples_tsv(again / "train.tsv")
    ents = {x for h, _, t in train for x in (h, t)}
    for name in ("valid.tsv", "test.tsv"):
        assert all(h in ents and t in ents for h, _, t in read_triples_tsv(again / name))
    cfg = (again / "split.config").read_text()
    assert "seed = 0" in cfg and "ratios = 0.8,0.1,0.1" in cfg


# --- train ------------------------------------------------------------------


def test_train_toy_reaches_mrr_one(toy):
    ck = toy / "m.ckpt"
    assert main(["train", *_paths(toy), *TOY_FLAGS, "--out", str(ck)]) == 0
    assert load_checkpoint(ck).valid_mrr == 1.0
    assert (toy / "m.ckpt.config").exists()
    log = [json.loads(x) for x in (toy / "m.ckpt.log").read_text().splitlines()]
    assert log[0]["epoch"] == 0 and log[0]["loss"] is None
    assert [r["epoch"] for r in log[1:]] == list(range(1, 41))


def test_train_resume_continues_numbering(toy):
    first, second = toy / "a.ckpt", toy / "b.ckpt"
    assert main(["train", *_paths(toy), *TOY_FLAGS, "--out", str(first)]) == 0
    flags = TOY_FLAGS[:-5] + ["5", "--batch-size", "2", "--eval-every", "5"]
    assert main(["train", *_paths(toy), *flags, "--resume", str(first), "--out", str(second)]) == 0
    log = [json.loads(x) for x in (toy / "b.ckpt.log").read_text().splitlines()]
    start = load_checkpoint(first).epoch
    assert [r["epoch"] for r in log if r["loss"] is not None] == list(range(start + 1, start + 6))


def test_train_invalid_kind_exit_2(toy, capsys):
    code = main(["train", *_paths(toy), "--model", "HolE", "--out", str(toy / "x.ckpt")])
    assert code == 2
    err = capsys.readouterr().err
    for kind in ("TransE", "DistMult", "ComplEx", "SimplE", "RotatE"):
        assert kind in err


def test_train_missing_input_exit_2(toy, capsys):
    assert main(["train", "--train", str(toy / "none.tsv"), "--out", str(toy / "x.ckpt")]) == 2
    assert "none.tsv" in capsys.readouterr().err


def test_train_numerical_failure_exit_3(toy, capsys):
    flags = ["--model", "DistMult", "--dim", "8", "--learning-rate", "1e12", "--num-epoch", "50",
             "--batch-size", "2", "--num-negative", "2"]
    assert main(["train", *_paths(toy), *flags, "--out", str(toy / "x.ckpt")]) == 3
    assert "epoch" in capsys.readouterr().err


# --- eval / export / probe / power ------------------------------------------


@pytest.fixture
def trained(hier):
    d = hier / "split"
    ck = hier / "m.ckpt"
    assert main(["train", *_paths(d), "--model", "ComplEx", "--dim", "8", "--learning-rate", "0.05",
                 "--num-negative", "4", "--num-epoch", "3", "--batch-size", "64", "--eval-every", "3",
                 "--out", str(ck)]) == 0
    return hier, d, ck


def test_eval_matches_library(trained):
    hier, d, ck = trained
    summary = hier / "summary.json"
    report = hier / "report.tsv"
    ranks = hier / "ranks.tsv"
    assert main(["eval", "--checkpoint", str(ck), *_paths(d), "--summary", str(summary),
                 "--report", str(report), "--dump-ranks", str(ranks)]) == 0
    got = json.loads(summary.read_text())
    assert set(got) == {"head", "tail", "both"}

    ckpt = load_checkpoint(ck)
    vocab = Vocabulary.from_names(ckpt.entity_names, ckpt.relation_names)
    stores = [encode_triples(read_triples_tsv(d / f"{s}.tsv"), vocab) for s in ("train", "valid", "test")]
    lib = link_prediction(stores[2], ckpt.table, ckpt_model_config(ckpt), FilterSet(stores), "both")
    assert got["both"] == lib.metrics
    rows = ranks.read_text().splitlines()
    assert rows[0] == "head\trelation\ttail\tslot\trank\tpool"
    assert len(rows) == 1 + 2 * len(stores[2])
    assert report.read_text().count("\tall\t") == 3


def test_eval_relation_and_strata(trained, capsys):
    hier, d, ck = trained
    assert main(["eval", "--checkpoint", str(ck), *_paths(d), "--target", "relation",
                 "--strata", "categories", "--labels", str(hier / "labels.tsv"), "--relations", "isa"]) == 0
    out = capsys.readouterr().out
    groups = {line.split("\t")[2] for line in out.strip().splitlines()[1:]}
    assert {"all", "isa", "M-M-hom", "M-M"} <= groups
    assert main(["eval", "--checkpoint", str(ck), *_paths(d), "--strata", "categories"]) == 2


def test_export_and_probe(trained, tmp_path, capsys):
    hier, _, ck = trained
    for fmt in ("tsv", "binary"):
        assert main(["export", "--checkpoint", str(ck), "--format", fmt, "--out", str(tmp_path / f"e.{fmt}")]) == 0
    flags = ["--labels", str(hier / "labels.tsv"), "--probe-epochs", "5"]
    assert main(["probe", str(ck), *flags]) == 0
    from_ckpt = capsys.readouterr().out.splitlines()
    assert main(["probe", str(tmp_path / "e.binary"), "--format", "binary", *flags]) == 0
    from_bin = capsys.readouterr().out.splitlines()
    assert from_ckpt[0] == "model\tlabel_kind\taccuracy" and len(from_ckpt) == 3
    assert [x.split("\t")[1:] for x in from_ckpt] == [x.split("\t")[1:] for x in from_bin]


def test_power_command(trained, capsys):
    hier, d, ck = trained
    train = read_triples_tsv(d / "train.tsv")
    labels = dict(line.split("\t")[::2] for line in (hier / "labels.tsv").read_text().splitlines())
    tasks = hier / "tasks.tsv"
    rows = [f"{h}\t{t}\t{r}\t{labels[h]}\t{labels[t]}\n" for h, r, t in train if r in ("isa", "causative_agent_of")]
    tasks.write_text("".join(rows))
    assert main(["power", str(ck), "--tasks", str(tasks), "--labels", str(hier / "labels.tsv"),
                 "--power-samples", "1000"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "model\ttask\tpower\tthreshold"
    assert {x.split("\t")[1] for x in lines[1:]} == {"isa", "causative_agent_of"}
    for x in lines[1:]:
        assert 0.0 <= float(x.split("\t")[2]) <= 1.0


def test_analyze_relations(hier, tmp_path):
    d = hier / "split"
    out = tmp_path / "rel.tsv"
    assert main(["analyze-relations", *_paths(d), "--labels", str(hier / "labels.tsv"), "--out", str(out)]) == 0
    rows = {r.split("\t")[0]: r.split("\t") for r in out.read_text().strip().splitlines()[1:]}
    assert len(rows) == 6
    assert rows["isa"][1].endswith("-hom")
    assert not rows["causative_agent_of"][1].endswith("-hom")
    total = sum(int(x) for r in rows.values() for x in r[4:])
    assert total == len(read_triples_tsv(hier / "triples.tsv"))
