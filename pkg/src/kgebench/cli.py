"""Command-line entry point: ``kgebench <command> [options]``.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .checkpoint import (
    MAGIC,
    Checkpoint,
    entity_features,
    export_embeddings,
    load_checkpoint,
    read_embeddings,
    save_checkpoint,
)
from .config import SCHEMA, RunConfig, read_config
from .core import (
    InputError,
    TripleStore,
    Vocabulary,
    build_vocabulary,
    decode_triples,
    encode_triples,
    load_splits,
    read_labels_tsv,
    read_triples_tsv,
    write_labels_tsv,
    write_triples_tsv,
)
from .evaluation import (
    FilterSet,
    categorize_all,
    format_report,
    link_prediction,
    relation_prediction,
    stratified_metrics,
)
from .ingest import RrfConfig, load_closure, load_group_map, parse_concepts, parse_relations, parse_semantics
from .models import ModelConfig
from .probe import (
    LABEL_KINDS,
    build_probe_dataset,
    format_probe_report,
    read_power_tasks,
    run_power_tasks,
)
from .splitter import (
    ReciprocalMap,
    SplitSpec,
    crossing_pairs,
    pair_reciprocals,
    read_reciprocal_pairs,
    repair_unseen,
    split,
    split_stats,
    unseen_counts,
)
from .trainer import NumericalError, train

logger = logging.getLogger("kgebench")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# --- helpers ----------------------------------------------------------------


def _resolve(args, keys: Sequence[str]) -> RunConfig:
    file_values = read_config(args.config) if getattr(args, "config", None) else {}
    flags = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    return RunConfig.resolve(file_values, flags)


def _echo(cfg: RunConfig, path: str | Path, argv: Sequence[str]) -> None:
    header = "# kgebench " + " ".join(argv) + "\n"
    Path(path).write_text(header + cfg.dump(), encoding="utf-8")


def _require(cfg: RunConfig, *keys: str) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise InputError("missing required setting(s): " + ", ".join(missing))


def _encode_with(vocab: Vocabulary, path: str, split_name: str) -> TripleStore:
    try:
        return encode_triples(read_triples_tsv(path), vocab, split=split_name)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def _checkpoint_vocab(ckpt: Checkpoint) -> Vocabulary:
    if not ckpt.entity_names:
        raise InputError("checkpoint carries no entity names")
    return Vocabulary.from_names(ckpt.entity_names, ckpt.relation_names)


def _load_embeddings(path: str, fmt: str) -> tuple[str, list[str], np.ndarray]:
    """(file name, entity names, feature matrix) from a checkpoint or an export."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        ckpt = load_checkpoint(path)
        return Path(path).name, list(ckpt.entity_names), entity_features(ckpt.table)
    names, vecs, _ = read_embeddings(path, fmt)
    return Path(path).name, names, vecs.astype(np.float64)


def _add_config_flags(p: argparse.ArgumentParser, keys: Sequence[str]) -> None:
    for key in keys:
        parser, _ = SCHEMA[key]
        flag = "--" + key.replace("_", "-")
        kind = parser if parser in (int, float) else str
        if key == "ratios":
            p.add_argument(flag, dest=key, type=SCHEMA[key][0], help="comma-separated train,valid,test fractions")
        else:
            p.add_argument(flag, dest=key, type=kind)


MODEL_KEYS = ("model", "dim", "margin", "p_norm", "adversarial_temperature", "regularization")
TRAIN_KEYS = ("learning_rate", "num_negative", "num_epoch", "batch_size", "eval_every", "eval_sample", "workers", "backend")
PROBE_KEYS = ("probe_dropout", "probe_train_fraction", "probe_epochs", "probe_learning_rate", "probe_batch_size")
PATH_KEYS = ("train", "valid", "test", "closure")


# --- commands ---------------------------------------------------------------


def cmd_prep(args, argv) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats = {}
    if args.tsv:
        raw = read_triples_tsv(args.tsv)
        seen, triples = set(), []
        for t in raw:
            if t not in seen:
                seen.add(t)
                triples.append(t)
        stats["duplicates_dropped"] = len(raw) - len(triples)
        labels = read_labels_tsv(args.labels) if args.labels else None
    else:
        for name in ("mrconso", "mrrel", "mrsty", "semgroups"):
            if not getattr(args, name):
                raise InputError(f"--{name} is required without --tsv")
        cfg = RrfConfig(
            source=args.source,
            allowed_groups=frozenset(args.groups.split(",")) if args.groups else RrfConfig().allowed_groups,
            excluded_types=frozenset(_read_lines(args.exclude_types)) if args.exclude_types else frozenset(),
            type_field=args.type_field,
            flip_direction=args.flip_direction,
        )
        concepts = parse_concepts(args.mrconso, cfg)
        stats["concepts_active"] = len(concepts)
        group_map = load_group_map(args.semgroups, cfg.type_field)
        labels = parse_semantics(args.mrsty, cfg, group_map, concepts)
        stats["concepts_labeled"] = len(concepts)
        raw = parse_relations(args.mrrel, cfg, concepts)
        seen, triples = set(), []
        for t in raw:
            if t not in seen:
                seen.add(t)
                triples.append(t)
        stats["duplicates_dropped"] = len(raw) - len(triples)
    write_triples_tsv(out / "triples.tsv", triples)
    vocab = build_vocabulary(triples)
    stats.update(triples=len(triples), entities=vocab.num_entities, relations=vocab.num_relations)
    if labels is not None:
        write_labels_tsv(out / "labels.tsv", labels.restrict(vocab.entities.names))
    (out / "prep_stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _echo(RunConfig.resolve(), out / "prep.config", argv)
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def _read_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]


def cmd_split(args, argv) -> int:
    cfg = _resolve(args, ("seed", "ratios", "reciprocals"))
    raw = read_triples_tsv(args.triples)
    vocab = build_vocabulary(raw)
    store = encode_triples(raw, vocab)
    pairs = read_reciprocal_pairs(cfg["reciprocals"]) if cfg["reciprocals"] else []
    rmap = ReciprocalMap.from_names(pairs, vocab)
    spec = SplitSpec(tuple(cfg["ratios"]), cfg.seed_for("split"), rmap)
    tr, va, te = split(store, pair_reciprocals(store, rmap), spec)
    tr, va, te, moved = repair_unseen(tr, va, te, rmap)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, s in (("train", tr), ("valid", va), ("test", te)):
        write_triples_tsv(out / f"{name}.tsv", decode_triples(s, vocab))
    stats = split_stats((vocab.num_entities, vocab.num_relations), tr, va, te, moved)
    stats += f"Reciprocal pairs across splits\t{crossing_pairs([tr, va, te], rmap)}\n"
    (out / "split_stats.tsv").write_text(stats, encoding="utf-8")
    _echo(cfg, out / "split.config", argv)
    sys.stdout.write(stats)
    return EXIT_OK


def cmd_train(args, argv) -> int:
    cfg = _resolve(args, ("seed",) + MODEL_KEYS + TRAIN_KEYS + PATH_KEYS)
    _require(cfg, "train")
    model_cfg = cfg.model_config()
    train_cfg = cfg.train_config()
    backend = None if cfg["backend"] == "auto" else kernels.get_backend(cfg["backend"])

    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        vocab = _checkpoint_vocab(resume)
        stores = {"train": _encode_with(vocab, cfg["train"], "train")}
        for key in ("valid", "test"):
            if cfg[key]:
                stores[key] = _encode_with(vocab, cfg[key], key)
    else:
        vocab, stores = load_splits(cfg["train"], cfg["valid"], cfg["test"])
    closure = load_closure(cfg["closure"], vocab) if cfg["closure"] else None

    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(out.suffix + ".log")
    with open(log_path, "w", encoding="utf-8") as log:
        def on_epoch(rec):
            # NaN marks "not measured"; write it as null to keep the log valid JSON
            clean = {k: (None if isinstance(v, float) and v != v else v) for k, v in rec.items()}
            log.write(json.dumps(clean) + "\n")

        ckpt = train(stores, train_cfg, model_cfg, vocab=vocab, extra_filter=closure,
                     resume=resume, on_epoch=on_epoch, backend=backend)
    save_checkpoint(out, ckpt)
    _echo(cfg, out.with_suffix(out.suffix + ".config"), argv)
    print(json.dumps({"checkpoint": str(out), "epoch": ckpt.epoch, "valid_mrr": ckpt.valid_mrr}))
    return EXIT_OK


def evaluate_checkpoint(ckpt: Checkpoint, cfg: RunConfig, split_name: str, target: str,
                        labels_path: str | None = None, strata: bool = False,
                        relations: Sequence[str] = ()):
    """Rows for ``format_report`` plus the raw outcomes, keyed by target."""
    vocab = _checkpoint_vocab(ckpt)
    stores = {k: _encode_with(vocab, cfg[k], k) for k in ("train", "valid", "test") if cfg[k]}
    if split_name not in stores:
        raise InputError(f"no {split_name} split given")
    filt = FilterSet(stores.values())
    if cfg["closure"]:
        filt.update(load_closure(cfg["closure"], vocab))
    model_cfg = ckpt_model_config(ckpt)
    test = stores[split_name]
    workers = int(cfg["workers"])
    if target == "relation":
        outcomes = {"relation": relation_prediction(test, ckpt.table, model_cfg, filt, workers)}
    else:
        outcomes = {}
        slots = ("head", "tail", "both") if target == "both" else (target,)
        for slot in slots:
            outcomes[slot] = link_prediction(test, ckpt.table, model_cfg, filt, slot, workers)
    categories = None
    if strata:
        if not labels_path:
            raise InputError("--strata categories needs --labels")
        labels = read_labels_tsv(labels_path)
        categories = categorize_all(list(stores.values()), labels, vocab)
    named = {}
    for name in relations:
        if name not in vocab.relations:
            raise InputError(f"unknown relation {name!r}")
        named[name] = vocab.relations[name]
    rows = []
    for slot, outcome in outcomes.items():
        rows.append((model_cfg.kind.value, slot, "all", outcome.metrics))
        for group, m in stratified_metrics(outcome, categories, named).items():
            rows.append((model_cfg.kind.value, slot, group, m))
    return rows, outcomes, vocab


def ckpt_model_config(ckpt: Checkpoint) -> ModelConfig:
    meta = dict(ckpt.metadata.get("model", {}))
    meta["kind"] = ckpt.table.kind
    meta["dim"] = ckpt.table.dim
    return ModelConfig(**meta)


def cmd_eval(args, argv) -> int:
    cfg = _resolve(args, PATH_KEYS + ("labels", "workers"))
    ckpt = load_checkpoint(args.checkpoint)
    relations = [r for r in (args.relations or "").split(",") if r]
    rows, outcomes, vocab = evaluate_checkpoint(
        ckpt, cfg, args.split, args.target, cfg["labels"], args.strata == "categories", relations
    )
    report = format_report(rows)
    if args.report:
        Path(args.report).write_text(report, encoding="utf-8")
        _echo(cfg, Path(args.report).with_suffix(".config"), argv)
    else:
        sys.stdout.write(report)
    if args.summary:
        summary = {slot: o.metrics for slot, o in outcomes.items()}
        Path(args.summary).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.dump_ranks:
        with open(args.dump_ranks, "w", encoding="utf-8") as fh:
            fh.write("head\trelation\ttail\tslot\trank\tpool\n")
            # the "both" outcome already holds the head and tail queries
            o = outcomes.get("both") or next(iter(outcomes.values()))
            for (h, r, t), rk, pl in zip(o.triples, o.ranks, o.pools):
                for s, a, b in zip(o.slots, rk, pl):
                    fh.write(f"{vocab.entities.name(h)}\t{vocab.relations.name(r)}\t"
                             f"{vocab.entities.name(t)}\t{s}\t{a}\t{b}\n")
    return EXIT_OK


def cmd_probe(args, argv) -> int:
    cfg = _resolve(args, ("seed", "labels") + PROBE_KEYS)
    _require(cfg, "labels")
    labels = read_labels_tsv(cfg["labels"])
    probe_cfg = cfg.probe_config()
    loaded = [_load_embeddings(p, args.format) for p in args.inputs]
    data = build_probe_dataset([(names, mat) for _, names, mat in loaded], labels, probe_cfg)
    kinds = LABEL_KINDS if args.label_kind == "both" else (args.label_kind,)
    acc = [(name, k, data.accuracy(i, k, probe_cfg)) for i, (name, _, _) in enumerate(loaded) for k in kinds]
    report = format_probe_report(acc)
    _write_or_print(report, args.report)
    if args.report:
        _echo(cfg, Path(args.report).with_suffix(".config"), argv)
    return EXIT_OK


def cmd_power(args, argv) -> int:
    cfg = _resolve(args, ("seed", "labels", "power_samples", "power_percentile", "workers"))
    _require(cfg, "labels")
    labels = read_labels_tsv(cfg["labels"])
    rows = []
    for path in args.inputs:
        name, names, mat = _load_embeddings(path, args.format)
        tasks = read_power_tasks(args.tasks, labels, names, cfg["power_samples"], cfg["power_percentile"])
        results = run_power_tasks((names, mat), tasks, cfg.seed_for("power"), int(cfg["workers"]))
        rows += [(name, t.label, r.power, r.threshold) for t, r in zip(tasks, results)]
    lines = ["model\ttask\tpower\tthreshold"] + [f"{m}\t{t}\t{p:.6f}\t{thr:.6f}" for m, t, p, thr in rows]
    _write_or_print("\n".join(lines) + "\n", args.report)
    if args.report:
        _echo(cfg, Path(args.report).with_suffix(".config"), argv)
    return EXIT_OK


def cmd_analyze_relations(args, argv) -> int:
    cfg = _resolve(args, PATH_KEYS[:3] + ("labels",))
    _require(cfg, "train", "labels")
    vocab, stores = load_splits(cfg["train"], cfg["valid"], cfg["test"])
    labels = read_labels_tsv(cfg["labels"])
    cats = categorize_all(list(stores.values()), labels, vocab)
    lines = ["relation\tcategory\thead_groups\ttail_groups\t" + "\t".join(stores)]
    for rid, cat in cats.items():
        counts = [str(int(np.count_nonzero(s.array[:, 1] == rid))) if len(s) else "0" for s in stores.values()]
        lines.append("\t".join([vocab.relations.name(rid), cat.label, ",".join(sorted(cat.head_groups)),
                                ",".join(sorted(cat.tail_groups))] + counts))
    for name, s in stores.items():
        if name != "train":
            ue, ur = unseen_counts(stores["train"], s)
            logger.info("%s: %d unseen entities, %d unseen relations", name, ue, ur)
    _write_or_print("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_export(args, argv) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    export_embeddings(args.out, ckpt, args.format)
    return EXIT_OK


def _write_or_print(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kgebench", description="Knowledge-graph embedding benchmark toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prep", help="build a triple TSV and labels from RRF files or a TSV")
    s.add_argument("--tsv", help="passthrough mode: deduplicate an existing triple TSV")
    s.add_argument("--labels", help="labels TSV to carry along in passthrough mode")
    s.add_argument("--mrconso")
    s.add_argument("--mrrel")
    s.add_argument("--mrsty")
    s.add_argument("--semgroups", help="type to group map (SemGroups.txt layout)")
    s.add_argument("--source", default="SNOMEDCT_US")
    s.add_argument("--groups", help="comma-separated allowed semantic groups")
    s.add_argument("--exclude-types", help="file with one excluded semantic type per line")
    s.add_argument("--type-field", choices=("tui", "sty"), default="tui")
    s.add_argument("--flip-direction", action="store_true", help="emit (CUI1, rel, CUI2)")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_prep)

    s = sub.add_parser("split", help="reciprocal-aware train/valid/test split")
    s.add_argument("--config")
    s.add_argument("--triples", required=True)
    s.add_argument("--out-dir", required=True)
    _add_config_flags(s, ("seed", "ratios", "reciprocals"))
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train a model and save the best checkpoint")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="JSON-lines training log (default <out>.log)")
    s.add_argument("--resume", help="checkpoint to continue from")
    _add_config_flags(s, ("seed",) + MODEL_KEYS + TRAIN_KEYS + PATH_KEYS)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="filtered ranking metrics for a checkpoint")
    s.add_argument("--config")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", choices=("valid", "test"), default="test")
    s.add_argument("--target", choices=("head", "tail", "both", "relation"), default="both")
    s.add_argument("--strata", choices=("none", "categories"), default="none")
    s.add_argument("--relations", help="comma-separated relation names reported separately")
    s.add_argument("--report", help="TSV report path (default stdout)")
    s.add_argument("--summary", help="JSON summary of aggregate metrics")
    s.add_argument("--dump-ranks", help="per-query rank TSV")
    _add_config_flags(s, PATH_KEYS + ("labels", "workers"))
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("probe", help="linear semantic-type/group probes")
    s.add_argument("--config")
    s.add_argument("inputs", nargs="+", help="checkpoints or exported embedding files")
    s.add_argument("--format", choices=("tsv", "binary"), default="tsv", help="format of exported inputs")
    s.add_argument("--label-kind", choices=LABEL_KINDS + ("both",), default="both")
    s.add_argument("--report")
    _add_config_flags(s, ("seed", "labels") + PROBE_KEYS)
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("power", help="bootstrap cosine-similarity power per relationship")
    s.add_argument("--config")
    s.add_argument("inputs", nargs="+", help="checkpoints or exported embedding files")
    s.add_argument("--tasks", required=True, help="TSV: head, tail, relationship, head category, tail category")
    s.add_argument("--format", choices=("tsv", "binary"), default="tsv")
    s.add_argument("--report")
    _add_config_flags(s, ("seed", "labels", "power_samples", "power_percentile", "workers"))
    s.set_defaults(func=cmd_power)

    s = sub.add_parser("analyze-relations", help="cardinality/homogeneity category per relation")
    s.add_argument("--config")
    s.add_argument("--out")
    _add_config_flags(s, PATH_KEYS[:3] + ("labels",))
    s.set_defaults(func=cmd_analyze_relations)

    s = sub.add_parser("export", help="write entity embeddings for external tools")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--format", choices=("tsv", "binary"), default="tsv")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except NumericalError as exc:
        print(f"kgebench: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, ValueError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"kgebench: error: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
