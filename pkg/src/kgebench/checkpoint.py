"""Checkpoint files and embedding export.

Checkpoint layout, all integers and floats little-endian::

    offset  size  field
    0       8     magic b"KGEBCKPT"
    8       2     format version (uint16, currently 1)
    10      1     model kind code (uint8: 0 TransE, 1 DistMult, 2 ComplEx, 3 SimplE, 4 RotatE)
    11      1     reserved, zero
    12      4     dim (uint32)
    16      4     relation row width (uint32)
    20      4     number of entities (uint32)
    24      4     number of relations (uint32)
    28      4     epoch (uint32)
    32      8     validation MRR (float64, NaN when never evaluated)
    40      8     metadata length M (uint64)
    48      M     metadata, UTF-8 JSON with sorted keys
    ..      8     names length N (uint64)
    ..      N     UTF-8 entity names then relation names, one per line
    ..            entity parameters, float32, row-major (entities x dim)
    ..            relation parameters, float32, row-major (relations x width)

Export formats:

* ``tsv``: first line ``<count> <dim>`` (plus `` complex`` for ComplEx and
  RotatE), then ``name v1 ... vd`` per entity, space separated.
* ``binary``: the same header line, then per entity the name, one space,
  ``dim`` little-endian float32 values and a newline (word2vec binary).

Complex models are exported interleaved ``re0 im0 re1 im1 ...``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .core import InputError
from .models import EmbeddingTable, ModelKind

MAGIC = b"KGEBCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sHBBIIIIId")


@dataclass
class Checkpoint:
    table: EmbeddingTable
    epoch: int = 0
    valid_mrr: float = float("nan")
    metadata: dict[str, Any] = field(default_factory=dict)
    entity_names: list[str] = field(default_factory=list)
    relation_names: list[str] = field(default_factory=list)
    history: list[dict[str, Any]] = field(default_factory=list, compare=False)
    # table at the end of training, which may differ from the best one
    last_table: EmbeddingTable | None = field(default=None, compare=False, repr=False)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    tab = ckpt.table
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode("utf-8")
    names = "".join(n + "\n" for n in ckpt.entity_names + ckpt.relation_names).encode("utf-8")
    header = _HEADER.pack(
        MAGIC, VERSION, tab.kind.code, 0, tab.dim, tab.relation.shape[1],
        tab.num_entities, tab.num_relations, ckpt.epoch, ckpt.valid_mrr,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<Q", len(names)))
        fh.write(names)
        fh.write(np.ascontiguousarray(tab.entity, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(tab.relation, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if len(data) < _HEADER.size or data[:8] != MAGIC:
        raise InputError(f"{path} is not a checkpoint file")
    magic, version, code, _, dim, rdim, ne, nr, epoch, mrr = _HEADER.unpack_from(data)
    if version != VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    pos = _HEADER.size
    (mlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    meta = json.loads(data[pos : pos + mlen].decode("utf-8")) if mlen else {}
    pos += mlen
    (nlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    names = data[pos : pos + nlen].decode("utf-8").split("\n")[:-1] if nlen else []
    pos += nlen
    ent = np.frombuffer(data, dtype="<f4", count=ne * dim, offset=pos).reshape(ne, dim)
    pos += ne * dim * 4
    rel = np.frombuffer(data, dtype="<f4", count=nr * rdim, offset=pos).reshape(nr, rdim)
    if names and len(names) != ne + nr:
        raise InputError(f"{path}: name block has {len(names)} names, expected {ne + nr}")
    table = EmbeddingTable(ModelKind.from_code(code), ent.astype(np.float64), rel.astype(np.float64))
    return Checkpoint(table, epoch, mrr, meta, names[:ne], names[ne:])


def entity_features(table: EmbeddingTable) -> np.ndarray:
    """Entity rows in export layout: complex models interleave (re, im)."""
    ent = table.entity
    if table.kind.complex_valued:
        k = ent.shape[1] // 2
        out = np.empty_like(ent)
        out[:, 0::2] = ent[:, :k]
        out[:, 1::2] = ent[:, k:]
        return out
    return ent


def export_embeddings(path: str | Path, ckpt: Checkpoint, fmt: str = "tsv") -> None:
    feats = entity_features(ckpt.table)
    names = ckpt.entity_names or [str(i) for i in range(len(feats))]
    header = f"{len(feats)} {feats.shape[1]}"
    if ckpt.table.kind.complex_valued:
        header += " complex"
    if fmt == "tsv":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header + "\n")
            for name, row in zip(names, feats.astype(np.float32)):
                fh.write(name + " " + " ".join(repr(float(x)) for x in row) + "\n")
    elif fmt == "binary":
        with open(path, "wb") as fh:
            fh.write((header + "\n").encode("utf-8"))
            for name, row in zip(names, feats):
                fh.write(name.encode("utf-8") + b" ")
                fh.write(np.asarray(row, dtype="<f4").tobytes())
                fh.write(b"\n")
    else:
        raise InputError(f"unknown export format {fmt!r}; use tsv or binary")


def read_embeddings(path: str | Path, fmt: str = "tsv") -> tuple[list[str], np.ndarray, bool]:
    """Read an exported file. Returns names, float32 matrix, complex flag."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("utf-8").split()
        count, dim = int(header[0]), int(header[1])
        is_complex = len(header) > 2 and header[2] == "complex"
        body = fh.read()
    names: list[str] = []
    vecs = np.empty((count, dim), dtype=np.float32)
    if fmt == "tsv":
        for i, line in enumerate(body.decode("utf-8").splitlines()[:count]):
            parts = line.split(" ")
            names.append(parts[0])
            vecs[i] = np.array(parts[1:], dtype=np.float32)
    elif fmt == "binary":
        pos = 0
        for i in range(count):
            sp = body.index(b" ", pos)
            names.append(body[pos:sp].decode("utf-8"))
            vecs[i] = np.frombuffer(body, dtype="<f4", count=dim, offset=sp + 1)
            pos = sp + 1 + 4 * dim + 1
    else:
        raise InputError(f"unknown export format {fmt!r}; use tsv or binary")
    if len(names) != count:
        raise InputError(f"{path}: header promises {count} rows, found {len(names)}")
    return names, vecs, is_complex
