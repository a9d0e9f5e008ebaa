"""Scoring functions and closed-form gradients for the five embedding models.

Every model stores ``dim`` real numbers per entity. Complex-valued models
(ComplEx, RotatE) keep the real parts in the first half of a row and the
imaginary parts in the second half. SimplE keeps the head-role vector in
the first half and the tail-role vector in the second; its relation rows
hold the forward vector followed by the inverse vector. RotatE relation
rows hold ``dim / 2`` phases.

The row-level functions (:func:`score_rows`, :func:`grad_rows`) broadcast
over any leading axes, so the same arithmetic serves single triples,
candidate sweeps and training batches.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


class ModelKind(str, enum.Enum):
    TRANSE = "TransE"
    DISTMULT = "DistMult"
    COMPLEX = "ComplEx"
    SIMPLE = "SimplE"
    ROTATE = "RotatE"

    @classmethod
    def parse(cls, name: "str | ModelKind") -> "ModelKind":
        if isinstance(name, cls):
            return name
        for kind in cls:
            if kind.value.lower() == str(name).lower():
                return kind
        valid = ", ".join(k.value for k in cls)
        raise ValueError(f"unknown model kind {name!r}; valid kinds: {valid}")

    @property
    def code(self) -> int:
        return list(ModelKind).index(self)

    @classmethod
    def from_code(cls, code: int) -> "ModelKind":
        return list(cls)[code]

    @property
    def translational(self) -> bool:
        return self in (ModelKind.TRANSE, ModelKind.ROTATE)

    @property
    def complex_valued(self) -> bool:
        return self in (ModelKind.COMPLEX, ModelKind.ROTATE)


@dataclass
class ModelConfig:
    kind: ModelKind = ModelKind.TRANSE
    dim: int = 512
    margin: float = 6.0
    p_norm: int = 1
    adversarial_temperature: float = 1.0
    regularization: float = 0.0

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind)
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.kind in (ModelKind.COMPLEX, ModelKind.ROTATE, ModelKind.SIMPLE) and self.dim % 2:
            raise ValueError(f"{self.kind.value} needs an even dim, got {self.dim}")
        if self.kind.translational and not self.margin > 0:
            raise ValueError(f"{self.kind.value} needs margin > 0, got {self.margin}")
        if self.p_norm not in (1, 2):
            raise ValueError(f"p_norm must be 1 or 2, got {self.p_norm}")
        if self.adversarial_temperature < 0 or self.regularization < 0:
            raise ValueError("adversarial temperature and regularization must be >= 0")

    @property
    def rel_dim(self) -> int:
        return self.dim // 2 if self.kind is ModelKind.ROTATE else self.dim


@dataclass
class EmbeddingTable:
    kind: ModelKind
    entity: np.ndarray  # (num_entities, dim) float64
    relation: np.ndarray  # (num_relations, rel_dim) float64

    @property
    def num_entities(self) -> int:
        return self.entity.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relation.shape[0]

    @property
    def dim(self) -> int:
        return self.entity.shape[1]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.kind, self.entity.copy(), self.relation.copy())


def init(cfg: ModelConfig, num_entities: int, num_relations: int, seed: int) -> EmbeddingTable:
    """Uniform init in [-6/sqrt(dim), 6/sqrt(dim)]; RotatE phases uniform in [-pi, pi)."""
    if num_entities <= 0 or num_relations <= 0:
        raise ValueError("need at least one entity and one relation")
    rng = np.random.default_rng(seed)
    bound = 6.0 / math.sqrt(cfg.dim)
    ent = rng.uniform(-bound, bound, size=(num_entities, cfg.dim))
    if cfg.kind is ModelKind.ROTATE:
        rel = rng.uniform(-math.pi, math.pi, size=(num_relations, cfg.rel_dim))
    else:
        rel = rng.uniform(-bound, bound, size=(num_relations, cfg.rel_dim))
    return EmbeddingTable(cfg.kind, ent, rel)


def wrap_phase(theta: np.ndarray) -> np.ndarray:
    """Map phases into [-pi, pi)."""
    return (theta + np.pi) % (2 * np.pi) - np.pi


# --- vector-level scores ----------------------------------------------------


def score_transe(e_h, w_r, e_t, margin: float, p: int = 1):
    d = e_h + w_r - e_t
    if p == 1:
        return margin - np.abs(d).sum(axis=-1)
    return margin - np.sqrt((d * d).sum(axis=-1))


def score_distmult(e_h, w_r, e_t):
    # h * t first so that swapping h and t is bitwise symmetric
    return (e_h * e_t * w_r).sum(axis=-1)


def score_complex(e_h, w_r, e_t):
    """Re(sum h * r * conj(t)) for complex arrays."""
    return np.real((e_h * w_r * np.conj(e_t)).sum(axis=-1))


def score_simple(he_h, te_h, he_t, te_t, w_r, w_r_inv):
    return 0.5 * ((he_h * w_r * te_t).sum(axis=-1) + (he_t * w_r_inv * te_h).sum(axis=-1))


def score_rotate(e_h, theta_r, e_t, margin: float):
    """margin - sum |h * exp(i theta) - t| for complex h, t."""
    return margin - np.abs(e_h * np.exp(1j * theta_r) - e_t).sum(axis=-1)


# --- row-level scores and gradients ----------------------------------------


def _halves(x):
    k = x.shape[-1] // 2
    return x[..., :k], x[..., k:]


def score_rows(cfg: ModelConfig, h, r, t):
    """Score broadcastable stacks of parameter rows. Reduces the last axis."""
    kind = cfg.kind
    if kind is ModelKind.TRANSE:
        d = h + r - t
        if cfg.p_norm == 1:
            return cfg.margin - np.abs(d).sum(axis=-1)
        return cfg.margin - np.sqrt((d * d).sum(axis=-1))
    if kind is ModelKind.DISTMULT:
        return (h * t * r).sum(axis=-1)
    if kind is ModelKind.COMPLEX:
        hr, hi = _halves(h)
        rr, ri = _halves(r)
        tr, ti = _halves(t)
        return ((hr * rr - hi * ri) * tr + (hr * ri + hi * rr) * ti).sum(axis=-1)
    if kind is ModelKind.SIMPLE:
        hh, ht = _halves(h)
        rf, rb = _halves(r)
        th, tt = _halves(t)
        return 0.5 * ((hh * rf * tt).sum(axis=-1) + (th * rb * ht).sum(axis=-1))
    if kind is ModelKind.ROTATE:
        hr, hi = _halves(h)
        tr, ti = _halves(t)
        c, s = np.cos(r), np.sin(r)
        dr = hr * c - hi * s - tr
        di = hr * s + hi * c - ti
        return cfg.margin - np.sqrt(dr * dr + di * di).sum(axis=-1)
    raise ValueError(kind)


def grad_rows(cfg: ModelConfig, h, r, t):
    """Return ``(score, d/dh, d/dr, d/dt)`` for broadcastable row stacks.

    L1 and modulus kinks get a zero subgradient.
    """
    kind = cfg.kind
    if kind is ModelKind.TRANSE:
        d = h + r - t
        if cfg.p_norm == 1:
            score = cfg.margin - np.abs(d).sum(axis=-1)
            g = -np.sign(d)
        else:
            norm = np.sqrt((d * d).sum(axis=-1))
            score = cfg.margin - norm
            safe = np.where(norm > 0, norm, 1.0)[..., None]
            g = np.where(norm[..., None] > 0, -d / safe, 0.0)
        return score, g, g, -g
    if kind is ModelKind.DISTMULT:
        return (h * t * r).sum(axis=-1), r * t, h * t, h * r
    if kind is ModelKind.COMPLEX:
        hr, hi = _halves(h)
        rr, ri = _halves(r)
        tr, ti = _halves(t)
        ar = hr * rr - hi * ri
        ai = hr * ri + hi * rr
        score = (ar * tr + ai * ti).sum(axis=-1)
        gh = np.concatenate([rr * tr + ri * ti, rr * ti - ri * tr], axis=-1)
        gr = np.concatenate([hr * tr + hi * ti, hr * ti - hi * tr], axis=-1)
        gt = np.concatenate([ar, ai], axis=-1)
        return score, gh, gr, gt
    if kind is ModelKind.SIMPLE:
        hh, ht = _halves(h)
        rf, rb = _halves(r)
        th, tt = _halves(t)
        score = 0.5 * ((hh * rf * tt).sum(axis=-1) + (th * rb * ht).sum(axis=-1))
        gh = 0.5 * np.concatenate([rf * tt, th * rb], axis=-1)
        gr = 0.5 * np.concatenate([hh * tt, th * ht], axis=-1)
        gt = 0.5 * np.concatenate([rb * ht, hh * rf], axis=-1)
        return score, gh, gr, gt
    if kind is ModelKind.ROTATE:
        hr, hi = _halves(h)
        tr, ti = _halves(t)
        c, s = np.cos(r), np.sin(r)
        xr = hr * c - hi * s
        xi = hr * s + hi * c
        dr, di = xr - tr, xi - ti
        m = np.sqrt(dr * dr + di * di)
        score = cfg.margin - m.sum(axis=-1)
        safe = np.where(m > 0, m, 1.0)
        u = np.where(m > 0, -dr / safe, 0.0)
        v = np.where(m > 0, -di / safe, 0.0)
        gh = np.concatenate([u * c + v * s, v * c - u * s], axis=-1)
        gr = v * xr - u * xi
        gt = np.concatenate([-u, -v], axis=-1)
        return score, gh, gr, gt
    raise ValueError(kind)


def grad(cfg: ModelConfig, h, r, t):
    """Analytic gradient of one triple's score with respect to its three rows."""
    _, gh, gr, gt = grad_rows(cfg, np.asarray(h, float), np.asarray(r, float), np.asarray(t, float))
    return gh, gr, gt


# --- table-level scoring ----------------------------------------------------


def score_triples(table: EmbeddingTable, cfg: ModelConfig, h, r, t) -> np.ndarray:
    h, r, t = (np.atleast_1d(np.asarray(x, dtype=np.int64)) for x in (h, r, t))
    return score_rows(cfg, table.entity[h], table.relation[r], table.entity[t])


def score_candidates(
    table: EmbeddingTable,
    cfg: ModelConfig,
    head: Optional[int],
    rel: Optional[int],
    tail: Optional[int],
) -> np.ndarray:
    """Scores for every candidate filling the single ``None`` slot, in id order."""
    if sum(x is None for x in (head, rel, tail)) != 1:
        raise ValueError("exactly one of head, rel, tail must be None")
    E, R = table.entity, table.relation
    if head is None:
        return score_rows(cfg, E, R[rel : rel + 1], E[tail : tail + 1])
    if tail is None:
        return score_rows(cfg, E[head : head + 1], R[rel : rel + 1], E)
    return score_rows(cfg, E[head : head + 1], R, E[tail : tail + 1])
