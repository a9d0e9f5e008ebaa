"""Synthetic knowledge graphs for tests, benchmarks and smoke runs."""

from __future__ import annotations

import numpy as np

from .core import SemanticLabels

GROUPS = ("DISO", "ANAT", "CHEM", "PROC")

# attribute relations: (name, group shift, target is the twin's parent)
ATTRIBUTES = (
    ("causative_agent_of", 1, False),
    ("associated_with", 3, False),
    ("finding_site_of", 1, True),
)
RECIPROCALS = (("isa", "inverse_isa"), ("causative_agent_of", "has_causative_agent"))


def _tree(per_group: int, fanout) -> list[int]:
    """Parent of each local node (-1 for the root); leaves fill the deepest level."""
    parent = [-1]
    level = [0]
    for width in fanout:
        nxt = []
        for p in level:
            for _ in range(width):
                parent.append(p)
                nxt.append(len(parent) - 1)
        level = nxt
    i = 0
    while len(parent) < per_group:
        parent.append(level[i % len(level)])
        i += 1
    return parent


def hierarchical_kg(seed: int = 0, per_group: int = 50, fanout=(3, 3), inherit: bool = False):
    """Four-group ontology with ``4 * per_group`` entities and six relations.

    Every group is an ISA tree of the same shape, so each node has a
    structural twin in every other group. Relations:

    * ``isa`` (child to parent) and its reciprocal ``inverse_isa``;
    * ``causative_agent_of``: node to its twin one group over, with the
      reciprocal ``has_causative_agent``;
    * ``associated_with``: node to its twin three groups over (one group
      back), so no relation is symmetric;
    * ``finding_site_of``: node to the parent of its twin one group over.

    With ``inherit`` the attribute targets also include all ancestors of the
    direct target. ``seed`` permutes the entity naming order only.
    Returns ``(triples, labels, reciprocal pairs)`` with name triples.
    """
    parent = _tree(per_group, fanout)

    def ancestors(n: int) -> list[int]:
        out = []
        while parent[n] >= 0:
            n = parent[n]
            out.append(n)
        return out

    rng = np.random.default_rng(seed)
    perm = rng.permutation(per_group)
    name = {g: [f"{g}_{perm[i]:03d}" for i in range(per_group)] for g in GROUPS}
    ng = len(GROUPS)
    triples = []
    for g in GROUPS:
        for child in range(1, per_group):
            triples.append((name[g][child], "isa", name[g][parent[child]]))
            triples.append((name[g][parent[child]], "inverse_isa", name[g][child]))
    for k, g in enumerate(GROUPS):
        for rel, shift, to_parent in ATTRIBUTES:
            dst = GROUPS[(k + shift) % ng]
            for n in range(per_group):
                m = parent[n] if to_parent else n
                if m < 0:
                    continue
                targets = [m] + (ancestors(m) if inherit else [])
                for x in targets:
                    triples.append((name[g][n], rel, name[dst][x]))
                    if rel == "causative_agent_of":
                        triples.append((name[dst][x], "has_causative_agent", name[g][n]))

    labels = SemanticLabels(group_vocab=GROUPS)
    for g in GROUPS:
        for i in range(per_group):
            depth = len(ancestors(i))
            labels.add(name[g][i], f"{g}_T{min(depth, len(fanout))}", g)
    return triples, labels, list(RECIPROCALS)


def reciprocal_kg(num_entities: int, num_pairs: int, num_relations: int = 4, seed: int = 0):
    """Random KG made of reciprocal pairs ``(h, r_k, t)`` / ``(t, r_k_inv, h)``.

    Returns name triples and the relation pairs.
    """
    rng = np.random.default_rng(seed)
    seen = set()
    triples = []
    while len(seen) < num_pairs:
        h, t = rng.integers(0, num_entities, size=2)
        r = int(rng.integers(0, num_relations))
        if h == t or (h, r, t) in seen:
            continue
        seen.add((h, r, t))
        triples.append((f"e{h}", f"r{r}", f"e{t}"))
        triples.append((f"e{t}", f"r{r}_inv", f"e{h}"))
    return triples, [(f"r{k}", f"r{k}_inv") for k in range(num_relations)]
