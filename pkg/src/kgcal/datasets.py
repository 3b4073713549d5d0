"""Synthetic typed graphs for tests, benchmarks and smoke runs."""
from __future__ import annotations

import numpy as np

from .graph import LabeledTriple

# relation frequency profile of WN18RR (hypernym, derivationally_related_form, ...)
WN18RR_PROFILE = (0.399, 0.341, 0.080, 0.053, 0.038, 0.034, 0.015, 0.012, 0.010, 0.010, 0.008)


def synthetic_triples(num_entities: int = 1000, num_triples: int = 8000, num_relations: int = 11,
                      num_types: int = 8, profile=WN18RR_PROFILE, noise: float = 0.1,
                      seed: int = 0) -> list[LabeledTriple]:
    """Sample distinct triples from a typed random graph.

    Entities get one of ``num_types`` types; each relation links a fixed
    (head type, tail type) pair, and within it tails follow a per-relation
    offset of the head's position so there is structure to learn. A fraction
    ``noise`` of tails is drawn uniformly from the tail type instead. Several
    relations may share a type pair, which keeps relation prediction
    ambiguous.
    """
    rng = np.random.default_rng(seed)
    etype = rng.integers(num_types, size=num_entities)
    members = [np.flatnonzero(etype == c) for c in range(num_types)]
    nonempty = [c for c in range(num_types) if len(members[c])]
    pairs = rng.choice(nonempty, size=(num_relations, 2))
    offsets = rng.integers(0, num_entities, size=num_relations)
    p = np.resize(np.asarray(profile, dtype=float), num_relations)
    p /= p.sum()

    max_possible = sum(len(members[a]) * len(members[b]) for a, b in pairs)
    if num_triples > max_possible:
        raise ValueError(f"cannot draw {num_triples} distinct triples from this graph")
    seen: dict[tuple[int, int, int], None] = {}
    while len(seen) < num_triples:
        r = int(rng.choice(num_relations, p=p))
        hs, ts = members[pairs[r, 0]], members[pairs[r, 1]]
        hpos = int(rng.integers(len(hs)))
        if rng.random() < noise:
            tpos = int(rng.integers(len(ts)))
        else:
            tpos = (hpos + offsets[r] + int(rng.integers(3))) % len(ts)
        seen.setdefault((int(hs[hpos]), r, int(ts[tpos])), None)
    width = len(str(num_entities - 1))
    return [(f"e{h:0{width}d}", f"r{r:02d}", f"e{t:0{width}d}") for h, r, t in seen]
