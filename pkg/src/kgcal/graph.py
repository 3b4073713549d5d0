"""Triple loading, vocabulary construction, splitting and inverse-relation cleanup."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

LabeledTriple = tuple[str, str, str]

_SPLIT_TOL = 1e-12
_DATASET_FILES = ("train.txt", "valid.txt", "test.txt")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    valid_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.valid_fraction, self.test_fraction)
        if any(not f > 0 for f in fr):
            raise DataError(f"split fractions must be positive, got {fr}")
        if abs(sum(fr) - 1.0) > _SPLIT_TOL:
            raise DataError(f"split fractions must sum to 1, got {sum(fr)!r}")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "SplitSpec":
        """Parse ``"0.8,0.1,0.1"``."""
        try:
            parts = [float(p) for p in text.split(",")]
        except ValueError as exc:
            raise DataError(f"bad split string {text!r}") from exc
        if len(parts) != 3:
            raise DataError(f"split needs three fractions, got {text!r}")
        return cls(*parts, seed=seed)


@dataclass
class KnowledgeGraph:
    """Indexed knowledge graph with train/valid/test splits.

    Splits are ``(n, 3)`` int64 arrays of ``(head, relation, tail)`` indices.
    """

    entities: list[str]
    relations: list[str]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    split: SplitSpec | None = None
    _known: frozenset = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("train", "valid", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 3)
            setattr(self, name, arr)
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        if len(self.entity_index) != len(self.entities):
            raise DataError("duplicate entity labels in vocabulary")
        if len(self.relation_index) != len(self.relations):
            raise DataError("duplicate relation labels in vocabulary")
        all_triples = self.all_triples()
        if len(all_triples):
            if all_triples.min() < 0:
                raise DataError("negative index in triples")
            if all_triples[:, [0, 2]].max() >= self.num_entities:
                raise DataError("entity index out of range")
            if all_triples[:, 1].max() >= self.num_relations:
                raise DataError("relation index out of range")
        self._known = frozenset(map(tuple, all_triples.tolist()))
        if len(self._known) != len(all_triples):
            raise DataError("splits overlap or contain duplicate triples")

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def known(self) -> frozenset:
        return self._known

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test], axis=0)

    def get_split(self, name: str) -> np.ndarray:
        if name not in ("train", "valid", "test"):
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)

    def encode(self, triple: LabeledTriple) -> tuple[int, int, int]:
        h, r, t = triple
        try:
            return self.entity_index[h], self.relation_index[r], self.entity_index[t]
        except KeyError as exc:
            raise DataError(f"label {exc.args[0]!r} not in graph vocabulary") from None

    def decode(self, triple) -> LabeledTriple:
        h, r, t = triple
        return self.entities[h], self.relations[r], self.entities[t]

    def to_dict(self) -> dict:
        out = {
            "format": "kgcal-graph",
            "version": 1,
            "entities": list(self.entities),
            "relations": list(self.relations),
            "train": self.train.tolist(),
            "valid": self.valid.tolist(),
            "test": self.test.tolist(),
        }
        if self.split is not None:
            s = self.split
            out["split"] = [s.train_fraction, s.valid_fraction, s.test_fraction]
            out["seed"] = s.seed
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeGraph":
        if d.get("format") != "kgcal-graph":
            raise DataError("not a kgcal graph checkpoint")
        split = None
        if "split" in d:
            split = SplitSpec(*d["split"], seed=d.get("seed", 0))
        return cls(d["entities"], d["relations"], d["train"], d["valid"], d["test"], split)


def is_known(graph: KnowledgeGraph, triple) -> bool:
    h, r, t = (int(x) for x in triple)
    if not (0 <= h < graph.num_entities and 0 <= t < graph.num_entities):
        raise IndexError(f"entity index out of range in {triple!r}")
    if not 0 <= r < graph.num_relations:
        raise IndexError(f"relation index out of range in {triple!r}")
    return (h, r, t) in graph.known


def load_triples(path, order: str = "hrt") -> list[LabeledTriple]:
    """Read a tab-separated triple file.

    ``order`` names the column layout, e.g. ``"htr"`` for files that put the
    relation last. Blank lines are skipped; duplicates are kept.
    """
    if sorted(order) != ["h", "r", "t"]:
        raise DataError(f"bad column order {order!r}")
    pos = [order.index(c) for c in "hrt"]
    path = Path(path)
    if not path.is_file():
        raise DataError(f"triple file not found: {path}")
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3 or any(not f for f in fields):
                raise DataError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            triples.append((fields[pos[0]], fields[pos[1]], fields[pos[2]]))
    if not triples:
        raise DataError(f"{path}: no triples")
    return triples


def load_dataset(path, order: str = "hrt") -> list[LabeledTriple]:
    """Load a single triple file, or concatenate the standard split files of a
    benchmark directory (``train.txt``, ``valid.txt``, ``test.txt``)."""
    path = Path(path)
    if path.is_dir():
        files = [path / f for f in _DATASET_FILES if (path / f).is_file()]
        if not files:
            raise DataError(f"{path}: no {'/'.join(_DATASET_FILES)} found")
        out = []
        for f in files:
            out.extend(load_triples(f, order))
        return out
    return load_triples(path, order)


def _dedup(triples: Iterable[LabeledTriple]) -> list[LabeledTriple]:
    return list(dict.fromkeys(tuple(t) for t in triples))


def build_graph(triples: Sequence[LabeledTriple], split: SplitSpec = SplitSpec()) -> KnowledgeGraph:
    """Index, deduplicate, shuffle and partition labeled triples."""
    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    for h, r, t in triples:
        entities.setdefault(h, len(entities))
        relations.setdefault(r, len(relations))
        entities.setdefault(t, len(entities))
    unique = _dedup(triples)
    n = len(unique)
    if n < 10:
        raise DataError(f"need at least 10 distinct triples, got {n}")
    n_valid = math.floor(n * split.valid_fraction + 1e-9)
    n_test = math.floor(n * split.test_fraction + 1e-9)
    n_train = n - n_valid - n_test
    if min(n_train, n_valid, n_test) < 1:
        raise DataError(f"split of {n} triples leaves an empty partition")

    idx = np.array([(entities[h], relations[r], entities[t]) for h, r, t in unique], dtype=np.int64)
    perm = np.random.default_rng(split.seed).permutation(n)
    idx = idx[perm]
    return KnowledgeGraph(
        entities=list(entities),
        relations=list(relations),
        train=idx[:n_train],
        valid=idx[n_train:n_train + n_valid],
        test=idx[n_train + n_valid:],
        split=split,
    )


def graph_from_splits(train: Sequence[LabeledTriple], valid: Sequence[LabeledTriple],
                      test: Sequence[LabeledTriple]) -> KnowledgeGraph:
    """Index a dataset that comes already partitioned; no shuffling.

    Duplicates inside a split are dropped. A triple in more than one split
    is a data error.
    """
    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    parts = [_dedup(s) for s in (train, valid, test)]
    for h, r, t in (tr for part in parts for tr in part):
        entities.setdefault(h, len(entities))
        relations.setdefault(r, len(relations))
        entities.setdefault(t, len(entities))
    enc = [
        np.array([(entities[h], relations[r], entities[t]) for h, r, t in part], dtype=np.int64).reshape(-1, 3)
        for part in parts
    ]
    return KnowledgeGraph(list(entities), list(relations), *enc)


def load_split_dataset(path, order: str = "hrt") -> KnowledgeGraph:
    """Graph from a directory holding ``train.txt``, ``valid.txt`` and ``test.txt``."""
    path = Path(path)
    missing = [f for f in _DATASET_FILES if not (path / f).is_file()]
    if missing:
        raise DataError(f"{path}: missing {', '.join(missing)}")
    return graph_from_splits(*(load_triples(path / f, order) for f in _DATASET_FILES))


def inverse_overlap(triples: Sequence[LabeledTriple]) -> dict[tuple[str, str], float]:
    """Fraction of ``(h, r1, t)`` triples that have a ``(t, r2, h)`` mate, for
    every ordered relation pair with nonzero overlap."""
    by_pair: dict[tuple[str, str], set[str]] = defaultdict(set)
    count: dict[str, int] = defaultdict(int)
    for h, r, t in triples:
        by_pair[(h, t)].add(r)
        count[r] += 1
    hits: dict[tuple[str, str], int] = defaultdict(int)
    for h, r1, t in triples:
        for r2 in by_pair.get((t, h), ()):
            if r2 != r1:
                hits[(r1, r2)] += 1
    return {pair: c / count[pair[0]] for pair, c in hits.items()}


def remove_inverse_relations(triples: Sequence[LabeledTriple], overlap_threshold: float = 0.8) -> list[LabeledTriple]:
    """Drop one relation out of every mutually-inverse pair.

    Pairs are visited in lexicographic order and the larger label of a pair is
    dropped, unless one of the two was already dropped by an earlier pair.
    Exact duplicate triples are removed as well.
    """
    if not 0 < overlap_threshold <= 1:
        raise DataError(f"overlap threshold must be in (0, 1], got {overlap_threshold}")
    unique = _dedup(triples)
    overlap = inverse_overlap(unique)
    dropped: set[str] = set()
    for r1, r2 in sorted(overlap):
        if r1 >= r2 or r1 in dropped or r2 in dropped:
            continue
        if overlap[(r1, r2)] >= overlap_threshold and overlap.get((r2, r1), 0.0) >= overlap_threshold:
            dropped.add(r2)
    return [tr for tr in unique if tr[1] not in dropped]


def save_graph(graph: KnowledgeGraph, path) -> None:
    Path(path).write_text(json.dumps(graph.to_dict()), encoding="utf-8")


def load_graph(path) -> KnowledgeGraph:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"graph checkpoint not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid graph checkpoint ({exc})") from exc
    return KnowledgeGraph.from_dict(d)
