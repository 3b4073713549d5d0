"""Embedding containers and the TransE / TransH / DistMult / ComplEx scoring functions."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataError, NumericalError

KINDS = {
    "transe": kernels.TRANSE,
    "transh": kernels.TRANSH,
    "distmult": kernels.DISTMULT,
    "complex": kernels.COMPLEX,
}
TRANSLATIONAL = ("transe", "transh")

_NO_NORMALS = np.zeros((1, 1))
_MAGIC = b"KGCALMODEL1\n"


def normalize_kind(kind: str) -> str:
    k = str(kind).lower()
    if k not in KINDS:
        raise DataError(f"unknown model kind {kind!r}; expected one of {sorted(KINDS)}")
    return k


@dataclass
class KgeModel:
    """Entity/relation embedding matrices for one model kind.

    ComplEx rows store the real part in the first ``dim`` columns and the
    imaginary part in the last ``dim``. ``normals`` holds TransH hyperplane
    normals and is ``None`` for every other kind.
    """

    kind: str
    dim: int
    entity_emb: np.ndarray
    rel_emb: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.kind = normalize_kind(self.kind)
        self.entity_emb = np.ascontiguousarray(self.entity_emb, dtype=np.float64)
        self.rel_emb = np.ascontiguousarray(self.rel_emb, dtype=np.float64)
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)

    @property
    def code(self) -> int:
        return KINDS[self.kind]

    @property
    def width(self) -> int:
        """Stored columns per row (2 * dim for ComplEx)."""
        return 2 * self.dim if self.kind == "complex" else self.dim

    @property
    def num_entities(self) -> int:
        return self.entity_emb.shape[0]

    @property
    def num_relations(self) -> int:
        return self.rel_emb.shape[0]

    def _normals_or_dummy(self) -> np.ndarray:
        return self.normals if self.normals is not None else _NO_NORMALS

    def validate(self, normal_tol: float = 1e-6) -> None:
        w = self.width
        if self.entity_emb.ndim != 2 or self.entity_emb.shape[1] != w:
            raise DataError(f"entity_emb has shape {self.entity_emb.shape}, expected (*, {w})")
        if self.rel_emb.ndim != 2 or self.rel_emb.shape[1] != w:
            raise DataError(f"rel_emb has shape {self.rel_emb.shape}, expected (*, {w})")
        if (self.kind == "transh") != (self.normals is not None):
            raise DataError("normals must be present iff kind is transh")
        arrays = [self.entity_emb, self.rel_emb]
        if self.normals is not None:
            if self.normals.shape != self.rel_emb.shape:
                raise DataError("normals shape must match rel_emb")
            arrays.append(self.normals)
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > normal_tol):
                raise NumericalError("TransH normals are not unit length")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise NumericalError("model contains non-finite values")

    def copy(self) -> "KgeModel":
        return KgeModel(
            self.kind, self.dim, self.entity_emb.copy(), self.rel_emb.copy(),
            None if self.normals is None else self.normals.copy(),
        )

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256(self.kind.encode())
        for a in (self.entity_emb, self.rel_emb, self.normals):
            if a is not None:
                h.update(a.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class ScoreVector:
    values: np.ndarray
    query: tuple[int, int]


def init_model(kind: str, dim: int, num_entities: int, num_relations: int, seed: int = 0) -> KgeModel:
    """Uniform init in [-6/sqrt(dim), 6/sqrt(dim)]; TransH normals renormalized."""
    kind = normalize_kind(kind)
    if dim < 1:
        raise DataError(f"dim must be >= 1, got {dim}")
    if num_entities < 1 or num_relations < 1:
        raise DataError("vocabularies must be non-empty")
    rng = np.random.default_rng(seed)
    bound = 6.0 / np.sqrt(dim)
    width = 2 * dim if kind == "complex" else dim
    ent = rng.uniform(-bound, bound, size=(num_entities, width))
    rel = rng.uniform(-bound, bound, size=(num_relations, width))
    normals = None
    if kind == "transh":
        normals = rng.uniform(-bound, bound, size=(num_relations, width))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return KgeModel(kind, dim, ent, rel, normals)


def _check_entities(model: KgeModel, idx: np.ndarray) -> None:
    if idx.size and (idx.min() < 0 or idx.max() >= model.num_entities):
        raise IndexError("entity index out of range")


def _check_relations(model: KgeModel, idx: np.ndarray) -> None:
    if idx.size and (idx.min() < 0 or idx.max() >= model.num_relations):
        raise IndexError("relation index out of range")


def score_pairs(model: KgeModel, heads, tails, relations=None) -> np.ndarray:
    """Score matrix of shape (n, m): entry (i, j) is f(heads[i], relations[j], tails[i]).

    ``relations`` defaults to every relation.
    """
    heads = np.ascontiguousarray(heads, dtype=np.int64).ravel()
    tails = np.ascontiguousarray(tails, dtype=np.int64).ravel()
    if heads.shape != tails.shape:
        raise DataError("heads and tails must have the same length")
    if relations is None:
        relations = np.arange(model.num_relations, dtype=np.int64)
    relations = np.ascontiguousarray(relations, dtype=np.int64).ravel()
    _check_entities(model, heads)
    _check_entities(model, tails)
    _check_relations(model, relations)
    return kernels.backend.score_pairs(
        model.code, model.entity_emb, model.rel_emb, model._normals_or_dummy(),
        heads, tails, relations,
    )


def score_triple(model: KgeModel, h: int, r: int, t: int) -> float:
    return float(score_pairs(model, [h], [t], [r])[0, 0])


def score_all_relations(model: KgeModel, h: int, t: int) -> ScoreVector:
    return ScoreVector(score_pairs(model, [h], [t])[0], (int(h), int(t)))


def project_to_hyperplane(e: np.ndarray, w: np.ndarray) -> np.ndarray:
    """e - (w.e) w, the TransH projection onto the hyperplane with unit normal w."""
    return e - np.dot(w, e) * w


def save_model(model: KgeModel, path) -> None:
    """Binary checkpoint: magic line, JSON header line, then little-endian float64 rows."""
    arrays = ["entity_emb", "rel_emb"] + (["normals"] if model.normals is not None else [])
    header = {
        "kind": model.kind,
        "dim": model.dim,
        "num_entities": model.num_entities,
        "num_relations": model.num_relations,
        "width": model.width,
        "arrays": arrays,
        "dtype": "<f8",
        "order": "C",
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for name in arrays:
            fh.write(getattr(model, name).astype("<f8").tobytes(order="C"))


def load_model(path) -> KgeModel:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"model checkpoint not found: {path}")
    with open(path, "rb") as fh:
        if fh.readline() != _MAGIC:
            raise DataError(f"{path}: not a kgcal model checkpoint")
        header = json.loads(fh.readline())
        w = header["width"]
        shapes = {
            "entity_emb": (header["num_entities"], w),
            "rel_emb": (header["num_relations"], w),
            "normals": (header["num_relations"], w),
        }
        loaded = {}
        for name in header["arrays"]:
            shape = shapes[name]
            nbytes = 8 * shape[0] * shape[1]
            buf = fh.read(nbytes)
            if len(buf) != nbytes:
                raise DataError(f"{path}: truncated array {name}")
            loaded[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    model = KgeModel(header["kind"], header["dim"], loaded["entity_emb"], loaded["rel_emb"], loaded.get("normals"))
    model.validate()
    return model
