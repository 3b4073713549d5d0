"""Negative relation sampling, losses, SGD/Adagrad training and grid search."""
from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, DataError, KgcalError, NumericalError
from .graph import KnowledgeGraph
from .models import TRANSLATIONAL, KgeModel, init_model, normalize_kind, score_pairs

log = logging.getLogger(__name__)

GRID = {
    "epochs": (200, 300, 500),
    "batch_size": (100, 200, 500),
    "dim": (50, 100),
    "negatives": (1, 5),
    "margin": (1.0, 5.0, 10.0),
}

# (loss, optimizer) each model kind is trained with
RECIPES = {
    "transe": ("margin", "sgd"),
    "transh": ("margin", "sgd"),
    "distmult": ("margin", "adagrad"),
    "complex": ("bce", "adagrad"),
}

_LOSS_CODES = {"margin": kernels.MARGIN, "bce": kernels.BCE}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 100
    dim: int = 50
    negatives: int = 1
    margin: float = 1.0
    optimizer: str | None = None
    learning_rate: float = 0.01
    loss: str | None = None
    seed: int = 0
    adagrad_eps: float = 1e-10

    @classmethod
    def for_kind(cls, kind: str, **kw) -> "TrainConfig":
        """Config with the kind's loss/optimizer filled in."""
        loss, opt = RECIPES[normalize_kind(kind)]
        kw.setdefault("loss", loss)
        kw.setdefault("optimizer", opt)
        return cls(**kw)

    def resolved(self, kind: str) -> "TrainConfig":
        loss, opt = RECIPES[normalize_kind(kind)]
        return replace(self, loss=self.loss or loss, optimizer=self.optimizer or opt)

    def check(self, kind: str) -> None:
        kind = normalize_kind(kind)
        cfg = self.resolved(kind)
        if (cfg.loss, cfg.optimizer) != RECIPES[kind]:
            raise ConfigError(
                f"{kind} must be trained with loss={RECIPES[kind][0]}, optimizer={RECIPES[kind][1]}; "
                f"got loss={cfg.loss}, optimizer={cfg.optimizer}"
            )
        if not cfg.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if cfg.epochs < 1 or cfg.batch_size < 1 or cfg.dim < 1 or cfg.negatives < 1:
            raise ConfigError("epochs, batch_size, dim and negatives must be positive")
        if cfg.loss == "margin" and not cfg.margin > 0:
            raise ConfigError("margin must be positive")

    def in_grid(self) -> bool:
        return all(getattr(self, k) in v for k, v in GRID.items()) and self.learning_rate == 0.01

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    valid_accuracy: float = float("nan")
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def default_grid(kind: str, **fixed) -> list[TrainConfig]:
    """Every grid combination for ``kind``; margin is only varied for margin-loss kinds.

    Keyword arguments pin fields (e.g. ``seed``) across the whole grid.
    """
    kind = normalize_kind(kind)
    axes = dict(GRID)
    if RECIPES[kind][0] != "margin":
        axes["margin"] = (1.0,)
    for k in list(axes):
        if k in fixed:
            axes[k] = (fixed.pop(k),)
    keys = list(axes)
    return [
        TrainConfig.for_kind(kind, **dict(zip(keys, values)), **fixed)
        for values in itertools.product(*(axes[k] for k in keys))
    ]


def margin_ranking_loss(pos_score: float, neg_scores, margin: float) -> float:
    """Sum over negatives of max(0, margin - pos + neg)."""
    neg = np.asarray(neg_scores, dtype=np.float64)
    return float(np.sum(np.maximum(0.0, margin - pos_score + neg)))


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def bce_loss(pos_score: float, neg_scores) -> float:
    """-log sigmoid(pos) - sum log(1 - sigmoid(neg)), in softplus form."""
    neg = np.asarray(neg_scores, dtype=np.float64)
    return float(_softplus(-pos_score) + np.sum(_softplus(neg)))


def sample_negative_relations(triple, n: int, graph, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """Corrupt the relation slot ``n`` times, uniformly over the other relations.

    ``graph`` may be a KnowledgeGraph or just the relation count.
    """
    k = graph.num_relations if isinstance(graph, KnowledgeGraph) else int(graph)
    if k < 2:
        raise DataError("need at least two relations to corrupt the relation slot")
    if n < 1:
        raise DataError("n must be >= 1")
    h, r, t = (int(x) for x in triple)
    rels = _corrupt(np.array([r]), n, k, rng)[0]
    return [(h, int(x), t) for x in rels]


def _corrupt(rels: np.ndarray, n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    offsets = rng.integers(1, k, size=(rels.shape[0], n))
    return (rels[:, None] + offsets) % k


def _child_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def loss_and_grads(model: KgeModel, triples, negs, loss: str, margin: float = 1.0):
    """Batch-mean loss and dense gradients through the training kernel.

    ``negs`` is a (B, n) array of corrupted relations. Returns
    ``(loss, {"entity_emb": ..., "rel_emb": ..., "normals": ...})``.
    """
    triples = np.ascontiguousarray(triples, dtype=np.int64).reshape(-1, 3)
    negs = np.ascontiguousarray(negs, dtype=np.int64).reshape(triples.shape[0], -1)
    g_ent = np.zeros_like(model.entity_emb)
    g_rel = np.zeros_like(model.rel_emb)
    nrm = model._normals_or_dummy()
    g_nrm = np.zeros_like(nrm)
    B = triples.shape[0]
    total = kernels.backend.accumulate_grads(
        model.code, _LOSS_CODES[loss], float(margin), model.entity_emb, model.rel_emb, nrm,
        np.ascontiguousarray(triples[:, 0]), np.ascontiguousarray(triples[:, 1]),
        np.ascontiguousarray(triples[:, 2]), negs, g_ent, g_rel, g_nrm, 1.0 / B,
    )
    grads = {"entity_emb": g_ent, "rel_emb": g_rel}
    if model.normals is not None:
        grads["normals"] = g_nrm
    return total / B, grads


def relation_accuracy(model: KgeModel, triples: np.ndarray) -> float:
    """Top-1 relation-prediction accuracy of raw scores (ties to lowest index)."""
    if len(triples) == 0:
        return float("nan")
    scores = score_pairs(model, triples[:, 0], triples[:, 2])
    return float(np.mean(np.argmax(scores, axis=1) == triples[:, 1]))


def train(graph: KnowledgeGraph, kind: str, config: TrainConfig = TrainConfig()) -> tuple[KgeModel, TrainReport]:
    kind = normalize_kind(kind)
    config.check(kind)
    cfg = config.resolved(kind)
    if len(graph.train) == 0:
        raise DataError("training split is empty")
    k = graph.num_relations
    if k < 2:
        raise DataError("need at least two relations to corrupt the relation slot")

    t0 = time.perf_counter()
    model = init_model(kind, cfg.dim, graph.num_entities, k, seed=_child_seed(cfg.seed, 0))
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    be = kernels.backend
    translational = kind in TRANSLATIONAL
    if translational:
        be.renorm_rows(model.entity_emb, np.arange(graph.num_entities, dtype=np.int64))

    ent, rel = model.entity_emb, model.rel_emb
    nrm = model._normals_or_dummy()
    g_ent, g_rel, g_nrm = np.zeros_like(ent), np.zeros_like(rel), np.zeros_like(nrm)
    adagrad = cfg.optimizer == "adagrad"
    if adagrad:
        a_ent, a_rel, a_nrm = np.zeros_like(ent), np.zeros_like(rel), np.zeros_like(nrm)
    loss_code = _LOSS_CODES[cfg.loss]
    lr = float(cfg.learning_rate)

    train_triples = graph.train
    n = len(train_triples)
    report = TrainReport()
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = train_triples[perm[lo:lo + cfg.batch_size]]
            heads = np.ascontiguousarray(batch[:, 0])
            rels = np.ascontiguousarray(batch[:, 1])
            tails = np.ascontiguousarray(batch[:, 2])
            negs = _corrupt(rels, cfg.negatives, k, rng)
            B = len(batch)
            total = be.accumulate_grads(
                model.code, loss_code, float(cfg.margin), ent, rel, nrm,
                heads, rels, tails, negs, g_ent, g_rel, g_nrm, 1.0 / B,
            )
            if not math.isfinite(total):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch offset {lo} "
                    f"(kind={kind}, lr={lr}, config={cfg.to_dict()})"
                )
            epoch_loss += total
            ent_rows = np.unique(np.concatenate([heads, tails]))
            rel_rows = np.unique(np.concatenate([rels, negs.ravel()]))
            if adagrad:
                be.adagrad_update(ent, g_ent, a_ent, ent_rows, lr, cfg.adagrad_eps)
                be.adagrad_update(rel, g_rel, a_rel, rel_rows, lr, cfg.adagrad_eps)
                if model.normals is not None:
                    be.adagrad_update(nrm, g_nrm, a_nrm, rel_rows, lr, cfg.adagrad_eps)
            else:
                be.sgd_update(ent, g_ent, ent_rows, lr)
                be.sgd_update(rel, g_rel, rel_rows, lr)
                if model.normals is not None:
                    be.sgd_update(nrm, g_nrm, rel_rows, lr)
            if translational:
                be.renorm_rows(ent, ent_rows)
            if model.normals is not None:
                be.renorm_rows(nrm, rel_rows)
        report.epoch_losses.append(epoch_loss / n)
        log.debug("%s epoch %d loss %.6f", kind, epoch, report.epoch_losses[-1])

    model.validate()
    report.valid_accuracy = relation_accuracy(model, graph.valid)
    report.seconds = time.perf_counter() - t0
    return model, report


@dataclass
class GridResult:
    config: TrainConfig
    valid_accuracy: float
    report: TrainReport


def grid_search(graph: KnowledgeGraph, kind: str, grid: Sequence[TrainConfig]):
    """Train every config and keep the best raw validation accuracy.

    Returns ``(best_config, best_model, results)``; ties go to the earliest config.
    """
    if not grid:
        raise ConfigError("grid is empty")
    best = None
    results = []
    for cfg in grid:
        try:
            model, report = train(graph, kind, cfg)
        except KgcalError as exc:
            raise type(exc)(f"{exc} [while training {kind} with {cfg.to_dict()}]") from exc
        results.append(GridResult(cfg, report.valid_accuracy, report))
        log.info("grid %s %s -> valid acc %.4f", kind, cfg.to_dict(), report.valid_accuracy)
        if best is None or report.valid_accuracy > best[2]:
            best = (cfg, model, report.valid_accuracy)
    return best[0], best[1], results
