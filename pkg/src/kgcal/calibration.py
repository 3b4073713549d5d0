"""Post-hoc calibration of relation-prediction score vectors.

Five calibrators map a score vector ``z`` (one entry per relation) to a
probability vector:

* ``softmax``  -- plain softmax, the uncalibrated baseline
* ``platt``    -- one-vs-all logistic fits, renormalized
* ``isotonic`` -- one-vs-all isotonic step functions of sigmoid(z), renormalized
* ``vector``   -- softmax(a * z + b)
* ``matrix``   -- softmax(A z + b)
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_softmax, logit

from . import kernels
from .errors import DataError, NumericalError
from .models import KgeModel, ScoreVector, score_pairs

METHODS = ("softmax", "platt", "isotonic", "vector", "matrix")


@dataclass(frozen=True)
class CalibrationSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if scores.ndim != 2 or scores.shape[0] < 1:
            raise DataError("scores must be a non-empty (n, k) matrix")
        if labels.shape[0] != scores.shape[0]:
            raise DataError("one label per score row required")
        if labels.min() < 0 or labels.max() >= scores.shape[1]:
            raise DataError("label out of range")
        if not np.all(np.isfinite(scores)):
            raise NumericalError("calibration scores contain non-finite values")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def k(self) -> int:
        return self.scores.shape[1]


def calibration_set(model: KgeModel, triples: np.ndarray) -> CalibrationSet:
    """Score every relation for each (h, ?, t) query built from ``triples``."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return CalibrationSet(score_pairs(model, triples[:, 0], triples[:, 2]), triples[:, 1])


@dataclass(frozen=True)
class Prediction:
    query: tuple[int, int] | None
    probs: np.ndarray
    predicted: int
    confidence: float


def _softmax(Z: np.ndarray) -> np.ndarray:
    Z = np.atleast_2d(Z)
    e = np.exp(Z - Z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _normalize(P: np.ndarray) -> np.ndarray:
    s = P.sum(axis=1, keepdims=True)
    k = P.shape[1]
    return np.where(s > 0, P / np.where(s > 0, s, 1.0), 1.0 / k)


def _check_scores(Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if not np.all(np.isfinite(Z)):
        raise NumericalError("scores contain non-finite values")
    return Z


class Calibrator:
    method: ClassVar[str]

    @property
    def k(self) -> int:
        raise NotImplementedError

    def transform(self, Z) -> np.ndarray:
        """Probability matrix (n, k) for a score matrix (n, k)."""
        Z = _check_scores(Z)
        if self.k is not None and Z.shape[1] != self.k:
            raise DataError(f"calibrator expects {self.k} relations, got {Z.shape[1]}")
        return self._transform(Z)

    def _transform(self, Z):
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"format": "kgcal-calibrator", "method": self.method, "k": self.k, **self.params()}


@dataclass(frozen=True, eq=False)
class IdentitySoftmax(Calibrator):
    num_classes: int | None = None
    method: ClassVar[str] = "softmax"

    @property
    def k(self):
        return self.num_classes

    def _transform(self, Z):
        return _softmax(Z)

    def params(self):
        return {}


@dataclass(frozen=True, eq=False)
class PlattOvA(Calibrator):
    a: np.ndarray
    b: np.ndarray
    method: ClassVar[str] = "platt"

    @property
    def k(self):
        return len(self.a)

    def scores_to_class_probs(self, Z):
        """Per-class sigmoid outputs before normalization."""
        return expit(Z * self.a + self.b)

    def _transform(self, Z):
        return _normalize(self.scores_to_class_probs(Z))

    def params(self):
        return {"a": self.a.tolist(), "b": self.b.tolist()}


@dataclass(frozen=True, eq=False)
class IsotonicOvA(Calibrator):
    """Right-continuous step functions g_i over sigmoid(z_i); constant beyond
    the outermost breakpoints."""

    breakpoints: tuple
    values: tuple
    method: ClassVar[str] = "isotonic"

    @property
    def k(self):
        return len(self.breakpoints)

    def evaluate(self, i: int, x) -> np.ndarray:
        bp, val = self.breakpoints[i], self.values[i]
        idx = np.searchsorted(bp, x, side="right") - 1
        return val[np.clip(idx, 0, len(val) - 1)]

    def scores_to_class_probs(self, Z):
        X = expit(Z)
        return np.column_stack([self.evaluate(i, X[:, i]) for i in range(self.k)])

    def _transform(self, Z):
        return _normalize(self.scores_to_class_probs(Z))

    def params(self):
        return {
            "breakpoints": [bp.tolist() for bp in self.breakpoints],
            "values": [v.tolist() for v in self.values],
        }


@dataclass(frozen=True, eq=False)
class VectorScaling(Calibrator):
    a_diag: np.ndarray
    b: np.ndarray
    method: ClassVar[str] = "vector"

    @property
    def k(self):
        return len(self.a_diag)

    def _transform(self, Z):
        return _softmax(Z * self.a_diag + self.b)

    def params(self):
        return {"a_diag": self.a_diag.tolist(), "b": self.b.tolist()}


@dataclass(frozen=True, eq=False)
class MatrixScaling(Calibrator):
    A: np.ndarray
    b: np.ndarray
    method: ClassVar[str] = "matrix"

    @property
    def k(self):
        return len(self.b)

    def _transform(self, Z):
        return _softmax(Z @ self.A.T + self.b)

    def params(self):
        return {"A": self.A.tolist(), "b": self.b.tolist()}


def _prediction(probs: np.ndarray, query=None) -> Prediction:
    r = int(np.argmax(probs))
    return Prediction(query, probs, r, float(probs[r]))


def softmax_confidence(z) -> Prediction:
    query = z.query if isinstance(z, ScoreVector) else None
    values = z.values if isinstance(z, ScoreVector) else z
    return _prediction(_softmax(_check_scores(values))[0], query)


def calibrate(calibrator: Calibrator, z) -> Prediction:
    query = z.query if isinstance(z, ScoreVector) else None
    values = z.values if isinstance(z, ScoreVector) else z
    return _prediction(calibrator.transform(values)[0], query)


def predict(calibrator: Calibrator, Z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch form of :func:`calibrate`: (probs, predicted, confidence)."""
    P = calibrator.transform(Z)
    pred = np.argmax(P, axis=1)
    return P, pred, P[np.arange(len(P)), pred]


# --- one-vs-all Platt ------------------------------------------------------

def _platt_loss(theta, x, y):
    s = theta[0] * x + theta[1]
    return float(np.sum(np.logaddexp(0.0, s) - y * s))


def fit_platt_binary(x, y, tol=1e-8, max_iter=10_000, jitter=1e-12):
    """Minimize the summed logistic loss of sigmoid(a x + b) against 0/1 targets
    with damped Newton. Degenerate targets (all 0 or all 1) give a = 0 and a
    Laplace-smoothed constant rate."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(x)
    pos = y.sum()
    if pos == 0:
        return 0.0, float(logit(1.0 / (n + 2)))
    if pos == n:
        return 0.0, float(logit((n + 1.0) / (n + 2)))
    theta = np.array([0.0, float(logit(pos / n))])
    loss = _platt_loss(theta, x, y)
    for _ in range(max_iter):
        p = expit(theta[0] * x + theta[1])
        r = p - y
        g = np.array([np.dot(r, x), r.sum()])
        if np.linalg.norm(g) < tol:
            break
        w = p * (1.0 - p)
        H = np.array([[np.dot(w, x * x), np.dot(w, x)], [np.dot(w, x), w.sum()]])
        H[np.diag_indices(2)] += jitter
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = g
        if not np.all(np.isfinite(step)):
            step = g
        t = 1.0
        slope = float(np.dot(g, step))
        if slope <= 0:
            step, slope = g, float(np.dot(g, g))
        for _ in range(60):
            cand = theta - t * step
            cand_loss = _platt_loss(cand, x, y)
            if cand_loss <= loss - 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        theta, loss = cand, cand_loss
    if not np.all(np.isfinite(theta)):
        raise NumericalError("Platt fit diverged")
    return float(theta[0]), float(theta[1])


def fit_platt_ova(data: CalibrationSet) -> PlattOvA:
    a = np.empty(data.k)
    b = np.empty(data.k)
    for i in range(data.k):
        a[i], b[i] = fit_platt_binary(data.scores[:, i], data.labels == i)
    return PlattOvA(a, b)


# --- one-vs-all isotonic ---------------------------------------------------

def fit_isotonic_binary(x, y):
    """Least-squares nondecreasing step function of x fitted to y.

    Returns ``(breakpoints, values)``; equal x values are pooled first.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ux, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    sums = np.bincount(inv, weights=y, minlength=len(ux))
    w = counts.astype(np.float64)
    start, val, _ = kernels.backend.pav(sums / w, w)
    return ux[start], np.clip(val, 0.0, 1.0)


def fit_isotonic_ova(data: CalibrationSet) -> IsotonicOvA:
    X = expit(data.scores)
    bps, vals = [], []
    for i in range(data.k):
        bp, v = fit_isotonic_binary(X[:, i], data.labels == i)
        bps.append(bp)
        vals.append(v)
    return IsotonicOvA(tuple(bps), tuple(vals))


# --- vector / matrix scaling -----------------------------------------------

def _affine_objective(theta, Z, Y, diagonal, l2):
    n, k = Z.shape
    if diagonal:
        a, b = theta[:k], theta[k:]
        logits = Z * a + b
    else:
        A, b = theta[:k * k].reshape(k, k), theta[k * k:]
        logits = Z @ A.T + b
    logp = log_softmax(logits, axis=1)
    loss = -np.sum(logp[Y]) / n
    G = (np.exp(logp) - Y) / n
    grad_b = G.sum(axis=0)
    grad_w = (G * Z).sum(axis=0) if diagonal else (G.T @ Z).ravel()
    if l2:
        eye = np.ones(k) if diagonal else np.eye(k).ravel()
        dw = theta[:-k] - eye
        loss += 0.5 * l2 * (np.dot(dw, dw) + np.dot(b, b))
        grad_w = grad_w + l2 * dw
        grad_b = grad_b + l2 * b
    return loss, np.concatenate([grad_w, grad_b])


def affine_cross_entropy(calibrator, data: CalibrationSet) -> float:
    """Mean multiclass cross-entropy of a calibrator's probabilities."""
    P = calibrator.transform(data.scores)
    p = P[np.arange(data.n), data.labels]
    return float(-np.mean(np.log(np.maximum(p, np.finfo(float).tiny))))


def fit_affine_scaling(data: CalibrationSet, diagonal_only: bool = True, l2: float = 0.0,
                       max_iter: int = 2000, gtol: float = 1e-7, init=None):
    """Fit softmax(A z + b) by L-BFGS on the mean cross-entropy.

    ``A`` is diagonal for vector scaling. The default start is A = I, b = 0;
    ``init`` may supply another parameter vector (weights then biases).
    """
    if data.n < 2:
        raise DataError("affine scaling needs at least 2 calibration examples")
    k = data.k
    Z = data.scores
    Y = np.zeros((data.n, k), dtype=bool)
    Y[np.arange(data.n), data.labels] = True
    weights0 = np.ones(k) if diagonal_only else np.eye(k).ravel()
    identity = np.concatenate([weights0, np.zeros(k)])
    theta0 = identity if init is None else np.asarray(init, dtype=np.float64).copy()
    if theta0.shape != identity.shape:
        raise DataError(f"init must have {identity.size} parameters")

    loss0, _ = _affine_objective(theta0, Z, Y, diagonal_only, l2)
    res = minimize(
        _affine_objective, theta0, args=(Z, Y, diagonal_only, l2), jac=True, method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": gtol, "ftol": 1e-15, "maxcor": 20},
    )
    theta = res.x
    if not (np.all(np.isfinite(theta)) and np.isfinite(res.fun)) or res.fun > loss0:
        raise NumericalError(
            f"affine scaling diverged: start loss {loss0}, final loss {res.fun}, "
            f"message {res.message!r}, iterate {theta.tolist()}"
        )
    if diagonal_only:
        return VectorScaling(theta[:k].copy(), theta[k:].copy())
    return MatrixScaling(theta[:k * k].reshape(k, k).copy(), theta[k * k:].copy())


def fit_calibrator(method: str, data: CalibrationSet, **kw) -> Calibrator:
    if method == "softmax":
        return IdentitySoftmax(data.k)
    if method == "platt":
        return fit_platt_ova(data)
    if method == "isotonic":
        return fit_isotonic_ova(data)
    if method == "vector":
        return fit_affine_scaling(data, diagonal_only=True, **kw)
    if method == "matrix":
        return fit_affine_scaling(data, diagonal_only=False, **kw)
    raise DataError(f"unknown calibration method {method!r}; expected one of {METHODS}")


def calibrator_from_dict(d: dict) -> Calibrator:
    if d.get("format") != "kgcal-calibrator":
        raise DataError("not a kgcal calibrator file")
    m = d["method"]
    if m == "softmax":
        return IdentitySoftmax(d.get("k"))
    if m == "platt":
        return PlattOvA(np.array(d["a"], dtype=float), np.array(d["b"], dtype=float))
    if m == "isotonic":
        return IsotonicOvA(
            tuple(np.array(x, dtype=float) for x in d["breakpoints"]),
            tuple(np.array(x, dtype=float) for x in d["values"]),
        )
    if m == "vector":
        return VectorScaling(np.array(d["a_diag"], dtype=float), np.array(d["b"], dtype=float))
    if m == "matrix":
        return MatrixScaling(np.array(d["A"], dtype=float), np.array(d["b"], dtype=float))
    raise DataError(f"unknown calibrator method {m!r}")


def save_calibrator(calibrator: Calibrator, path) -> None:
    Path(path).write_text(json.dumps(calibrator.to_dict()), encoding="utf-8")


def load_calibrator(path) -> Calibrator:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"calibrator file not found: {path}")
    return calibrator_from_dict(json.loads(path.read_text(encoding="utf-8")))


def stack_predictions(preds: Sequence[Prediction]):
    return (
        np.array([p.predicted for p in preds], dtype=np.int64),
        np.array([p.confidence for p in preds], dtype=np.float64),
    )
