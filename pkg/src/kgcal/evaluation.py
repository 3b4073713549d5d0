"""Closed-world accuracy/ECE, filtered ranks, and open-world candidate evaluation."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .calibration import Calibrator, Prediction, predict
from .errors import DataError
from .graph import KnowledgeGraph
from .models import KgeModel, score_all_relations, score_pairs

VERDICTS = ("true", "false", "unsure")
# confidences within this distance of a bin edge are treated as lying on it
_EDGE_SNAP = 1e-9


@dataclass
class ReliabilityReport:
    bins: int
    counts: list[int]
    mean_confidence: list[float | None]
    accuracy: list[float | None]
    ece: float | None
    n: int
    small_sample: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin", "lower", "upper", "count", "mean_confidence", "accuracy"])
        for m in range(self.bins):
            w.writerow([
                m, repr(m / self.bins), repr((m + 1) / self.bins), self.counts[m],
                "" if self.mean_confidence[m] is None else repr(self.mean_confidence[m]),
                "" if self.accuracy[m] is None else repr(self.accuracy[m]),
            ])
        return buf.getvalue()


def bin_index(confidence, bins: int = 10) -> np.ndarray:
    """Bin of each confidence among ``bins`` equal slices of [0, 1].

    A confidence on an interior edge m/M goes to the lower bin (m - 1); 0 goes
    to the first bin and 1 to the last.
    """
    x = np.asarray(confidence, dtype=np.float64) * bins
    r = np.rint(x)
    x = np.where(np.abs(x - r) < _EDGE_SNAP * bins, r, x)
    return np.clip(np.ceil(x).astype(np.int64) - 1, 0, bins - 1)


def reliability_report(confidences, correct, bins: int = 10, small_sample: bool | None = None) -> ReliabilityReport:
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    corr = np.asarray(correct, dtype=np.float64).ravel()
    if conf.shape != corr.shape:
        raise DataError("confidences and correctness must align")
    if bins < 1:
        raise DataError("bins must be >= 1")
    n = conf.size
    idx = bin_index(conf, bins)
    counts = np.bincount(idx, minlength=bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    corr_sum = np.bincount(idx, weights=corr, minlength=bins)
    mean_conf = [None if c == 0 else float(s / c) for s, c in zip(conf_sum, counts)]
    acc = [None if c == 0 else float(s / c) for s, c in zip(corr_sum, counts)]
    ece = None
    if n:
        ece = float(sum(c / n * abs(a - m) for c, a, m in zip(counts, acc, mean_conf) if c))
    if small_sample is None:
        small_sample = n < bins
    return ReliabilityReport(bins, counts.tolist(), mean_conf, acc, ece, n, small_sample)


def expected_calibration_error(confidences, correct, bins: int = 10) -> float:
    return reliability_report(confidences, correct, bins).ece


class CwaResult(NamedTuple):
    accuracy: float
    report: ReliabilityReport
    predictions: list


def evaluate_cwa(model: KgeModel, calibrator: Calibrator, graph: KnowledgeGraph,
                 split: str = "test", bins: int = 10) -> CwaResult:
    """Top-1 relation prediction accuracy and reliability on a split."""
    triples = graph.get_split(split)
    if len(triples) == 0:
        raise DataError(f"split {split!r} is empty")
    Z = score_pairs(model, triples[:, 0], triples[:, 2])
    P, pred, conf = predict(calibrator, Z)
    correct = pred == triples[:, 1]
    preds = [
        Prediction((int(h), int(t)), P[i], int(pred[i]), float(conf[i]))
        for i, (h, t) in enumerate(triples[:, [0, 2]])
    ]
    return CwaResult(float(correct.mean()), reliability_report(conf, correct, bins), preds)


def filtered_rank(model: KgeModel, graph: KnowledgeGraph, query, gold: int) -> int:
    """Rank of ``gold`` among relations for ``(h, ?, t)``, known competitors removed.

    Ties count against the gold relation.
    """
    h, t = (int(x) for x in query)
    z = score_all_relations(model, h, t).values
    return _filtered_rank(z, h, t, int(gold), graph.known)


def _filtered_rank(z, h, t, gold, known) -> int:
    s = z[gold]
    rank = 1
    for i in range(len(z)):
        if i != gold and z[i] >= s and (h, i, t) not in known:
            rank += 1
    return rank


def filtered_ranks(model: KgeModel, graph: KnowledgeGraph, triples) -> np.ndarray:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    Z = score_pairs(model, triples[:, 0], triples[:, 2])
    return np.array([
        _filtered_rank(Z[i], int(h), int(t), int(r), graph.known)
        for i, (h, r, t) in enumerate(triples)
    ], dtype=np.int64)


def hits_at(ranks, k: int) -> float:
    return float(np.mean(np.asarray(ranks) <= k))


def per_relation_report(predictions: Sequence[Prediction], golds, bins: int = 10) -> dict[int, ReliabilityReport]:
    """Reliability report per gold relation; groups under ``bins`` items are flagged."""
    if len(predictions) == 0:
        raise DataError("no predictions")
    golds = np.asarray(golds, dtype=np.int64).ravel()
    if len(golds) != len(predictions):
        raise DataError("one gold relation per prediction required")
    pred = np.array([p.predicted for p in predictions])
    conf = np.array([p.confidence for p in predictions])
    out = {}
    for r in np.unique(golds):
        m = golds == r
        out[int(r)] = reliability_report(conf[m], pred[m] == r, bins)
    return out


# --- open world ------------------------------------------------------------

@dataclass(frozen=True)
class OwaCandidate:
    head: int
    relation: int
    tail: int
    confidence: float
    model_kind: str
    calibrator: str
    head_label: str = ""
    relation_label: str = ""
    tail_label: str = ""

    @property
    def labels(self) -> tuple[str, str, str]:
        return self.head_label, self.relation_label, self.tail_label


def default_owa_queries(graph: KnowledgeGraph) -> list[tuple[int, int]]:
    """Distinct (h, t) pairs of the test split, in split order."""
    return list(dict.fromkeys((int(h), int(t)) for h, _, t in graph.test))


def generate_owa_candidates(model: KgeModel, calibrator: Calibrator, graph: KnowledgeGraph,
                            queries=None, threshold: float = 0.8) -> list[OwaCandidate]:
    """Top-1 predictions with confidence >= threshold that are not in the graph,
    sorted by decreasing confidence."""
    if not 0 < threshold <= 1:
        raise DataError(f"threshold must be in (0, 1], got {threshold}")
    if queries is None:
        queries = default_owa_queries(graph)
    if len(queries) == 0:
        return []
    q = np.asarray(queries, dtype=np.int64).reshape(-1, 2)
    Z = score_pairs(model, q[:, 0], q[:, 1])
    _, pred, conf = predict(calibrator, Z)
    out = []
    for (h, t), r, p in zip(q.tolist(), pred.tolist(), conf.tolist()):
        if p >= threshold and (h, r, t) not in graph.known:
            out.append(OwaCandidate(
                h, r, t, p, model.kind, calibrator.method,
                graph.entities[h], graph.relations[r], graph.entities[t],
            ))
    out.sort(key=lambda c: -c.confidence)
    return out


def load_label_file(path) -> dict[tuple[str, str, str], str]:
    """Read ``head<TAB>relation<TAB>tail<TAB>verdict`` lines."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"label file not found: {path}")
    labels: dict[tuple[str, str, str], str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
            verdict = fields[3].strip().lower()
            if verdict not in VERDICTS:
                raise DataError(f"{path}:{lineno}: verdict must be one of {VERDICTS}, got {fields[3]!r}")
            key = (fields[0], fields[1], fields[2])
            if labels.get(key, verdict) != verdict:
                raise DataError(f"{path}:{lineno}: conflicting verdicts for {key}")
            labels[key] = verdict
    return labels


@dataclass
class OwaResult:
    accuracy: float | None
    report: ReliabilityReport
    n_labeled: int
    n_unsure: int

    @property
    def defined(self) -> bool:
        return self.n_labeled > 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "defined": self.defined,
            "n_labeled": self.n_labeled,
            "n_unsure": self.n_unsure,
            "reliability": self.report.to_dict(),
        }


def evaluate_owa(candidates: Sequence[OwaCandidate], labels, bins: int = 10) -> OwaResult:
    """Score candidates against external verdicts; ``unsure`` ones are dropped."""
    if not isinstance(labels, dict):
        labels = load_label_file(labels)
    missing = [c.labels for c in candidates if c.labels not in labels]
    if missing:
        listing = "; ".join("\t".join(m) for m in missing)
        raise DataError(f"{len(missing)} candidate(s) have no verdict: {listing}")
    conf, correct = [], []
    unsure = 0
    for c in candidates:
        v = labels[c.labels]
        if v == "unsure":
            unsure += 1
            continue
        conf.append(c.confidence)
        correct.append(v == "true")
    report = reliability_report(conf, correct, bins)
    acc = float(np.mean(correct)) if correct else None
    return OwaResult(acc, report, len(conf), unsure)


# --- report files ----------------------------------------------------------

def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_candidates(candidates: Sequence[OwaCandidate], path) -> None:
    """TSV with the label-file columns first so it can be annotated in place."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["head", "relation", "tail", "confidence", "model", "calibrator"])
        for c in candidates:
            w.writerow([c.head_label, c.relation_label, c.tail_label, repr(c.confidence), c.model_kind, c.calibrator])


def read_candidates(path, graph: KnowledgeGraph) -> list[OwaCandidate]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    for row in rows[1:]:
        if not row:
            continue
        h, r, t = graph.encode((row[0], row[1], row[2]))
        out.append(OwaCandidate(h, r, t, float(row[3]), row[4], row[5], row[0], row[1], row[2]))
    return out


def reliability_svg(report: ReliabilityReport, title: str = "", size: int = 320) -> str:
    """Reliability diagram: per-bin accuracy bars against the diagonal."""
    pad = 40
    plot = size - 2 * pad
    x0, y0 = pad, size - pad
    width = plot / report.bins
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="10">',
        f'<rect x="{x0}" y="{pad}" width="{plot}" height="{plot}" fill="white" stroke="black"/>',
    ]
    for m in range(report.bins):
        acc = report.accuracy[m]
        if acc is None:
            continue
        hgt = acc * plot
        parts.append(
            f'<rect x="{x0 + m * width:.2f}" y="{y0 - hgt:.2f}" width="{width:.2f}" '
            f'height="{hgt:.2f}" fill="#4c72b0" stroke="#1f3b63"/>'
        )
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot}" y2="{pad}" stroke="gray" stroke-dasharray="4 3"/>')
    for m in range(0, report.bins + 1, max(1, report.bins // 5)):
        v = m / report.bins
        parts.append(f'<text x="{x0 + v * plot:.2f}" y="{y0 + 14}" text-anchor="middle">{v:.1f}</text>')
        parts.append(f'<text x="{x0 - 6}" y="{y0 - v * plot + 3:.2f}" text-anchor="end">{v:.1f}</text>')
    parts.append(f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle">confidence</text>')
    parts.append(
        f'<text x="12" y="{size / 2}" text-anchor="middle" transform="rotate(-90 12 {size / 2})">accuracy</text>'
    )
    ece = "n/a" if report.ece is None else f"{report.ece:.3f}"
    label = f"{title} ECE={ece}".strip()
    parts.append(f'<text x="{size / 2}" y="{pad - 12}" text-anchor="middle">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
