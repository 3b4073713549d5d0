"""End-to-end runs driven by a declarative YAML/JSON config."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import kernels
from .calibration import METHODS, calibration_set, fit_calibrator, save_calibrator
from .errors import ConfigError, KgcalError
from .evaluation import (
    dump_json, evaluate_cwa, evaluate_owa, generate_owa_candidates, load_label_file,
    per_relation_report, reliability_svg, write_candidates,
)
from .graph import SplitSpec, build_graph, load_dataset, remove_inverse_relations, save_graph
from .models import KINDS, save_model
from .training import GRID, TrainConfig, default_grid, grid_search, train

log = logging.getLogger(__name__)

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}


@dataclass
class RunConfig:
    data: list[str]
    models: list[str] = field(default_factory=lambda: ["transe"])
    calibration: list[str] = field(default_factory=lambda: ["softmax", "vector"])
    evaluate: list[str] = field(default_factory=lambda: ["cwa"])
    split: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    seed: int = 0
    order: str = "hrt"
    remove_inverse: float | None = None
    train: dict = field(default_factory=dict)
    grid: dict | str | None = None  # None, "full" or {axis: values}
    bins: int = 10
    owa_threshold: float = 0.8
    owa_queries: str = "test"
    owa_labels: str | None = None
    affine_l2: float = 0.0
    output: str = "runs"

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        if "data" not in d:
            raise ConfigError("run config needs 'data'")
        d = dict(d)
        if isinstance(d["data"], str):
            d["data"] = [d["data"]]
        if base_dir is not None:
            d["data"] = [str((base_dir / p) if not Path(p).is_absolute() else p) for p in d["data"]]
            if d.get("owa_labels"):
                p = Path(d["owa_labels"])
                d["owa_labels"] = str(p if p.is_absolute() else base_dir / p)
            out = Path(d.get("output", "runs"))
            d["output"] = str(out if out.is_absolute() else base_dir / out)
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            d = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(d, base_dir=path.parent)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def split_spec(self) -> SplitSpec:
        if len(self.split) != 3:
            raise ConfigError("split must list three fractions")
        return SplitSpec(*map(float, self.split), seed=derive_seed(self.seed, "split"))

    def train_config(self, kind: str) -> TrainConfig:
        extra = set(self.train) - _TRAIN_KEYS
        if extra:
            raise ConfigError(f"unknown train keys: {sorted(extra)}")
        return TrainConfig.for_kind(kind, **self.train, seed=derive_seed(self.seed, f"train:{kind}"))

    def grid_configs(self, kind: str) -> list[TrainConfig]:
        seed = derive_seed(self.seed, f"train:{kind}")
        if self.grid == "full":
            return default_grid(kind, seed=seed)
        axes = dict(self.grid)
        bad = set(axes) - set(GRID)
        if bad:
            raise ConfigError(f"grid axes must be among {sorted(GRID)}, got {sorted(bad)}")
        fixed = {k: v for k, v in self.train.items() if k not in axes}
        grid = [TrainConfig.for_kind(kind, **fixed, seed=seed)]
        for name, values in axes.items():
            values = values if isinstance(values, (list, tuple)) else [values]
            grid = [cfg.__class__(**{**cfg.to_dict(), name: v}) for cfg in grid for v in values]
        return grid

    def validate(self) -> None:
        for p in self.data:
            if not Path(p).exists():
                raise ConfigError(f"data path does not exist: {p}")
        if self.owa_labels and not Path(self.owa_labels).is_file():
            raise ConfigError(f"label file does not exist: {self.owa_labels}")
        for k in self.models:
            if k.lower() not in KINDS:
                raise ConfigError(f"unknown model kind {k!r}")
        for m in self.calibration:
            if m not in METHODS:
                raise ConfigError(f"unknown calibration method {m!r}")
        for e in self.evaluate:
            if e not in ("cwa", "owa"):
                raise ConfigError(f"unknown evaluation target {e!r}")
        if self.owa_queries not in ("test", "all"):
            raise ConfigError("owa_queries must be 'test' or 'all'")
        if self.grid is not None and self.grid != "full" and not isinstance(self.grid, dict):
            raise ConfigError("grid must be 'full' or a mapping of axis -> values")
        self.split_spec()
        for k in self.models:
            cfgs = self.grid_configs(k) if self.grid is not None else [self.train_config(k)]
            for cfg in cfgs:
                cfg.check(k)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, KgcalError):
        return exc.exit_code
    if isinstance(exc, ArithmeticError):
        return 3
    return 2


def derive_seed(seed: int, stream: str) -> int:
    """Child seed for a named stage, stable across runs and platforms."""
    digest = hashlib.sha256(stream.encode()).digest()
    ss = np.random.SeedSequence([int(seed), int.from_bytes(digest[:4], "little")])
    return int(ss.generate_state(1)[0])


def _run_dir(root: Path, digest: str) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    base = root / f"run-{stamp}-{digest[:8]}"
    out, i = base, 1
    while out.exists():
        out = Path(f"{base}-{i}")
        i += 1
    out.mkdir(parents=True)
    return out


class _Manifest:
    def __init__(self, path: Path, config: RunConfig):
        self.path = path
        self.data = {
            "config": config.to_dict(),
            "config_sha256": config.digest(),
            "backend": kernels.BACKEND_NAME,
            "seeds": {"global": config.seed, "split": config.split_spec().seed},
            "stages": [],
            "status": "running",
            "started": _dt.datetime.now().isoformat(timespec="seconds"),
        }
        self.write()

    def stage(self, name: str, status: str, **info):
        self.data["stages"].append({"name": name, "status": status, **info})
        self.write()

    def write(self):
        dump_json(self.data, self.path)


def run_pipeline(config: RunConfig) -> tuple[int, Path | None]:
    """Run ingest -> train -> calibrate -> evaluate; returns (exit status, run dir).

    Validation problems raise before anything is written. Failures in a later
    stage are recorded in the manifest and reflected in the exit status.
    """
    config.validate()
    out = _run_dir(Path(config.output), config.digest())
    manifest = _Manifest(out / "manifest.json", config)
    stage = "ingest"
    try:
        triples = []
        for p in config.data:
            triples.extend(load_dataset(p, config.order))
        if config.remove_inverse is not None:
            triples = remove_inverse_relations(triples, config.remove_inverse)
        graph = build_graph(triples, config.split_spec())
        save_graph(graph, out / "graph.json")
        manifest.stage(stage, "ok", entities=graph.num_entities, relations=graph.num_relations,
                       sizes=[len(graph.train), len(graph.valid), len(graph.test)])
        labels = load_label_file(config.owa_labels) if config.owa_labels else None

        for kind in (k.lower() for k in config.models):
            stage = f"train:{kind}"
            timing = {}
            if config.grid is not None:
                cfg, model, results = grid_search(graph, kind, config.grid_configs(kind))
                dump_json([{"config": r.config.to_dict(), "valid_accuracy": r.valid_accuracy}
                           for r in results], out / f"grid_{kind}.json")
            else:
                cfg = config.train_config(kind)
                model, report = train(graph, kind, cfg)
                metrics = report.to_dict()
                timing["seconds"] = metrics.pop("seconds")
                # wall-clock time lives in the manifest so report files stay byte-stable
                dump_json({"config": cfg.to_dict(), **metrics}, out / f"train_{kind}.json")
            save_model(model, out / f"model_{kind}.bin")
            manifest.data["seeds"][stage] = cfg.seed
            manifest.stage(stage, "ok", config=cfg.to_dict(), model_sha256=model.checksum(), **timing)

            cal_data = calibration_set(model, graph.valid)
            for method in config.calibration:
                stage = f"calibrate:{kind}:{method}"
                kw = {"l2": config.affine_l2} if method in ("vector", "matrix") else {}
                cal = fit_calibrator(method, cal_data, **kw)
                save_calibrator(cal, out / f"calib_{kind}_{method}.json")
                manifest.stage(stage, "ok")

                tag = f"{kind}_{method}"
                if "cwa" in config.evaluate:
                    stage = f"eval-cwa:{tag}"
                    res = evaluate_cwa(model, cal, graph, "test", config.bins)
                    per_rel = per_relation_report(res.predictions, graph.test[:, 1], config.bins)
                    dump_json({
                        "model": kind, "calibrator": method, "split": "test",
                        "accuracy": res.accuracy, "reliability": res.report.to_dict(),
                        "per_relation": {graph.relations[r]: rep.to_dict() for r, rep in per_rel.items()},
                    }, out / f"cwa_{tag}.json")
                    (out / f"cwa_{tag}.csv").write_text(res.report.to_csv(), encoding="utf-8")
                    (out / f"cwa_{tag}.svg").write_text(reliability_svg(res.report, tag), encoding="utf-8")
                    manifest.stage(stage, "ok", accuracy=res.accuracy, ece=res.report.ece)
                if "owa" in config.evaluate:
                    stage = f"predict-owa:{tag}"
                    queries = None
                    if config.owa_queries == "all":
                        queries = list(dict.fromkeys((int(h), int(t)) for h, _, t in graph.all_triples()))
                    cands = generate_owa_candidates(model, cal, graph, queries, config.owa_threshold)
                    write_candidates(cands, out / f"owa_{tag}.tsv")
                    manifest.stage(stage, "ok", candidates=len(cands))
                    if labels is not None:
                        stage = f"eval-owa:{tag}"
                        res = evaluate_owa(cands, labels, config.bins)
                        dump_json({"model": kind, "calibrator": method, **res.to_dict()}, out / f"owa_{tag}.json")
                        manifest.stage(stage, "ok", accuracy=res.accuracy, ece=res.report.ece)
    except Exception as exc:
        if not isinstance(exc, (KgcalError, OSError, ArithmeticError)):
            raise
        log.error("stage %s failed: %s", stage, exc)
        manifest.stage(stage, "failed", error=str(exc), error_type=type(exc).__name__)
        manifest.data["status"] = "failed"
        manifest.data["failed_stage"] = stage
        manifest.write()
        return exit_code_for(exc), out
    manifest.data["status"] = "ok"
    manifest.data["finished"] = _dt.datetime.now().isoformat(timespec="seconds")
    manifest.write()
    return 0, out
