"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import kernels
from .calibration import METHODS, IdentitySoftmax, calibration_set, fit_calibrator, load_calibrator, save_calibrator
from .errors import ConfigError, DataError
from .evaluation import (
    default_owa_queries, dump_json, evaluate_cwa, evaluate_owa, filtered_ranks, generate_owa_candidates,
    hits_at, load_label_file, per_relation_report, read_candidates, reliability_svg, write_candidates,
)
from .graph import (
    SplitSpec, build_graph, load_dataset, load_graph, load_split_dataset, remove_inverse_relations, save_graph,
)
from .models import KINDS, load_model, save_model
from .pipeline import RunConfig, exit_code_for, run_pipeline
from .training import TrainConfig, default_grid, grid_search, train

log = logging.getLogger("kgcal")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(obj, path=None):
    if path:
        dump_json(obj, path)
    else:
        print(json.dumps(obj, indent=2, sort_keys=True))


def _set_threads(n):
    if n is None:
        n = os.environ.get("KGCAL_THREADS")
    if n is None or not kernels.HAS_NUMBA:
        return
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def _graph_from_args(args):
    if getattr(args, "graph", None):
        return load_graph(args.graph)
    if getattr(args, "data", None):
        if getattr(args, "keep_split", False):
            if args.remove_inverse is not None:
                raise ConfigError("--keep-split cannot be combined with --remove-inverse")
            return load_split_dataset(args.data, args.order)
        triples = load_dataset(args.data, args.order)
        if args.remove_inverse is not None:
            triples = remove_inverse_relations(triples, args.remove_inverse)
        return build_graph(triples, SplitSpec.parse(args.split, args.seed))
    raise ConfigError("either --graph or --data is required")


def _calibrator_from_args(args, model):
    if args.calibrator:
        return load_calibrator(args.calibrator)
    return IdentitySoftmax(model.num_relations)


def cmd_ingest(args):
    graph = _graph_from_args(args)
    save_graph(graph, args.out)
    _emit({
        "entities": graph.num_entities, "relations": graph.num_relations,
        "train": len(graph.train), "valid": len(graph.valid), "test": len(graph.test),
        "out": str(args.out),
    })


def _train_overrides(args) -> dict:
    kw = {}
    for name, key in (("epochs", "epochs"), ("batch", "batch_size"), ("dim", "dim"), ("neg", "negatives"),
                      ("margin", "margin"), ("lr", "learning_rate"), ("train_seed", "seed")):
        v = getattr(args, name)
        if v is not None:
            kw[key] = v
    return kw


def cmd_train(args):
    graph = _graph_from_args(args)
    cfg = TrainConfig.for_kind(args.model, **_train_overrides(args))
    model, report = train(graph, args.model, cfg)
    save_model(model, args.out)
    if args.save_graph:
        save_graph(graph, args.save_graph)
    _emit({"model": model.kind, "config": cfg.to_dict(), **report.to_dict()}, args.report)


def _axis(text, cast):
    return [cast(x) for x in text.split(",")] if text else None


def cmd_grid(args):
    graph = _graph_from_args(args)
    fixed = {"seed": args.train_seed} if args.train_seed is not None else {}
    grid = default_grid(args.model, **fixed)
    narrowed = {
        "epochs": _axis(args.epochs, int), "batch_size": _axis(args.batch, int), "dim": _axis(args.dim, int),
        "negatives": _axis(args.neg, int), "margin": _axis(args.margin, float),
    }
    for key, values in narrowed.items():
        if values is not None:
            grid = [c for c in grid if getattr(c, key) in values]
    if args.lr is not None:
        grid = [TrainConfig(**{**c.to_dict(), "learning_rate": args.lr}) for c in grid]
    if not grid:
        raise ConfigError("grid restriction left no configurations (values must come from the default grid)")
    best, model, results = grid_search(graph, args.model, grid)
    save_model(model, args.out)
    _emit({
        "model": model.kind, "best": best.to_dict(),
        "results": [{"config": r.config.to_dict(), "valid_accuracy": r.valid_accuracy} for r in results],
    }, args.report)


def cmd_calibrate(args):
    model = load_model(args.model)
    graph = load_graph(args.graph)
    kw = {"l2": args.l2} if args.method in ("vector", "matrix") else {}
    cal = fit_calibrator(args.method, calibration_set(model, graph.get_split(args.split)), **kw)
    save_calibrator(cal, args.out)
    _emit({"method": cal.method, "k": cal.k, "out": str(args.out)})


def cmd_eval_cwa(args):
    model = load_model(args.model)
    graph = load_graph(args.graph)
    cal = _calibrator_from_args(args, model)
    res = evaluate_cwa(model, cal, graph, args.split, args.bins)
    triples = graph.get_split(args.split)
    ranks = filtered_ranks(model, graph, triples)
    out = {
        "model": model.kind, "calibrator": cal.method, "split": args.split,
        "accuracy": res.accuracy, "reliability": res.report.to_dict(),
        "filtered_hits": {f"hits@{k}": hits_at(ranks, k) for k in (1, 3, 10)},
    }
    if args.per_relation:
        per = per_relation_report(res.predictions, triples[:, 1], args.bins)
        out["per_relation"] = {graph.relations[r]: rep.to_dict() for r, rep in per.items()}
    _emit(out, args.out)
    if args.csv:
        Path(args.csv).write_text(res.report.to_csv(), encoding="utf-8")
    if args.svg:
        Path(args.svg).write_text(reliability_svg(res.report, f"{model.kind} {cal.method}"), encoding="utf-8")


def cmd_predict_owa(args):
    model = load_model(args.model)
    graph = load_graph(args.graph)
    cal = _calibrator_from_args(args, model)
    if args.queries == "test":
        queries = default_owa_queries(graph)
    elif args.queries == "all":
        queries = list(dict.fromkeys((int(h), int(t)) for h, _, t in graph.all_triples()))
    else:
        queries = []
        with open(args.queries, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                parts = line.rstrip("\r\n").split("\t")
                if len(parts) != 2:
                    raise DataError(f"{args.queries}:{lineno}: expected head<TAB>tail")
                try:
                    queries.append((graph.entity_index[parts[0]], graph.entity_index[parts[1]]))
                except KeyError as exc:
                    raise DataError(f"{args.queries}:{lineno}: unknown entity {exc.args[0]!r}") from None
    cands = generate_owa_candidates(model, cal, graph, queries, args.threshold)
    write_candidates(cands, args.out)
    _emit({"candidates": len(cands), "queries": len(queries), "out": str(args.out)})


def cmd_eval_owa(args):
    graph = load_graph(args.graph)
    cands = read_candidates(args.candidates, graph)
    res = evaluate_owa(cands, load_label_file(args.labels), args.bins)
    _emit(res.to_dict(), args.out)


def cmd_report(args):
    run = Path(args.run_dir)
    rows = []
    for p in sorted(run.glob("cwa_*.json")) + sorted(run.glob("owa_*.json")):
        d = json.loads(p.read_text(encoding="utf-8"))
        rel = d.get("reliability", {})
        rows.append((p.stem.split("_", 1)[0], d.get("model"), d.get("calibrator"), d.get("accuracy"), rel.get("ece"), rel.get("n")))
        if args.svg and rel:
            from .evaluation import ReliabilityReport

            rep = ReliabilityReport(**rel)
            (run / f"{p.stem}.svg").write_text(reliability_svg(rep, p.stem), encoding="utf-8")
    if not rows:
        raise DataError(f"no cwa_*.json / owa_*.json reports in {run}")

    def fmt(x):
        return "-" if x is None else (f"{x:.4f}" if isinstance(x, float) else str(x))

    lines = ["| setting | model | calibrator | accuracy | ECE | n |", "|---|---|---|---|---|---|"]
    lines += ["| " + " | ".join(fmt(x) for x in row) + " |" for row in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")


def cmd_run(args):
    cfg = RunConfig.load(args.config)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not hasattr(cfg, key):
            raise ConfigError(f"--set expects KEY=VALUE with a run config key, got {item!r}")
        setattr(cfg, key, yaml.safe_load(value))
    if args.out is not None:
        cfg.output = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    status, out = run_pipeline(cfg)
    print(json.dumps({"status": status, "run_dir": str(out)}))
    return status


def _add_graph_source(p, required_graph=False):
    p.add_argument("--graph", required=required_graph, help="graph checkpoint (JSON)")
    if required_graph:
        return
    p.add_argument("--data", help="triple file or benchmark directory (train/valid/test.txt)")
    p.add_argument("--order", default="hrt", help="column order of triple files (default hrt)")
    p.add_argument("--split", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--remove-inverse", type=float, nargs="?", const=0.8, default=None,
                   metavar="THRESHOLD", help="drop inverse relations (default threshold 0.8)")
    p.add_argument("--keep-split", action="store_true",
                   help="use the dataset's own train/valid/test files instead of re-splitting")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="kgcal", description="Train, calibrate and evaluate knowledge graph embeddings.")
    ap.add_argument("--threads", type=int, default=None, help="numba thread count (env KGCAL_THREADS)")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="load triples, split and save a graph checkpoint")
    _add_graph_source(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    for name, func in (("train", cmd_train), ("grid", cmd_grid)):
        p = sub.add_parser(name, help="train one configuration" if name == "train" else "grid-search hyperparameters")
        p.add_argument("--model", required=True, choices=sorted(KINDS))
        _add_graph_source(p)
        typ = (lambda t: t) if name == "train" else (lambda t: str)
        p.add_argument("--epochs", type=typ(int))
        p.add_argument("--batch", type=typ(int))
        p.add_argument("--dim", type=typ(int))
        p.add_argument("--neg", type=typ(int))
        p.add_argument("--margin", type=typ(float))
        p.add_argument("--lr", type=float)
        p.add_argument("--train-seed", type=int, help="seed for init/sampling (default 0)")
        p.add_argument("--out", required=True, help="model checkpoint path")
        p.add_argument("--report", help="write the JSON report here instead of stdout")
        if name == "train":
            p.add_argument("--save-graph", help="also save the graph built from --data")
        p.set_defaults(func=func)

    p = sub.add_parser("calibrate", help="fit a calibrator on validation scores")
    p.add_argument("--model", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--split", default="valid")
    p.add_argument("--l2", type=float, default=0.0, help="L2 weight toward identity for vector/matrix")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval-cwa", help="closed-world accuracy and ECE")
    p.add_argument("--model", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--calibrator", help="calibrator JSON (default: plain softmax)")
    p.add_argument("--split", default="test", choices=("valid", "test"))
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--per-relation", action="store_true")
    p.add_argument("--out")
    p.add_argument("--csv")
    p.add_argument("--svg")
    p.set_defaults(func=cmd_eval_cwa)

    p = sub.add_parser("predict-owa", help="high-confidence predictions outside the graph")
    p.add_argument("--model", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--calibrator")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--queries", default="test", help="'test', 'all', or a head<TAB>tail file")
    p.add_argument("--out", required=True, help="candidate TSV")
    p.set_defaults(func=cmd_predict_owa)

    p = sub.add_parser("eval-owa", help="score candidates against a label file")
    p.add_argument("--candidates", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_owa)

    p = sub.add_parser("report", help="summarize the reports of a run directory")
    p.add_argument("run_dir")
    p.add_argument("--svg", action="store_true", help="(re)draw reliability diagrams")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="run the whole pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output root (overrides the config)")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key; VALUE is parsed as YAML (repeatable)")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        _set_threads(args.threads)
        return args.func(args) or 0
    except Exception as exc:
        code = exit_code_for(exc)
        if code == 2 and not isinstance(exc, (DataError, OSError)):
            raise
        print(f"kgcal: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
