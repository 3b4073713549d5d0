import json
import shutil

import pytest
import yaml

from kgcal.cli import main
from kgcal.errors import ConfigError
from kgcal.pipeline import RunConfig, derive_seed, run_pipeline

from conftest import OWA_DIR, TOY_RUN, TOY_TRIPLES


def _toy_config(tmp_path, **overrides):
    d = yaml.safe_load(TOY_RUN.read_text(encoding="utf-8"))
    d.update(overrides)
    shutil.copy(TOY_TRIPLES, tmp_path / "triples.tsv")
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(d), encoding="utf-8")
    return path


def _reports(run_dir):
    return {p.name: p.read_bytes() for p in sorted(run_dir.iterdir()) if p.name != "manifest.json"}


def test_pipeline_cardinality(tmp_path):
    status, out = run_pipeline(RunConfig.load(_toy_config(tmp_path)))
    assert status == 0
    names = {p.name for p in out.iterdir()}
    assert {n for n in names if n.startswith("model_")} == {"model_transe.bin"}
    assert {n for n in names if n.startswith("calib_")} == {"calib_transe_softmax.json", "calib_transe_vector.json"}
    assert {n for n in names if n.startswith("cwa_") and n.endswith(".json")} == {
        "cwa_transe_softmax.json", "cwa_transe_vector.json",
    }
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert manifest["seeds"]["train:transe"] == derive_seed(3, "train:transe")
    assert manifest["seeds"]["split"] == derive_seed(3, "split")


def test_relative_paths_follow_the_config_file(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path.parent)
    cfg = RunConfig.load(_toy_config(tmp_path))
    assert cfg.output == str(tmp_path / "runs")
    assert cfg.data == [str(tmp_path / "triples.tsv")]


def test_pipeline_is_byte_reproducible(tmp_path):
    cfg = RunConfig.load(_toy_config(tmp_path))
    _, a = run_pipeline(cfg)
    _, b = run_pipeline(cfg)
    assert a != b
    assert _reports(a) == _reports(b)


def test_missing_data_fails_before_training(tmp_path):
    cfg = RunConfig.load(_toy_config(tmp_path, data="nowhere.tsv"))
    with pytest.raises(ConfigError, match="does not exist"):
        run_pipeline(cfg)
    assert not (tmp_path / "runs").exists()


@pytest.mark.parametrize("bad", [
    {"models": ["rotate"]},
    {"calibration": ["temperature"]},
    {"train": {"loss": "bce"}},
    {"grid": {"dim": [50], "layers": [2]}},
    {"split": [0.5, 0.5]},
])
def test_invalid_configs(tmp_path, bad):
    with pytest.raises(ConfigError):
        RunConfig.load(_toy_config(tmp_path, **bad)).validate()


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(_toy_config(tmp_path, colour="blue"))


def test_failed_stage_is_recorded(tmp_path):
    cfg = RunConfig.load(_toy_config(tmp_path, models=["distmult"], train={"epochs": 5, "learning_rate": 1e200}))
    status, out = run_pipeline(cfg)
    assert status == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed" and manifest["failed_stage"] == "train:distmult"
    assert (out / "graph.json").exists()


def test_grid_run(tmp_path):
    cfg = RunConfig.load(_toy_config(tmp_path, grid={"epochs": [200], "batch_size": [100, 200]},
                                     train={"dim": 50, "negatives": 1, "margin": 1.0}))
    assert len(cfg.grid_configs("transe")) == 2
    cfg.grid = {"batch_size": [100]}
    cfg.train = {"epochs": 3, "dim": 10}
    status, out = run_pipeline(cfg)
    assert status == 0 and (out / "grid_transe.json").exists()


def test_owa_run_with_labels(tmp_path):
    data = tmp_path / "all.tsv"
    data.write_text("".join((OWA_DIR / n).read_text() for n in ("train.txt", "valid.txt", "test.txt")),
                    encoding="utf-8")
    labels = tmp_path / "labels.tsv"
    labels.write_text("h1\tcapital_of\tt1\ttrue\n", encoding="utf-8")
    cfg = RunConfig(data=[str(data)], calibration=["softmax"], evaluate=["owa"], owa_threshold=0.34,
                    owa_labels=str(labels), train={"epochs": 2, "dim": 4}, output=str(tmp_path / "runs"))
    status, out = run_pipeline(cfg)
    # candidates without a verdict: data error, candidates kept on disk
    assert status == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["failed_stage"] == "eval-owa:transe_softmax"
    rows = (out / "owa_transe_softmax.tsv").read_text().splitlines()[1:]
    assert rows
    labels.write_text("".join("\t".join(r.split("\t")[:3]) + "\ttrue\n" for r in rows), encoding="utf-8")
    status, out = run_pipeline(cfg)
    assert status == 0
    res = json.loads((out / "owa_transe_softmax.json").read_text())
    assert res["accuracy"] == 1.0 and res["n_labeled"] == len(rows)


# --- subcommands -------------------------------------------------------------

def test_standalone_stages(tmp_path, capsys):
    g, m, c = tmp_path / "g.json", tmp_path / "m.bin", tmp_path / "c.json"
    assert main(["ingest", "--data", str(TOY_TRIPLES), "--seed", "2", "--out", str(g)]) == 0
    assert main(["train", "--model", "transh", "--graph", str(g), "--epochs", "3", "--dim", "10",
                 "--out", str(m), "--report", str(tmp_path / "t.json")]) == 0
    assert main(["calibrate", "--model", str(m), "--graph", str(g), "--method", "platt", "--out", str(c)]) == 0
    assert main(["eval-cwa", "--model", str(m), "--graph", str(g), "--calibrator", str(c),
                 "--out", str(tmp_path / "e.json"), "--csv", str(tmp_path / "e.csv")]) == 0
    rep = json.loads((tmp_path / "e.json").read_text())
    assert rep["calibrator"] == "platt" and rep["reliability"]["n"] > 0
    assert main(["predict-owa", "--model", str(m), "--graph", str(g), "--calibrator", str(c),
                 "--threshold", "0.5", "--out", str(tmp_path / "cand.tsv")]) == 0
    assert (tmp_path / "cand.tsv").read_text().startswith("head\trelation\ttail")
    capsys.readouterr()


def test_owa_subcommands_on_fixture(tmp_path, capsys):
    from conftest import owa_graph, owa_model
    from kgcal.graph import save_graph
    from kgcal.models import save_model

    g = owa_graph()
    save_graph(g, tmp_path / "g.json")
    save_model(owa_model(g), tmp_path / "m.bin")
    assert main(["predict-owa", "--model", str(tmp_path / "m.bin"), "--graph", str(tmp_path / "g.json"),
                 "--out", str(tmp_path / "cand.tsv")]) == 0
    assert main(["eval-owa", "--candidates", str(tmp_path / "cand.tsv"), "--graph", str(tmp_path / "g.json"),
                 "--labels", str(OWA_DIR / "labels.tsv"), "--out", str(tmp_path / "owa.json")]) == 0
    res = json.loads((tmp_path / "owa.json").read_text())
    assert res["accuracy"] == 0.75 and res["n_unsure"] == 1
    capsys.readouterr()


def test_run_and_report(tmp_path, capsys):
    path = _toy_config(tmp_path)
    assert main(["run", "--config", str(path), "--set", "calibration=[softmax, isotonic]"]) == 0
    run_dir = json.loads(capsys.readouterr().out)["run_dir"]
    assert main(["report", run_dir]) == 0
    table = capsys.readouterr().out
    assert "isotonic" in table and table.startswith("| setting")


def test_exit_codes(tmp_path, capsys):
    assert main(["ingest", "--data", str(tmp_path / "none.tsv"), "--out", str(tmp_path / "g.json")]) == 2
    bad = tmp_path / "bad.tsv"
    bad.write_text("only\ttwo\n", encoding="utf-8")
    assert main(["ingest", "--data", str(bad), "--out", str(tmp_path / "g.json")]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert main(["run", "--config", str(_toy_config(tmp_path)), "--set", "nonsense=1"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["train", "--model", "nope"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    capsys.readouterr()
