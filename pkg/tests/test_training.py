import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgcal.errors import ConfigError, DataError, NumericalError
from kgcal.graph import load_split_dataset
from kgcal.models import KINDS
from kgcal.training import (
    GRID, RECIPES, TrainConfig, bce_loss, default_grid, grid_search, loss_and_grads, margin_ranking_loss,
    relation_accuracy, sample_negative_relations, train,
)

from conftest import OWA_DIR, random_model
from oracles import gradient_errors


def test_margin_loss_values():
    assert margin_ranking_loss(2.0, [0.0, 1.5], 1.0) == 0.5
    assert margin_ranking_loss(2.0, [0.0], 1.0) == 0.0
    assert margin_ranking_loss(-1.0, [-1.0, -3.0], 5.0) == 5.0 + 3.0


def test_bce_loss_values():
    assert bce_loss(0.0, [0.0]) == pytest.approx(2 * math.log(2), abs=1e-15)
    # large margins saturate without overflow
    assert bce_loss(800.0, [-800.0]) == 0.0
    assert bce_loss(-800.0, []) == 800.0


@pytest.mark.parametrize("kind", sorted(KINDS))
@pytest.mark.parametrize("loss", ["margin", "bce"])
def test_analytic_gradients_match_finite_differences(kind, loss):
    rng = np.random.default_rng(zlib.crc32(f"{kind}:{loss}".encode()))
    errors = gradient_errors(random_model, loss_and_grads, kind, loss, rng, instances=10, probes=12)
    assert len(errors) >= 100
    assert max(errors) < 1e-4


def test_loss_and_grads_reports_batch_mean():
    rng = np.random.default_rng(0)
    m = random_model("distmult", 3, 4, 3, rng)
    triples = np.array([[0, 0, 1], [2, 1, 3]])
    negs = np.array([[1], [2]])
    loss, _ = loss_and_grads(m, triples, negs, "bce")
    from kgcal.models import score_triple

    want = np.mean([
        bce_loss(score_triple(m, 0, 0, 1), [score_triple(m, 0, 1, 1)]),
        bce_loss(score_triple(m, 2, 1, 3), [score_triple(m, 2, 2, 3)]),
    ])
    assert loss == pytest.approx(want, rel=1e-12)


def test_negative_sampling_never_returns_gold():
    rng = np.random.default_rng(1)
    out = sample_negative_relations((0, 2, 1), 500, 4, rng)
    rels = [r for _, r, _ in out]
    assert 2 not in rels
    assert set(rels) == {0, 1, 3}
    assert all(h == 0 and t == 1 for h, _, t in out)


def test_negative_sampling_is_roughly_uniform():
    rng = np.random.default_rng(2)
    rels = [r for _, r, _ in sample_negative_relations((0, 0, 0), 30000, 4, rng)]
    counts = np.bincount(rels, minlength=4)[1:]
    assert np.all(np.abs(counts / 30000 - 1 / 3) < 0.015)


def test_negative_sampling_needs_two_relations():
    with pytest.raises(DataError):
        sample_negative_relations((0, 0, 0), 1, 1, np.random.default_rng())


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 20), st.integers(0, 19), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_negative_sampling_range(k, r, n, seed):
    r = r % k
    out = sample_negative_relations((3, r, 4), n, k, np.random.default_rng(seed))
    assert len(out) == n
    assert all(0 <= q < k and q != r for _, q, _ in out)


def test_recipes_enforced():
    with pytest.raises(ConfigError):
        TrainConfig(loss="bce").check("transe")
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="sgd").check("complex")
    with pytest.raises(ConfigError):
        TrainConfig(margin=0.0).check("distmult")
    TrainConfig(margin=0.0).check("complex")
    assert TrainConfig.for_kind("distmult").optimizer == "adagrad"


def test_default_grid_sizes():
    assert len(default_grid("transe")) == 3 * 3 * 2 * 2 * 3
    grid = default_grid("complex", seed=7)
    assert len(grid) == 3 * 3 * 2 * 2
    assert all(c.seed == 7 and c.in_grid() for c in grid)
    assert {c.dim for c in grid} == set(GRID["dim"])
    assert all((c.loss, c.optimizer) == RECIPES["complex"] for c in grid)


@pytest.mark.parametrize("kind", sorted(KINDS))
def test_training_is_deterministic_and_learns(toy_graph, kind):
    cfg = TrainConfig.for_kind(kind, epochs=15, batch_size=100, dim=20, negatives=2, seed=3)
    m1, r1 = train(toy_graph, kind, cfg)
    m2, r2 = train(toy_graph, kind, cfg)
    assert m1.checksum() == m2.checksum()
    assert r1.epoch_losses == r2.epoch_losses
    assert r1.epoch_losses[-1] < r1.epoch_losses[0]
    m1.validate()


def test_translational_entities_stay_unit_norm(toy_graph):
    m, _ = train(toy_graph, "transh", TrainConfig.for_kind("transh", epochs=3, dim=10))
    assert np.allclose(np.linalg.norm(m.entity_emb, axis=1), 1.0)
    assert np.allclose(np.linalg.norm(m.normals, axis=1), 1.0)


def test_seed_changes_model(toy_graph):
    a, _ = train(toy_graph, "transe", TrainConfig.for_kind("transe", epochs=2, dim=10, seed=1))
    b, _ = train(toy_graph, "transe", TrainConfig.for_kind("transe", epochs=2, dim=10, seed=2))
    assert a.checksum() != b.checksum()


def test_divergence_is_reported():
    g = load_split_dataset(OWA_DIR)
    cfg = TrainConfig.for_kind("distmult", epochs=50, dim=10, learning_rate=1e200)
    with pytest.raises(NumericalError, match="non-finite"):
        train(g, "distmult", cfg)


def test_grid_search_picks_best_valid_accuracy(toy_graph):
    grid = [TrainConfig.for_kind("transe", epochs=e, dim=10, seed=1) for e in (1, 10)]
    best, model, results = grid_search(toy_graph, "transe", grid)
    accs = [r.valid_accuracy for r in results]
    assert best == grid[int(np.argmax(accs))]
    assert relation_accuracy(model, toy_graph.valid) == max(accs)


def test_grid_search_ties_go_to_first(toy_graph):
    cfg = TrainConfig.for_kind("transe", epochs=1, dim=10)
    best, _, results = grid_search(toy_graph, "transe", [cfg, TrainConfig.for_kind("transe", epochs=1, dim=10)])
    assert results[0].valid_accuracy == results[1].valid_accuracy
    assert best is cfg


def test_empty_grid():
    with pytest.raises(ConfigError):
        grid_search(load_split_dataset(OWA_DIR), "transe", [])
