"""The numba and numpy backends must agree to rounding."""
import os
import subprocess
import sys

import numpy as np
import pytest

from kgcal import kernels
from kgcal.kernels import numpy_impl

from conftest import random_model

nb = kernels.numba_impl
needs_numba = pytest.mark.skipif(nb is None, reason="numba backend disabled or missing")
KIND_CODES = [kernels.TRANSE, kernels.TRANSH, kernels.DISTMULT, kernels.COMPLEX]
KIND_NAMES = ["transe", "transh", "distmult", "complex"]


def _batch(rng, ne=9, nr=5, B=16, n=3):
    heads = rng.integers(ne, size=B)
    rels = rng.integers(nr, size=B)
    tails = rng.integers(ne, size=B)
    negs = (rels[:, None] + rng.integers(1, nr, size=(B, n))) % nr
    return heads, rels, tails, negs


@needs_numba
@pytest.mark.parametrize("code,name", list(zip(KIND_CODES, KIND_NAMES)))
def test_score_pairs_agree(code, name):
    rng = np.random.default_rng(code)
    m = random_model(name, 6, 9, 5, rng)
    nrm = m._normals_or_dummy()
    heads, tails = rng.integers(9, size=20), rng.integers(9, size=20)
    rels = np.arange(5)
    a = nb.score_pairs(code, m.entity_emb, m.rel_emb, nrm, heads, tails, rels)
    b = numpy_impl.score_pairs(code, m.entity_emb, m.rel_emb, nrm, heads, tails, rels)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-13)


@needs_numba
@pytest.mark.parametrize("loss", [kernels.MARGIN, kernels.BCE])
@pytest.mark.parametrize("code,name", list(zip(KIND_CODES, KIND_NAMES)))
def test_accumulate_grads_agree(code, name, loss):
    rng = np.random.default_rng(10 * code + loss)
    m = random_model(name, 4, 9, 5, rng)
    nrm = m._normals_or_dummy()
    heads, rels, tails, negs = _batch(rng)
    outs = []
    for impl in (nb, numpy_impl):
        g = [np.zeros_like(m.entity_emb), np.zeros_like(m.rel_emb), np.zeros_like(nrm)]
        total = impl.accumulate_grads(code, loss, 1.0, m.entity_emb, m.rel_emb, nrm,
                                      heads, rels, tails, negs, *g, 1.0 / 16)
        outs.append((total, g))
    assert outs[0][0] == pytest.approx(outs[1][0], rel=1e-12)
    for a, b in zip(outs[0][1], outs[1][1]):
        assert np.allclose(a, b, rtol=1e-11, atol=1e-13)


@needs_numba
def test_optimizer_steps_agree():
    rng = np.random.default_rng(0)
    rows = np.array([0, 3, 4])
    p0, g0 = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    results = []
    for impl in (nb, numpy_impl):
        p, g, acc = p0.copy(), g0.copy(), np.full((6, 4), 0.5)
        impl.adagrad_update(p, g, acc, rows, 0.1, 1e-10)
        q, h = p0.copy(), g0.copy()
        impl.sgd_update(q, h, rows, 0.1)
        impl.renorm_rows(q, rows)
        results.append((p, g, acc, q, h))
    for a, b in zip(*results):
        assert np.allclose(a, b, rtol=1e-14, atol=0)
    p, g, _, q, h = results[1]
    assert np.all(g[rows] == 0) and np.array_equal(g[[1, 2, 5]], g0[[1, 2, 5]])
    assert np.allclose(np.linalg.norm(q[rows], axis=1), 1.0)
    assert np.array_equal(q[[1, 2, 5]], p0[[1, 2, 5]])


@needs_numba
def test_pav_agree():
    rng = np.random.default_rng(1)
    for _ in range(50):
        y = rng.random(40)
        w = rng.integers(1, 4, size=40).astype(float)
        a, b = nb.pav(y, w), numpy_impl.pav(y, w)
        assert np.array_equal(a[0], b[0])
        assert np.allclose(a[1], b[1], rtol=1e-14)
        assert np.array_equal(a[2], b[2])


def test_pav_hand_case():
    start, val, wt = numpy_impl.pav(np.array([1.0, 3.0, 2.0, 0.0, 5.0]), np.ones(5))
    assert start.tolist() == [0, 1, 4]
    assert val.tolist() == [1.0, 5.0 / 3.0, 5.0]
    assert wt.tolist() == [1.0, 3.0, 1.0]


def test_env_flag_selects_numpy():
    code = "from kgcal import kernels; print(kernels.BACKEND_NAME, kernels.numba_impl is None)"
    env = dict(os.environ, KGCAL_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
