import math

import numpy as np
from numba import njit

TRANSE, TRANSH, DISTMULT, COMPLEX = 0, 1, 2, 3
MARGIN, BCE = 0, 1


@njit(cache=True, inline="always")
def _softplus(x):
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True, inline="always")
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _score(kind, ent, rel, nrm, h, r, t):
    D = ent.shape[1]
    if kind == TRANSE:
        s = 0.0
        for j in range(D):
            u = ent[h, j] + rel[r, j] - ent[t, j]
            s += u * u
        return -math.sqrt(s)
    if kind == TRANSH:
        a = 0.0
        b = 0.0
        for j in range(D):
            a += nrm[r, j] * ent[h, j]
            b += nrm[r, j] * ent[t, j]
        s = 0.0
        for j in range(D):
            u = (ent[h, j] - a * nrm[r, j]) + rel[r, j] - (ent[t, j] - b * nrm[r, j])
            s += u * u
        return -math.sqrt(s)
    if kind == DISTMULT:
        s = 0.0
        for j in range(D):
            s += ent[h, j] * rel[r, j] * ent[t, j]
        return s
    d = D // 2
    s = 0.0
    for j in range(d):
        hr = ent[h, j]
        hi = ent[h, d + j]
        rr = rel[r, j]
        ri = rel[r, d + j]
        tr = ent[t, j]
        ti = ent[t, d + j]
        s += hr * rr * tr - hi * ri * tr + hr * ri * ti + hi * rr * ti
    return s


@njit(cache=True)
def score_pairs(kind, ent, rel, nrm, heads, tails, rels):
    """Scores of every (heads[i], rels[j], tails[i]) combination, shape (n, m)."""
    n = heads.shape[0]
    m = rels.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = _score(kind, ent, rel, nrm, heads[i], rels[j], tails[i])
    return out


@njit(cache=True)
def score_triples(kind, ent, rel, nrm, heads, rels, tails):
    n = heads.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = _score(kind, ent, rel, nrm, heads[i], rels[i], tails[i])
    return out


@njit(cache=True)
def _add_grad(kind, ent, rel, nrm, h, r, t, c, g_ent, g_rel, g_nrm):
    """Add c * d f(h, r, t) / d(params) into the gradient buffers."""
    D = ent.shape[1]
    if kind == TRANSE:
        s = 0.0
        for j in range(D):
            u = ent[h, j] + rel[r, j] - ent[t, j]
            s += u * u
        norm = math.sqrt(s)
        if norm == 0.0:
            return
        for j in range(D):
            g = -c * (ent[h, j] + rel[r, j] - ent[t, j]) / norm
            g_ent[h, j] += g
            g_rel[r, j] += g
            g_ent[t, j] -= g
    elif kind == TRANSH:
        a = 0.0
        b = 0.0
        for j in range(D):
            a += nrm[r, j] * ent[h, j]
            b += nrm[r, j] * ent[t, j]
        s = 0.0
        for j in range(D):
            u = (ent[h, j] - a * nrm[r, j]) + rel[r, j] - (ent[t, j] - b * nrm[r, j])
            s += u * u
        norm = math.sqrt(s)
        if norm == 0.0:
            return
        gw = 0.0
        for j in range(D):
            u = (ent[h, j] - a * nrm[r, j]) + rel[r, j] - (ent[t, j] - b * nrm[r, j])
            gw += (-u / norm) * nrm[r, j]
        for j in range(D):
            u = (ent[h, j] - a * nrm[r, j]) + rel[r, j] - (ent[t, j] - b * nrm[r, j])
            g = -u / norm
            proj = g - gw * nrm[r, j]
            g_rel[r, j] += c * g
            g_ent[h, j] += c * proj
            g_ent[t, j] -= c * proj
            g_nrm[r, j] += c * (-(a - b) * g - gw * (ent[h, j] - ent[t, j]))
    elif kind == DISTMULT:
        for j in range(D):
            hv = ent[h, j]
            rv = rel[r, j]
            tv = ent[t, j]
            g_ent[h, j] += c * (rv * tv)
            g_rel[r, j] += c * (hv * tv)
            g_ent[t, j] += c * (hv * rv)
    else:
        d = D // 2
        for j in range(d):
            hr = ent[h, j]
            hi = ent[h, d + j]
            rr = rel[r, j]
            ri = rel[r, d + j]
            tr = ent[t, j]
            ti = ent[t, d + j]
            g_ent[h, j] += c * (rr * tr + ri * ti)
            g_ent[h, d + j] += c * (rr * ti - ri * tr)
            g_rel[r, j] += c * (hr * tr + hi * ti)
            g_rel[r, d + j] += c * (hr * ti - hi * tr)
            g_ent[t, j] += c * (hr * rr - hi * ri)
            g_ent[t, d + j] += c * (hr * ri + hi * rr)


@njit(cache=True)
def accumulate_grads(kind, loss, margin, ent, rel, nrm, heads, rels, tails, negs,
                     g_ent, g_rel, g_nrm, scale):
    """Accumulate scale * dLoss/dparams for one batch; return the summed loss.

    ``negs`` has shape (B, n) and holds the corrupted relation of each negative.
    """
    B = heads.shape[0]
    n = negs.shape[1]
    total = 0.0
    fneg = np.empty(n)
    cneg = np.empty(n)
    for b in range(B):
        h = heads[b]
        r = rels[b]
        t = tails[b]
        fpos = _score(kind, ent, rel, nrm, h, r, t)
        for q in range(n):
            fneg[q] = _score(kind, ent, rel, nrm, h, negs[b, q], t)
        cpos = 0.0
        if loss == MARGIN:
            for q in range(n):
                v = margin - fpos + fneg[q]
                if v > 0.0:
                    total += v
                    cpos -= 1.0
                    cneg[q] = 1.0
                else:
                    cneg[q] = 0.0
        else:
            total += _softplus(-fpos)
            cpos = -_sigmoid(-fpos)
            for q in range(n):
                total += _softplus(fneg[q])
                cneg[q] = _sigmoid(fneg[q])
        if cpos != 0.0:
            _add_grad(kind, ent, rel, nrm, h, r, t, scale * cpos, g_ent, g_rel, g_nrm)
        for q in range(n):
            if cneg[q] != 0.0:
                _add_grad(kind, ent, rel, nrm, h, negs[b, q], t, scale * cneg[q], g_ent, g_rel, g_nrm)
    return total


@njit(cache=True)
def sgd_update(param, grad, rows, lr):
    D = param.shape[1]
    for i in range(rows.shape[0]):
        row = rows[i]
        for j in range(D):
            param[row, j] -= lr * grad[row, j]
            grad[row, j] = 0.0


@njit(cache=True)
def adagrad_update(param, grad, acc, rows, lr, eps):
    D = param.shape[1]
    for i in range(rows.shape[0]):
        row = rows[i]
        for j in range(D):
            g = grad[row, j]
            acc[row, j] += g * g
            param[row, j] -= lr * g / (math.sqrt(acc[row, j]) + eps)
            grad[row, j] = 0.0


@njit(cache=True)
def renorm_rows(mat, rows):
    D = mat.shape[1]
    for i in range(rows.shape[0]):
        row = rows[i]
        s = 0.0
        for j in range(D):
            s += mat[row, j] * mat[row, j]
        norm = math.sqrt(s)
        if norm > 0.0:
            for j in range(D):
                mat[row, j] /= norm


@njit(cache=True)
def pav(y, w):
    """Weighted pool-adjacent-violators on y (already ordered by x).

    Returns (block_start, block_value, block_weight) with nondecreasing values.
    """
    n = y.shape[0]
    start = np.empty(n, dtype=np.int64)
    val = np.empty(n)
    wt = np.empty(n)
    top = 0
    for i in range(n):
        start[top] = i
        val[top] = y[i]
        wt[top] = w[i]
        top += 1
        while top > 1 and val[top - 2] > val[top - 1]:
            nw = wt[top - 2] + wt[top - 1]
            val[top - 2] = (wt[top - 2] * val[top - 2] + wt[top - 1] * val[top - 1]) / nw
            wt[top - 2] = nw
            top -= 1
    return start[:top].copy(), val[:top].copy(), wt[:top].copy()
