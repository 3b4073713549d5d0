import numpy as np

TRANSE, TRANSH, DISTMULT, COMPLEX = 0, 1, 2, 3
MARGIN, BCE = 0, 1

# bound on the size of the (n, m, D) temporaries built by score_pairs
_CHUNK_ELEMS = 1 << 22


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _score(kind, H, R, W, T):
    """Scores for broadcastable embedding blocks (last axis = embedding)."""
    if kind == TRANSE:
        u = H + R - T
        return -np.sqrt(np.sum(u * u, axis=-1))
    if kind == TRANSH:
        a = np.sum(W * H, axis=-1)[..., None]
        b = np.sum(W * T, axis=-1)[..., None]
        u = (H - a * W) + R - (T - b * W)
        return -np.sqrt(np.sum(u * u, axis=-1))
    if kind == DISTMULT:
        return np.sum(H * R * T, axis=-1)
    d = H.shape[-1] // 2
    hr, hi = H[..., :d], H[..., d:]
    rr, ri = R[..., :d], R[..., d:]
    tr, ti = T[..., :d], T[..., d:]
    return np.sum(hr * rr * tr - hi * ri * tr + hr * ri * ti + hi * rr * ti, axis=-1)


def _grads(kind, H, R, W, T):
    """Partial derivatives of the score w.r.t. (h, r, w, t), same shapes as inputs."""
    if kind == TRANSE:
        u = H + R - T
        norm = np.sqrt(np.sum(u * u, axis=-1))[..., None]
        g = np.divide(-u, norm, out=np.zeros_like(u), where=norm > 0)
        return g, g, None, -g
    if kind == TRANSH:
        a = np.sum(W * H, axis=-1)[..., None]
        b = np.sum(W * T, axis=-1)[..., None]
        u = (H - a * W) + R - (T - b * W)
        norm = np.sqrt(np.sum(u * u, axis=-1))[..., None]
        g = np.divide(-u, norm, out=np.zeros_like(u), where=norm > 0)
        gw = np.sum(g * W, axis=-1)[..., None]
        proj = g - gw * W
        dW = -(a - b) * g - gw * (H - T)
        return proj, g, dW, -proj
    if kind == DISTMULT:
        return R * T, H * T, None, H * R
    d = H.shape[-1] // 2
    hr, hi = H[..., :d], H[..., d:]
    rr, ri = R[..., :d], R[..., d:]
    tr, ti = T[..., :d], T[..., d:]
    dH = np.concatenate([rr * tr + ri * ti, rr * ti - ri * tr], axis=-1)
    dR = np.concatenate([hr * tr + hi * ti, hr * ti - hi * tr], axis=-1)
    dT = np.concatenate([hr * rr - hi * ri, hr * ri + hi * rr], axis=-1)
    return dH, dR, None, dT


def score_pairs(kind, ent, rel, nrm, heads, tails, rels):
    n, m, D = heads.shape[0], rels.shape[0], ent.shape[1]
    out = np.empty((n, m))
    R = rel[rels][None]
    W = nrm[rels][None] if kind == TRANSH else None
    step = max(1, _CHUNK_ELEMS // max(1, m * D))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        H = ent[heads[lo:hi]][:, None, :]
        T = ent[tails[lo:hi]][:, None, :]
        out[lo:hi] = _score(kind, H, R, W, T)
    return out


def score_triples(kind, ent, rel, nrm, heads, rels, tails):
    W = nrm[rels] if kind == TRANSH else None
    return _score(kind, ent[heads], rel[rels], W, ent[tails])


def accumulate_grads(kind, loss, margin, ent, rel, nrm, heads, rels, tails, negs,
                     g_ent, g_rel, g_nrm, scale):
    H = ent[heads]
    T = ent[tails]
    Rp = rel[rels]
    Wp = nrm[rels] if kind == TRANSH else None
    Rn = rel[negs]
    Wn = nrm[negs] if kind == TRANSH else None
    fpos = _score(kind, H, Rp, Wp, T)
    fneg = _score(kind, H[:, None, :], Rn, Wn, T[:, None, :])
    if loss == MARGIN:
        v = margin - fpos[:, None] + fneg
        active = v > 0.0
        total = float(np.sum(v[active]))
        cneg = active.astype(np.float64)
        cpos = -cneg.sum(axis=1)
    else:
        total = float(np.sum(_softplus(-fpos)) + np.sum(_softplus(fneg)))
        cpos = -_sigmoid(-fpos)
        cneg = _sigmoid(fneg)

    dH, dR, dW, dT = _grads(kind, H, Rp, Wp, T)
    c = (scale * cpos)[:, None]
    np.add.at(g_ent, heads, c * dH)
    np.add.at(g_rel, rels, c * dR)
    np.add.at(g_ent, tails, c * dT)
    if dW is not None:
        np.add.at(g_nrm, rels, c * dW)

    dH, dR, dW, dT = _grads(kind, H[:, None, :], Rn, Wn, T[:, None, :])
    c = (scale * cneg)[..., None]
    B, n = negs.shape
    np.add.at(g_ent, np.repeat(heads, n), (c * dH).reshape(B * n, -1))
    np.add.at(g_rel, negs.ravel(), (c * dR).reshape(B * n, -1))
    np.add.at(g_ent, np.repeat(tails, n), (c * dT).reshape(B * n, -1))
    if dW is not None:
        np.add.at(g_nrm, negs.ravel(), (c * dW).reshape(B * n, -1))
    return total


def sgd_update(param, grad, rows, lr):
    param[rows] -= lr * grad[rows]
    grad[rows] = 0.0


def adagrad_update(param, grad, acc, rows, lr, eps):
    g = grad[rows]
    acc[rows] += g * g
    param[rows] -= lr * g / (np.sqrt(acc[rows]) + eps)
    grad[rows] = 0.0


def renorm_rows(mat, rows):
    norms = np.sqrt(np.sum(mat[rows] ** 2, axis=1))[:, None]
    mat[rows] = np.divide(mat[rows], norms, out=mat[rows].copy(), where=norms > 0)


def pav(y, w):
    """Weighted pool-adjacent-violators on y (already ordered by x)."""
    start, val, wt = [], [], []
    for i in range(len(y)):
        start.append(i)
        val.append(float(y[i]))
        wt.append(float(w[i]))
        while len(val) > 1 and val[-2] > val[-1]:
            nw = wt[-2] + wt[-1]
            v = (wt[-2] * val[-2] + wt[-1] * val[-1]) / nw
            start.pop()
            val.pop()
            wt.pop()
            val[-1] = v
            wt[-1] = nw
    return np.array(start, dtype=np.int64), np.array(val), np.array(wt)
