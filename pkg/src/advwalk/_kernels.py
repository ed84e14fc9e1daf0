"""Numba kernels for the training hot path.

All kernels are serial and compiled with fastmath disabled, so results are
bit-reproducible for a given seed. Gradients accumulate into caller-owned
dense scratch arrays; `seen`/`touch` bookkeeping records which rows a batch
wrote so the update step only visits (and re-zeroes) those rows.

The same math exists in pure numpy in `training.py`; an equivalence test
keeps the two paths within 1e-9 of each other.
"""

import numpy as np
from numba import njit

_ZERO_TOL = 1e-12


@njit(cache=True, fastmath=False)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True, fastmath=False)
def _softplus(x):
    # log(1 + e^x) without overflow
    if x > 0.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True, fastmath=False)
def clean_accumulate(U, V, t, c, negs, gU, gV, seenU, seenV, touchU, touchV):
    """Loss and gradients of the clean skip-gram objective over a batch.

    Gradients are accumulated into gU/gV (which must be zero on the touched
    rows at entry). Returns (loss, nU, nV) where touchU[:nU] / touchV[:nV]
    list the rows written, in first-touch order.
    """
    B = t.shape[0]
    K = negs.shape[1]
    d = U.shape[1]
    nU = 0
    nV = 0
    loss = 0.0
    for p in range(B):
        i = t[p]
        j = c[p]
        if not seenU[i]:
            seenU[i] = True
            touchU[nU] = i
            nU += 1
        if not seenV[j]:
            seenV[j] = True
            touchV[nV] = j
            nV += 1
        s = 0.0
        for q in range(d):
            s += U[i, q] * V[j, q]
        loss += _softplus(-s)
        a = -_sigmoid(-s)
        for q in range(d):
            gU[i, q] += a * V[j, q]
            gV[j, q] += a * U[i, q]
        for kk in range(K):
            nk = negs[p, kk]
            if not seenV[nk]:
                seenV[nk] = True
                touchV[nV] = nk
                nV += 1
            sn = 0.0
            for q in range(d):
                sn += U[i, q] * V[nk, q]
            loss += _softplus(sn)
            b = _sigmoid(sn)
            for q in range(d):
                gU[i, q] += b * V[nk, q]
                gV[nk, q] += b * U[i, q]
    return loss, nU, nV


@njit(cache=True, fastmath=False)
def perturbed_accumulate(U, V, t, c, negs, phi, nT, nC, lam, gU, gV):
    """Regularizer pass: loss and lam-scaled gradients of the perturbed
    objective, added on top of whatever gU/gV already hold.

    The positive term perturbs both sides with phi-scaled noise; the
    negative terms use the unscaled noise rows. Perturbations are constants
    (no gradient flows through nT/nC).
    """
    B = t.shape[0]
    K = negs.shape[1]
    d = U.shape[1]
    loss = 0.0
    for p in range(B):
        i = t[p]
        j = c[p]
        f = phi[p]
        s = 0.0
        for q in range(d):
            s += (U[i, q] + f * nT[i, q]) * (V[j, q] + f * nC[j, q])
        loss += _softplus(-s)
        a = -_sigmoid(-s)
        for q in range(d):
            gU[i, q] += lam * a * (V[j, q] + f * nC[j, q])
            gV[j, q] += lam * a * (U[i, q] + f * nT[i, q])
        for kk in range(K):
            nk = negs[p, kk]
            sn = 0.0
            for q in range(d):
                sn += (U[i, q] + nT[i, q]) * (V[nk, q] + nC[nk, q])
            loss += _softplus(sn)
            b = _sigmoid(sn)
            for q in range(d):
                gU[i, q] += lam * b * (V[nk, q] + nC[nk, q])
                gV[nk, q] += lam * b * (U[i, q] + nT[i, q])
    return loss


@njit(cache=True, fastmath=False)
def grad_noise(g, touch, n, eps, out):
    """Fast-gradient noise: out[r] = eps * g[r] / ||g[r]|| on touched rows.
    Rows with vanishing gradient get a zero row; returns how many."""
    d = g.shape[1]
    count = 0
    for idx in range(n):
        r = touch[idx]
        norm2 = 0.0
        for q in range(d):
            norm2 += g[r, q] * g[r, q]
        norm = np.sqrt(norm2)
        if norm < _ZERO_TOL:
            for q in range(d):
                out[r, q] = 0.0
            count += 1
        else:
            sc = eps / norm
            for q in range(d):
                out[r, q] = sc * g[r, q]
    return count


@njit(cache=True, fastmath=False)
def dir_noise(g, touch, n, eps, dirs, valid, out):
    """Direction-constrained noise: project the gradient onto each node's
    neighbour directions, normalize the coefficient vector to length eps,
    and recombine. Invalid directions contribute nothing."""
    d = g.shape[1]
    T = dirs.shape[1]
    w = np.empty(T)
    count = 0
    for idx in range(n):
        r = touch[idx]
        wn2 = 0.0
        for k in range(T):
            wk = 0.0
            if valid[r, k]:
                for q in range(d):
                    wk += dirs[r, k, q] * g[r, q]
            w[k] = wk
            wn2 += wk * wk
        wn = np.sqrt(wn2)
        if wn < _ZERO_TOL:
            for q in range(d):
                out[r, q] = 0.0
            count += 1
        else:
            for q in range(d):
                out[r, q] = 0.0
            for k in range(T):
                coef = eps * w[k] / wn
                if coef != 0.0:
                    for q in range(d):
                        out[r, q] += coef * dirs[r, k, q]
    return count


@njit(cache=True, fastmath=False)
def apply_update(U, V, gU, gV, touchU, nU, touchV, nV, lr, seenU, seenV):
    """SGD step on the touched rows, then reset the scratch for the next batch."""
    d = U.shape[1]
    for idx in range(nU):
        r = touchU[idx]
        for q in range(d):
            U[r, q] -= lr * gU[r, q]
            gU[r, q] = 0.0
        seenU[r] = False
    for idx in range(nV):
        r = touchV[idx]
        for q in range(d):
            V[r, q] -= lr * gV[r, q]
            gV[r, q] = 0.0
        seenV[r] = False


@njit(cache=True, fastmath=False)
def reset_scratch(gU, gV, touchU, nU, touchV, nV, seenU, seenV):
    """Zero touched scratch rows without updating the model (gradient-only passes)."""
    d = gU.shape[1]
    for idx in range(nU):
        r = touchU[idx]
        for q in range(d):
            gU[r, q] = 0.0
        seenU[r] = False
    for idx in range(nV):
        r = touchV[idx]
        for q in range(d):
            gV[r, q] = 0.0
        seenV[r] = False
