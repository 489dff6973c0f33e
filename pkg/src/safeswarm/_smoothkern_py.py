"""Pure-Python evaluator for compiled barrier programs.

Mirrors ``_smoothkern.pyx`` operation for operation; used when the compiled
extension is unavailable or disabled with ``SAFESWARM_PURE_PYTHON=1``.

A program is an ``(P, 2)`` integer array of ``(opcode, arg)`` rows run on a
value/gradient/Hessian stack:

    OP_PUSH  arg   push leaf ``arg``
    OP_MIN2        pop right, left; push polynomial smooth-min(left, right)
    OP_MINLSE arg  pop ``arg`` entries; push log-sum-exp soft-min
    OP_NEG         negate the top entry
"""

import math

import numpy as np

OP_PUSH = 0
OP_MIN2 = 1
OP_MINLSE = 2
OP_NEG = 3

LEAF_PAIR = 0
LEAF_OBSTACLE = 1
LEAF_CUSTOM = 2


def transition(t, coeffs):
    """Normalized transition polynomial and its first two t-derivatives.

    ``coeffs[j]`` multiplies ``t**j``; ``t = l / beta`` lies in [-1, 1].
    """
    m = 0.0
    dm = 0.0
    d2m = 0.0
    for j in range(len(coeffs) - 1, -1, -1):
        d2m = d2m * t + 2.0 * dm
        dm = dm * t + m
        m = m * t + coeffs[j]
    return m, dm, d2m


def _min2(v1, g1, H1, v2, g2, H2, beta, coeffs, order):
    ell = v2 - v1
    if ell > beta:
        return v1, g1, H1
    if ell < -beta:
        return v2, g2, H2
    m, dm, d2m = transition(ell / beta, coeffs)
    phi = m
    dphi = dm / beta
    d2phi = d2m / (beta * beta)
    v = -0.5 * (ell * phi - (v1 + v2))
    if order == 0:
        return v, None, None
    dpsi = phi + ell * dphi
    w1 = 0.5 * (1.0 + dpsi)
    w2 = 0.5 * (1.0 - dpsi)
    g = w1 * g1 + w2 * g2
    if order == 1:
        return v, g, None
    d2psi = 2.0 * dphi + ell * d2phi
    dg = g2 - g1
    H = w1 * H1 + w2 * H2 - 0.5 * d2psi * np.outer(dg, dg)
    return v, g, H


def _minlse(vals, grads, hessians, s, order):
    vals = np.asarray(vals)
    lo = vals.min()
    e = np.exp(-s * (vals - lo))
    tot = e.sum()
    v = lo - math.log(tot) / s
    if order == 0:
        return v, None, None
    p = e / tot
    G = np.stack(grads)
    g = p @ G
    if order == 1:
        return v, g, None
    H = np.tensordot(p, np.stack(hessians), axes=1)
    H -= s * ((G.T * p) @ G - np.outer(g, g))
    return v, g, H


def eval_program(ops, leaf_val, leaf_grad, leaf_hess, beta, coeffs, sharpness, order):
    coeffs = [float(c) for c in coeffs]
    vs, gs, Hs = [], [], []
    for code, arg in ops:
        if code == OP_PUSH:
            vs.append(float(leaf_val[arg]))
            gs.append(leaf_grad[arg] if order >= 1 else None)
            Hs.append(leaf_hess[arg] if order >= 2 else None)
        elif code == OP_MIN2:
            v2, g2, H2 = vs.pop(), gs.pop(), Hs.pop()
            v1, g1, H1 = vs.pop(), gs.pop(), Hs.pop()
            v, g, H = _min2(v1, g1, H1, v2, g2, H2, beta, coeffs, order)
            vs.append(v)
            gs.append(g)
            Hs.append(H)
        elif code == OP_MINLSE:
            vals, grads, hessians = vs[-arg:], gs[-arg:], Hs[-arg:]
            del vs[-arg:], gs[-arg:], Hs[-arg:]
            v, g, H = _minlse(vals, grads, hessians, sharpness, order)
            vs.append(v)
            gs.append(g)
            Hs.append(H)
        elif code == OP_NEG:
            vs[-1] = -vs[-1]
            if order >= 1:
                gs[-1] = -gs[-1]
            if order >= 2:
                Hs[-1] = -Hs[-1]
        else:
            raise ValueError(f"unknown opcode {code}")
    if len(vs) != 1:
        raise ValueError("malformed program: stack does not reduce to one entry")
    g = None if order < 1 else np.array(gs[0], dtype=float)
    H = None if order < 2 else np.array(Hs[0], dtype=float)
    return vs[0], g, H


def leaf_batch(X, kind, ai, aj, r2, centers, slot, cval, cgrad):
    """Leaf values ``(T, L)`` and gradients ``(T, L, n)`` for a batch of states."""
    T, n = X.shape
    d = centers.shape[1]
    L = kind.size
    Xa = X.reshape(T, n // d, d)
    vals = np.empty((T, L))
    grads = np.zeros((T, L, n))
    span = np.arange(d)
    for code in (LEAF_PAIR, LEAF_OBSTACLE):
        rows = np.flatnonzero(kind == code)
        if not rows.size:
            continue
        if code == LEAF_PAIR:
            diff = Xa[:, ai[rows]] - Xa[:, aj[rows]]
        else:
            diff = Xa[:, ai[rows]] - centers[rows]
        vals[:, rows] = np.einsum("tld,tld->tl", diff, diff) - r2[rows]
        grads[:, rows[:, None], ai[rows][:, None] * d + span] = 2.0 * diff
        if code == LEAF_PAIR:
            grads[:, rows[:, None], aj[rows][:, None] * d + span] = -2.0 * diff
    rows = np.flatnonzero(kind == LEAF_CUSTOM)
    if rows.size:
        vals[:, rows] = cval[:, slot[rows]]
        grads[:, rows] = cgrad[:, slot[rows]]
    return vals, grads


def eval_batch(ops, X, kind, ai, aj, r2, centers, slot, cval, cgrad, chess, shess,
               beta, coeffs, sharpness, order):
    X = np.asarray(X, dtype=float)
    T, n = X.shape
    vals, grads = leaf_batch(X, kind, ai, aj, r2, centers, slot, cval, cgrad)
    custom = np.flatnonzero(kind == LEAF_CUSTOM)
    V = np.empty(T)
    G = np.zeros((T, n))
    H = np.zeros((T, n, n) if order >= 2 else (T, 0, 0))
    for t in range(T):
        hess = shess
        if order >= 2 and custom.size:
            hess = shess.copy()
            hess[custom] = chess[t, slot[custom]]
        v, g, h = eval_program(ops, vals[t], grads[t], hess, beta, coeffs, sharpness,
                               max(order, 1))
        V[t] = v
        G[t] = g
        if order >= 2:
            H[t] = h
    return V, G, H
