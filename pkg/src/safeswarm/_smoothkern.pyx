# cython: language_level=3
"""Compiled evaluator for barrier programs (see ``_smoothkern_py`` for the opcode set)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

cdef enum:
    OP_PUSH = 0
    OP_MIN2 = 1
    OP_MINLSE = 2
    OP_NEG = 3

cdef enum:
    LEAF_PAIR = 0
    LEAF_OBSTACLE = 1
    LEAF_CUSTOM = 2


cdef inline void _transition(double t, double[::1] c, double* m, double* dm, double* d2m) noexcept nogil:
    cdef Py_ssize_t j
    cdef double a = 0.0, b = 0.0, e = 0.0
    for j in range(c.shape[0] - 1, -1, -1):
        e = e * t + 2.0 * b
        b = b * t + a
        a = a * t + c[j]
    m[0] = a
    dm[0] = b
    d2m[0] = e


def transition(double t, coeffs):
    cdef double m, dm, d2m
    cdef double[::1] c = np.ascontiguousarray(coeffs, dtype=np.float64)
    _transition(t, c, &m, &dm, &d2m)
    return m, dm, d2m


def eval_batch(long[:, ::1] ops, double[:, ::1] X, long[::1] kind, long[::1] ai, long[::1] aj,
               double[::1] r2, double[:, ::1] centers, long[::1] slot,
               double[:, ::1] cval, double[:, :, ::1] cgrad, double[:, :, :, ::1] chess,
               double[:, :, ::1] shess, double beta, coeffs, double sharpness, int order):
    cdef Py_ssize_t T = X.shape[0]
    cdef Py_ssize_t n = X.shape[1]
    cdef Py_ssize_t d = centers.shape[1]
    cdef Py_ssize_t P = ops.shape[0]
    cdef Py_ssize_t nh = n if order >= 2 else 0
    cdef double[::1] c = np.ascontiguousarray(coeffs, dtype=np.float64)
    V_arr = np.empty(T)
    G_arr = np.zeros((T, n))
    H_arr = np.zeros((T, nh, nh))
    cdef double[::1] V = V_arr
    cdef double[:, ::1] G = G_arr
    cdef double[:, :, ::1] H = H_arr
    cdef double[::1] vs = np.empty(P + 1)
    cdef double[:, ::1] gs = np.zeros((P + 1, n))
    cdef double[:, :, ::1] Hs = np.zeros((P + 1, nh, nh))
    cdef double[::1] pw = np.empty(P + 1)
    cdef double[::1] gbar = np.empty(n)
    cdef Py_ssize_t t, top, r, a, b, i, j, k, q, cnt, li, lj, oi
    cdef long code, arg, lk
    cdef double v1, v2, ell, m, dm, d2m, phi, dphi, d2phi, dpsi, d2psi, w1, w2, lo, tot, s, gi, gj, diff, acc
    cdef bint bad = False

    with nogil:
        for t in range(T):
            top = 0
            for r in range(P):
                code = ops[r, 0]
                arg = ops[r, 1]
                if code == OP_PUSH:
                    lk = kind[arg]
                    for i in range(n):
                        gs[top, i] = 0.0
                    if lk == LEAF_PAIR:
                        li = ai[arg] * d
                        lj = aj[arg] * d
                        acc = 0.0
                        for q in range(d):
                            diff = X[t, li + q] - X[t, lj + q]
                            acc = acc + diff * diff
                            gs[top, li + q] = 2.0 * diff
                            gs[top, lj + q] = -2.0 * diff
                        vs[top] = acc - r2[arg]
                    elif lk == LEAF_OBSTACLE:
                        oi = ai[arg] * d
                        acc = 0.0
                        for q in range(d):
                            diff = X[t, oi + q] - centers[arg, q]
                            acc = acc + diff * diff
                            gs[top, oi + q] = 2.0 * diff
                        vs[top] = acc - r2[arg]
                    else:
                        vs[top] = cval[t, slot[arg]]
                        for i in range(n):
                            gs[top, i] = cgrad[t, slot[arg], i]
                    if order >= 2:
                        if lk == LEAF_CUSTOM:
                            for i in range(n):
                                for j in range(n):
                                    Hs[top, i, j] = chess[t, slot[arg], i, j]
                        else:
                            for i in range(n):
                                for j in range(n):
                                    Hs[top, i, j] = shess[arg, i, j]
                    top += 1
                elif code == OP_MIN2:
                    b = top - 1
                    a = top - 2
                    v1 = vs[a]
                    v2 = vs[b]
                    ell = v2 - v1
                    top -= 1
                    if ell > beta:
                        pass  # left operand already sits in slot a
                    elif ell < -beta:
                        vs[a] = v2
                        for i in range(n):
                            gs[a, i] = gs[b, i]
                        if order >= 2:
                            for i in range(n):
                                for j in range(n):
                                    Hs[a, i, j] = Hs[b, i, j]
                    else:
                        _transition(ell / beta, c, &m, &dm, &d2m)
                        phi = m
                        dphi = dm / beta
                        d2phi = d2m / (beta * beta)
                        vs[a] = -0.5 * (ell * phi - (v1 + v2))
                        dpsi = phi + ell * dphi
                        w1 = 0.5 * (1.0 + dpsi)
                        w2 = 0.5 * (1.0 - dpsi)
                        if order >= 2:
                            d2psi = 0.5 * (2.0 * dphi + ell * d2phi)
                            for i in range(n):
                                gi = gs[b, i] - gs[a, i]
                                for j in range(n):
                                    gj = gs[b, j] - gs[a, j]
                                    Hs[a, i, j] = w1 * Hs[a, i, j] + w2 * Hs[b, i, j] - d2psi * gi * gj
                        for i in range(n):
                            gs[a, i] = w1 * gs[a, i] + w2 * gs[b, i]
                elif code == OP_MINLSE:
                    cnt = arg
                    a = top - cnt
                    s = sharpness
                    lo = vs[a]
                    for k in range(a, top):
                        if vs[k] < lo:
                            lo = vs[k]
                    tot = 0.0
                    for k in range(a, top):
                        pw[k] = exp(-s * (vs[k] - lo))
                        tot = tot + pw[k]
                    for k in range(a, top):
                        pw[k] = pw[k] / tot
                    vs[a] = lo - log(tot) / s
                    for i in range(n):
                        gi = 0.0
                        for k in range(a, top):
                            gi = gi + pw[k] * gs[k, i]
                        gbar[i] = gi
                    if order >= 2:
                        for i in range(n):
                            for j in range(n):
                                gj = 0.0
                                for k in range(a, top):
                                    gj = gj + pw[k] * (Hs[k, i, j] - s * gs[k, i] * gs[k, j])
                                Hs[a, i, j] = gj + s * gbar[i] * gbar[j]
                    for i in range(n):
                        gs[a, i] = gbar[i]
                    top = a + 1
                elif code == OP_NEG:
                    a = top - 1
                    vs[a] = -vs[a]
                    for i in range(n):
                        gs[a, i] = -gs[a, i]
                    if order >= 2:
                        for i in range(n):
                            for j in range(n):
                                Hs[a, i, j] = -Hs[a, i, j]
                else:
                    bad = True
                    break
            if bad or top != 1:
                bad = True
                break
            V[t] = vs[0]
            for i in range(n):
                G[t, i] = gs[0, i]
            if order >= 2:
                for i in range(n):
                    for j in range(n):
                        H[t, i, j] = Hs[0, i, j]

    if bad:
        raise ValueError("malformed program: stack does not reduce to one entry")
    return V_arr, G_arr, H_arr
