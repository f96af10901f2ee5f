"""Scalar-loop reference implementations of the TF-CA blocks.

Written with plain Python floats and explicit loops, sharing no code with
:mod:`sdtgan.attention`. Forward only; used to cross-check the tensor path.
"""

from __future__ import annotations

import math


def _lists(a):
    a = getattr(a, "data", a)
    return a.tolist()


def _pool(x, F, T, C):
    x_f = [[sum(x[f][t][c] for t in range(T)) / T for c in range(C)] for f in range(F)]
    x_t = [[sum(x[f][t][c] for f in range(F)) / F for c in range(C)] for t in range(T)]
    return x_f, x_t


def _project(row, mat):
    cols = len(mat[0])
    return [sum(row[k] * mat[k][j] for k in range(len(row))) for j in range(cols)]


def _dot(a, b):
    return sum(u * w for u, w in zip(a, b))


def _softmax(row):
    m = max(row)
    e = [math.exp(r - m) for r in row]
    s = sum(e)
    return [u / s for u in e]


def _residual(x, v, W, F, T, C):
    out = []
    for f in range(F):
        plane = []
        for t in range(T):
            cell = []
            for c in range(C):
                value = sum(x[f][t][k] * v[k][c] for k in range(C))
                cell.append(x[f][t][c] + value * W[f][t])
            plane.append(cell)
        out.append(plane)
    return out


def oracle_self_tfca(x, p):
    """Return (x_out, {"f2t", "t2f", "fused_self"}) as nested lists."""
    x = _lists(x)
    F, T, C = len(x), len(x[0]), len(x[0][0])
    q_f, k_f, q_t, k_t, v = (_lists(m) for m in (p.q_f, p.k_f, p.q_t, p.k_t, p.v))
    x_f, x_t = _pool(x, F, T, C)
    qf = [_project(x_f[i], q_f) for i in range(F)]
    kf = [_project(x_f[i], k_f) for i in range(F)]
    qt = [_project(x_t[j], q_t) for j in range(T)]
    kt = [_project(x_t[j], k_t) for j in range(T)]
    f2t = [_softmax([_dot(qf[i], kt[j]) for j in range(T)]) for i in range(F)]
    t2f = [_softmax([_dot(qt[i], kf[j]) for j in range(F)]) for i in range(T)]
    W = [[f2t[f][t] + t2f[t][f] for t in range(T)] for f in range(F)]
    return _residual(x, v, W, F, T, C), {"f2t": f2t, "t2f": t2f, "fused_self": W}


def oracle_multi_tfca(x, c, p):
    """Return (x_out, {"c2f", "c2t", "fused_multi"}) as nested lists."""
    x, c = _lists(x), _lists(c)
    F, T, C = len(x), len(x[0]), len(x[0][0])
    N = len(c)
    q_f, q_t, k_f, k_t, v = (_lists(m) for m in (p.q_f, p.q_t, p.k_f, p.k_t, p.v))
    x_f, x_t = _pool(x, F, T, C)
    kf = [_project(x_f[j], k_f) for j in range(F)]
    kt = [_project(x_t[j], k_t) for j in range(T)]
    c2f, c2t = [], []
    for i in range(N):
        cq_f = _project(c[i], q_f)
        cq_t = _project(c[i], q_t)
        c2f.append(_softmax([_dot(cq_f, kf[j]) for j in range(F)]))
        c2t.append(_softmax([_dot(cq_t, kt[j]) for j in range(T)]))
    W = [[sum(c2f[n][f] * c2t[n][t] for n in range(N)) for t in range(T)] for f in range(F)]
    return _residual(x, v, W, F, T, C), {"c2f": c2f, "c2t": c2t, "fused_multi": W}
