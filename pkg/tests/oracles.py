"""Independent reference implementations used only by the tests.

Everything here is deliberately naive: explicit loops, direct sums of
exponentials, no log-sum-exp tricks, no shared code with the package.
"""

import math

import numpy as np


def triple_loop_matmul(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i][t] * b[t][j]
            out[i, j] = acc
    return out


def cos(a, b):
    return float(np.dot(a, b) / (math.sqrt(np.dot(a, a)) * math.sqrt(np.dot(b, b))))


def naive_ntxent_per_anchor(z, partner, tau):
    m = len(z)
    out = []
    for i in range(m):
        num = math.exp(cos(z[i], z[partner[i]]) / tau)
        den = sum(math.exp(cos(z[i], z[k]) / tau) for k in range(m) if k != i)
        out.append(-math.log(num / den))
    return np.array(out)


def naive_suncet_per_anchor(z, y, tau):
    m = len(z)
    out = []
    for i in range(m):
        num = sum(math.exp(cos(z[i], z[j]) / tau) for j in range(m) if j != i and y[j] == y[i])
        den = sum(math.exp(cos(z[i], z[k]) / tau) for k in range(m) if k != i)
        out.append(-math.log(num / den))
    return np.array(out)


def central_differences(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def relu_mlp_forward(x, layers):
    """layers: list of (W, b, activation) with W shaped (out, in)."""
    h = np.array(x, dtype=float)
    for w, b, act in layers:
        nxt = np.zeros((h.shape[0], w.shape[0]))
        for r in range(h.shape[0]):
            for o in range(w.shape[0]):
                v = b[o] + sum(w[o, i] * h[r, i] for i in range(w.shape[1]))
                nxt[r, o] = max(v, 0.0) if act == "relu" else v
        h = nxt
    return h


# extended-precision references for the numeric side of gradient checks

LD = np.longdouble


def ld_mlp(tensors, block, specs, x):
    h = np.asarray(x).astype(LD)
    for i, s in enumerate(specs):
        w = np.asarray(tensors[f"{block}.{i}.weight"]).astype(LD)
        b = np.asarray(tensors[f"{block}.{i}.bias"]).astype(LD)
        a = h @ w.T + b
        h = np.maximum(a, LD(0)) if s.activation == "relu" else a
    return h


def ld_model(tensors, params, x):
    h = ld_mlp(tensors, "encoder", params.encoder, x)
    return ld_mlp(tensors, "projection", params.projection, h)


def _ld_sims(z, tau):
    z = np.asarray(z).astype(LD)
    u = z / np.sqrt((z * z).sum(axis=1))[:, None]
    return np.exp(u @ u.T / LD(tau))


def ld_ntxent(z, partner, tau):
    e = _ld_sims(z, tau)
    m = len(e)
    total = LD(0)
    for i in range(m):
        den = sum(e[i, k] for k in range(m) if k != i)
        total += -np.log(e[i, partner[i]] / den)
    return total / m


def ld_suncet(z, y, tau):
    e = _ld_sims(z, tau)
    m = len(e)
    total = LD(0)
    for i in range(m):
        num = sum(e[i, j] for j in range(m) if j != i and y[j] == y[i])
        den = sum(e[i, k] for k in range(m) if k != i)
        total += -np.log(num / den)
    return total / m
