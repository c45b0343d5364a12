"""Independent reference implementations used by the tests.

None of these import from the package internals they check.
"""

import math

import numpy as np


def diffusion_matrix_power(adj, d_s):
    """Diagonals of explicit powers of A D^-1, isolated nodes giving zero columns."""
    a = np.asarray(adj, dtype=float)
    deg = a.sum(axis=0)
    dinv = np.diag([1.0 / x if x > 0 else 0.0 for x in deg])
    t = a @ dinv
    return np.stack([np.diag(np.linalg.matrix_power(t, k)) for k in range(1, d_s + 1)], axis=1)


def loss_scalar_branches(s, tau, l, gamma):
    """Scalar piecewise loss written out with ``math``."""
    if math.log(s) > tau:
        return -((l - s) ** gamma) * math.log(s)
    return -tau * (l - s) ** gamma


def pair_count_auc(scores, labels):
    """Fraction of (OOD, ID) pairs ordered correctly, ties worth one half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def finite_difference(fn, params, h=1e-5):
    """Central differences of scalar ``fn(params)`` for every coordinate of a list of arrays."""
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (fn(plus) - fn(minus)) / (2 * h)
        grads.append(g)
    return grads


def relative_errors(analytic, numeric, floor=1e-6):
    out = []
    for a, n in zip(analytic, numeric):
        out.append(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor))
    return np.concatenate([e.ravel() for e in out])
