"""Smooth [0, 1] surrogates of binary predicates, with analytic gradients.

Guidance needs differentiable satisfaction functionals; these helpers build
products of sigmoids for interval/rectangle membership and a soft-min for
pairwise-distance objectives. Each factory returns (psi, grad) callables
over (B, m) arrays of the constraint's concatenated node values.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


class SmoothProduct:
    """Product of sigmoid(k * g_i(x)) factors with linear g_i.

    Each factor is (cols, coefs, ref, k) encoding
    g(x) = sum_j coefs[j] * x[:, cols[j]] - ref; psi multiplies the factor
    sigmoids, so psi -> 1 when every linear inequality g >= 0 holds with
    margin and -> 0 when any is violated.
    """

    def __init__(self, factors):
        self.factors = [(tuple(c), tuple(w), float(ref), float(k)) for c, w, ref, k in factors]

    def _g(self, x, cols, coefs, ref):
        g = -ref * np.ones(x.shape[0])
        for c, w in zip(cols, coefs):
            g += w * x[:, c]
        return g

    def psi(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.ones(x.shape[0])
        for cols, coefs, ref, k in self.factors:
            out = out * sigmoid(k * self._g(x, cols, coefs, ref))
        return out

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        p = self.psi(x)
        g = np.zeros_like(x)
        for cols, coefs, ref, k in self.factors:
            s = sigmoid(k * self._g(x, cols, coefs, ref))
            # d/dx log sigmoid(k g) = k (1 - s) grad g
            for c, w in zip(cols, coefs):
                g[:, c] += k * w * (1.0 - s)
        return g * p[:, None]


class SmoothPairwiseSpread:
    """psi = sigmoid(k * (softmin_{i<j} ||p_i - p_j|| - margin)) over 2-D points.

    Points are consecutive (x, y) pairs at the given column offsets. Softmin
    uses -logsumexp(-beta d)/beta, so the gradient spreads across near-minimal
    pairs and stays smooth.
    """

    def __init__(self, point_cols, margin: float, k: float = 25.0, beta: float = 30.0):
        self.point_cols = list(point_cols)  # [(col_x, col_y), ...]
        self.margin = margin
        self.k = k
        self.beta = beta

    def _pair_dists(self, x):
        pts = np.stack([x[:, [cx, cy]] for cx, cy in self.point_cols], axis=1)  # (B, P, 2)
        P = pts.shape[1]
        pairs = [(i, j) for i in range(P) for j in range(i + 1, P)]
        diffs = np.stack([pts[:, i] - pts[:, j] for i, j in pairs], axis=1)  # (B, n_pairs, 2)
        d = np.sqrt(np.sum(diffs**2, axis=2) + 1e-12)
        return pts, pairs, diffs, d

    def softmin(self, x):
        _, _, _, d = self._pair_dists(np.atleast_2d(x))
        return -np.log(np.sum(np.exp(-self.beta * d), axis=1)) / self.beta

    def psi(self, x: np.ndarray) -> np.ndarray:
        return sigmoid(self.k * (self.softmin(x) - self.margin))

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        pts, pairs, diffs, d = self._pair_dists(x)
        w = np.exp(-self.beta * d)
        w = w / np.sum(w, axis=1, keepdims=True)  # softmin weights per pair
        sm = -np.log(np.sum(np.exp(-self.beta * d), axis=1)) / self.beta
        s = sigmoid(self.k * (sm - self.margin))
        outer = self.k * s * (1.0 - s)  # d psi / d softmin
        g = np.zeros_like(x)
        unit = diffs / d[:, :, None]
        for pi, (i, j) in enumerate(pairs):
            contrib = (w[:, pi] * outer)[:, None] * unit[:, pi]
            cxi, cyi = self.point_cols[i]
            cxj, cyj = self.point_cols[j]
            g[:, cxi] += contrib[:, 0]
            g[:, cyi] += contrib[:, 1]
            g[:, cxj] -= contrib[:, 0]
            g[:, cyj] -= contrib[:, 1]
        return g
