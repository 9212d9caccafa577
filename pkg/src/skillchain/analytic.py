"""Closed-form Gaussian machinery used as training-free ground truth.

Provides exact scores of noised Gaussians and mixtures, product/quotient
algebra over a shared variable, the exact composed distribution of a chain
of jointly-Gaussian skills, and a small tensor-grid quadrature oracle to
check moments numerically. Everything in this module is exact (up to
linear-algebra round-off); that exactness is the whole point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffusion import NoiseSchedule
from .skills import NormStats

__all__ = [
    "GaussianDensity",
    "GaussianMixture",
    "ImproperComposition",
    "noised_score",
    "gaussian_product_quotient",
    "composed_chain_target",
    "grid_moments",
    "AnalyticSkillModel",
]


class ImproperComposition(Exception):
    """Raised when a product/quotient of Gaussians has an indefinite precision."""


def _as_cov(cov, dim: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(dim)
    if cov.shape != (dim, dim):
        raise ValueError(f"covariance shape {cov.shape} does not match dim {dim}")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("covariance not symmetric")
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class GaussianDensity:
    """Multivariate normal with an SPD covariance (Cholesky-checked)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _as_cov(self.cov, mean.size)
        np.linalg.cholesky(cov)  # raises LinAlgError if not SPD
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def precision(self) -> np.ndarray:
        return np.linalg.inv(self.cov)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = x - self.mean
        L = np.linalg.cholesky(self.cov)
        sol = np.linalg.solve(L, d.T)
        quad = np.sum(sol**2, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        return -0.5 * (quad + logdet + self.dim * np.log(2.0 * np.pi))

    def score(self, x: np.ndarray) -> np.ndarray:
        """grad_x log N(x; mean, cov) = -cov^{-1} (x - mean)."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        d = np.atleast_2d(x) - self.mean
        s = -np.linalg.solve(self.cov, d.T).T
        return s[0] if squeeze else s

    def noised(self, sigma: float) -> "GaussianDensity":
        """Convolution with N(0, sigma^2 I)."""
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        return GaussianDensity(self.mean, self.cov + sigma**2 * np.eye(self.dim))

    def marginal(self, idx: Sequence[int]) -> "GaussianDensity":
        """Exact marginal over the given coordinates (row/column selection)."""
        idx = np.asarray(idx, dtype=int)
        return GaussianDensity(self.mean[idx], self.cov[np.ix_(idx, idx)])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        L = np.linalg.cholesky(self.cov)
        return self.mean + rng.standard_normal((n, self.dim)) @ L.T


@dataclass(frozen=True)
class GaussianMixture:
    """Finite mixture of Gaussians; weights positive and summing to one."""

    weights: np.ndarray
    components: tuple[GaussianDensity, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        dims = {c.dim for c in self.components}
        if len(dims) != 1 or len(self.components) != w.size:
            raise ValueError("components/weights inconsistent")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def noised(self, sigma: float) -> "GaussianMixture":
        return GaussianMixture(self.weights, tuple(c.noised(sigma) for c in self.components))

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        logs = np.stack([np.log(w) + c.logpdf(x) for w, c in zip(self.weights, self.components)])
        m = logs.max(axis=0)
        return m + np.log(np.sum(np.exp(logs - m), axis=0))

    def score(self, x: np.ndarray) -> np.ndarray:
        """Responsibility-weighted component scores."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        xb = np.atleast_2d(x)
        logs = np.stack([np.log(w) + c.logpdf(xb) for w, c in zip(self.weights, self.components)])
        m = logs.max(axis=0)
        resp = np.exp(logs - m)
        resp /= resp.sum(axis=0)
        out = np.zeros_like(xb)
        for r, c in zip(resp, self.components):
            out += r[:, None] * c.score(xb)
        return out[0] if squeeze else out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        counts = rng.multinomial(n, self.weights)
        chunks = [c.sample(rng, k) for c, k in zip(self.components, counts) if k > 0]
        x = np.concatenate(chunks, axis=0)
        rng.shuffle(x, axis=0)
        return x


def noised_score(density, x: np.ndarray, sigma_t: float) -> np.ndarray:
    """Exact grad_x log q_t(x) where q_t convolves ``density`` with N(0, sigma_t^2 I)."""
    if sigma_t < 0:
        raise ValueError("sigma_t must be nonnegative")
    return density.noised(sigma_t).score(x) if sigma_t > 0 else density.score(x)


def gaussian_product_quotient(terms: Sequence[tuple[GaussianDensity, float]]) -> GaussianDensity:
    """Normalize prod_i q_i(x)^{e_i} over a shared variable.

    Precision adds as sum_i e_i * Lambda_i and the precision-weighted means
    add likewise. Raises ImproperComposition if the combined precision is
    not positive definite.
    """
    if not terms:
        raise ValueError("no terms")
    dim = terms[0][0].dim
    J = np.zeros((dim, dim))
    h = np.zeros(dim)
    for g, e in terms:
        if g.dim != dim:
            raise ValueError("terms have mismatched dimensions")
        lam = g.precision()
        J += e * lam
        h += e * (lam @ g.mean)
    J = 0.5 * (J + J.T)
    try:
        np.linalg.cholesky(J)
    except np.linalg.LinAlgError as exc:
        raise ImproperComposition("combined precision is not positive definite") from exc
    cov = np.linalg.inv(J)
    cov = 0.5 * (cov + cov.T)
    return GaussianDensity(cov @ h, cov)


def _chain_slices(K: int, state_dim: int, action_dim: int):
    """Offsets of [s0, a0, s1, ..., sK] in the flattened chain vector."""
    state_slices, action_slices = [], []
    off = 0
    for i in range(K):
        state_slices.append(slice(off, off + state_dim))
        off += state_dim
        action_slices.append(slice(off, off + action_dim))
        off += action_dim
    state_slices.append(slice(off, off + state_dim))
    off += state_dim
    return state_slices, action_slices, off


def composed_chain_target(
    skills: Sequence[GaussianDensity],
    gamma,
    state_dim: int,
    action_dim: int = 0,
) -> GaussianDensity:
    """Exact composed chain distribution for jointly-Gaussian skills.

    Each skill is a Gaussian over (s, a, s') with the given block dims. The
    composition multiplies all joints and, at each interior state node,
    divides by the geometric mixture of the adjacent marginals weighted by
    the forward-dependency factor gamma:

        denominator_j = q_succ(s)^gamma_j * q_pred(s')^(1 - gamma_j)

    so gamma = 1 keeps only the successor's precondition marginal in the
    quotient (forward-conditional chain) and gamma = 0 only the
    predecessor's effect marginal (backward-conditional chain). Built by
    block precision assembly; exact at the clean-data level.
    """
    K = len(skills)
    if K < 1:
        raise ValueError("need at least one skill")
    joint_dim = 2 * state_dim + action_dim
    for g in skills:
        if g.dim != joint_dim:
            raise ValueError(f"skill dim {g.dim} != expected {joint_dim}")
    gammas = np.broadcast_to(np.asarray(gamma, dtype=float), (max(K - 1, 1),))
    if np.any(gammas < 0) or np.any(gammas > 1):
        raise ValueError("gamma must lie in [0, 1]")

    s_sl, a_sl, total = _chain_slices(K, state_dim, action_dim)
    J = np.zeros((total, total))
    h = np.zeros(total)

    s_idx = np.arange(state_dim)
    sp_idx = np.arange(state_dim + action_dim, joint_dim)

    for i, g in enumerate(skills):
        idx = np.concatenate(
            [
                np.arange(s_sl[i].start, s_sl[i].stop),
                np.arange(a_sl[i].start, a_sl[i].stop),
                np.arange(s_sl[i + 1].start, s_sl[i + 1].stop),
            ]
        )
        lam = g.precision()
        J[np.ix_(idx, idx)] += lam
        h[idx] += lam @ g.mean

    for j in range(1, K):
        gam = gammas[j - 1]
        idx = np.arange(s_sl[j].start, s_sl[j].stop)
        succ = skills[j].marginal(s_idx)       # successor's precondition marginal
        pred = skills[j - 1].marginal(sp_idx)  # predecessor's effect marginal
        for g, w in ((succ, gam), (pred, 1.0 - gam)):
            if w == 0.0:
                continue
            lam = g.precision()
            J[np.ix_(idx, idx)] -= w * lam
            h[idx] -= w * (lam @ g.mean)

    J = 0.5 * (J + J.T)
    try:
        np.linalg.cholesky(J)
    except np.linalg.LinAlgError as exc:
        raise ImproperComposition("assembled chain precision is not positive definite") from exc
    cov = np.linalg.inv(J)
    cov = 0.5 * (cov + cov.T)
    return GaussianDensity(cov @ h, cov)


def grid_moments(logpdf, lows, highs, n_points: int = 401):
    """Trapezoid-rule moments of exp(logpdf) on a tensor grid (dim <= 3).

    Returns (mass, mean, cov) of the unnormalized density; mean/cov are of
    the normalized one. Streams over the first axis to bound memory.
    """
    lows = np.atleast_1d(np.asarray(lows, dtype=float))
    highs = np.atleast_1d(np.asarray(highs, dtype=float))
    dim = lows.size
    if dim > 3:
        raise ValueError("grid quadrature limited to <= 3 dimensions")
    axes = [np.linspace(lows[d], highs[d], n_points) for d in range(dim)]
    steps = [(highs[d] - lows[d]) / (n_points - 1) for d in range(dim)]

    def weights(d):
        w = np.ones(n_points)
        w[0] = w[-1] = 0.5
        return w * steps[d]

    w_axes = [weights(d) for d in range(dim)]
    mass = 0.0
    m1 = np.zeros(dim)
    m2 = np.zeros((dim, dim))
    rest = axes[1:]
    rest_mesh = np.meshgrid(*rest, indexing="ij") if rest else []
    rest_pts = (
        np.stack([g.ravel() for g in rest_mesh], axis=1) if rest else np.zeros((1, 0))
    )
    w_rest = np.ones(rest_pts.shape[0])
    if rest:
        wg = np.meshgrid(*w_axes[1:], indexing="ij")
        w_rest = np.prod(np.stack([g.ravel() for g in wg]), axis=0)
    for i, x0 in enumerate(axes[0]):
        pts = np.concatenate([np.full((rest_pts.shape[0], 1), x0), rest_pts], axis=1)
        p = np.exp(logpdf(pts)) * (w_axes[0][i] * w_rest)
        mass += p.sum()
        m1 += p @ pts
        m2 += pts.T @ (p[:, None] * pts)
    mean = m1 / mass
    cov = m2 / mass - np.outer(mean, mean)
    return mass, mean, 0.5 * (cov + cov.T)


_BLOCK_NAMES = ("s", "a", "sp")


class AnalyticSkillModel:
    """Skill model backed by a closed-form joint Gaussian.

    Implements the same scoring interface as trained skill models:
    ``score_eps(x, t, mask)`` returns sigma_t * grad log of the noised
    marginal over the present blocks, on those blocks' coordinates. Used to
    verify the chain composition machinery against exact ground truth.
    Normalization statistics are identity (the joint is already expressed
    in chain coordinates).
    """

    def __init__(self, joint: GaussianDensity, state_dim: int, action_dim: int, sched: NoiseSchedule, name: str = "analytic"):
        if joint.dim != 2 * state_dim + action_dim:
            raise ValueError("joint dim inconsistent with block dims")
        self.joint = joint
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.sched = sched
        self.name = name
        self.supports_marginals = True
        self.stats = NormStats(mean=np.zeros(joint.dim), std=np.ones(joint.dim))

    def _block_idx(self, mask) -> np.ndarray:
        sd, ad = self.state_dim, self.action_dim
        spans = [np.arange(0, sd), np.arange(sd, sd + ad), np.arange(sd + ad, 2 * sd + ad)]
        keep = [spans[b] for b in range(3) if mask[b]]
        if not keep:
            raise ValueError("mask must keep at least one block")
        return np.concatenate(keep)

    def score_eps(self, x: np.ndarray, t: int, mask=(1, 1, 1), order: np.ndarray | None = None, sched=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sigma = (sched if sched is not None else self.sched).sigma(t)
        idx = self._block_idx(mask)
        marg = self.joint.marginal(idx)
        out = np.zeros_like(x)
        out[:, idx] = sigma * noised_score(marg, x[:, idx], sigma)
        return out
