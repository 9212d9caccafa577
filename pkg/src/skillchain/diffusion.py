"""Variance-exploding diffusion primitives.

Forward process: q_t(x_t | x_0) = N(x_t; x_0, sigma_t^2 I) with a fixed,
strictly increasing noise series sigma_0 < sigma_1 < ... < sigma_T.

Network convention used throughout the package: the model output eps
estimates sigma_t * grad log q_t(x_t), so the denoised (posterior-mean)
estimate is x0_hat = x_t + sigma_t * eps and the ancestral reverse step is
x_{t-1} = x0_hat + sigma_{t-1} * z.

Everything here is a pure function over an immutable schedule; all
randomness flows through caller-supplied numpy Generators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseSchedule",
    "build_schedule",
    "add_noise",
    "denoise_estimate",
    "reverse_step",
    "dsm_targets",
    "dsm_loss",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Fixed noise series sigma_0..sigma_T shared by training and sampling."""

    sigmas: np.ndarray  # shape (T+1,), strictly increasing
    kind: str           # "geometric" | "linear"
    T: int

    @property
    def sigma_min(self) -> float:
        return float(self.sigmas[0])

    @property
    def sigma_max(self) -> float:
        return float(self.sigmas[-1])

    def sigma(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"step {t} outside [0, {self.T}]")
        return float(self.sigmas[t])


def build_schedule(T: int, sigma_min: float, sigma_max: float, kind: str = "geometric") -> NoiseSchedule:
    """Build a monotone noise series of T+1 levels from sigma_min to sigma_max.

    Geometric interpolates log sigma linearly in t; linear interpolates
    sigma itself.
    """
    if T < 2:
        raise ValueError(f"need T >= 2, got {T}")
    if not (0.0 < sigma_min < sigma_max):
        raise ValueError(f"need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})")
    if kind == "geometric":
        sigmas = np.geomspace(sigma_min, sigma_max, T + 1)
    elif kind == "linear":
        sigmas = np.linspace(sigma_min, sigma_max, T + 1)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    # exact endpoints regardless of interpolation round-off
    sigmas[0] = sigma_min
    sigmas[-1] = sigma_max
    return NoiseSchedule(sigmas=sigmas, kind=kind, T=T)


def add_noise(x0: np.ndarray, t: int, sched: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Sample x_t = x0 + sigma_t * z with z ~ N(0, I)."""
    x0 = np.asarray(x0, dtype=float)
    return x0 + sched.sigma(t) * rng.standard_normal(x0.shape)


def denoise_estimate(x_t: np.ndarray, eps: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Posterior-mean estimate x0_hat = x_t + sigma_t * eps."""
    x_t = np.asarray(x_t, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x_t.shape != eps.shape:
        raise ValueError(f"shape mismatch: x_t {x_t.shape} vs eps {eps.shape}")
    return x_t + sched.sigma(t) * eps


def reverse_step(
    x_t: np.ndarray, eps: np.ndarray, t: int, sched: NoiseSchedule, rng: np.random.Generator
) -> np.ndarray:
    """One ancestral step: x_{t-1} = x0_hat(x_t) + sigma_{t-1} * z.

    Valid only for t >= 1.
    """
    if t < 1:
        raise ValueError("reverse_step requires t >= 1")
    x0_hat = denoise_estimate(x_t, eps, t, sched)
    return x0_hat + sched.sigma(t - 1) * rng.standard_normal(x0_hat.shape)


def dsm_targets(
    x0: np.ndarray, sched: NoiseSchedule, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw per-row steps t ~ U{1..T}, noise the batch, and return regression targets.

    Returns (x_t, t, target) where target = (x0 - x_t) / sigma_t, the
    conditional Gaussian score scaled by sigma_t.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n = x0.shape[0]
    t = rng.integers(1, sched.T + 1, size=n)
    sig = sched.sigmas[t][:, None]
    z = rng.standard_normal(x0.shape)
    x_t = x0 + sig * z
    target = -z  # == (x0 - x_t) / sigma_t
    return x_t, t, target


def dsm_loss(net, batch: np.ndarray, sched: NoiseSchedule, rng: np.random.Generator):
    """Denoising score matching loss and parameter gradients for one batch.

    ``net`` must expose ``eps_and_cache(x_t, t, rng) -> (eps, block_mask, cache)``
    and ``grads_from_eps(cache, grad_eps) -> grads``; the returned block mask
    (same shape as eps, ones where coordinates are present) restricts the
    regression to unmasked coordinates. Uniform time weighting:
    loss = mean_b || (target_b - eps_b) * mask_b ||^2.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    x_t, t, target = dsm_targets(batch, sched, rng)
    eps, mask, cache = net.eps_and_cache(x_t, t, rng)
    resid = (eps - target) * mask
    loss = float(np.sum(resid**2) / batch.shape[0])
    grad_eps = 2.0 * resid / batch.shape[0]
    grads = net.grads_from_eps(cache, grad_eps)
    return loss, grads
