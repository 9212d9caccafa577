"""Hard conditioning (in-painting) and soft constraint guidance.

In-painting replaces a conditioned node with value + sigma_t * z at every
noise level and with the exact value at t = 0. Soft constraints carry a
smooth satisfaction functional Psi in [0, 1]; their likelihood is
h = exp(-alpha (1 - Psi)) and guidance perturbs the assembled score by
-alpha * grad(1 - Psi) evaluated on the denoised estimate, with gradients
taken w.r.t. the noised sample through the frozen-score approximation
(d x0_hat / d x_t ~ I).

Psi is defined over raw (denormalized) node values; the chain-coordinate
conversion (multiplication by the per-node std) happens here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffusion import NoiseSchedule

logger = logging.getLogger(__name__)

__all__ = [
    "Constraint",
    "ContractViolation",
    "apply_inpainting",
    "constraint_likelihood",
    "guided_score",
]


class ContractViolation(RuntimeError):
    """A constraint functional returned a value outside [0, 1]."""


@dataclass(frozen=True)
class Constraint:
    """Differentiable satisfaction functional over a set of chain nodes.

    ``psi`` maps a (B, m) array of concatenated raw node values to (B,)
    values in [0, 1]. ``grad`` (same input, (B, m) output) is required in
    analytic mode; finite-difference mode derives it from psi.
    """

    name: str
    nodes: tuple[str, ...]
    psi: Callable[[np.ndarray], np.ndarray]
    alpha: float = 1.0
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    grad_mode: str = "analytic"
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.grad_mode not in ("analytic", "fd"):
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")
        if self.grad_mode == "analytic" and self.grad is None:
            raise ValueError(f"constraint {self.name!r}: analytic mode needs a grad callable")

    def psi_values(self, values: np.ndarray) -> np.ndarray:
        out = np.asarray(self.psi(np.atleast_2d(values)), dtype=float)
        if np.any(out < -1e-9) or np.any(out > 1.0 + 1e-9):
            raise ContractViolation(
                f"constraint {self.name!r}: psi outside [0, 1] (range {out.min():.3g}..{out.max():.3g})"
            )
        return np.clip(out, 0.0, 1.0)

    def gradient(self, values: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(values)
        if self.grad_mode == "analytic":
            return np.asarray(self.grad(values), dtype=float)
        g = np.zeros_like(values)
        for k in range(values.shape[1]):
            h = self.fd_step * max(1.0, float(np.max(np.abs(values[:, k]))))
            up = values.copy()
            up[:, k] += h
            dn = values.copy()
            dn[:, k] -= h
            g[:, k] = (self.psi_values(up) - self.psi_values(dn)) / (2.0 * h)
        return g


def constraint_likelihood(c: Constraint, values: np.ndarray) -> np.ndarray:
    """h = exp(-alpha (1 - Psi(values)))."""
    return np.exp(-c.alpha * (1.0 - c.psi_values(values)))


def apply_inpainting(
    x_t: np.ndarray,
    cond: dict[str, np.ndarray],
    t: int,
    sched: NoiseSchedule,
    rngs,
    layout,
) -> np.ndarray:
    """Replace conditioned nodes with noise-matched values (exact at t = 0).

    ``cond`` maps node name -> normalized value vector; ``rngs`` is one
    Generator per batch row so candidate streams stay independent.
    """
    if not cond:
        return x_t
    x = np.array(x_t, dtype=float)
    sigma = sched.sigma(t)
    for name, val in cond.items():
        sl = layout.sl(name)
        val = np.asarray(val, dtype=float)
        if val.shape != (sl.stop - sl.start,):
            raise ValueError(f"conditioning for {name!r} has dim {val.shape}, node has {sl.stop - sl.start}")
        if t == 0:
            x[:, sl] = val
        else:
            for i, g in enumerate(rngs):
                x[i, sl] = val + sigma * g.standard_normal(val.size)
    return x


def guided_score(
    eps_chain: np.ndarray,
    x_t: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    constraints,
    layout,
    space,
) -> np.ndarray:
    """Add constraint-likelihood gradients to an assembled chain score.

    For each constraint: denoise the affected nodes with the current eps,
    evaluate grad Psi on the raw denoised values, convert to chain
    coordinates, and add alpha * grad Psi there (equivalently subtract
    alpha * grad(1 - Psi)). Coordinates outside the node set are untouched;
    a non-finite gradient skips that constraint for this step.
    """
    if not constraints:
        return eps_chain
    eps = np.array(eps_chain, dtype=float)
    sigma = sched.sigma(t)
    for c in constraints:
        if c.alpha == 0.0:
            continue
        idx = np.concatenate([np.arange(layout.sl(n).start, layout.sl(n).stop) for n in c.nodes])
        x0_norm = x_t[:, idx] + sigma * eps[:, idx]
        raw = x0_norm * space.std[idx] + space.mean[idx]
        g_raw = c.gradient(raw)
        if not np.isfinite(g_raw).all():
            logger.warning("constraint %r: non-finite gradient at t=%d, skipped", c.name, t)
            continue
        eps[:, idx] += c.alpha * g_raw * space.std[idx]
    return eps
