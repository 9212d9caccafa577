"""Baseline planners: random-shooting CEM and state-only + inverse dynamics.

The CEM baseline samples full parameter sequences from uniform bounds,
refits a diagonal Gaussian on the top-decile elites once (two iterations
total), and evaluates every rollout on the ground-truth domain, so its
total rollout budget is directly comparable to a candidate budget.

The state-only baseline masks action nodes out of the chain composition,
recovers actions with per-skill (s, s') -> a regressors, and executes the
result; it isolates the cost of breaking the joint state-action model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nets
from ..planner import PlanSettings, candidate_actions, execute_plan, gsc_plan
from ..skills import SkillSpec, Transition

__all__ = [
    "InvDynModel",
    "train_inverse_dynamics",
    "random_shooting_plan",
    "state_only_plan",
    "rollout_score",
]


@dataclass
class InvDynModel:
    name: str
    state_dim: int
    action_dim: int
    order_dim: int
    params: dict
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray
    holdout_mse: float = float("nan")
    action_variance: float = float("nan")

    def predict(self, s, s_next, order=None) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        s_next = np.atleast_2d(np.asarray(s_next, dtype=float))
        X = np.concatenate([s, s_next], axis=1)
        X = (X - self.in_mean) / self.in_std
        if self.order_dim:
            order = np.atleast_2d(np.asarray(order, dtype=float))
            if order.shape[0] == 1 and X.shape[0] > 1:
                order = np.broadcast_to(order, (X.shape[0], order.shape[1]))
            X = np.concatenate([X, order], axis=1)
        out, _ = nets.mlp_forward(self.params, X)
        out = out * self.out_std + self.out_mean
        return out[0] if out.shape[0] == 1 else out


def train_inverse_dynamics(
    skill: SkillSpec,
    transitions: list[Transition],
    rng: np.random.Generator,
    epochs: int = 120,
    batch_size: int = 128,
    lr: float = 1e-3,
    hidden: int = 128,
    depth: int = 2,
) -> InvDynModel:
    """MSE-fit (s, s') -> a on successful transitions; reports held-out MSE."""
    if not transitions:
        raise ValueError("empty dataset")
    S = np.stack([np.concatenate([t.s, t.s_next]) for t in transitions])
    A = np.stack([t.a for t in transitions])
    order = np.stack([t.order for t in transitions]) if skill.order_dim else None

    in_mean, in_std = S.mean(axis=0), np.where(S.std(axis=0) < 1e-12, 1.0, S.std(axis=0))
    out_mean, out_std = A.mean(axis=0), np.where(A.std(axis=0) < 1e-12, 1.0, A.std(axis=0))
    Xn = (S - in_mean) / in_std
    if order is not None:
        Xn = np.concatenate([Xn, order], axis=1)
    Yn = (A - out_mean) / out_std

    n = Xn.shape[0]
    perm = rng.permutation(n)
    n_hold = max(1, n // 5)
    hold, train = perm[:n_hold], perm[n_hold:]

    params = nets.init_mlp(Xn.shape[1], hidden, depth, Yn.shape[1], rng)
    opt = nets.Adam(lr=lr)
    for _ in range(epochs):
        idx = rng.permutation(train)
        for lo in range(0, idx.size, batch_size):
            rows = idx[lo : lo + batch_size]
            out, cache = nets.mlp_forward(params, Xn[rows])
            grad = 2.0 * (out - Yn[rows]) / rows.size
            opt.step(params, nets.mlp_backward(params, cache, grad))

    pred, _ = nets.mlp_forward(params, Xn[hold])
    pred_raw = pred * out_std + out_mean
    mse = float(np.mean((pred_raw - A[hold]) ** 2))
    return InvDynModel(
        name=skill.name,
        state_dim=skill.state_dim,
        action_dim=skill.action_dim,
        order_dim=skill.order_dim,
        params=params,
        in_mean=in_mean,
        in_std=in_std,
        out_mean=out_mean,
        out_std=out_std,
        holdout_mse=mse,
        action_variance=float(np.mean(A.var(axis=0))),
    )


def rollout_score(task, state0, actions) -> tuple[float, bool]:
    """Successful-step count plus a goal bonus; used as the CEM objective."""
    res = execute_plan(task, state0, actions)
    return float(sum(res.step_ok)) + (10.0 if res.success else 0.0), res.success


def random_shooting_plan(task, state0, budget: int, rng: np.random.Generator):
    """Uniform-prior CEM over the full parameter sequence (2 iterations, top 10%)."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    specs = [task.domain.skills[st.skill] for st in task.skeleton.steps]
    lows = np.concatenate([[p.low for p in sp.params] for sp in specs])
    highs = np.concatenate([[p.high for p in sp.params] for sp in specs])
    splits = np.cumsum([sp.action_dim for sp in specs])[:-1]

    def as_actions(flat):
        return np.split(flat, splits)

    def score(flat):
        return rollout_score(task, state0, as_actions(flat))[0]

    n1 = budget if budget < 4 else budget // 2
    X = rng.uniform(lows, highs, size=(n1, lows.size))
    scores = np.array([score(x) for x in X])
    if budget - n1 > 0:
        k = max(1, int(np.ceil(0.1 * n1)))
        elite = X[np.argsort(-scores, kind="stable")[:k]]
        mu = elite.mean(axis=0)
        sd = elite.std(axis=0) + 1e-3 * (highs - lows)
        X2 = np.clip(rng.normal(mu, sd, size=(budget - n1, lows.size)), lows, highs)
        s2 = np.array([score(x) for x in X2])
        X = np.concatenate([X, X2])
        scores = np.concatenate([scores, s2])
    best = int(np.argmax(scores))  # first index on ties
    return as_actions(X[best]), float(scores[best])


def state_only_plan(
    task,
    state0,
    models: dict,
    invdyn: dict,
    rng: np.random.Generator,
    qmodels: dict | None = None,
    n_candidates: int = 32,
    gamma: float = 0.5,
):
    """Plan over state nodes only, then back out actions with the regressors."""
    settings = PlanSettings(n_candidates=n_candidates, gamma=gamma, state_only=True,
                            use_q=qmodels is not None)
    result = gsc_plan(task, models, state0, rng, qmodels=qmodels, settings=settings, invdyn=invdyn)
    if result.best is None:
        return None
    return candidate_actions(result.best, result.skeleton, invdyn=invdyn)
