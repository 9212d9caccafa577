"""Per-skill success classifier Q(s, s') and candidate ranking.

Q consumes the current and next state only (actions influence it through
the resulting state) and returns the probability that the transition
corresponds to a successful execution. Candidates are ranked by the
product of their per-skill success probabilities, accumulated in the log
domain so long chains do not underflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .skills import SkillSpec, Transition

__all__ = ["QModel", "QTrainConfig", "train_q", "rank_candidates"]


@dataclass
class QTrainConfig:
    epochs: int = 60
    batch_size: int = 128
    lr: float = 1e-3
    hidden: int = 128
    depth: int = 4
    holdout_frac: float = 0.2


@dataclass
class QModel:
    name: str
    state_dim: int
    order_dim: int
    hidden: int
    depth: int
    params: dict
    stats_mean: np.ndarray
    stats_std: np.ndarray
    holdout_accuracy: float = float("nan")

    def _features(self, s: np.ndarray, s_next: np.ndarray, order) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        s_next = np.atleast_2d(np.asarray(s_next, dtype=float))
        X = np.concatenate([s, s_next], axis=1)
        X = (X - self.stats_mean) / self.stats_std
        if self.order_dim:
            if order is None:
                raise ValueError("model expects conditioning features")
            order = np.atleast_2d(np.asarray(order, dtype=float))
            if order.shape[0] == 1 and X.shape[0] > 1:
                order = np.broadcast_to(order, (X.shape[0], order.shape[1]))
            X = np.concatenate([X, order], axis=1)
        return X

    def logits(self, s, s_next, order=None) -> np.ndarray:
        out, _ = nets.mlp_forward(self.params, self._features(s, s_next, order))
        return out[:, 0]

    def predict(self, s, s_next, order=None) -> np.ndarray:
        """Success probability in (0, 1)."""
        l = self.logits(s, s_next, order)
        return 1.0 / (1.0 + np.exp(-l))


def _bce_loss_and_grad(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    # mean over batch of log(1 + e^l) - y*l, computed stably
    loss = float(np.mean(np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits))) - y * logits))
    p = 1.0 / (1.0 + np.exp(-logits))
    return loss, (p - y) / logits.size


def train_q(
    skill: SkillSpec,
    successes: list[Transition],
    failures: list[Transition],
    config: QTrainConfig,
    rng: np.random.Generator,
) -> QModel:
    """Cross-entropy training on successes plus retained failures.

    Raises on a single-class dataset. Held-out accuracy (on a stratified-ish
    random split) is stored on the returned model.
    """
    if not successes or not failures:
        raise ValueError(f"skill {skill.name!r}: need both success and failure transitions")
    rows = successes + failures
    y = np.array([1.0] * len(successes) + [0.0] * len(failures))
    S = np.stack([np.concatenate([t.s, t.s_next]) for t in rows])
    order = np.stack([t.order for t in rows]) if skill.order_dim else None

    mean = S.mean(axis=0)
    std = np.where(S.std(axis=0) < 1e-12, 1.0, S.std(axis=0))
    Xn = (S - mean) / std
    if order is not None:
        Xn = np.concatenate([Xn, order], axis=1)

    n = Xn.shape[0]
    perm = rng.permutation(n)
    n_hold = max(1, int(round(config.holdout_frac * n)))
    hold, train = perm[:n_hold], perm[n_hold:]
    if len(np.unique(y[train])) < 2:
        raise ValueError(f"skill {skill.name!r}: training split is single-class")

    params = nets.init_mlp(Xn.shape[1], config.hidden, config.depth, 1, rng)
    opt = nets.Adam(lr=config.lr)
    for _ in range(config.epochs):
        idx = rng.permutation(train)
        for lo in range(0, idx.size, config.batch_size):
            rows_b = idx[lo : lo + config.batch_size]
            out, cache = nets.mlp_forward(params, Xn[rows_b])
            _, dlogit = _bce_loss_and_grad(out[:, 0], y[rows_b])
            grads = nets.mlp_backward(params, cache, dlogit[:, None])
            opt.step(params, grads)

    out, _ = nets.mlp_forward(params, Xn[hold])
    acc = float(np.mean((out[:, 0] > 0.0) == (y[hold] > 0.5)))
    return QModel(
        name=skill.name,
        state_dim=skill.state_dim,
        order_dim=skill.order_dim,
        hidden=config.hidden,
        depth=config.depth,
        params=params,
        stats_mean=mean,
        stats_std=std,
        holdout_accuracy=acc,
    )


def rank_candidates(candidates, q_models, orders=None):
    """Order candidates by the product of per-skill success probabilities.

    ``q_models`` is one QModel per skeleton step; ``orders`` the matching
    per-step conditioning features (or None). Ties break toward the lower
    candidate index, so the ordering is deterministic. Returns a new list;
    each candidate gains ``skill_probs`` and ``score``.
    """
    candidates = list(candidates)
    if not candidates:
        return []
    K = len(q_models)
    for cand in candidates:
        probs = np.empty(K)
        log_score = 0.0
        for i, qm in enumerate(q_models):
            if qm is None:
                raise ValueError(f"missing success model for skeleton step {i}")
            order = None if orders is None else orders[i]
            p = float(qm.predict(cand.state(i), cand.state(i + 1), order=order)[0])
            probs[i] = p
            log_score += np.log(max(p, 1e-300))
        cand.skill_probs = probs
        cand.score = float(np.exp(log_score))
        cand._log_score = log_score
    return sorted(candidates, key=lambda c: (-c._log_score, c.index))
