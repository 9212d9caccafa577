"""Learned per-skill score model over (s, a, s') transitions.

A residual feed-forward stack predicts eps = sigma_t * score in the
skill's normalized coordinates. Input features: the (block-masked) noised
transition, three block-presence flags, a sinusoidal embedding of
log sigma_t, and the skill instance's conditioning features. Random block
masking during training makes the same network serve joint and marginal
score queries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import nets
from .diffusion import NoiseSchedule, build_schedule, dsm_loss
from .skills import NormStats, SkillSpec, Transition, compute_norm_stats, encode_transition

__all__ = [
    "TrainConfig",
    "ScoreNet",
    "SkillModel",
    "TrainingDiverged",
    "MarginalUnsupported",
    "init_params",
    "train_skill",
    "save_model",
    "load_model",
]

TIME_EMB_DIM = 16
FULL_MASK = (1, 1, 1)


class TrainingDiverged(RuntimeError):
    pass


class MarginalUnsupported(RuntimeError):
    """Marginal query against a model trained with mask_drop_prob = 0."""


def time_embedding(sigma: np.ndarray, dim: int = TIME_EMB_DIM) -> np.ndarray:
    """Sinusoidal features of log sigma_t; sigma may be scalar or (B,)."""
    u = np.log(np.atleast_1d(np.asarray(sigma, dtype=float)))[:, None]
    freqs = np.logspace(-1.0, 1.0, dim // 2)
    ang = u * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _block_sizes(state_dim: int, action_dim: int) -> tuple[int, int, int]:
    return (state_dim, action_dim, state_dim)


def expand_block_mask(mask: np.ndarray, state_dim: int, action_dim: int) -> np.ndarray:
    """(B, 3) block flags -> (B, D) per-coordinate mask."""
    mask = np.atleast_2d(np.asarray(mask, dtype=float))
    return np.repeat(mask, _block_sizes(state_dim, action_dim), axis=1)


def init_params(
    state_dim: int,
    action_dim: int,
    hidden: int,
    depth: int,
    rng: np.random.Generator,
    order_dim: int = 0,
) -> dict:
    D = 2 * state_dim + action_dim
    in_dim = D + 3 + TIME_EMB_DIM + order_dim
    return nets.init_mlp(in_dim, hidden, depth, D, rng)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    mask_drop_prob: float = 0.2
    dropout: float = 0.1
    hidden: int = 128
    depth: int = 4


class ScoreNet:
    """Parameter bundle plus the feature/masking plumbing around the MLP."""

    def __init__(self, state_dim: int, action_dim: int, order_dim: int, params: dict):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.order_dim = order_dim
        self.params = params
        self.dim = 2 * state_dim + action_dim

    def features(self, x_masked: np.ndarray, mask: np.ndarray, sigma: np.ndarray, order) -> np.ndarray:
        B = x_masked.shape[0]
        parts = [x_masked, np.atleast_2d(mask).astype(float), time_embedding(sigma)]
        if self.order_dim:
            if order is None:
                raise ValueError("model expects conditioning features")
            order = np.atleast_2d(np.asarray(order, dtype=float))
            if order.shape[0] == 1 and B > 1:
                order = np.broadcast_to(order, (B, order.shape[1]))
            if order.shape != (B, self.order_dim):
                raise ValueError(f"conditioning shape {order.shape} != ({B}, {self.order_dim})")
            parts.append(order)
        return np.concatenate(parts, axis=1)

    def forward(self, x: np.ndarray, t: int, sched: NoiseSchedule, mask=FULL_MASK, order=None) -> np.ndarray:
        """Inference-mode eps prediction (dropout off). Masked blocks of x are zero-filled."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError(f"transition dim {x.shape[1]} != {self.dim}")
        mask_row = np.asarray(mask, dtype=float).reshape(1, 3)
        m = expand_block_mask(np.broadcast_to(mask_row, (x.shape[0], 3)), self.state_dim, self.action_dim)
        sig = np.full(x.shape[0], sched.sigma(t))
        feats = self.features(x * m, np.broadcast_to(mask_row, (x.shape[0], 3)), sig, order)
        out, _ = nets.mlp_forward(self.params, feats)
        return out


class _BatchStep:
    """dsm_loss adapter binding one minibatch's conditioning and mask policy."""

    def __init__(self, net: ScoreNet, sched: NoiseSchedule, order, mask_drop_prob: float, dropout: float):
        self.net = net
        self.sched = sched
        self.order = order
        self.mask_drop_prob = mask_drop_prob
        self.dropout = dropout

    def _draw_masks(self, B: int, rng: np.random.Generator) -> np.ndarray:
        if self.mask_drop_prob <= 0.0:
            return np.ones((B, 3))
        mask = (rng.random((B, 3)) >= self.mask_drop_prob).astype(float)
        empty = mask.sum(axis=1) == 0
        mask[empty] = 1.0  # at least one block present
        return mask

    def eps_and_cache(self, x_t: np.ndarray, t: np.ndarray, rng: np.random.Generator):
        B = x_t.shape[0]
        mask = self._draw_masks(B, rng)
        m = expand_block_mask(mask, self.net.state_dim, self.net.action_dim)
        sig = self.sched.sigmas[t]
        feats = self.net.features(x_t * m, mask, sig, self.order)
        out, cache = nets.mlp_forward(self.net.params, feats, dropout_p=self.dropout, rng=rng)
        return out, m, cache

    def grads_from_eps(self, cache, grad_eps):
        return nets.mlp_backward(self.net.params, cache, grad_eps)


@dataclass
class SkillModel:
    """Trained score model bundling parameters, normalization, and schedule."""

    name: str
    state_dim: int
    action_dim: int
    order_dim: int
    hidden: int
    depth: int
    params: dict
    stats: NormStats
    sched: NoiseSchedule
    mask_drop_prob: float
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def supports_marginals(self) -> bool:
        return self.mask_drop_prob > 0.0

    def _net(self) -> ScoreNet:
        return ScoreNet(self.state_dim, self.action_dim, self.order_dim, self.params)

    def score_eps(self, x: np.ndarray, t: int, mask=FULL_MASK, order=None, sched=None) -> np.ndarray:
        """eps = sigma_t * score in this model's normalized coordinates.

        ``sched`` overrides the training schedule (the network conditions on
        sigma_t itself, so any monotone sigma grid works at inference).
        """
        if tuple(mask) != FULL_MASK and not self.supports_marginals:
            raise MarginalUnsupported(
                f"model {self.name!r} was trained with mask_drop_prob=0; marginal queries unsupported"
            )
        return self._net().forward(x, t, sched if sched is not None else self.sched, mask=mask, order=order)


def train_skill(
    dataset: list[Transition],
    skill: SkillSpec,
    config: TrainConfig,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    state_stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> SkillModel:
    """Fit the skill's score model by denoising score matching with Adam.

    Each minibatch independently drops transition blocks with probability
    ``mask_drop_prob`` so joint and marginal scores are learned together.
    ``state_stats`` shares state-block normalization across the skill
    library (required for multi-skill chains; see compute_norm_stats).
    Raises TrainingDiverged if the loss goes non-finite.
    """
    if not dataset:
        raise ValueError("empty dataset")
    stats = compute_norm_stats(dataset, state_stats=state_stats)
    X0 = np.stack([encode_transition(tr, stats) for tr in dataset])
    order = None
    if skill.order_dim:
        order = np.stack([tr.order for tr in dataset])

    params = init_params(
        skill.state_dim, skill.action_dim, config.hidden, config.depth, rng, order_dim=skill.order_dim
    )
    net = ScoreNet(skill.state_dim, skill.action_dim, skill.order_dim, params)
    opt = nets.Adam(lr=config.lr)
    n = X0.shape[0]
    history = []
    for epoch in range(config.epochs):
        idx = rng.permutation(n)
        epoch_losses = []
        for lo in range(0, n, config.batch_size):
            rows = idx[lo : lo + config.batch_size]
            step = _BatchStep(net, sched, None if order is None else order[rows], config.mask_drop_prob, config.dropout)
            loss, grads = dsm_loss(step, X0[rows], sched, rng)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"skill {skill.name!r}: non-finite loss at epoch {epoch}, "
                    f"recent epoch means {history[-5:]}"
                )
            opt.step(params, grads)
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))

    return SkillModel(
        name=skill.name,
        state_dim=skill.state_dim,
        action_dim=skill.action_dim,
        order_dim=skill.order_dim,
        hidden=config.hidden,
        depth=config.depth,
        params=params,
        stats=stats,
        sched=sched,
        mask_drop_prob=config.mask_drop_prob,
        loss_history=np.asarray(history),
    )


# --- checkpoint I/O (shared container for every model kind) ---------------

FORMAT_VERSION = 1


def save_model(path, model) -> None:
    """Write a versioned npz checkpoint; round-trips bit-exactly."""
    from .qmodel import QModel  # local import to avoid a cycle

    if isinstance(model, SkillModel):
        kind = "score"
        meta = {
            "name": model.name,
            "state_dim": model.state_dim,
            "action_dim": model.action_dim,
            "order_dim": model.order_dim,
            "hidden": model.hidden,
            "depth": model.depth,
            "mask_drop_prob": model.mask_drop_prob,
            "sched": {"T": model.sched.T, "sigma_min": model.sched.sigma_min,
                      "sigma_max": model.sched.sigma_max, "kind": model.sched.kind},
        }
        arrays = {f"param/{k}": v for k, v in model.params.items()}
        arrays["stats/mean"] = model.stats.mean
        arrays["stats/std"] = model.stats.std
        arrays["loss_history"] = model.loss_history
    elif isinstance(model, QModel):
        kind = "qmodel"
        meta = {
            "name": model.name,
            "state_dim": model.state_dim,
            "hidden": model.hidden,
            "depth": model.depth,
            "order_dim": model.order_dim,
            "holdout_accuracy": model.holdout_accuracy,
        }
        arrays = {f"param/{k}": v for k, v in model.params.items()}
        arrays["stats/mean"] = model.stats_mean
        arrays["stats/std"] = model.stats_std
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")

    meta["format_version"] = FORMAT_VERSION
    meta["kind"] = kind
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_model(path):
    """Load a checkpoint written by save_model; dispatches on the kind tag."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        params = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
        if meta["kind"] == "score":
            sched = build_schedule(**meta["sched"])
            stats = NormStats(mean=data["stats/mean"].copy(), std=data["stats/std"].copy())
            return SkillModel(
                name=meta["name"],
                state_dim=meta["state_dim"],
                action_dim=meta["action_dim"],
                order_dim=meta["order_dim"],
                hidden=meta["hidden"],
                depth=meta["depth"],
                params=params,
                stats=stats,
                sched=sched,
                mask_drop_prob=meta["mask_drop_prob"],
                loss_history=data["loss_history"].copy(),
            )
        if meta["kind"] == "qmodel":
            from .qmodel import QModel

            return QModel(
                name=meta["name"],
                state_dim=meta["state_dim"],
                order_dim=meta["order_dim"],
                hidden=meta["hidden"],
                depth=meta["depth"],
                params=params,
                stats_mean=data["stats/mean"].copy(),
                stats_std=data["stats/std"].copy(),
                holdout_accuracy=meta["holdout_accuracy"],
            )
        raise ValueError(f"unknown checkpoint kind {meta['kind']!r}")
