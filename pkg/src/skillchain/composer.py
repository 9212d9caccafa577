"""Skeleton-level score assembly and parallel reverse-diffusion sampling.

A skeleton of K skills induces the flattened chain [s0, a0, s1, ..., sK].
Each skill's joint score is added over its three nodes; at every interior
state node the geometric mixture of the adjacent marginal scores is
subtracted once, weighted by the forward-dependency factor gamma:

    sub_j = gamma_j * eps_succ(s_j) + (1 - gamma_j) * eps_pred(s_j)

gamma = 1 keeps only the successor-marginal quotient (forward-conditional
chaining, i.e. policy shooting); gamma = 0 keeps only the predecessor's
(backward-conditional chaining). Endpoint state nodes and action nodes
receive no subtraction.

Chain coordinates are normalized per node with the owning skill's
statistics (the earlier skill owns a shared node); evaluating a model on a
node it does not own goes through an exact affine re-normalization, and
the returned scores are mapped back by the same change of variables.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoiseSchedule, denoise_estimate
from .guidance import apply_inpainting, guided_score

logger = logging.getLogger(__name__)

__all__ = [
    "SkeletonStep",
    "Skeleton",
    "LayoutNode",
    "ChainLayout",
    "GammaConfig",
    "ChainSpace",
    "Candidate",
    "layout_skeleton",
    "assemble_score",
    "sample_chain",
    "export_frames",
    "write_frames",
]


@dataclass(frozen=True)
class SkeletonStep:
    skill: str
    binding: tuple = ()
    order: np.ndarray | None = None  # per-instance conditioning features

    def __post_init__(self):
        if self.order is not None:
            object.__setattr__(self, "order", np.asarray(self.order, dtype=float))


@dataclass(frozen=True)
class Skeleton:
    steps: tuple[SkeletonStep, ...]

    def __post_init__(self):
        if len(self.steps) < 1:
            raise ValueError("skeleton needs at least one step")
        object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def K(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class LayoutNode:
    name: str
    offset: int
    dim: int
    kind: str  # "state" | "action"

    @property
    def sl(self) -> slice:
        return slice(self.offset, self.offset + self.dim)


@dataclass(frozen=True)
class ChainLayout:
    nodes: tuple[LayoutNode, ...]
    total_dim: int
    state_dim: int
    K: int
    state_only: bool = False

    def node(self, name: str) -> LayoutNode:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(f"unknown chain node {name!r}")

    def sl(self, name: str) -> slice:
        return self.node(name).sl

    def state_nodes(self) -> list[LayoutNode]:
        return [n for n in self.nodes if n.kind == "state"]

    def action_nodes(self) -> list[LayoutNode]:
        return [n for n in self.nodes if n.kind == "action"]


@dataclass(frozen=True)
class GammaConfig:
    """Per-shared-node forward-dependency weights in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("gamma must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, gamma: float, K: int) -> "GammaConfig":
        return cls(np.full(max(K - 1, 1), float(gamma)))

    def at(self, shared_index: int) -> float:
        return float(self.values[shared_index])


def layout_skeleton(skeleton: Skeleton, models: dict, state_only: bool = False) -> ChainLayout:
    """Build node offsets for [s0, a0, s1, ..., sK]; checks registration and dims."""
    missing = [st.skill for st in skeleton.steps if st.skill not in models]
    if missing:
        raise KeyError(f"unregistered skills: {missing}")
    seq = [models[st.skill] for st in skeleton.steps]
    state_dims = {m.state_dim for m in seq}
    if len(state_dims) != 1:
        raise ValueError(f"adjacent skills disagree on state dimension: {sorted(state_dims)}")
    sd = state_dims.pop()
    nodes = []
    off = 0
    for i, m in enumerate(seq):
        nodes.append(LayoutNode(f"s{i}", off, sd, "state"))
        off += sd
        ad = 0 if state_only else m.action_dim
        nodes.append(LayoutNode(f"a{i}", off, ad, "action"))
        off += ad
    nodes.append(LayoutNode(f"s{skeleton.K}", off, sd, "state"))
    off += sd
    return ChainLayout(nodes=tuple(nodes), total_dim=off, state_dim=sd, K=skeleton.K, state_only=state_only)


class ChainSpace:
    """Per-node normalization context in chain coordinates.

    Shared state nodes are owned by the earlier skill; if the two adjacent
    skills' statistics for a shared node diverge by more than 10% a warning
    is emitted (the composition then mixes slightly mismatched coordinate
    systems).
    """

    def __init__(self, layout: ChainLayout, skeleton: Skeleton, models: dict):
        self.layout = layout
        self.skeleton = skeleton
        self.models = [models[st.skill] for st in skeleton.steps]
        sd = layout.state_dim
        mean = np.zeros(layout.total_dim)
        std = np.ones(layout.total_dim)
        for i, m in enumerate(self.models):
            ad = m.action_dim
            s_mean, a_mean, sp_mean = np.split(m.stats.mean, [sd, sd + ad])
            s_std, a_std, sp_std = np.split(m.stats.std, [sd, sd + ad])
            if i == 0:
                mean[layout.sl("s0")], std[layout.sl("s0")] = s_mean, s_std
            a_node = layout.node(f"a{i}")
            if a_node.dim:
                mean[a_node.sl], std[a_node.sl] = a_mean, a_std
            mean[layout.sl(f"s{i + 1}")], std[layout.sl(f"s{i + 1}")] = sp_mean, sp_std
        self.mean = mean
        self.std = std
        for j in range(1, skeleton.K):
            pred, succ = self.models[j - 1], self.models[j]
            own_m, own_s = self._model_block(pred, "sp")
            nxt_m, nxt_s = self._model_block(succ, "s")
            scale_div = np.max(np.abs(own_s / nxt_s - 1.0))
            shift_div = np.max(np.abs(own_m - nxt_m) / np.maximum(np.maximum(own_s, nxt_s), 1e-9))
            if max(scale_div, shift_div) > 0.10:
                warnings.warn(
                    f"shared node s{j}: normalization of {pred.name!r} and {succ.name!r} "
                    f"diverges by more than 10% (scale {scale_div:.2f}, shift {shift_div:.2f})",
                    stacklevel=2,
                )

    @staticmethod
    def _model_block(model, block: str) -> tuple[np.ndarray, np.ndarray]:
        sd, ad = model.state_dim, model.action_dim
        sl = {"s": slice(0, sd), "a": slice(sd, sd + ad), "sp": slice(sd + ad, 2 * sd + ad)}[block]
        return model.stats.mean[sl], model.stats.std[sl]

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.std + self.mean

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.mean) / self.std

    def normalize_node(self, name: str, raw_value: np.ndarray) -> np.ndarray:
        sl = self.layout.sl(name)
        return (np.asarray(raw_value, dtype=float) - self.mean[sl]) / self.std[sl]

    def node_adapter(self, name: str, model, block: str) -> tuple[np.ndarray, np.ndarray]:
        """Affine map u = x * scale + shift from chain coords to the model's block coords.

        Scores map back by multiplying with ``scale`` (change of variables).
        """
        sl = self.layout.sl(name)
        mod_m, mod_s = self._model_block(model, block)
        scale = self.std[sl] / mod_s
        shift = (self.mean[sl] - mod_m) / mod_s
        return scale, shift


def _joint_query(model, x_chain: np.ndarray, t: int, sched: NoiseSchedule, space: ChainSpace,
                 names: tuple[str, str, str], order, mask: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate a skill score on chain slices; returns (eps_chain_coords, chain_idx)."""
    layout = space.layout
    blocks = ("s", "a", "sp")
    B = x_chain.shape[0]
    u = np.zeros((B, 2 * model.state_dim + model.action_dim))
    scales = np.zeros(u.shape[1])
    chain_idx: list[np.ndarray] = []
    sd, ad = model.state_dim, model.action_dim
    spans = {"s": slice(0, sd), "a": slice(sd, sd + ad), "sp": slice(sd + ad, 2 * sd + ad)}
    for name, block, m in zip(names, blocks, mask):
        if not m:
            continue
        sl = layout.sl(name)
        if sl.stop - sl.start == 0:
            continue
        scale, shift = space.node_adapter(name, model, block)
        u[:, spans[block]] = x_chain[:, sl] * scale + shift
        scales[spans[block]] = scale
        chain_idx.append(np.arange(sl.start, sl.stop))
    eps_model = model.score_eps(u, t, mask=mask, order=order, sched=sched)
    present = scales != 0
    return eps_model[:, present] * scales[present], np.concatenate(chain_idx)


def assemble_score(
    x_t: np.ndarray,
    t: int,
    models: list,
    gamma: GammaConfig,
    layout: ChainLayout,
    skeleton: Skeleton,
    space: ChainSpace,
    sched: NoiseSchedule,
    instrument: bool = False,
):
    """Skeleton-level eps over the whole chain at step t.

    Adds every skill's joint score into its three nodes, then subtracts the
    gamma-mixed marginal once per interior state node. With a state-only
    layout the joint queries mask the action block instead.
    """
    x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
    K = skeleton.K
    eps = np.zeros_like(x_t)
    joint_hits = np.zeros(layout.total_dim, dtype=int)
    marg_subs = np.zeros(layout.total_dim, dtype=int)

    joint_mask = (1, 0, 1) if layout.state_only else (1, 1, 1)
    for i, (model, step) in enumerate(zip(models, skeleton.steps)):
        contrib, idx = _joint_query(
            model, x_t, t, sched, space, (f"s{i}", f"a{i}", f"s{i + 1}"), step.order, joint_mask
        )
        eps[:, idx] += contrib
        joint_hits[idx] += 1

    if K >= 2:
        for m in models:
            if not m.supports_marginals:
                raise ValueError(
                    f"model {m.name!r} cannot answer marginal queries required for K >= 2 chains"
                )
    for j in range(1, K):
        g = gamma.at(j - 1)
        node = f"s{j}"
        sub = np.zeros((x_t.shape[0], layout.state_dim))
        if g > 0.0:
            succ_eps, _ = _joint_query(models[j], x_t, t, sched, space, (node, "", ""), skeleton.steps[j].order, (1, 0, 0))
            sub += g * succ_eps
        if g < 1.0:
            pred_eps, _ = _joint_query(models[j - 1], x_t, t, sched, space, ("", "", node), skeleton.steps[j - 1].order, (0, 0, 1))
            sub += (1.0 - g) * pred_eps
        sl = layout.sl(node)
        eps[:, sl] -= sub
        marg_subs[sl.start : sl.stop] += 1

    if instrument:
        return eps, {"joint_contributions": joint_hits, "marginal_subtractions": marg_subs}
    return eps


@dataclass
class Candidate:
    """One denoised chain sample plus (once ranked) its per-skill success scores."""

    index: int
    chain_raw: np.ndarray
    chain_norm: np.ndarray
    layout: ChainLayout
    skill_probs: np.ndarray | None = None
    score: float | None = None
    frames: list = field(default_factory=list)

    def node_raw(self, name: str) -> np.ndarray:
        return self.chain_raw[self.layout.sl(name)]

    def state(self, i: int) -> np.ndarray:
        return self.node_raw(f"s{i}")

    def action(self, i: int) -> np.ndarray:
        return self.node_raw(f"a{i}")


def sample_chain(
    layout: ChainLayout,
    models: list,
    sched: NoiseSchedule,
    skeleton: Skeleton,
    space: ChainSpace,
    rng: np.random.Generator,
    n_candidates: int = 32,
    gamma: GammaConfig | None = None,
    conditioning: dict | None = None,
    constraints: tuple = (),
    record_frames: bool = False,
) -> list[Candidate]:
    """Run the parallel reverse diffusion and return denormalized candidates.

    Every step assembles the skeleton score, applies constraint guidance,
    takes the ancestral step on the whole chain at once, then re-imposes
    noise-matched in-painting at the new level (exactly at t=0). Candidates
    evolve as one batch; per-candidate RNG streams keep results identical
    for any batch size. Chains that go non-finite are dropped and logged,
    never returned.
    """
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    gamma = gamma if gamma is not None else GammaConfig.constant(0.5, skeleton.K)
    cond_norm = {}
    if conditioning:
        for name, raw in conditioning.items():
            cond_norm[name] = space.normalize_node(name, raw)
    rngs = rng.spawn(n_candidates)
    D = layout.total_dim
    X = np.stack([sched.sigma_max * g.standard_normal(D) for g in rngs])
    if cond_norm:
        X = apply_inpainting(X, cond_norm, sched.T, sched, rngs, layout)
    alive = np.ones(n_candidates, dtype=bool)
    frames: list[list] = [[] for _ in range(n_candidates)] if record_frames else []

    for t in range(sched.T, 0, -1):
        eps = assemble_score(X, t, models, gamma, layout, skeleton, space, sched)
        eps = guided_score(eps, X, t, sched, constraints, layout, space)
        if record_frames:
            x0_hat = space.denormalize(denoise_estimate(X, eps, t, sched))
            for i in range(n_candidates):
                frames[i].append((t, x0_hat[i].copy()))
        Z = np.stack([g.standard_normal(D) for g in rngs])
        X = X + sched.sigma(t) * eps + sched.sigma(t - 1) * Z
        if cond_norm:
            X = apply_inpainting(X, cond_norm, t - 1, sched, rngs, layout)
        alive &= np.isfinite(X).all(axis=1)
        X[~alive] = 0.0  # keep dead rows numerically inert

    dropped = int((~alive).sum())
    if dropped:
        logger.warning("discarded %d/%d chains that went non-finite during rollout", dropped, n_candidates)

    out = []
    raw = space.denormalize(X)
    for i in range(n_candidates):
        if not alive[i]:
            continue
        cand = Candidate(index=i, chain_raw=raw[i], chain_norm=X[i].copy(), layout=layout)
        if record_frames:
            cand.frames = frames[i] + [(0, raw[i].copy())]
        out.append(cand)
    return out


def export_frames(candidate: Candidate) -> list[tuple[int, np.ndarray]]:
    """Recorded (t, denoised-snapshot) sequence, t descending from T to 0."""
    if not candidate.frames:
        raise ValueError("candidate was sampled without frame recording")
    return list(candidate.frames)


def write_frames(path, candidate: Candidate) -> None:
    """Line-delimited frame export: t, node name, comma-separated values."""
    frames = export_frames(candidate)
    layout = candidate.layout
    with open(path, "w") as f:
        f.write("t,node,values\n")
        for t, snap in frames:
            for node in layout.nodes:
                if node.dim == 0:
                    continue
                vals = ";".join(f"{v:.17g}" for v in snap[node.sl])
                f.write(f"{t},{node.name},{vals}\n")
