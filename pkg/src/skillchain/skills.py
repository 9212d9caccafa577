"""Skill specifications, transition encoding, and dataset generation/persistence.

Transitions are flattened as (s ‖ a ‖ s') and z-scored per dimension with
statistics computed from the successful training split. Datasets persist
as delimited text with a header naming every dimension and a trailing
success column; files are written atomically (temp + rename).
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ParamSpec",
    "SkillSpec",
    "Transition",
    "NormStats",
    "DatasetBundle",
    "DatasetError",
    "GenerationError",
    "compute_norm_stats",
    "encode_transition",
    "decode_transition",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
]


class GenerationError(RuntimeError):
    pass


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ParamSpec:
    """One action dimension: label, unit, and sampling bounds."""

    label: str
    unit: str
    low: float
    high: float

    def __post_init__(self):
        if not np.isfinite([self.low, self.high]).all() or self.low >= self.high:
            raise ValueError(f"bad bounds for {self.label}: [{self.low}, {self.high}]")


@dataclass(frozen=True)
class SkillSpec:
    name: str
    state_dim: int
    action_dim: int
    params: tuple[ParamSpec, ...]
    state_labels: tuple[str, ...] = ()
    order_slots: int = 0   # object slots the skill conditions on
    order_dim: int = 0     # length of the conditioning feature vector

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 0:
            raise ValueError("dims must be positive")
        if len(self.params) != self.action_dim:
            raise ValueError("param specs must cover every action dimension")
        if not self.state_labels:
            object.__setattr__(self, "state_labels", tuple(f"d{i}" for i in range(self.state_dim)))
        elif len(self.state_labels) != self.state_dim:
            raise ValueError("state labels must cover every state dimension")

    @property
    def transition_dim(self) -> int:
        return 2 * self.state_dim + self.action_dim

    def sample_action(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(p.low, p.high) for p in self.params])


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    success: bool
    order: np.ndarray | None = None

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.s_next = np.asarray(self.s_next, dtype=float)
        if self.s.shape != self.s_next.shape:
            raise ValueError("s and s_next must share dimension")
        if self.order is not None:
            self.order = np.asarray(self.order, dtype=float)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.s, self.a, self.s_next])


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def compute_norm_stats(
    transitions: list[Transition], state_stats: tuple[np.ndarray, np.ndarray] | None = None
) -> NormStats:
    """Per-dimension mean/std over (s ‖ a ‖ s'); zero-variance dims get std 1.

    ``state_stats`` (mean, std over one state) overrides both state blocks.
    Skills composed into one chain must agree on the coordinates of shared
    state nodes, so chains mixing several skills should normalize states
    with shared statistics pooled across the skills' datasets (see
    ``pooled_state_stats``); actions always use the skill's own data.
    """
    if not transitions:
        raise ValueError("no transitions")
    X = np.stack([t.flat() for t in transitions])
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    if state_stats is not None:
        s_mean, s_std = state_stats
        sd = s_mean.size
        if 2 * sd > mean.size:
            raise ValueError("state stats larger than the transition")
        for sl in (slice(0, sd), slice(mean.size - sd, mean.size)):
            mean[sl] = s_mean
            std[sl] = np.where(s_std < 1e-12, 1.0, s_std)
    return NormStats(mean=mean, std=std)


def pooled_state_stats(datasets: dict[str, list[Transition]]) -> tuple[np.ndarray, np.ndarray]:
    """Mean/std of one state over every s and s' across several skills' data."""
    rows = []
    for transitions in datasets.values():
        for t in transitions:
            rows.append(t.s)
            rows.append(t.s_next)
    if not rows:
        raise ValueError("no transitions")
    X = np.stack(rows)
    return X.mean(axis=0), np.where(X.std(axis=0) < 1e-12, 1.0, X.std(axis=0))


def encode_transition(t: Transition, stats: NormStats) -> np.ndarray:
    v = t.flat()
    if v.shape != stats.mean.shape:
        raise ValueError(f"transition dim {v.shape} != stats dim {stats.mean.shape}")
    return (v - stats.mean) / stats.std


def decode_transition(
    v: np.ndarray, stats: NormStats, state_dim: int, action_dim: int,
    success: bool = True, order: np.ndarray | None = None,
) -> Transition:
    v = np.asarray(v, dtype=float)
    if v.shape != stats.mean.shape:
        raise ValueError(f"vector dim {v.shape} != stats dim {stats.mean.shape}")
    raw = v * stats.std + stats.mean
    return Transition(
        s=raw[:state_dim],
        a=raw[state_dim : state_dim + action_dim],
        s_next=raw[state_dim + action_dim :],
        success=success,
        order=order,
    )


@dataclass
class DatasetBundle:
    skill_name: str
    successes: list[Transition] = field(default_factory=list)
    failures: list[Transition] = field(default_factory=list)

    def all_rows(self) -> list[Transition]:
        return self.successes + self.failures


def generate_dataset(
    domain,
    skill: SkillSpec,
    n: int,
    rng: np.random.Generator,
    max_failures: int | None = None,
) -> DatasetBundle:
    """Collect n successful transitions by rejection from random actions.

    The domain supplies one attempt at a time via
    ``attempt_transition(skill, rng) -> Transition`` (precondition-satisfying
    state, uniformly sampled parameters, executed outcome). Failed attempts
    are retained (capped at 2n by default) for success-classifier training.
    Aborts if the acceptance rate drops below 0.1% after 1e6 attempts.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cap = 2 * n if max_failures is None else max_failures
    bundle = DatasetBundle(skill_name=skill.name)
    attempts = 0
    while len(bundle.successes) < n:
        attempts += 1
        tr = domain.attempt_transition(skill, rng)
        if tr.success:
            bundle.successes.append(tr)
        elif len(bundle.failures) < cap:
            bundle.failures.append(tr)
        if attempts >= 1_000_000 and len(bundle.successes) / attempts < 1e-3:
            raise GenerationError(
                f"skill {skill.name!r}: acceptance rate "
                f"{len(bundle.successes) / attempts:.2e} after {attempts} attempts"
            )
    return bundle


def _header(skill: SkillSpec) -> list[str]:
    cols = [f"s_{lab}" for lab in skill.state_labels]
    cols += [f"a_{p.label}" for p in skill.params]
    cols += [f"sp_{lab}" for lab in skill.state_labels]
    cols += [f"order_{i}" for i in range(skill.order_dim)]
    cols.append("success")
    return cols


def save_dataset(path, bundle: DatasetBundle, skill: SkillSpec) -> None:
    """Write all transitions (successes then failures) as delimited text."""
    path = os.fspath(path)
    cols = _header(skill)
    rows = bundle.all_rows()
    dirname = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(prefix=".tmp_dataset_", dir=dirname)
    try:
        with os.fdopen(fd, "w") as f:
            f.write(",".join(cols) + "\n")
            for tr in rows:
                vals = list(tr.flat())
                if skill.order_dim:
                    if tr.order is None or tr.order.size != skill.order_dim:
                        raise DatasetError(f"transition missing {skill.order_dim} conditioning values")
                    vals += list(tr.order)
                vals.append(1.0 if tr.success else 0.0)
                f.write(",".join(f"{v:.17g}" for v in vals) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(path, skill: SkillSpec) -> DatasetBundle:
    """Inverse of save_dataset; malformed rows raise with their line number."""
    path = os.fspath(path)
    expected = _header(skill)
    sd, ad, od = skill.state_dim, skill.action_dim, skill.order_dim
    bundle = DatasetBundle(skill_name=skill.name)
    with open(path) as f:
        header = f.readline().rstrip("\n").split(",")
        if header != expected:
            raise DatasetError(
                f"{path}:1: header mismatch for skill {skill.name!r} "
                f"(got {len(header)} columns, expected {len(expected)})"
            )
        width = len(expected)
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) != width:
                raise DatasetError(f"{path}:{lineno}: row has {len(parts)} fields, expected {width}")
            try:
                vals = np.array([float(p) for p in parts])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            tr = Transition(
                s=vals[:sd],
                a=vals[sd : sd + ad],
                s_next=vals[sd + ad : 2 * sd + ad],
                success=bool(vals[-1] > 0.5),
                order=vals[2 * sd + ad : 2 * sd + ad + od] if od else None,
            )
            (bundle.successes if tr.success else bundle.failures).append(tr)
    return bundle
