"""Planar point-mass domain with unit-step skills between fixed regions.

States are 2-D points; an action (r, theta) moves the point by
s' = s + [r cos(theta), r sin(theta)]. Two skills connect four regions:
a start square to a symmetric pair of circles (both modes are valid
effects), and the bottom circle to a goal square. The scripted expert
takes unit-magnitude steps (r = 1), so with both endpoints pinned the
geometrically consistent mid-state is the unit-circle intersection that
lies in the bottom circle, and a chain through both skills is forced to
route through the bottom circle.

Geometry is fixed here so every test is deterministic: consecutive region
pairs sit at unit-reachable distances, and the canonical pinned endpoints
(-0.6, 0) -> (0.6, 0) put that mid-state exactly at the bottom circle
center (0, -0.8).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..skills import ParamSpec, SkillSpec, Transition

__all__ = [
    "RectRegion",
    "CircleRegion",
    "toy_regions",
    "toy_transition",
    "ToyDomain",
    "GEOMETRY",
]


@dataclass(frozen=True)
class RectRegion:
    lo: tuple[float, float]
    hi: tuple[float, float]

    def contains(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        ok = (p >= np.asarray(self.lo)) & (p <= np.asarray(self.hi))
        return ok.all(axis=1)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lo, self.hi)

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2.0


@dataclass(frozen=True)
class CircleRegion:
    center_xy: tuple[float, float]
    radius: float

    def contains(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        return np.sum((p - np.asarray(self.center_xy)) ** 2, axis=1) <= self.radius**2

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        while True:
            q = rng.uniform(-self.radius, self.radius, size=2)
            if q @ q <= self.radius**2:
                return np.asarray(self.center_xy) + q

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.center_xy, dtype=float)


GEOMETRY = {
    "red": RectRegion((-0.75, -0.15), (-0.45, 0.15)),
    "top": CircleRegion((0.0, 0.8), 0.3),
    "bottom": CircleRegion((0.0, -0.8), 0.3),
    "green": RectRegion((0.45, -0.15), (0.75, 0.15)),
    "green_left": RectRegion((0.45, -0.15), (0.60, 0.15)),
    "green_right": RectRegion((0.60, -0.15), (0.75, 0.15)),
}

# canonical pinned endpoints: unit circles around them intersect at (0, ±0.8)
PINNED_START = np.array([-0.6, 0.0])
PINNED_GOAL = np.array([0.6, 0.0])


def toy_regions() -> dict:
    """The four state regions plus the goal square's half splits."""
    return dict(GEOMETRY)


def toy_transition(s, a) -> np.ndarray:
    """s' = s + [r cos(theta), r sin(theta)]."""
    s = np.asarray(s, dtype=float)
    r, theta = float(a[0]), float(a[1])
    return s + np.array([r * np.cos(theta), r * np.sin(theta)])


def _wrap_angle(theta: float) -> float:
    return float(np.angle(np.exp(1j * theta)))


_STEP_PARAMS = (
    ParamSpec("r", "distance", 0.5, 1.5),
    ParamSpec("theta", "rad", -np.pi, np.pi),
)


class ToyDomain:
    """Exact closed-form environment; states are the raw 2-vectors."""

    name = "toy"
    state_dim = 2

    def __init__(self):
        self.skills = {
            "step-to-circles": SkillSpec(
                name="step-to-circles", state_dim=2, action_dim=2,
                params=_STEP_PARAMS, state_labels=("x", "y"),
            ),
            "circle-to-green": SkillSpec(
                name="circle-to-green", state_dim=2, action_dim=2,
                params=_STEP_PARAMS, state_labels=("x", "y"),
            ),
        }
        self._pre = {"step-to-circles": "red", "circle-to-green": "bottom"}

    def encode_state(self, state) -> np.ndarray:
        return np.asarray(state, dtype=float).copy()

    def _effect_ok(self, skill_name: str, s_next) -> bool:
        if skill_name == "step-to-circles":
            return bool(GEOMETRY["top"].contains(s_next)[0] or GEOMETRY["bottom"].contains(s_next)[0])
        return bool(GEOMETRY["green"].contains(s_next)[0])

    def precondition(self, state, step) -> bool:
        return bool(GEOMETRY[self._pre[step.skill]].contains(state)[0])

    def execute(self, state, step, action):
        """Deterministic and total; a failed step leaves the state unchanged."""
        if step.skill not in self.skills:
            raise KeyError(f"unknown skill {step.skill!r}")
        action = np.asarray(action, dtype=float)
        if action.shape != (2,):
            raise ValueError(f"action dim {action.shape} != (2,)")
        s = np.asarray(state, dtype=float)
        if not self.precondition(s, step):
            return s.copy(), False
        s_next = toy_transition(s, action)
        if not self._effect_ok(step.skill, s_next):
            return s.copy(), False
        return s_next, True

    def attempt_transition(self, skill: SkillSpec, rng: np.random.Generator) -> Transition:
        """One scripted-expert attempt: unit step in a uniformly random direction."""
        s = GEOMETRY[self._pre[skill.name]].sample(rng)
        a = np.array([1.0, _wrap_angle(rng.uniform(-np.pi, np.pi))])
        s_next = toy_transition(s, a)
        ok = self._effect_ok(skill.name, s_next)
        return Transition(s=s, a=a, s_next=s_next, success=ok)

    def check_transition(self, skill_name: str, tr: Transition) -> bool:
        """Re-verify a stored transition against the closed-form dynamics."""
        s_pred = toy_transition(tr.s, tr.a)
        exact = bool(np.allclose(s_pred, tr.s_next, atol=1e-12))
        pre = bool(GEOMETRY[self._pre[skill_name]].contains(tr.s)[0])
        return exact and pre and self._effect_ok(skill_name, tr.s_next)
