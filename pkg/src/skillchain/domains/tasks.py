"""Task definitions: initial-state samplers, skeletons, goals, constraints.

Planar analogs of three task families (hook-reach, constrained-packing,
rearrangement-push) plus the two-skill point-mass chain. Goal conditions
are exposed twice: as exact predicates on the executed ground-truth state
and as smooth guidance constraints over the final chain node. Where a goal
fixes node values exactly (pinned endpoints) it is expressed as
in-painting instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..composer import Skeleton, SkeletonStep
from ..guidance import Constraint
from . import planar
from ._smooth import SmoothPairwiseSpread, SmoothProduct
from .planar import BASE, BOX0, HELD, HOOK, RACK, RACK_Z, TABLE, X, Y, Z, PlanarDomain, PlanarState, col
from .toy import GEOMETRY, PINNED_GOAL, PINNED_START, ToyDomain

__all__ = ["TaskDef", "task_suite", "get_task", "PLACE_APART_MARGIN"]

PLACE_APART_MARGIN = 0.15  # executed place offsets this far apart count as satisfied


@dataclass
class TaskDef:
    name: str
    family: str
    domain: object
    skeleton: Skeleton
    sample_initial: Callable[[np.random.Generator], object]
    goal: Callable[[object], bool]
    goal_constraints: tuple[Constraint, ...] = ()
    extra_constraints: tuple[Constraint, ...] = ()
    # binary predicate over (actions, final state) for constraint-satisfaction rates
    constraint_predicate: Callable | None = None
    pin_goal: dict | None = None  # extra node conditioning beyond the start state

    @property
    def K(self) -> int:
        return self.skeleton.K

    def conditioning(self, initial_state) -> dict:
        cond = {"s0": self.domain.encode_state(initial_state)}
        if self.pin_goal:
            cond.update(self.pin_goal)
        return cond

    def constraints(self) -> tuple[Constraint, ...]:
        return tuple(self.goal_constraints) + tuple(self.extra_constraints)


# --- toy tasks -------------------------------------------------------------


def _toy_skeleton(domain: ToyDomain) -> Skeleton:
    return Skeleton(
        steps=(
            SkeletonStep(skill="step-to-circles"),
            SkeletonStep(skill="circle-to-green"),
        )
    )


def _green_constraint(node: str, half: str | None = None, k: float = 30.0) -> Constraint:
    region = GEOMETRY["green"] if half is None else GEOMETRY[f"green_{half}"]
    (lox, loy), (hix, hiy) = region.lo, region.hi
    sp = SmoothProduct(
        [
            ((0,), (1.0,), lox, k),
            ((0,), (-1.0,), -hix, k),
            ((1,), (1.0,), loy, k),
            ((1,), (-1.0,), -hiy, k),
        ]
    )
    return Constraint(name="goal-green" if half is None else f"goal-green-{half}",
                      nodes=(node,), psi=sp.psi, grad=sp.grad, alpha=1.0)


def _toy_tasks() -> list[TaskDef]:
    dom = ToyDomain()
    skel = _toy_skeleton(dom)

    def sample_initial(rng):
        return GEOMETRY["red"].sample(rng)

    def goal(state):
        return bool(GEOMETRY["green"].contains(state)[0])

    def goal_left(state):
        return bool(GEOMETRY["green_left"].contains(state)[0])

    base = TaskDef(
        name="toy-chain",
        family="toy",
        domain=dom,
        skeleton=skel,
        sample_initial=sample_initial,
        goal=goal,
        goal_constraints=(_green_constraint("s2"),),
    )
    left = TaskDef(
        name="toy-chain-left",
        family="toy",
        domain=dom,
        skeleton=skel,
        sample_initial=sample_initial,
        goal=goal_left,
        goal_constraints=(_green_constraint("s2", half="left", k=40.0),),
    )
    pinned = TaskDef(
        name="toy-chain-pinned",
        family="toy",
        domain=dom,
        skeleton=skel,
        sample_initial=lambda rng: PINNED_START.copy(),
        goal=lambda s: bool(np.linalg.norm(np.asarray(s) - PINNED_GOAL) < 0.05),
        pin_goal={"s2": PINNED_GOAL.copy()},
    )
    return [base, left, pinned]


# --- planar goal constraints ------------------------------------------------

_RACK_HW = planar.SIZES["rack"][0] / 2
_RACK_HH = planar.SIZES["rack"][1] / 2
_BOX_HW = planar.SIZES["box"][0] / 2


def _held_constraint(node: str, slot: int, k: float = 8.0) -> Constraint:
    sp = SmoothProduct([((col(slot, HELD),), (1.0,), 0.5, k)])
    return Constraint(name=f"goal-held-{slot}", nodes=(node,), psi=sp.psi, grad=sp.grad)


def _rack_rect_factors(slot: int, margin_x: float, margin_y: float, k: float):
    bx, by = col(slot, X), col(slot, Y)
    rx, ry = col(RACK, X), col(RACK, Y)
    return [
        ((bx, rx), (1.0, -1.0), -margin_x, k),
        ((bx, rx), (-1.0, 1.0), -margin_x, k),
        ((by, ry), (1.0, -1.0), -margin_y, k),
        ((by, ry), (-1.0, 1.0), -margin_y, k),
    ]


def _under_rack_constraint(node: str, slot: int, k: float = 25.0) -> Constraint:
    factors = _rack_rect_factors(slot, _RACK_HW - _BOX_HW, _RACK_HH - _BOX_HW, k)
    factors.append(((col(slot, Z),), (-1.0,), -RACK_Z / 2, 30.0))
    sp = SmoothProduct(factors)
    return Constraint(name=f"goal-under-rack-{slot}", nodes=(node,), psi=sp.psi, grad=sp.grad)


def _on_rack_constraint(node: str, slots, k: float = 25.0) -> Constraint:
    factors = []
    for slot in slots:
        factors += _rack_rect_factors(slot, _RACK_HW - _BOX_HW, _RACK_HH - _BOX_HW, k)
        factors.append(((col(slot, Z),), (1.0,), RACK_Z / 2, 30.0))
    sp = SmoothProduct(factors)
    return Constraint(name=f"goal-on-rack-{'-'.join(map(str, slots))}", nodes=(node,), psi=sp.psi, grad=sp.grad)


def _place_apart_constraint(node_names, margin: float = PLACE_APART_MARGIN) -> Constraint:
    # consecutive (dx, dy) pairs: each place-action node contributes columns (3i, 3i+1)
    cols = [(3 * i, 3 * i + 1) for i in range(len(node_names))]
    sp = SmoothPairwiseSpread(cols, margin=margin, k=25.0, beta=30.0)
    return Constraint(name="place-apart", nodes=tuple(node_names), psi=sp.psi, grad=sp.grad)


# --- planar scenes -----------------------------------------------------------


def _drop(domain: PlanarDomain, state: PlanarState, slot: int, rng, x_rng, y_rng, theta_rng=(-np.pi, np.pi), z=0.0, tries=200):
    for _ in range(tries):
        pos = np.array([rng.uniform(*x_rng), rng.uniform(*y_rng)])
        if domain._place_free(state, slot, pos, rng.uniform(*theta_rng), z=z):
            return
    raise RuntimeError(f"could not place slot {slot} in scene")


def _rack_out_of_reach(domain, state, rng):
    _drop(domain, state, RACK, rng, (-0.22, 0.22), (0.62, 0.78), theta_rng=(0.0, 0.0))


def _rack_in_reach(domain, state, rng):
    _drop(domain, state, RACK, rng, (-0.3, 0.3), (-0.55, -0.25), theta_rng=(0.0, 0.0))


def _hook_in_ws(domain, state, rng):
    _drop(domain, state, HOOK, rng, (-0.45, -0.15), (-0.62, -0.38), theta_rng=(-0.6, 0.6))


def _box_out_of_reach(domain, state, rng, slot):
    for _ in range(200):
        pos = np.array([rng.uniform(-0.35, 0.35), rng.uniform(0.18, 0.5)])
        d = np.linalg.norm(pos - BASE)
        if not (planar.REACH_MAX + 0.06 <= d <= planar.TOOL_REACH - 0.12):
            continue
        if domain._place_free(state, slot, pos, rng.uniform(-0.4, 0.4)):
            return
    raise RuntimeError("could not place out-of-reach box")


def _box_in_ws(domain, state, rng, slot, x_rng=(0.1, 0.4), y_rng=(-0.55, -0.3)):
    _drop(domain, state, slot, rng, x_rng, y_rng, theta_rng=(-0.4, 0.4))


# --- planar task families -----------------------------------------------------


def _hook_reach_tasks() -> list[TaskDef]:
    dom = PlanarDomain()

    def scene_hr1(rng):
        st = PlanarState.empty()
        _hook_in_ws(dom, st, rng)
        _box_out_of_reach(dom, st, rng, BOX0)
        return st

    def scene_hr2(rng):
        st = scene_hr1(rng)
        _rack_in_reach(dom, st, rng)
        return st

    def steps_hr(present, with_place_on_rack: bool):
        steps = [
            SkeletonStep(skill="pick", binding=(HOOK,)),
            SkeletonStep(skill="pull", binding=(BOX0, HOOK)),
            SkeletonStep(skill="place", binding=(HOOK, TABLE)),
            SkeletonStep(skill="pick", binding=(BOX0,)),
        ]
        if with_place_on_rack:
            steps.append(SkeletonStep(skill="place", binding=(BOX0, RACK)))
        return Skeleton(steps=tuple(steps))

    t1 = TaskDef(
        name="hook-reach-1",
        family="hook-reach",
        domain=dom,
        skeleton=steps_hr(None, False),
        sample_initial=scene_hr1,
        goal=lambda s: s.held(BOX0),
        goal_constraints=(_held_constraint(f"s{4}", BOX0),),
    )
    t2 = TaskDef(
        name="hook-reach-2",
        family="hook-reach",
        domain=dom,
        skeleton=steps_hr(None, True),
        sample_initial=scene_hr2,
        goal=lambda s: s.on_rack(BOX0),
        goal_constraints=(_on_rack_constraint(f"s{5}", (BOX0,)),),
    )
    return [t1, t2]


def _packing_tasks() -> list[TaskDef]:
    dom = PlanarDomain()

    def scene(n_boxes):
        def sample(rng):
            st = PlanarState.empty()
            _rack_in_reach(dom, st, rng)
            xs = [(-0.7, -0.45), (0.45, 0.7), (-0.15, 0.15), (0.25, 0.45)]
            for b in range(n_boxes):
                _box_in_ws(dom, st, rng, BOX0 + b, x_rng=xs[b], y_rng=(-0.85, -0.65))
            return st

        return sample

    def skel(n_boxes):
        steps = []
        for b in range(n_boxes):
            steps.append(SkeletonStep(skill="pick", binding=(BOX0 + b,)))
            steps.append(SkeletonStep(skill="place", binding=(BOX0 + b, RACK)))
        return Skeleton(steps=tuple(steps))

    def goal(n_boxes):
        def check(s: PlanarState):
            slots = [BOX0 + b for b in range(n_boxes)]
            if not all(s.on_rack(b) for b in slots):
                return False
            for i, a in enumerate(slots):
                for b in slots[i + 1 :]:
                    if planar.aabb_overlap(s.pos(a), s.half_extents(a), s.pos(b), s.half_extents(b)):
                        return False
            return True

        return check

    def place_apart_pred(n_boxes):
        def check(actions, final_state):
            offs = [actions[2 * b + 1][:2] for b in range(n_boxes)]
            dmin = min(
                np.linalg.norm(offs[i] - offs[j]) for i in range(len(offs)) for j in range(i + 1, len(offs))
            )
            return bool(dmin >= PLACE_APART_MARGIN)

        return check

    tasks = []
    for n_boxes, suffix in ((3, "1"), (4, "2")):
        K = 2 * n_boxes
        place_nodes = tuple(f"a{2 * b + 1}" for b in range(n_boxes))
        base = TaskDef(
            name=f"packing-{suffix}",
            family="constrained-packing",
            domain=dom,
            skeleton=skel(n_boxes),
            sample_initial=scene(n_boxes),
            goal=goal(n_boxes),
            goal_constraints=(_on_rack_constraint(f"s{K}", tuple(BOX0 + b for b in range(n_boxes))),),
            constraint_predicate=place_apart_pred(n_boxes),
        )
        guided = TaskDef(
            name=f"packing-{suffix}-apart",
            family="constrained-packing",
            domain=dom,
            skeleton=base.skeleton,
            sample_initial=base.sample_initial,
            goal=base.goal,
            goal_constraints=base.goal_constraints,
            extra_constraints=(_place_apart_constraint(place_nodes),),
            constraint_predicate=base.constraint_predicate,
        )
        tasks += [base, guided]
    return tasks


def _rearr_tasks() -> list[TaskDef]:
    dom = PlanarDomain()

    def scene_r1(rng):
        st = PlanarState.empty()
        _rack_out_of_reach(dom, st, rng)
        _hook_in_ws(dom, st, rng)
        _box_in_ws(dom, st, rng, BOX0, x_rng=(0.22, 0.38), y_rng=(-0.52, -0.38))
        return st

    def scene_r2(rng):
        st = scene_r1(rng)
        _box_in_ws(dom, st, rng, BOX0 + 1, x_rng=(-0.38, -0.22), y_rng=(-0.52, -0.38))
        return st

    def scene_r3(rng):
        st = scene_r2(rng)
        _box_in_ws(dom, st, rng, BOX0 + 2, x_rng=(0.45, 0.62), y_rng=(-0.8, -0.62))
        _box_in_ws(dom, st, rng, BOX0 + 3, x_rng=(-0.62, -0.45), y_rng=(-0.8, -0.62))
        return st

    def scene_r4(rng):
        st = PlanarState.empty()
        _rack_out_of_reach(dom, st, rng)
        _hook_in_ws(dom, st, rng)
        _box_out_of_reach(dom, st, rng, BOX0)
        return st

    goal = lambda s: s.under_rack(BOX0)

    def task(name, scene, steps):
        K = len(steps)
        return TaskDef(
            name=name,
            family="rearrangement-push",
            domain=dom,
            skeleton=Skeleton(steps=tuple(steps)),
            sample_initial=scene,
            goal=goal,
            goal_constraints=(_under_rack_constraint(f"s{K}", BOX0),),
        )

    push_tail = [
        SkeletonStep(skill="pick", binding=(HOOK,)),
        SkeletonStep(skill="push", binding=(BOX0, HOOK)),
    ]
    reposition = [
        SkeletonStep(skill="pick", binding=(BOX0,)),
        SkeletonStep(skill="place", binding=(BOX0, TABLE)),
    ]
    t1 = task("rearr-push-1", scene_r1, reposition + push_tail)
    t2 = task(
        "rearr-push-2",
        scene_r2,
        [SkeletonStep(skill="pick", binding=(BOX0 + 1,)), SkeletonStep(skill="place", binding=(BOX0 + 1, TABLE))]
        + reposition
        + push_tail,
    )
    t3 = task(
        "rearr-push-3",
        scene_r3,
        [SkeletonStep(skill="pick", binding=(BOX0 + 1,)), SkeletonStep(skill="place", binding=(BOX0 + 1, TABLE)),
         SkeletonStep(skill="pick", binding=(BOX0 + 2,)), SkeletonStep(skill="place", binding=(BOX0 + 2, TABLE))]
        + reposition
        + push_tail,
    )
    t4 = task(
        "rearr-push-4",
        scene_r4,
        [SkeletonStep(skill="pick", binding=(HOOK,)),
         SkeletonStep(skill="pull", binding=(BOX0, HOOK)),
         SkeletonStep(skill="place", binding=(HOOK, TABLE))]
        + reposition
        + push_tail,
    )
    return [t1, t2, t3, t4]


def task_suite() -> list[TaskDef]:
    """Every registered task across the toy and planar domains."""
    return _toy_tasks() + _hook_reach_tasks() + _packing_tasks() + _rearr_tasks()


def get_task(name: str) -> TaskDef:
    for t in task_suite():
        if t.name == name:
            return t
    raise KeyError(f"unknown task {name!r}; known: {[t.name for t in task_suite()]}")
