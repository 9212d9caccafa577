"""Planar tabletop environment: pick / place / push / pull with a hook.

Top-down table with up to six objects in fixed slots (hook, rack, four
boxes). Object state is (x, y, theta, z, held) where z is the discrete
support height (0 on the table, RACK_Z on the rack) — the minimal residue
of the vertical axis needed to tell "on the rack" from "pushed under the
rack" geometrically. The arm base is a fixed point below the table edge;
direct reach is an annulus around it and the held hook extends it for
push/pull tool placements.

All dynamics are closed-form kinematic updates with conservative
axis-aligned collision tests on rotation-expanded bounding boxes. A failed
execution is an exact no-op on the state.
"""

from __future__ import annotations

import numpy as np

from ..skills import ParamSpec, SkillSpec, Transition

__all__ = ["PlanarState", "PlanarDomain", "TABLE", "NUM_SLOTS", "OBJ_DIM", "STATE_DIM", "ORDER_DIM"]

NUM_SLOTS = 6               # hook, rack, box0..box3
OBJ_DIM = 5                 # x, y, theta, z, held
STATE_DIM = NUM_SLOTS * OBJ_DIM
ORDER_DIM = 3 * NUM_SLOTS + 1  # primary one-hot, secondary one-hot, present flags, target-is-table

HOOK, RACK, BOX0 = 0, 1, 2
TABLE = -1  # pseudo-target for placements relative to the table origin

KIND_BY_SLOT = ("hook", "rack", "box", "box", "box", "box")
SIZES = {"hook": (0.36, 0.07), "rack": (0.44, 0.30), "box": (0.10, 0.10)}

TABLE_LO = np.array([-1.0, -1.0])
TABLE_HI = np.array([1.0, 1.0])
BASE = np.array([0.0, -1.0])
REACH_MIN = 0.20
REACH_MAX = 1.05
HOOK_EXT = 0.55
TOOL_REACH = REACH_MAX + HOOK_EXT
RACK_Z = 0.15

# column helpers within a flattened 30-dim state
def col(slot: int, coord: int) -> int:
    return OBJ_DIM * slot + coord


X, Y, TH, Z, HELD = range(OBJ_DIM)


def rot_half_extents(kind: str, theta: float) -> np.ndarray:
    w, h = SIZES[kind]
    c, s = abs(np.cos(theta)), abs(np.sin(theta))
    return np.array([0.5 * w * c + 0.5 * h * s, 0.5 * w * s + 0.5 * h * c])


def aabb_overlap(pa, ha, pb, hb) -> bool:
    d = np.abs(np.asarray(pa) - np.asarray(pb))
    lim = np.asarray(ha) + np.asarray(hb)
    return bool(d[0] < lim[0] and d[1] < lim[1])


def point_in_footprint(p, center, theta: float, kind: str) -> bool:
    w, h = SIZES[kind]
    d = np.asarray(p) - np.asarray(center)
    c, s = np.cos(-theta), np.sin(-theta)
    u = c * d[0] - s * d[1]
    v = s * d[0] + c * d[1]
    return bool(abs(u) <= 0.5 * w and abs(v) <= 0.5 * h)


class PlanarState:
    """Immutable-by-convention scene snapshot; use copy() before mutating."""

    def __init__(self, vals: np.ndarray, present: np.ndarray):
        self.vals = np.asarray(vals, dtype=float).reshape(NUM_SLOTS, OBJ_DIM)
        self.present = np.asarray(present, dtype=bool).reshape(NUM_SLOTS)

    def copy(self) -> "PlanarState":
        return PlanarState(self.vals.copy(), self.present.copy())

    @classmethod
    def empty(cls) -> "PlanarState":
        return cls(np.zeros((NUM_SLOTS, OBJ_DIM)), np.zeros(NUM_SLOTS, dtype=bool))

    def pos(self, slot: int) -> np.ndarray:
        return self.vals[slot, :2]

    def theta(self, slot: int) -> float:
        return float(self.vals[slot, TH])

    def held(self, slot: int) -> bool:
        return bool(self.present[slot] and self.vals[slot, HELD] > 0.5)

    def hand_empty(self) -> bool:
        return not np.any(self.present & (self.vals[:, HELD] > 0.5))

    def held_slot(self) -> int | None:
        idx = np.flatnonzero(self.present & (self.vals[:, HELD] > 0.5))
        return int(idx[0]) if idx.size else None

    def half_extents(self, slot: int) -> np.ndarray:
        return rot_half_extents(KIND_BY_SLOT[slot], self.theta(slot))

    def on_table_level(self, slot: int) -> bool:
        return bool(self.present[slot] and self.vals[slot, Z] <= RACK_Z / 2 and not self.held(slot))

    def inside_table(self, p) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= TABLE_LO) and np.all(p <= TABLE_HI))

    def in_workspace(self, slot: int) -> bool:
        if not self.present[slot]:
            return False
        d = float(np.linalg.norm(self.pos(slot) - BASE))
        return REACH_MIN <= d <= REACH_MAX and self.inside_table(self.pos(slot))

    def _in_rack_rect(self, slot: int) -> bool:
        if not (self.present[RACK] and self.present[slot]):
            return False
        return aabb_overlap(self.pos(slot), (0.0, 0.0), self.pos(RACK), self.half_extents(RACK))

    def on_rack(self, slot: int) -> bool:
        return bool(self.present[slot] and self.vals[slot, Z] > RACK_Z / 2 and self._in_rack_rect(slot))

    def under_rack(self, slot: int) -> bool:
        return bool(
            self.present[slot]
            and not self.held(slot)
            and self.vals[slot, Z] <= RACK_Z / 2
            and self._in_rack_rect(slot)
        )

    def flat(self) -> np.ndarray:
        out = self.vals.copy()
        out[~self.present] = 0.0
        return out.reshape(-1)


_PICK_PARAMS = (
    ParamSpec("dx", "m", -0.12, 0.12),
    ParamSpec("dy", "m", -0.12, 0.12),
    ParamSpec("dtheta", "rad", -np.pi, np.pi),
)
_PLACE_PARAMS = (
    ParamSpec("dx", "m", -0.6, 0.6),
    ParamSpec("dy", "m", -0.6, 0.6),
    ParamSpec("dtheta", "rad", -np.pi, np.pi),
)
_TOOL_PARAMS = (
    ParamSpec("dx", "m", -0.25, 0.25),
    ParamSpec("dy", "m", -0.25, 0.25),
    ParamSpec("dtheta", "rad", -np.pi, np.pi),
    ParamSpec("r", "m", 0.05, 1.0),
)

_STATE_LABELS = tuple(
    f"{name}_{c}" for name in ("hook", "rack", "box0", "box1", "box2", "box3") for c in ("x", "y", "th", "z", "held")
)


def _skill(name: str, params) -> SkillSpec:
    return SkillSpec(
        name=name,
        state_dim=STATE_DIM,
        action_dim=len(params),
        params=params,
        state_labels=_STATE_LABELS,
        order_slots=NUM_SLOTS,
        order_dim=ORDER_DIM,
    )


class PlanarDomain:
    name = "planar"
    state_dim = STATE_DIM

    def __init__(self):
        self.skills = {
            "pick": _skill("pick", _PICK_PARAMS),
            "place": _skill("place", _PLACE_PARAMS),
            "push": _skill("push", _TOOL_PARAMS),
            "pull": _skill("pull", _TOOL_PARAMS),
        }

    # --- encoding -------------------------------------------------------

    def encode_state(self, state: PlanarState) -> np.ndarray:
        return state.flat()

    def order_features(self, binding: tuple, present: np.ndarray) -> np.ndarray:
        """Instance conditioning: primary/secondary one-hots, presence, table flag."""
        feat = np.zeros(ORDER_DIM)
        primary = binding[0]
        feat[primary] = 1.0
        if len(binding) > 1:
            target = binding[1]
            if target == TABLE:
                feat[-1] = 1.0
            else:
                feat[NUM_SLOTS + target] = 1.0
        feat[2 * NUM_SLOTS : 3 * NUM_SLOTS] = np.asarray(present, dtype=float)
        return feat

    # --- symbolic preconditions ------------------------------------------

    def precondition(self, state: PlanarState, step) -> bool:
        skill, b = step.skill, step.binding
        if skill == "pick":
            (slot,) = b
            return (
                state.hand_empty()
                and state.present[slot]
                and KIND_BY_SLOT[slot] != "rack"
                and state.in_workspace(slot)
                and not state.under_rack(slot)
            )
        if skill == "place":
            moved, target = b
            if not state.held(moved):
                return False
            return target == TABLE or bool(state.present[target])
        if skill in ("push", "pull"):
            box, hook = b
            if not (state.held(hook) and KIND_BY_SLOT[hook] == "hook"):
                return False
            if not (state.present[box] and KIND_BY_SLOT[box] == "box" and not state.held(box)):
                return False
            if state.on_rack(box) or state.under_rack(box):
                return False
            return float(np.linalg.norm(state.pos(box) - BASE)) <= TOOL_REACH
        raise KeyError(f"unknown skill {skill!r}")

    # --- execution --------------------------------------------------------

    def execute(self, state: PlanarState, step, action):
        """Deterministic kinematic update; returns (state', success)."""
        skill = step.skill
        if skill not in self.skills:
            raise KeyError(f"unknown skill {skill!r}")
        action = np.asarray(action, dtype=float)
        if action.shape != (self.skills[skill].action_dim,):
            raise ValueError(f"{skill}: action dim {action.shape} != ({self.skills[skill].action_dim},)")
        if not self.precondition(state, step):
            return state.copy(), False
        if skill == "pick":
            return self._pick(state, step.binding[0], action)
        if skill == "place":
            return self._place(state, step.binding[0], step.binding[1], action)
        return self._sweep(state, step.binding[0], step.binding[1], action, toward_base=(skill == "pull"))

    def _fail(self, state):
        return state.copy(), False

    def _pick(self, state: PlanarState, slot: int, a):
        grasp = state.pos(slot) + a[:2]
        if float(np.linalg.norm(grasp - BASE)) > REACH_MAX:
            return self._fail(state)
        if not point_in_footprint(grasp, state.pos(slot), state.theta(slot), KIND_BY_SLOT[slot]):
            return self._fail(state)
        nxt = state.copy()
        nxt.vals[slot, HELD] = 1.0
        return nxt, True

    def _place(self, state: PlanarState, moved: int, target: int, a):
        origin = np.zeros(2) if target == TABLE else state.pos(target)
        new_pos = origin + a[:2]
        new_theta = float(a[2])
        if not state.inside_table(new_pos):
            return self._fail(state)
        if float(np.linalg.norm(new_pos - BASE)) > REACH_MAX:
            return self._fail(state)
        he = rot_half_extents(KIND_BY_SLOT[moved], new_theta)
        if target != TABLE and KIND_BY_SLOT[target] == "rack":
            rack_pos, rack_he = state.pos(RACK), state.half_extents(RACK)
            inside = np.all(new_pos - he >= rack_pos - rack_he) and np.all(new_pos + he <= rack_pos + rack_he)
            if not inside:
                return self._fail(state)
            for other in range(NUM_SLOTS):
                if other == moved or not state.present[other] or state.held(other):
                    continue
                if state.on_rack(other) and aabb_overlap(new_pos, he, state.pos(other), state.half_extents(other)):
                    return self._fail(state)
            new_z = RACK_Z
        elif target == TABLE:
            for other in range(NUM_SLOTS):
                if other == moved or not state.present[other] or state.held(other):
                    continue
                if state.on_table_level(other) or other == RACK:
                    if aabb_overlap(new_pos, he, state.pos(other), state.half_extents(other)):
                        return self._fail(state)
            new_z = 0.0
        else:
            return self._fail(state)  # placing onto movable objects is unsupported
        nxt = state.copy()
        nxt.vals[moved, X:TH] = new_pos
        nxt.vals[moved, TH] = new_theta
        nxt.vals[moved, Z] = new_z
        nxt.vals[moved, HELD] = 0.0
        return nxt, True

    def _sweep(self, state: PlanarState, box: int, hook: int, a, toward_base: bool):
        placement = state.pos(box) + a[:2]
        theta, r = float(a[2]), float(a[3])
        if float(np.linalg.norm(placement - BASE)) > TOOL_REACH:
            return self._fail(state)
        hook_he = rot_half_extents("hook", theta)
        if not aabb_overlap(placement, hook_he, state.pos(box), state.half_extents(box)):
            return self._fail(state)
        u = np.array([np.cos(theta), np.sin(theta)])
        radial = state.pos(box) - BASE
        sign = -1.0 if toward_base else 1.0
        if sign * float(u @ radial) <= 0.0:
            return self._fail(state)
        dest = state.pos(box) + r * u
        if not state.inside_table(dest):
            return self._fail(state)
        box_he = state.half_extents(box)
        for other in range(NUM_SLOTS):
            if other in (box, hook) or not state.present[other] or state.held(other):
                continue
            if other == RACK:
                continue  # sliding under the rack is the point
            if state.on_table_level(other) and aabb_overlap(dest, box_he, state.pos(other), state.half_extents(other)):
                return self._fail(state)
        nxt = state.copy()
        nxt.vals[box, X:TH] = dest
        nxt.vals[hook, X:TH] = placement + r * u
        nxt.vals[hook, TH] = theta
        return nxt, True

    # --- scene generation -------------------------------------------------

    def _place_free(self, state: PlanarState, slot: int, pos, theta: float, z: float = 0.0) -> bool:
        """Try to drop an object at pos; reject overlaps at the same level.

        Table-level objects may not start under the rack (and vice versa);
        an on-rack drop must of course overlap the rack itself.
        """
        he = rot_half_extents(KIND_BY_SLOT[slot], theta)
        for other in range(NUM_SLOTS):
            if other == slot or not state.present[other]:
                continue
            same_level = (z > RACK_Z / 2) == (state.vals[other, Z] > RACK_Z / 2)
            blocks = same_level
            if other == RACK or slot == RACK:
                blocks = z <= RACK_Z / 2  # keep table-level starts clear of the rack footprint
            if blocks and aabb_overlap(pos, he, state.pos(other), state.half_extents(other)):
                return False
        state.vals[slot, X:TH] = pos
        state.vals[slot, TH] = theta
        state.vals[slot, Z] = z
        state.present[slot] = True
        return True

    def sample_scene(self, rng: np.random.Generator, n_boxes: int | None = None,
                     with_hook: bool | None = None, with_rack: bool | None = None) -> PlanarState:
        """Random scene with varied object counts; used for skill datasets."""
        state = PlanarState.empty()
        if with_rack is None:
            with_rack = rng.random() < 0.85
        if with_hook is None:
            with_hook = rng.random() < 0.85
        if n_boxes is None:
            n_boxes = int(rng.integers(1, 5))
        if with_rack:
            for _ in range(50):
                if rng.random() < 0.5:
                    pos = np.array([rng.uniform(-0.45, 0.45), rng.uniform(-0.62, -0.12)])
                else:
                    pos = np.array([rng.uniform(-0.35, 0.35), rng.uniform(0.55, 0.78)])
                if self._place_free(state, RACK, pos, 0.0):
                    break
        if with_hook:
            for _ in range(50):
                pos = np.array([rng.uniform(-0.7, 0.7), rng.uniform(-0.78, -0.02)])
                if self._place_free(state, HOOK, pos, rng.uniform(-np.pi, np.pi)):
                    break
        for b in range(n_boxes):
            slot = BOX0 + b
            for _ in range(80):
                theta = rng.uniform(-np.pi, np.pi)
                if state.present[RACK] and rng.random() < 0.15:
                    rp, rh = state.pos(RACK), state.half_extents(RACK)
                    pos = rng.uniform(rp - rh + 0.07, rp + rh - 0.07)
                    if self._place_free(state, slot, pos, theta, z=RACK_Z):
                        break
                else:
                    if rng.random() < 0.7:
                        pos = np.array([rng.uniform(-0.75, 0.75), rng.uniform(-0.8, 0.02)])
                    else:
                        pos = np.array([rng.uniform(-0.5, 0.5), rng.uniform(0.05, 0.6)])
                    if self._place_free(state, slot, pos, theta):
                        break
        return state

    def _sample_instance(self, skill_name: str, rng: np.random.Generator):
        """Scene plus binding satisfying the skill's precondition, or None."""
        from ..composer import SkeletonStep  # binding container only

        state = self.sample_scene(rng)
        if skill_name == "pick":
            cands = [s for s in range(NUM_SLOTS)
                     if state.present[s] and KIND_BY_SLOT[s] != "rack"
                     and state.in_workspace(s) and not state.under_rack(s)]
            if not cands:
                return None
            binding = (int(rng.choice(cands)),)
        elif skill_name == "place":
            movable = [s for s in range(NUM_SLOTS) if state.present[s] and KIND_BY_SLOT[s] != "rack"]
            if not movable:
                return None
            moved = int(rng.choice(movable))
            state.vals[moved, HELD] = 1.0
            if KIND_BY_SLOT[moved] == "box" and state.present[RACK] and rng.random() < 0.75:
                target = RACK
            else:
                target = TABLE
            binding = (moved, target)
        else:  # push / pull
            if not state.present[HOOK]:
                return None
            state.vals[HOOK, HELD] = 1.0
            boxes = [s for s in range(BOX0, NUM_SLOTS)
                     if state.present[s] and not state.on_rack(s) and not state.under_rack(s)
                     and np.linalg.norm(state.pos(s) - BASE) <= TOOL_REACH]
            if not boxes:
                return None
            binding = (int(rng.choice(boxes)), HOOK)
        step = SkeletonStep(skill=skill_name, binding=binding)
        if not self.precondition(state, step):
            return None
        return state, step

    def attempt_transition(self, skill: SkillSpec, rng: np.random.Generator) -> Transition:
        """One rejection-sampling attempt: random scene, uniform parameters."""
        inst = None
        while inst is None:
            inst = self._sample_instance(skill.name, rng)
        state, step = inst
        a = skill.sample_action(rng)
        nxt, ok = self.execute(state, step, a)
        return Transition(
            s=self.encode_state(state),
            a=a,
            s_next=self.encode_state(nxt),
            success=ok,
            order=self.order_features(step.binding, state.present),
        )
