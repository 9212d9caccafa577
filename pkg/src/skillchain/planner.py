"""Planning entry points: chain sampling, ranking, execution, replanning.

GSC planning draws a batch of candidate chains from the composed skill
models (start state in-painted, goals as guidance constraints), ranks them
by the product of per-skill success probabilities, and executes the best
one open-loop. The closed-loop variant observes the true state after each
executed skill and, when progress is blocked (or the observation deviates
from the plan beyond a tolerance), resamples the remaining chain from the
earliest skeleton index whose precondition the observed state satisfies.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .composer import (
    ChainSpace,
    GammaConfig,
    Skeleton,
    SkeletonStep,
    layout_skeleton,
    sample_chain,
)
from .diffusion import build_schedule
from .guidance import Constraint
from .qmodel import rank_candidates

__all__ = [
    "PlanSettings",
    "PlanResult",
    "gsc_plan",
    "candidate_actions",
    "execute_plan",
    "oracle_plan",
    "closed_loop_episode",
]


@dataclass(frozen=True)
class PlanSettings:
    n_candidates: int = 32
    gamma: float | tuple = 0.5
    use_q: bool = True
    inpaint_start: bool = True
    state_only: bool = False
    record_frames: bool = False
    T: int | None = None  # override the sampling step count (sigma endpoints kept)


@dataclass
class PlanResult:
    candidates: list
    skeleton: Skeleton
    layout: object
    space: ChainSpace

    @property
    def best(self):
        return self.candidates[0] if self.candidates else None


def _steps_with_orders(task, state0) -> Skeleton:
    dom = task.domain
    if not hasattr(dom, "order_features"):
        return task.skeleton
    steps = tuple(
        replace(st, order=dom.order_features(st.binding, state0.present))
        for st in task.skeleton.steps
    )
    return Skeleton(steps=steps)


def _shift_constraints(constraints, offset: int, new_K: int):
    """Renumber node references when planning a skeleton suffix."""
    if offset == 0:
        return tuple(constraints)
    out = []
    for c in constraints:
        nodes = []
        ok = True
        for name in c.nodes:
            kind, idx = name[0], int(name[1:])
            idx -= offset
            if idx < 0 or (kind == "a" and idx >= new_K) or (kind == "s" and idx > new_K):
                ok = False
                break
            nodes.append(f"{kind}{idx}")
        if ok:
            out.append(replace(c, nodes=tuple(nodes)))
    return tuple(out)


def gsc_plan(
    task,
    models: dict,
    state0,
    rng: np.random.Generator,
    qmodels: dict | None = None,
    settings: PlanSettings = PlanSettings(),
    invdyn: dict | None = None,
    start_index: int = 0,
) -> PlanResult:
    """Sample and rank candidate chains for (a suffix of) the task skeleton."""
    full = _steps_with_orders(task, state0)
    steps = full.steps[start_index:]
    skeleton = Skeleton(steps=steps)
    K = skeleton.K
    layout = layout_skeleton(skeleton, models, state_only=settings.state_only)
    space = ChainSpace(layout, skeleton, models)
    model_seq = [models[st.skill] for st in skeleton.steps]
    sched = model_seq[0].sched
    if settings.T is not None:
        sched = build_schedule(settings.T, sched.sigma_min, sched.sigma_max, sched.kind)

    cond = {}
    if settings.inpaint_start:
        cond["s0"] = task.domain.encode_state(state0)
    if task.pin_goal:
        for name, val in task.pin_goal.items():
            kind, idx = name[0], int(name[1:])
            cond[f"{kind}{idx - start_index}"] = val
    constraints = _shift_constraints(task.constraints(), start_index, K)

    cands = sample_chain(
        layout,
        model_seq,
        sched,
        skeleton,
        space,
        rng,
        n_candidates=settings.n_candidates,
        gamma=GammaConfig.constant(settings.gamma, K) if np.isscalar(settings.gamma) else GammaConfig(settings.gamma),
        conditioning=cond,
        constraints=constraints,
        record_frames=settings.record_frames,
    )
    if settings.use_q and qmodels is not None and cands:
        q_seq = [qmodels[st.skill] for st in skeleton.steps]
        orders = [st.order for st in skeleton.steps]
        cands = rank_candidates(cands, q_seq, orders=orders)
    return PlanResult(candidates=cands, skeleton=skeleton, layout=layout, space=space)


def candidate_actions(candidate, skeleton: Skeleton, invdyn: dict | None = None) -> list[np.ndarray]:
    """Per-step raw actions; a state-only chain recovers them by inverse dynamics."""
    actions = []
    for i, st in enumerate(skeleton.steps):
        node = candidate.layout.node(f"a{i}")
        if node.dim:
            actions.append(candidate.action(i))
        else:
            if invdyn is None:
                raise ValueError("state-only chain needs inverse-dynamics models")
            a = invdyn[st.skill].predict(candidate.state(i), candidate.state(i + 1), order=st.order)
            actions.append(np.asarray(a, dtype=float).reshape(-1))
    return actions


@dataclass
class ExecResult:
    success: bool
    step_ok: list
    final_state: object
    states: list = field(default_factory=list)


def execute_plan(task, state0, actions) -> ExecResult:
    """Run the actions through the ground-truth domain and check the goal."""
    state = state0
    states = [state]
    step_ok = []
    for st, a in zip(task.skeleton.steps, actions):
        state, ok = task.domain.execute(state, st, a)
        step_ok.append(bool(ok))
        states.append(state)
    return ExecResult(success=bool(task.goal(state)), step_ok=step_ok, final_state=state, states=states)


def oracle_plan(task, state0, rng: np.random.Generator, step_tries: int = 600, plan_tries: int = 60):
    """Scripted-expert upper bound: per-step rejection on the true domain.

    The final step must also satisfy the task goal; whole-episode retries
    absorb unlucky intermediate choices. Returns the action list or None.
    """
    K = task.skeleton.K
    for _ in range(plan_tries):
        state = state0
        actions = []
        feasible = True
        for i, st in enumerate(task.skeleton.steps):
            found = None
            for _ in range(step_tries):
                a = task.domain.skills[st.skill].sample_action(rng)
                nxt, ok = task.domain.execute(state, st, a)
                if ok and (i < K - 1 or task.goal(nxt)):
                    found = (a, nxt)
                    break
            if found is None:
                feasible = False
                break
            actions.append(found[0])
            state = found[1]
        if feasible and task.goal(state):
            return actions
    return None


def closed_loop_episode(
    task,
    models: dict,
    state0,
    rng: np.random.Generator,
    qmodels: dict | None = None,
    settings: PlanSettings = PlanSettings(),
    invdyn: dict | None = None,
    replan_budget: int = 3,
    q_threshold: float | None = 0.5,
    deviation_tol: float | None = None,
    perturb: tuple[int, object] | None = None,
) -> dict:
    """Execute with observation feedback and bounded replanning.

    After each executed skill the true state is observed. The episode
    proceeds when the step succeeded, the next skill's precondition holds,
    and (if enabled) the executed transition's success probability clears
    ``q_threshold`` and the observation stays within ``deviation_tol`` of
    the planned next state. Otherwise the remaining chain is resampled from
    the earliest skeleton index whose precondition the observed state
    satisfies, with the observation in-painted as its start.

    ``perturb`` = (step_index, fn) teleports the state after that step.
    """
    K = task.skeleton.K
    result = gsc_plan(task, models, state0, rng, qmodels=qmodels, settings=settings, invdyn=invdyn)
    trace = {"replans": 0, "restart_indices": [], "steps": [], "success": False}
    if result.best is None:
        return trace
    actions = candidate_actions(result.best, result.skeleton, invdyn=invdyn)
    planned = result  # current plan covers steps [start..K)
    start = 0
    state = state0
    i = 0
    full_steps = _steps_with_orders(task, state0).steps
    while i < K:
        step = full_steps[i]
        nxt, ok = task.domain.execute(state, step, actions[i - start])
        if perturb is not None and perturb[0] == i:
            nxt = perturb[1](nxt, rng)
        trace["steps"].append({"index": i, "skill": step.skill, "ok": bool(ok)})
        proceed = ok and (i + 1 >= K or task.domain.precondition(nxt, full_steps[i + 1]))
        if proceed and ok and q_threshold is not None and qmodels is not None:
            q = float(
                qmodels[step.skill].predict(
                    task.domain.encode_state(state), task.domain.encode_state(nxt), order=step.order
                )[0]
            )
            proceed = q >= q_threshold
        if proceed and deviation_tol is not None:
            planned_next = planned.best.state(i + 1 - start)
            dev = float(np.max(np.abs(planned_next - task.domain.encode_state(nxt))))
            proceed = dev <= deviation_tol
        if proceed:
            state = nxt
            i += 1
            continue
        if trace["replans"] >= replan_budget:
            trace["final_state"] = nxt
            return trace
        satisfiable = [j for j in range(K) if task.domain.precondition(nxt, full_steps[j])]
        if not satisfiable:
            trace["final_state"] = nxt
            return trace
        j = satisfiable[0]
        trace["replans"] += 1
        trace["restart_indices"].append(j)
        state = nxt
        planned = gsc_plan(task, models, state, rng, qmodels=qmodels, settings=settings,
                           invdyn=invdyn, start_index=j)
        if planned.best is None:
            trace["final_state"] = state
            return trace
        actions = candidate_actions(planned.best, planned.skeleton, invdyn=invdyn)
        start = j
        i = j
    trace["success"] = bool(task.goal(state))
    trace["final_state"] = state
    return trace
