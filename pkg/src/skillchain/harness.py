"""Experiment orchestration: episode evaluation, ablations, reports.

Every evaluation is reconstructible from (config snapshot, seed): episodes
draw from independent child RNG streams, aggregation is order-independent,
and report files contain no timing (wall time lives in the returned object
and in sidecar logs so the report bytes stay reproducible).
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .domains.baselines import random_shooting_plan, state_only_plan
from .planner import PlanSettings, candidate_actions, closed_loop_episode, execute_plan, gsc_plan, oracle_plan

__all__ = ["Report", "eval_success_rate", "ablate_gamma", "start_node_deviation", "output_root"]

PLANNERS = ("gsc", "random-shooting", "state-only-id", "oracle")


def output_root() -> str:
    return os.environ.get("SKILLCHAIN_OUT", "runs")


@dataclass
class Report:
    config: dict
    columns: list
    rows: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    def to_text(self) -> str:
        """Deterministic columnar serialization (no timing)."""
        lines = ["# config " + json.dumps(self.config, sort_keys=True)]
        lines.append("# aggregate " + json.dumps(self.aggregate, sort_keys=True))
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(_fmt(row[c]) for c in self.columns))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_text())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _episode_plan_and_execute(task, planner, state0, rng, models, qmodels, invdyn, settings, budget):
    if planner == "gsc":
        result = gsc_plan(task, models, state0, rng, qmodels=qmodels, settings=settings)
        if result.best is None:
            return None, None
        actions = candidate_actions(result.best, result.skeleton)
    elif planner == "random-shooting":
        actions, _ = random_shooting_plan(task, state0, budget, rng)
    elif planner == "state-only-id":
        actions = state_only_plan(
            task, state0, models, invdyn, rng, qmodels=qmodels,
            n_candidates=settings.n_candidates, gamma=float(np.atleast_1d(settings.gamma)[0]),
        )
        if actions is None:
            return None, None
    elif planner == "oracle":
        actions = oracle_plan(task, state0, rng)
        if actions is None:
            return None, None
    else:
        raise ValueError(f"unknown planner {planner!r}; one of {PLANNERS}")
    return actions, execute_plan(task, state0, actions)


def eval_success_rate(
    task,
    planner: str,
    n_episodes: int,
    seed: int,
    models: dict | None = None,
    qmodels: dict | None = None,
    invdyn: dict | None = None,
    settings: PlanSettings = PlanSettings(),
    budget: int | None = None,
    closed_loop: bool = False,
    replan_budget: int = 3,
) -> Report:
    """Success rate over independent episodes: plan, execute top-1, check goal.

    The random-shooting baseline receives ``budget`` ground-truth rollouts
    per episode (defaults to the candidate count, i.e. an equal budget).
    """
    if planner in ("gsc", "state-only-id") and not models:
        raise ValueError(f"planner {planner!r} needs trained skill models")
    if planner == "state-only-id" and not invdyn:
        raise ValueError("state-only planner needs inverse-dynamics models")
    budget = settings.n_candidates if budget is None else budget
    config = {
        "task": task.name,
        "planner": planner,
        "n_episodes": n_episodes,
        "seed": seed,
        "n_candidates": settings.n_candidates,
        "gamma": settings.gamma if np.isscalar(settings.gamma) else list(settings.gamma),
        "budget": budget,
        "closed_loop": closed_loop,
        "use_q": bool(settings.use_q and qmodels),
    }
    t0 = time.perf_counter()
    rows = []
    has_pred = task.constraint_predicate is not None
    ep_rngs = np.random.default_rng(seed).spawn(n_episodes)
    for ep, rng in enumerate(ep_rngs):
        state0 = task.sample_initial(rng)
        if closed_loop and planner == "gsc":
            trace = closed_loop_episode(
                task, models, state0, rng, qmodels=qmodels, settings=settings,
                invdyn=invdyn, replan_budget=replan_budget,
            )
            rows.append({
                "episode": ep, "success": bool(trace["success"]),
                "steps_ok": sum(1 for s in trace["steps"] if s["ok"]),
                "constraint_ok": "", "replans": trace["replans"],
            })
            continue
        planned = _episode_plan_and_execute(task, planner, state0, rng, models, qmodels, invdyn, settings, budget)
        actions, res = planned
        if res is None:
            rows.append({"episode": ep, "success": False, "steps_ok": 0, "constraint_ok": "", "replans": 0})
            continue
        cs = ""
        if has_pred:
            cs = bool(task.constraint_predicate(actions, res.final_state))
        rows.append({
            "episode": ep, "success": res.success, "steps_ok": sum(res.step_ok),
            "constraint_ok": cs, "replans": 0,
        })
    agg = {"success_rate": float(np.mean([r["success"] for r in rows]))}
    if has_pred and not closed_loop:
        agg["constraint_rate"] = float(np.mean([bool(r["constraint_ok"]) for r in rows]))
    report = Report(
        config=config,
        columns=["episode", "success", "steps_ok", "constraint_ok", "replans"],
        rows=rows,
        aggregate=agg,
        wall_time_s=time.perf_counter() - t0,
    )
    return report


def start_node_deviation(
    task,
    models: dict,
    gamma: float,
    n_episodes: int,
    seed: int,
    n_candidates: int = 32,
) -> float:
    """Mean L2 distance of free-sampled start nodes from the true initial state.

    Planning runs without start in-painting (goal guidance stays on), so the
    start node is whatever the composed chain believes it should be.
    """
    settings = PlanSettings(n_candidates=n_candidates, gamma=gamma, use_q=False, inpaint_start=False)
    devs = []
    for rng in np.random.default_rng(seed).spawn(n_episodes):
        state0 = task.sample_initial(rng)
        target = task.domain.encode_state(state0)
        result = gsc_plan(task, models, state0, rng, settings=settings)
        for cand in result.candidates:
            devs.append(float(np.linalg.norm(cand.state(0) - target)))
    return float(np.mean(devs))


def ablate_gamma(
    task,
    models: dict,
    qmodels: dict | None,
    gammas,
    n_episodes: int,
    seed: int,
    settings: PlanSettings = PlanSettings(),
    deviation_episodes: int = 8,
) -> Report:
    """Success rate per gamma plus the no-in-painting start-node deviation."""
    config = {"task": task.name, "gammas": list(map(float, gammas)), "n_episodes": n_episodes, "seed": seed,
              "n_candidates": settings.n_candidates}
    t0 = time.perf_counter()
    rows = []
    for g in gammas:
        s = PlanSettings(n_candidates=settings.n_candidates, gamma=float(g), use_q=settings.use_q)
        rep = eval_success_rate(task, "gsc", n_episodes, seed, models=models, qmodels=qmodels, settings=s)
        dev = start_node_deviation(task, models, float(g), deviation_episodes, seed,
                                   n_candidates=settings.n_candidates)
        rows.append({"gamma": float(g), "success_rate": rep.aggregate["success_rate"], "start_deviation": dev})
    return Report(
        config=config,
        columns=["gamma", "success_rate", "start_deviation"],
        rows=rows,
        aggregate={},
        wall_time_s=time.perf_counter() - t0,
    )
