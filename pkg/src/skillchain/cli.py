"""Command-line entry point.

Subcommands: gen-data, train, train-q, plan, eval, ablate-gamma,
export-frames. Every run writes its resolved configuration (JSON) beside
its outputs so results are reconstructible from (config, seed); timing
goes to a sidecar .log, never into report files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .composer import write_frames
from .diffusion import build_schedule
from .domains.baselines import train_inverse_dynamics
from .domains.planar import PlanarDomain
from .domains.tasks import get_task, task_suite
from .domains.toy import ToyDomain
from .harness import ablate_gamma, eval_success_rate, output_root
from .planner import PlanSettings, candidate_actions, gsc_plan
from .qmodel import QTrainConfig, train_q
from .scorenet import TrainConfig, load_model, save_model, train_skill
from .skills import generate_dataset, load_dataset, save_dataset

log = logging.getLogger("skillchain")

DOMAINS = {"toy": ToyDomain, "planar": PlanarDomain}


def _domain(name: str):
    try:
        return DOMAINS[name]()
    except KeyError:
        raise SystemExit(f"unknown domain {name!r}; one of {sorted(DOMAINS)}")


def _write_config(path_base: str, cfg: dict) -> None:
    with open(path_base + ".config.json", "w") as f:
        json.dump(cfg, f, sort_keys=True, indent=2)
        f.write("\n")


def _models_for_task(task, models_dir):
    models, qmodels = {}, {}
    for st in task.skeleton.steps:
        name = st.skill
        if name not in models:
            models[name] = load_model(os.path.join(models_dir, f"{name}.npz"))
        qpath = os.path.join(models_dir, f"{name}.q.npz")
        if name not in qmodels and os.path.exists(qpath):
            qmodels[name] = load_model(qpath)
    return models, (qmodels if len(qmodels) == len(models) else None)


def cmd_gen_data(args) -> int:
    dom = _domain(args.domain)
    skill = dom.skills[args.skill]
    rng = np.random.default_rng(args.seed)
    bundle = generate_dataset(dom, skill, args.n, rng)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    save_dataset(args.out, bundle, skill)
    _write_config(args.out, vars(args) | {"command": "gen-data"})
    print(f"{args.out}: {len(bundle.successes)} successes, {len(bundle.failures)} failures")
    return 0


def cmd_train(args) -> int:
    dom = _domain(args.domain)
    skill = dom.skills[args.skill]
    bundle = load_dataset(args.data, skill)
    sched = build_schedule(args.T, args.sigma_min, args.sigma_max, "geometric")
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                         mask_drop_prob=args.mask_drop, hidden=args.hidden, depth=args.depth)
    rng = np.random.default_rng(args.seed)
    model = train_skill(bundle.successes, skill, config, sched, rng)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    save_model(args.out, model)
    _write_config(args.out, vars(args) | {"command": "train"})
    print(f"{args.out}: final epoch loss {model.loss_history[-1]:.4f}")
    return 0


def cmd_train_q(args) -> int:
    dom = _domain(args.domain)
    skill = dom.skills[args.skill]
    bundle = load_dataset(args.data, skill)
    rng = np.random.default_rng(args.seed)
    model = train_q(skill, bundle.successes, bundle.failures, QTrainConfig(epochs=args.epochs), rng)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    save_model(args.out, model)
    _write_config(args.out, vars(args) | {"command": "train-q"})
    print(f"{args.out}: held-out accuracy {model.holdout_accuracy:.3f}")
    return 0


def _settings(args) -> PlanSettings:
    return PlanSettings(n_candidates=args.n_candidates, gamma=args.gamma,
                        T=getattr(args, "steps", None))


def cmd_plan(args) -> int:
    task = get_task(args.task)
    models, qmodels = _models_for_task(task, args.models_dir)
    rng = np.random.default_rng(args.seed)
    state0 = task.sample_initial(rng)
    result = gsc_plan(task, models, state0, rng, qmodels=qmodels, settings=_settings(args))
    if result.best is None:
        print("no finite candidate", file=sys.stderr)
        return 1
    actions = candidate_actions(result.best, result.skeleton)
    for i, (st, a) in enumerate(zip(result.skeleton.steps, actions)):
        print(f"step {i} {st.skill}: " + " ".join(f"{v:.4f}" for v in a))
    if result.best.score is not None:
        print(f"top-1 success score: {result.best.score:.4f}")
    return 0


def cmd_eval(args) -> int:
    task = get_task(args.task)
    models, qmodels, invdyn = None, None, None
    if args.planner in ("gsc", "state-only-id"):
        models, qmodels = _models_for_task(task, args.models_dir)
    if args.planner == "state-only-id":
        invdyn = {}
        for st in task.skeleton.steps:
            if st.skill in invdyn:
                continue
            skill = task.domain.skills[st.skill]
            bundle = load_dataset(os.path.join(args.data_dir, f"{st.skill}.csv"), skill)
            invdyn[st.skill] = train_inverse_dynamics(skill, bundle.successes, np.random.default_rng(args.seed))
    report = eval_success_rate(
        task, args.planner, args.episodes, args.seed,
        models=models, qmodels=qmodels, invdyn=invdyn,
        settings=_settings(args), budget=args.budget, closed_loop=args.closed_loop,
    )
    out = args.out or os.path.join(output_root(), f"eval_{args.task}_{args.planner}_{args.seed}.txt")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    report.write(out)
    _write_config(out, vars(args) | {"command": "eval"})
    with open(out + ".log", "w") as f:
        f.write(f"wall_time_s {report.wall_time_s:.3f}\n")
    print(f"{out}: success_rate {report.aggregate['success_rate']:.3f}")
    return 0


def cmd_ablate_gamma(args) -> int:
    task = get_task(args.task)
    models, qmodels = _models_for_task(task, args.models_dir)
    gammas = [float(v) for v in args.values.split(",")]
    report = ablate_gamma(task, models, qmodels, gammas, args.episodes, args.seed, settings=_settings(args))
    out = args.out or os.path.join(output_root(), f"ablate_gamma_{args.task}_{args.seed}.txt")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    report.write(out)
    _write_config(out, vars(args) | {"command": "ablate-gamma"})
    for row in report.rows:
        print(f"gamma {row['gamma']}: success {row['success_rate']:.3f}, start dev {row['start_deviation']:.3f}")
    return 0


def cmd_export_frames(args) -> int:
    task = get_task(args.task)
    models, _ = _models_for_task(task, args.models_dir)
    rng = np.random.default_rng(args.seed)
    state0 = task.sample_initial(rng)
    settings = PlanSettings(n_candidates=1, gamma=args.gamma, use_q=False,
                            record_frames=True, T=args.steps)
    result = gsc_plan(task, models, state0, rng, settings=settings)
    if result.best is None:
        print("no finite candidate", file=sys.stderr)
        return 1
    out = args.out or os.path.join(output_root(), f"frames_{args.task}_{args.seed}.txt")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    write_frames(out, result.best)
    _write_config(out, vars(args) | {"command": "export-frames"})
    print(f"{out}: {len(result.best.frames)} frames")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skillchain", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a skill dataset by scripted rejection")
    g.add_argument("--domain", required=True)
    g.add_argument("--skill", required=True)
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a skill score model")
    t.add_argument("--domain", required=True)
    t.add_argument("--skill", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--batch", type=int, default=128)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--mask-drop", type=float, default=0.2)
    t.add_argument("--hidden", type=int, default=128)
    t.add_argument("--depth", type=int, default=4)
    t.add_argument("--T", type=int, default=128)
    t.add_argument("--sigma-min", type=float, default=1e-3)
    t.add_argument("--sigma-max", type=float, default=10.0)
    t.set_defaults(fn=cmd_train)

    q = sub.add_parser("train-q", help="train a skill success classifier")
    q.add_argument("--domain", required=True)
    q.add_argument("--skill", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--epochs", type=int, default=60)
    q.set_defaults(fn=cmd_train_q)

    def planning_args(sp, with_planner=False):
        sp.add_argument("--task", required=True)
        sp.add_argument("--models-dir", default="models")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--n-candidates", type=int, default=32)
        sp.add_argument("--gamma", type=float, default=0.5)

    pl = sub.add_parser("plan", help="sample and print the top-ranked plan")
    planning_args(pl)
    pl.set_defaults(fn=cmd_plan)

    e = sub.add_parser("eval", help="success rate over random episodes")
    planning_args(e)
    e.add_argument("--planner", default="gsc")
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--budget", type=int, default=None)
    e.add_argument("--closed-loop", action="store_true")
    e.add_argument("--data-dir", default="datasets")
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate-gamma", help="evaluate a list of dependency factors")
    planning_args(a)
    a.add_argument("--values", default="0,0.5,1")
    a.add_argument("--episodes", type=int, default=30)
    a.add_argument("--out", default=None)
    a.set_defaults(fn=cmd_ablate_gamma)

    f = sub.add_parser("export-frames", help="record one reverse-diffusion rollout")
    planning_args(f)
    f.add_argument("--steps", type=int, default=50)
    f.add_argument("--out", default=None)
    f.set_defaults(fn=cmd_export_frames)

    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
