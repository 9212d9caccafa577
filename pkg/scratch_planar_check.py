import numpy as np, time, sys
from skillchain.domains.planar import PlanarDomain
from skillchain.domains.tasks import get_task
from skillchain.scorenet import TrainConfig
from skillchain.qmodel import QTrainConfig
from skillchain.diffusion import build_schedule
from skillchain.pipeline import train_library
from skillchain.planner import PlanSettings, gsc_plan, candidate_actions, execute_plan
from skillchain.harness import eval_success_rate

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 150
n_data = int(sys.argv[2]) if len(sys.argv) > 2 else 5000
eps = int(sys.argv[3]) if len(sys.argv) > 3 else 30

t0 = time.time()
dom = PlanarDomain()

# acceptance rates
rng = np.random.default_rng(5)
for name in dom.skills:
    hits = sum(dom.attempt_transition(dom.skills[name], rng).success for _ in range(2000))
    print(f"{name}: acceptance {hits/2000:.3f}")

sched = build_schedule(128, 1e-3, 10.0, "geometric")
cfg = TrainConfig(epochs=epochs, batch_size=128, lr=1e-3)
lib = train_library(dom, list(dom.skills), n_data, cfg, sched, seed=0, q_cfg=QTrainConfig())
print(f"trained 4 skills + Q in {time.time()-t0:.0f}s")
for name, m in lib.models.items():
    print(f"  {name}: loss {m.loss_history[-1]:.3f}, q acc {lib.qmodels[name].holdout_accuracy:.3f}")

for task_name in ("rearr-push-1", "hook-reach-1", "packing-1"):
    task = get_task(task_name)
    t1 = time.time()
    rep = eval_success_rate(task, "gsc", eps, 7, models=lib.models, qmodels=lib.qmodels,
                            settings=PlanSettings(n_candidates=32))
    t_gsc = time.time() - t1
    rep_r = eval_success_rate(task, "random-shooting", eps, 7)
    print(f"{task_name}: GSC {rep.aggregate['success_rate']:.2f} ({t_gsc:.0f}s, {t_gsc/eps:.1f}s/ep) "
          f"| random {rep_r.aggregate['success_rate']:.2f}")
    # step diagnostics for GSC
    fails = np.zeros(task.K)
    for rng_ep in np.random.default_rng(11).spawn(10):
        state0 = task.sample_initial(rng_ep)
        res = gsc_plan(task, lib.models, state0, rng_ep, qmodels=lib.qmodels, settings=PlanSettings(n_candidates=32))
        if res.best is None: continue
        ex = execute_plan(task, state0, candidate_actions(res.best, res.skeleton))
        for i, ok in enumerate(ex.step_ok):
            fails[i] += 0 if ok else 1
    print(f"  step failure counts /10: {fails}")
print(f"total {time.time()-t0:.0f}s")
