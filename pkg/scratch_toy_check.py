import numpy as np, time
from skillchain.domains.toy import ToyDomain, GEOMETRY, PINNED_START, PINNED_GOAL
from skillchain.domains.tasks import get_task
from skillchain.scorenet import TrainConfig
from skillchain.diffusion import build_schedule
from skillchain.pipeline import train_library
from skillchain.planner import PlanSettings, gsc_plan

t0 = time.time()
dom = ToyDomain()
sched = build_schedule(128, 1e-3, 10.0, "geometric")
cfg = TrainConfig(epochs=300, batch_size=128, lr=1e-3)
lib = train_library(dom, ["step-to-circles", "circle-to-green"], 5000, cfg, sched, seed=0)
models = lib.models
for name, m in models.items():
    print(f"{name}: final loss {m.loss_history[-1]:.3f}, {time.time()-t0:.0f}s")

# 1) routing through bottom circle
task = get_task("toy-chain")
prng = np.random.default_rng(42)
state0 = task.sample_initial(prng)
res = gsc_plan(task, models, state0, prng, settings=PlanSettings(n_candidates=400, use_q=False))
mids = np.stack([c.state(1) for c in res.candidates])
finals = np.stack([c.state(2) for c in res.candidates])
bot = GEOMETRY["bottom"].contains(mids).mean()
top = GEOMETRY["top"].contains(mids).mean()
green = GEOMETRY["green"].contains(finals).mean()
print(f"routing: bottom {bot:.3f} top {top:.3f} | final in green {green:.3f}")

# 2) left-half constraint
task_l = get_task("toy-chain-left")
res_l = gsc_plan(task_l, models, state0, np.random.default_rng(43), settings=PlanSettings(n_candidates=400, use_q=False))
finals_l = np.stack([c.state(2) for c in res_l.candidates])
left = GEOMETRY["green_left"].contains(finals_l).mean()
in_green_l = GEOMETRY["green"].contains(finals_l).mean()
print(f"left-half: in green {in_green_l:.3f}, in left half {left:.3f}")

# 3) pinned endpoints -> mid state
task_p = get_task("toy-chain-pinned")
res_p = gsc_plan(task_p, models, PINNED_START.copy(), np.random.default_rng(44), settings=PlanSettings(n_candidates=400, use_q=False))
mids_p = np.stack([c.state(1) for c in res_p.candidates])
s0s = np.stack([c.state(0) for c in res_p.candidates])
s2s = np.stack([c.state(2) for c in res_p.candidates])
geo = np.array([0.0, -0.8])
print("endpoint exactness:", np.max(np.abs(s0s - PINNED_START)), np.max(np.abs(s2s - PINNED_GOAL)))
mean_mid = mids_p.mean(axis=0)
print(f"mean mid {mean_mid}, dist to geometric {np.linalg.norm(mean_mid-geo):.4f}")
print(f"median per-sample dist {np.median(np.linalg.norm(mids_p-geo, axis=1)):.4f}")
frac_bot = GEOMETRY["bottom"].contains(mids_p).mean()
print(f"pinned mids in bottom circle: {frac_bot:.3f}")
print(f"total {time.time()-t0:.0f}s")
