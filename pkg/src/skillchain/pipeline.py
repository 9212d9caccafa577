"""One-call training pipeline for a domain's skill library.

Generates per-skill datasets, pools state statistics across them (shared
state coordinates are what make multi-skill chains well-posed), and trains
the score models plus, optionally, the success classifiers and
inverse-dynamics regressors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoiseSchedule
from .domains.baselines import InvDynModel, train_inverse_dynamics
from .qmodel import QModel, QTrainConfig, train_q
from .scorenet import SkillModel, TrainConfig, train_skill
from .skills import DatasetBundle, generate_dataset, pooled_state_stats

__all__ = ["LibraryBundle", "train_library"]


@dataclass
class LibraryBundle:
    domain: object
    datasets: dict[str, DatasetBundle]
    models: dict[str, SkillModel]
    qmodels: dict[str, QModel] = field(default_factory=dict)
    invdyn: dict[str, InvDynModel] = field(default_factory=dict)


def train_library(
    domain,
    skill_names,
    n_per_skill: int,
    train_cfg: TrainConfig,
    sched: NoiseSchedule,
    seed: int,
    q_cfg: QTrainConfig | None = None,
    with_invdyn: bool = False,
) -> LibraryBundle:
    root = np.random.default_rng(seed)
    gen_rng, train_rng, q_rng, inv_rng = root.spawn(4)
    datasets = {
        name: generate_dataset(domain, domain.skills[name], n_per_skill, gen_rng)
        for name in skill_names
    }
    state_stats = pooled_state_stats({k: b.successes for k, b in datasets.items()})
    bundle = LibraryBundle(domain=domain, datasets=datasets, models={})
    for name in skill_names:
        bundle.models[name] = train_skill(
            datasets[name].successes, domain.skills[name], train_cfg, sched, train_rng,
            state_stats=state_stats,
        )
    if q_cfg is not None:
        for name in skill_names:
            bundle.qmodels[name] = train_q(
                domain.skills[name], datasets[name].successes, datasets[name].failures, q_cfg, q_rng
            )
    if with_invdyn:
        for name in skill_names:
            bundle.invdyn[name] = train_inverse_dynamics(
                domain.skills[name], datasets[name].successes, inv_rng
            )
    return bundle
