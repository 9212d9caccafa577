"""Compositional planning with per-skill diffusion models.

Train a score model per skill over (state, action, next-state) transitions,
compose the models along a given skeleton into one chain-level score, and
sample full parameter sequences in parallel with in-painted conditioning,
constraint guidance, and success-probability candidate filtering.
"""

from .analytic import (
    AnalyticSkillModel,
    GaussianDensity,
    GaussianMixture,
    composed_chain_target,
    gaussian_product_quotient,
    grid_moments,
    noised_score,
)
from .composer import (
    Candidate,
    ChainLayout,
    ChainSpace,
    GammaConfig,
    Skeleton,
    SkeletonStep,
    assemble_score,
    export_frames,
    layout_skeleton,
    sample_chain,
)
from .diffusion import NoiseSchedule, add_noise, build_schedule, denoise_estimate, dsm_loss, reverse_step
from .guidance import Constraint, apply_inpainting, constraint_likelihood, guided_score
from .planner import PlanSettings, candidate_actions, closed_loop_episode, execute_plan, gsc_plan, oracle_plan
from .qmodel import QModel, QTrainConfig, rank_candidates, train_q
from .scorenet import SkillModel, TrainConfig, load_model, save_model, train_skill
from .skills import (
    DatasetBundle,
    NormStats,
    SkillSpec,
    Transition,
    decode_transition,
    encode_transition,
    generate_dataset,
    load_dataset,
    save_dataset,
)

__version__ = "0.1.0"
