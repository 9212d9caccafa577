"""Ground-truth environments, task definitions, and baseline planners."""

from .planar import PlanarDomain, PlanarState
from .tasks import TaskDef, get_task, task_suite
from .toy import ToyDomain, toy_regions, toy_transition

__all__ = [
    "PlanarDomain",
    "PlanarState",
    "TaskDef",
    "ToyDomain",
    "get_task",
    "task_suite",
    "toy_regions",
    "toy_transition",
]
