"""Reward-machine task decomposition with learned decomposition selection."""
from .decomp import (
    Decomposition,
    GenerationConstraints,
    LocalEventSet,
    NoValidDecomposition,
    ProjectionError,
    SubTaskRm,
    bisimilar,
    decompose,
    enumerate_candidates,
    is_valid,
    monolithic,
    parallel_compose,
    project,
)
from .envs import GridSpec, builtin_map, load_map, parse_map
from .kernel import BACKEND_NAME
from .rm import RewardMachine, RmConfiguration, load_rm, parse_rm, serialize_rm
from .selection import SelectorState, ValueEstimate

__version__ = "0.1.0"
