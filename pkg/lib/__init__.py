"""
Grid Consensus Simulator - Core Library
"""

from .types import (
    CommGraph, Dispatch, Grid, Hyperparams, LinkSchedule, Partition, RunTrace,
    SuperAgent, SweepSummary,
)
from .grid_model import build_agents, build_test_feeder, partition_grid
from .dispatch import solve_centralized
from .consensus import ConsensusEngine
from .experiment import run_sweep

__all__ = [
    'CommGraph',
    'Dispatch',
    'Grid',
    'Hyperparams',
    'LinkSchedule',
    'Partition',
    'RunTrace',
    'SuperAgent',
    'SweepSummary',
    'build_agents',
    'build_test_feeder',
    'partition_grid',
    'solve_centralized',
    'ConsensusEngine',
    'run_sweep',
]
