"""Multicast scheduling for cache-enabled heterogeneous networks.

Exact average-cost solvers (relative value iteration, policy iteration and
structured policy iteration), a decomposition-based low-complexity policy,
greedy and randomized baselines, structural verification and Monte Carlo
cost estimation.
"""
from .baselines import GreedyPolicy, greedy_action, greedy_cost, sample_base_action
from .config import ConfigError, ExperimentSpec, dump_config, load_config, parse_config
from .mdp import (
    Policy,
    SolveReport,
    StateSpace,
    UnichainError,
    build_kernel,
    enumerate_states,
    exhaustive_policy_search,
    pia,
    policy_evaluation,
    policy_improvement,
    rvia,
    spia,
)
from .model import (
    IndependentPmf,
    ModelError,
    NetworkConfig,
    PerUserIRM,
    ResourceLimitError,
    feasible_actions,
    next_state,
    stage_cost,
    zipf_popularity,
)
from .sim import CostEstimate, SimPlan, estimate_costs, run_episode
from .structure import StructureReport, dominance_closure, verify_structure
from .subopt import (
    PerQueueValue,
    RandomizedBasePolicy,
    decompose,
    ssa,
    suboptimal_policy,
)

__all__ = [
    "ConfigError", "CostEstimate", "ExperimentSpec", "GreedyPolicy", "IndependentPmf",
    "ModelError", "NetworkConfig", "PerQueueValue", "PerUserIRM", "Policy",
    "RandomizedBasePolicy", "ResourceLimitError", "SimPlan", "SolveReport", "StateSpace",
    "StructureReport", "UnichainError", "build_kernel", "decompose", "dominance_closure",
    "dump_config", "enumerate_states", "estimate_costs", "exhaustive_policy_search",
    "feasible_actions", "greedy_action", "greedy_cost", "load_config", "next_state",
    "parse_config", "pia", "policy_evaluation", "policy_improvement", "run_episode", "rvia",
    "sample_base_action", "spia", "ssa", "stage_cost", "suboptimal_policy", "verify_structure",
    "zipf_popularity",
]
