"""Monte Carlo estimates of average delay, power and network cost.

Replications advance in lock step as rows of one state array, so a policy is
queried once per slot for all replications. Every replication owns two
generators derived from ``(seed, replication)``: one for arrivals and one
for randomized actions. Arrival paths therefore do not depend on the policy
being simulated (common random numbers).
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Protocol

import numpy as np

from .mdp import Policy
from .model import ArrivalModel, IndependentPmf, NetworkConfig, PerUserIRM, check_model
from .subopt import RandomizedBasePolicy

ARRIVAL_CHUNK = 4096
Z95 = 1.96


class SimulationError(RuntimeError):
    """The simulated policy cannot act in a visited state."""


@dataclass(frozen=True)
class SimPlan:
    horizon: int = 100_000
    replications: int = 20
    warmup: int = 1_000
    seed: int = 0
    initial_state: tuple[int, ...] | None = None

    def __post_init__(self):
        if not (self.horizon > self.warmup >= 0):
            raise ValueError(f"need horizon > warmup >= 0, got horizon={self.horizon}, warmup={self.warmup}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.initial_state is not None:
            object.__setattr__(self, "initial_state", tuple(int(x) for x in self.initial_state))

    def streams(self, replication: int) -> tuple[np.random.Generator, np.random.Generator]:
        """(arrival generator, action generator) of one replication."""
        arrivals, actions = np.random.SeedSequence([self.seed, replication]).spawn(2)
        return np.random.default_rng(arrivals), np.random.default_rng(actions)


@dataclass
class Trace:
    """Per-slot costs after warmup; one row per replication."""

    delay: np.ndarray
    power: np.ndarray
    weight: float

    @property
    def network(self) -> np.ndarray:
        return self.delay + self.weight * self.power


@dataclass(frozen=True)
class CostEstimate:
    mean_delay: float
    mean_power: float
    mean_network: float
    ci95_delay: float
    ci95_power: float
    ci95_network: float
    per_user_network: float
    replications: int

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# arrivals


def sample_arrivals(model: ArrivalModel, config: NetworkConfig, rng: np.random.Generator,
                    size: int | None = None) -> np.ndarray:
    """One slot's (N+1) x M arrival matrix, or ``size`` of them stacked."""
    shape = () if size is None else (size,)
    out = np.zeros(shape + (config.num_sbs + 1, config.contents), dtype=np.int64)
    if isinstance(model, PerUserIRM):
        for n, k in enumerate(config.users_per_region):
            if k:
                out[..., n, :] = rng.multinomial(k, model.popularity, size=size)
    elif isinstance(model, IndependentPmf):
        for (n, m), pmf in sorted(model.pmfs.items()):
            out[..., n, m - 1] = rng.choice(len(pmf), size=size, p=pmf)
    else:
        raise TypeError(f"unsupported arrival model {type(model).__name__}")
    return out


def _queue_arrivals(model, config, rng, size):
    mats = sample_arrivals(model, config, rng, size)
    return mats.reshape(size, -1) @ config.aggregation.T


# ---------------------------------------------------------------------------
# controllers


class Controller(Protocol):
    def reset(self, rngs: list[np.random.Generator]) -> None: ...
    def act(self, states: np.ndarray) -> np.ndarray: ...


class TableController:
    """Look up a tabulated deterministic policy."""

    def __init__(self, config: NetworkConfig, policy: Policy):
        if list(policy.actions) != list(config.actions):
            raise ValueError("policy was built for a different action set")
        self.policy = policy
        self.strides = policy.space.strides
        self.caps = policy.space.caps
        self.table = np.asarray(policy.index)

    def reset(self, rngs):
        pass

    def act(self, states):
        outside = np.any(states > self.caps, axis=1)
        if outside.any():
            bad = tuple(int(x) for x in states[np.argmax(outside)])
            raise SimulationError(f"state {bad} lies outside the policy's state space")
        a = self.table[states @ self.strides]
        if (a < 0).any():
            bad = tuple(int(x) for x in states[np.argmax(a < 0)])
            raise SimulationError(f"policy has no action for state {bad}")
        return a


class RuleController:
    """Wrap any object with an ``actions(states) -> action indices`` method."""

    def __init__(self, rule):
        self.rule = rule

    def reset(self, rngs):
        pass

    def act(self, states):
        return self.rule.actions(states)


class BaseSampler:
    """Randomized base policy; actions are drawn in blocks from each replication's action stream."""

    def __init__(self, config: NetworkConfig, base: RandomizedBasePolicy):
        self.dist = base.action_distribution(config)
        self.dist = self.dist / self.dist.sum()
        self._rngs, self._block, self._pos = [], None, ARRIVAL_CHUNK

    def reset(self, rngs):
        self._rngs = rngs
        self._pos = ARRIVAL_CHUNK

    def act(self, states):
        if self._pos == ARRIVAL_CHUNK:
            self._block = np.stack([rng.choice(len(self.dist), size=ARRIVAL_CHUNK, p=self.dist)
                                    for rng in self._rngs])
            self._pos = 0
        a = self._block[:, self._pos]
        self._pos += 1
        return a


def as_controller(config: NetworkConfig, policy) -> Controller:
    if isinstance(policy, Policy):
        return TableController(config, policy)
    if isinstance(policy, RandomizedBasePolicy):
        return BaseSampler(config, policy)
    if hasattr(policy, "act") and hasattr(policy, "reset"):
        return policy
    if hasattr(policy, "actions") and callable(policy.actions):
        return RuleController(policy)
    raise TypeError(f"cannot simulate a {type(policy).__name__}")


# ---------------------------------------------------------------------------
# simulation


def _simulate(config: NetworkConfig, model: ArrivalModel, policy, plan: SimPlan,
              replications: list[int]) -> Trace:
    check_model(config, model)
    controller = as_controller(config, policy)
    R, nq = len(replications), config.num_queues
    streams = [plan.streams(r) for r in replications]
    arrival_rngs = [s[0] for s in streams]
    controller.reset([s[1] for s in streams])

    caps = config.caps
    if plan.initial_state is None:
        Q = np.zeros((R, nq), dtype=np.int64)
    else:
        init = config.state_vector(plan.initial_state)
        if np.any(init < 0) or np.any(init > caps):
            raise ValueError(f"initial state {plan.initial_state} is outside the queue caps")
        Q = np.tile(init, (R, 1))
    served = config.served
    power_of = config.action_power

    kept = plan.horizon - plan.warmup
    delay = np.empty((R, kept), dtype=np.int64)
    power = np.empty((R, kept))
    arrivals = None
    for t in range(plan.horizon):
        j = t % ARRIVAL_CHUNK
        if j == 0:
            arrivals = np.stack([_queue_arrivals(model, config, rng, ARRIVAL_CHUNK) for rng in arrival_rngs])
        a = controller.act(Q)
        if t >= plan.warmup:
            delay[:, t - plan.warmup] = Q.sum(axis=1)
            power[:, t - plan.warmup] = power_of[a]
        Q = np.minimum(np.where(served[a], 0, Q) + arrivals[:, j], caps)
    return Trace(delay, power, config.weight)


def run_episode(config: NetworkConfig, model: ArrivalModel, policy, plan: SimPlan,
                replication: int = 0) -> Trace:
    """Single-replication per-slot trace; rows of the returned arrays have length horizon - warmup."""
    return _simulate(config, model, policy, plan, [replication])


def summarize(trace: Trace, config: NetworkConfig) -> CostEstimate:
    d = trace.delay.mean(axis=1)
    p = trace.power.mean(axis=1)
    g = d + trace.weight * p
    R = len(d)

    def ci(x):
        return Z95 * float(np.std(x, ddof=1)) / math.sqrt(R) if R > 1 else math.nan

    mean_g = float(g.mean())
    users = config.total_users
    return CostEstimate(float(d.mean()), float(p.mean()), mean_g, ci(d), ci(p), ci(g),
                        mean_g / users if users else math.nan, R)


def estimate_costs(config: NetworkConfig, model: ArrivalModel, policy, plan: SimPlan) -> CostEstimate:
    trace = _simulate(config, model, policy, plan, list(range(plan.replications)))
    return summarize(trace, config)


def write_trace(path, trace: Trace, replication: int = 0):
    """Write one replication's trace as ``slot,delay,power`` rows."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["slot", "delay", "power"])
        for t, (d, p) in enumerate(zip(trace.delay[replication], trace.power[replication])):
            out.writerow([t, int(d), repr(float(p))])
