"""Low-complexity scheduling through per-queue value decomposition.

Under a state-independent randomized base policy every request queue evolves
as its own Markov chain: it is cleared with a fixed probability s and
otherwise accumulates arrivals up to its cap. Its average cost and relative
value are cheap to solve, and the sum over queues is exactly the base
policy's value function. One improvement step against that sum gives a
deterministic policy; SSA computes the same policy with the persistence
shortcut used by structured policy iteration.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .mdp import (
    Kernel,
    Policy,
    StateSpace,
    UnichainError,
    build_kernel,
    canonical_argmin,
    enumerate_states,
    structured_argmin,
)
from .model import (
    ArrivalModel,
    ModelError,
    NetworkConfig,
    Queue,
    check_model,
    marginal_arrival_pmf,
)

PROB_TOL = 1e-12


# ---------------------------------------------------------------------------
# randomized base policy


@dataclass(frozen=True)
class RandomizedBasePolicy:
    """State-independent randomized scheduling.

    Each slot either the MBS operates (probability ``p_mbs``) or all SBSs
    operate. An operating BS n stays idle with probability ``p_idle[n]`` and
    otherwise transmits cached content m with probability ``schedule[n][m]``.
    An SBS with an empty cache is always idle.
    """

    p_mbs: float
    p_idle: tuple[float, ...]
    schedule: tuple[dict[int, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "p_mbs", float(self.p_mbs))
        object.__setattr__(self, "p_idle", tuple(float(p) for p in self.p_idle))
        object.__setattr__(self, "schedule",
                           tuple({int(m): float(p) for m, p in s.items()} for s in self.schedule))
        if not 0.0 <= self.p_mbs <= 1.0:
            raise ModelError(f"p_mbs must lie in [0, 1], got {self.p_mbs}")
        if len(self.p_idle) != len(self.schedule):
            raise ModelError("p_idle and schedule must cover the same base stations")
        for n, (idle, sched) in enumerate(zip(self.p_idle, self.schedule)):
            if not 0.0 <= idle <= 1.0 or any(p < 0 for p in sched.values()):
                raise ModelError(f"BS {n}: probabilities must lie in [0, 1]")
            total = math.fsum(sched.values()) + idle
            if abs(total - 1.0) > PROB_TOL:
                raise ModelError(f"BS {n}: idle and content probabilities sum to {total!r}, not 1")

    @classmethod
    def from_popularity(cls, config: NetworkConfig, popularity, p_mbs: float = 0.5,
                        p_idle=0.3) -> "RandomizedBasePolicy":
        """Schedule cached contents in proportion to their popularity.

        ``P^n_m = (1 - p_idle[n]) P_m / sum_{j in M_n} P_j``. ``p_idle`` is a
        scalar or one value per BS.
        """
        P = np.asarray(popularity, dtype=float)
        if len(P) != config.contents:
            raise ModelError(f"popularity has {len(P)} entries for {config.contents} contents")
        idle = [float(p_idle)] * (config.num_sbs + 1) if np.isscalar(p_idle) else [float(p) for p in p_idle]
        if len(idle) != config.num_sbs + 1:
            raise ModelError(f"p_idle needs {config.num_sbs + 1} entries")
        schedule = []
        for n, cache in enumerate(config.cache):
            contents = sorted(cache)
            if not contents:
                idle[n] = 1.0
                schedule.append({})
                continue
            mass = math.fsum(P[m - 1] for m in contents)
            weights = ({m: P[m - 1] / mass for m in contents} if mass > 0
                       else {m: 1.0 / len(contents) for m in contents})
            schedule.append({m: (1.0 - idle[n]) * w for m, w in weights.items()})
        return cls(p_mbs, tuple(idle), tuple(schedule))

    @property
    def num_sbs(self) -> int:
        return len(self.schedule) - 1

    def prob(self, n: int, m: int) -> float:
        """P^n_m, the chance an operating BS n transmits content m."""
        return self.schedule[n].get(m, 0.0)

    def transmit_probability(self, n: int, m: int) -> float:
        """Unconditional Pr[u_n = m]."""
        tier = self.p_mbs if n == 0 else 1.0 - self.p_mbs
        return tier * self.prob(n, m)

    def action_distribution(self, config: NetworkConfig) -> np.ndarray:
        """Probability of every action of ``config`` (canonical order)."""
        self._check(config)
        out = np.zeros(len(config.actions))
        for a, u in enumerate(config.actions):
            if u[0] != 0:
                out[a] = self.p_mbs * self.prob(0, u[0])
                continue
            sbs = 1.0
            for n in range(1, config.num_sbs + 1):
                sbs *= self.p_idle[n] if u[n] == 0 else self.prob(n, u[n])
            out[a] = (1.0 - self.p_mbs) * sbs
            if not any(u):
                out[a] += self.p_mbs * self.p_idle[0]
        return out

    def _check(self, config: NetworkConfig):
        if self.num_sbs != config.num_sbs:
            raise ModelError(f"base policy covers {self.num_sbs} SBSs, network has {config.num_sbs}")
        for n, sched in enumerate(self.schedule):
            extra = set(sched) - set(config.cache[n])
            if extra:
                raise ModelError(f"base policy schedules uncached contents {sorted(extra)} at BS {n}")


def serve_probability(base: RandomizedBasePolicy, queue: Queue) -> float:
    """Probability that the base policy clears queue (n, m) in a slot."""
    n, m = queue
    s = base.p_mbs * base.prob(0, m)
    if n > 0:
        s += (1.0 - base.p_mbs) * base.prob(n, m)
    return s


# ---------------------------------------------------------------------------
# per-queue chains


@dataclass
class PerQueueValue:
    queue: Queue
    theta: float
    v: np.ndarray  # v[q] for q = 0..cap, v[0] = 0

    def to_dict(self) -> dict:
        return {"queue": list(self.queue), "theta": self.theta, "v": [float(x) for x in self.v]}


def _capped_pmf(pmf: np.ndarray, cap: int) -> np.ndarray:
    out = np.zeros(cap + 1)
    k = min(len(pmf), cap + 1)
    out[:k] = pmf[:k]
    out[cap] += pmf[cap + 1:].sum()
    return out


def per_queue_chain(config: NetworkConfig, model: ArrivalModel, base: RandomizedBasePolicy,
                    queue: Queue) -> np.ndarray:
    """Transition matrix of one queue under the base policy."""
    return _chain(marginal_arrival_pmf(config, model, queue), config.queue_caps[queue],
                  serve_probability(base, queue))


def _chain(pmf: np.ndarray, cap: int, s: float) -> np.ndarray:
    size = cap + 1
    P = np.zeros((size, size))
    cleared = _capped_pmf(pmf, cap)
    for q in range(size):
        kept = _capped_pmf(np.concatenate([np.zeros(q), pmf]), cap)
        P[q] = s * cleared + (1.0 - s) * kept
    return P


def solve_per_queue_value(chain: np.ndarray, queue: Queue, config: NetworkConfig,
                          base: RandomizedBasePolicy) -> PerQueueValue:
    """Solve theta + v(q) = q + w Pr[u_n=m] p(n,m) + sum_q' P[q,q'] v(q') with v(0) = 0."""
    n, m = queue
    size = chain.shape[0]
    cost = np.arange(size, dtype=float) + config.weight * base.transmit_probability(n, m) * config.power[queue]
    A = np.eye(size) - chain
    A[:, 0] = 1.0  # v(0) = 0, its column carries theta
    try:
        x = np.linalg.solve(A, cost)
    except np.linalg.LinAlgError as exc:
        raise UnichainError(f"queue {queue}: base-policy chain is not unichain") from exc
    theta = float(x[0])
    v = x.copy()
    v[0] = 0.0
    resid = np.max(np.abs(theta + v - cost - chain @ v))
    if not np.all(np.isfinite(x)) or resid > 1e-8 * max(1.0, np.max(np.abs(v)), np.max(cost)):
        raise UnichainError(f"queue {queue}: base-policy chain is not unichain (residual {resid:.2e})")
    return PerQueueValue(queue, theta, v)


def decompose(config: NetworkConfig, model: ArrivalModel,
              base: RandomizedBasePolicy) -> dict[Queue, PerQueueValue]:
    """Per-queue average costs and value functions of the base policy."""
    check_model(config, model)
    base._check(config)
    return {q: solve_per_queue_value(per_queue_chain(config, model, base, q), q, config, base)
            for q in config.queues}


def decomposed_value(config: NetworkConfig, values: dict[Queue, PerQueueValue],
                     space: StateSpace | None = None):
    """(sum of theta_{n,m}, V-hat over the enumerated state space)."""
    space = space or enumerate_states(config)
    V = np.zeros(space.size)
    for c, q in enumerate(config.queues):
        V += values[q].v[space.states[:, c]]
    return math.fsum(values[q].theta for q in config.queues), V


def base_policy_residual(config: NetworkConfig, model: ArrivalModel, base: RandomizedBasePolicy,
                         values: dict[Queue, PerQueueValue], *, kernel: Kernel | None = None) -> np.ndarray:
    """Per-state residual of the full base-policy fixed-point equation for the summed values."""
    k = kernel or build_kernel(config, model)
    theta, V = decomposed_value(config, values, k.space)
    expected = k.q_values(V) @ base.action_distribution(config)
    return theta + V - expected


# ---------------------------------------------------------------------------
# the improved deterministic policy


class DecomposedCosts:
    """Action costs g(Q,u) + sum_{n,m} E[V-hat_{n,m}(Q'_{n,m})] for batches of states."""

    def __init__(self, config: NetworkConfig, model: ArrivalModel, values: dict[Queue, PerQueueValue]):
        self.config = config
        self.values = values
        served = config.served.astype(float)
        self._served_t = served.T  # (nq, U)
        self._power = config.weight * config.action_power
        self._kept, self._cleared = [], []
        for q in config.queues:
            cap = config.queue_caps[q]
            v = values[q].v
            pmf = marginal_arrival_pmf(config, model, q)
            # E[v(min(q + A, cap))] for every q, and E[v(min(A, cap))]
            kept = np.array([_capped_pmf(np.concatenate([np.zeros(x), pmf]), cap) @ v
                             for x in range(cap + 1)])
            self._kept.append(kept)
            self._cleared.append(float(_capped_pmf(pmf, cap) @ v))
        self._cleared = np.array(self._cleared)

    def __call__(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        kept = np.column_stack([t[states[:, c]] for c, t in enumerate(self._kept)])
        gain = (self._cleared[None, :] - kept) @ self._served_t
        base = states.sum(axis=1) + kept.sum(axis=1)
        return base[:, None] + self._power[None, :] + gain

    def actions(self, states: np.ndarray) -> np.ndarray:
        """Canonical argmin action index per state."""
        return canonical_argmin(self(states))


def suboptimal_policy(config: NetworkConfig, model: ArrivalModel,
                      values: dict[Queue, PerQueueValue], *,
                      space: StateSpace | None = None) -> Policy:
    """One improvement step against the decomposed value, every state minimized."""
    space = space or enumerate_states(config)
    costs = DecomposedCosts(config, model, values)
    return Policy(space, list(config.actions), costs.actions(space.states))


@dataclass
class SSAResult:
    policy: Policy
    values: dict[Queue, PerQueueValue]
    skips: int
    decisions: int
    value_time: float = 0.0
    improvement_time: float = 0.0
    theta_base: float = field(init=False)

    def __post_init__(self):
        self.theta_base = math.fsum(v.theta for v in self.values.values())

    @property
    def minimizations(self) -> int:
        return self.decisions - self.skips

    def to_dict(self) -> dict:
        return {
            "theta_base": self.theta_base,
            "skips": self.skips,
            "decisions": self.decisions,
            "value_time": self.value_time,
            "improvement_time": self.improvement_time,
            "per_queue": export_values(self.values),
        }


def ssa(config: NetworkConfig, model: ArrivalModel, base: RandomizedBasePolicy, *,
        space: StateSpace | None = None) -> SSAResult:
    """Structured suboptimal algorithm.

    Solves the per-queue values, then visits states in lexicographic order;
    a state with exactly one action inherited by persistence takes it
    without minimizing.
    """
    t0 = time.perf_counter()
    values = decompose(config, model, base)
    t1 = time.perf_counter()
    space = space or enumerate_states(config)
    costs = DecomposedCosts(config, model, values)
    table, skips = structured_argmin(space, config, lambda i: costs(space.states[i])[0])
    t2 = time.perf_counter()
    policy = Policy(space, list(config.actions), table)
    return SSAResult(policy, values, skips, space.size, t1 - t0, t2 - t1)


def export_values(values: dict[Queue, PerQueueValue]) -> list[dict]:
    return [values[q].to_dict() for q in sorted(values)]
