"""Network model: topology, caching, actions, costs and request-queue dynamics.

BS index 0 is the MBS, 1..N are the SBSs. Contents are numbered 1..M and the
value 0 in an action slot means "idle". A queue is identified by the pair
``(n, m)`` with ``m`` cached at BS ``n``; queues are always kept in sorted
order, which is also the coordinate order of a queue-state vector.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence, Union

import numpy as np
from scipy import stats

Queue = tuple[int, int]
Action = tuple[int, ...]

DEFAULT_SUPPORT_LIMIT = 10**6
PMF_TOL = 1e-12


class ModelError(ValueError):
    """Invalid network configuration or arrival model."""


class ResourceLimitError(RuntimeError):
    """An enumeration would exceed its configured size limit."""


@dataclass(frozen=True)
class NetworkConfig:
    """A full problem instance.

    ``users_per_region[n]`` is |K_n|, ``cache[n]`` is M_n (``cache[0]`` must
    hold every content), ``power[(n, m)]`` is p(n, m) and ``queue_caps[(n, m)]``
    is the counter limit N_{n,m}.
    """

    num_sbs: int
    users_per_region: tuple[int, ...]
    contents: int
    cache: tuple[frozenset[int], ...]
    power: Mapping[Queue, float]
    queue_caps: Mapping[Queue, int]
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "users_per_region", tuple(int(k) for k in self.users_per_region))
        object.__setattr__(self, "cache", tuple(frozenset(int(m) for m in c) for c in self.cache))
        object.__setattr__(self, "power", {(int(n), int(m)): float(p) for (n, m), p in self.power.items()})
        object.__setattr__(self, "queue_caps", {(int(n), int(m)): int(c) for (n, m), c in self.queue_caps.items()})
        object.__setattr__(self, "weight", float(self.weight))
        self._validate()

    def _validate(self):
        N, M = self.num_sbs, self.contents
        if N < 0:
            raise ModelError("num_sbs must be >= 0")
        if M < 1:
            raise ModelError("contents must be >= 1")
        if len(self.users_per_region) != N + 1:
            raise ModelError(f"users_per_region needs {N + 1} entries, got {len(self.users_per_region)}")
        if any(k < 0 for k in self.users_per_region):
            raise ModelError("user counts must be nonnegative")
        if len(self.cache) != N + 1:
            raise ModelError(f"cache needs {N + 1} entries (MBS first), got {len(self.cache)}")
        everything = frozenset(range(1, M + 1))
        if self.cache[0] != everything:
            raise ModelError("the MBS must cache every content")
        for n, c in enumerate(self.cache):
            if not c <= everything:
                raise ModelError(f"cache of BS {n} holds unknown contents {sorted(c - everything)}")
        if self.weight < 0 or not math.isfinite(self.weight):
            raise ModelError("weight must be finite and >= 0")
        expected = set(self.queues)
        for (n, m), p in self.power.items():
            if m == 0:
                if p != 0.0:
                    raise ModelError(f"p({n},0) must be 0 (idle draws no power), got {p}")
                continue
            if (n, m) not in expected:
                raise ModelError(f"power given for ({n},{m}) but BS {n} does not cache content {m}")
            if p < 0 or not math.isfinite(p):
                raise ModelError(f"power p({n},{m}) must be finite and >= 0")
        missing = expected - set(self.power)
        if missing:
            raise ModelError(f"missing power for queues {sorted(missing)}")
        if set(self.queue_caps) != expected:
            extra = set(self.queue_caps) - expected
            missing = expected - set(self.queue_caps)
            raise ModelError(f"queue caps mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for q, c in self.queue_caps.items():
            if c < 1:
                raise ModelError(f"queue cap for {q} must be a positive integer")

    @classmethod
    def uniform(cls, users_per_region, contents, sbs_cache, *, mbs_power, sbs_power,
                cap, weight=1.0):
        """Instance with one power level per tier and a common queue cap."""
        N = len(users_per_region) - 1
        if len(sbs_cache) != N:
            raise ModelError(f"sbs_cache needs {N} entries")
        cache = (frozenset(range(1, contents + 1)),) + tuple(frozenset(c) for c in sbs_cache)
        power, caps = {}, {}
        for n, c in enumerate(cache):
            for m in c:
                power[(n, m)] = mbs_power if n == 0 else sbs_power
                caps[(n, m)] = cap
        return cls(N, tuple(users_per_region), contents, cache, power, caps, weight)

    def with_weight(self, weight) -> "NetworkConfig":
        return NetworkConfig(self.num_sbs, self.users_per_region, self.contents, self.cache,
                             self.power, self.queue_caps, weight)

    # -- derived structure -------------------------------------------------

    @cached_property
    def queues(self) -> list[Queue]:
        return sorted((n, m) for n, c in enumerate(self.cache) for m in c)

    @property
    def num_queues(self) -> int:
        return len(self.queues)

    @cached_property
    def queue_index(self) -> dict[Queue, int]:
        return {q: i for i, q in enumerate(self.queues)}

    @cached_property
    def caps(self) -> np.ndarray:
        return np.array([self.queue_caps[q] for q in self.queues], dtype=np.int64)

    @property
    def total_users(self) -> int:
        return sum(self.users_per_region)

    def caching_sbs(self, m: int) -> list[int]:
        """N_m: SBSs (n >= 1) that cache content m."""
        return [n for n in range(1, self.num_sbs + 1) if m in self.cache[n]]

    @cached_property
    def actions(self) -> list[Action]:
        return feasible_actions(self)

    @cached_property
    def action_index(self) -> dict[Action, int]:
        return {u: i for i, u in enumerate(self.actions)}

    @cached_property
    def action_power(self) -> np.ndarray:
        return np.array([power_cost(self, u) for u in self.actions])

    @cached_property
    def served(self) -> np.ndarray:
        """``served[a, i]`` is True when action a clears queue i."""
        out = np.zeros((len(self.actions), self.num_queues), dtype=bool)
        for a, u in enumerate(self.actions):
            for i, (n, m) in enumerate(self.queues):
                out[a, i] = u[0] == m or (n > 0 and u[n] == m)
        return out

    @cached_property
    def scheduled(self) -> np.ndarray:
        """``scheduled[a, i]`` is True when BS n itself transmits m, i.e. u_n = m for queue (n, m)."""
        out = np.zeros((len(self.actions), self.num_queues), dtype=bool)
        for a, u in enumerate(self.actions):
            for i, (n, m) in enumerate(self.queues):
                out[a, i] = u[n] == m
        return out

    @cached_property
    def aggregation(self) -> np.ndarray:
        """0/1 matrix mapping a flattened arrival matrix A[n, m-1] onto queue arrivals."""
        M = self.contents
        G = np.zeros((self.num_queues, (self.num_sbs + 1) * M), dtype=np.int64)
        for i, (n, m) in enumerate(self.queues):
            if n > 0:
                G[i, n * M + m - 1] = 1
            else:
                for k in self._mbs_sources(m):
                    G[i, k * M + m - 1] = 1
        return G

    def _mbs_sources(self, m):
        """Regions whose requests for m land in MBS queue (0, m)."""
        return [0] + [n for n in range(1, self.num_sbs + 1) if m not in self.cache[n]]

    # -- state helpers -----------------------------------------------------

    def state_vector(self, state) -> np.ndarray:
        if isinstance(state, Mapping):
            return np.array([int(state.get(q, 0)) for q in self.queues], dtype=np.int64)
        vec = np.asarray(state, dtype=np.int64)
        if vec.shape != (self.num_queues,):
            raise ModelError(f"state needs {self.num_queues} entries, got shape {vec.shape}")
        return vec

    def state_dict(self, state) -> dict[Queue, int]:
        return dict(zip(self.queues, (int(x) for x in self.state_vector(state))))


QueueState = Union[Mapping[Queue, int], Sequence[int], np.ndarray]


# ---------------------------------------------------------------------------
# arrival models


@dataclass(frozen=True)
class PerUserIRM:
    """Each user requests exactly one content per slot, drawn from ``popularity``."""

    popularity: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.popularity)
        object.__setattr__(self, "popularity", p)
        if not p or any(x < 0 for x in p):
            raise ModelError("popularity must be a nonempty vector of nonnegative probabilities")
        if abs(math.fsum(p) - 1.0) > PMF_TOL:
            raise ModelError(f"popularity sums to {math.fsum(p)!r}, not 1")


@dataclass(frozen=True)
class IndependentPmf:
    """Mutually independent arrival counts; ``pmfs[(n, m)][k] = Pr[A_{n,m} = k]``.

    Entries not listed never see arrivals.
    """

    pmfs: Mapping[Queue, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (n, m), pmf in self.pmfs.items():
            pmf = tuple(float(x) for x in pmf)
            if not pmf or any(x < 0 for x in pmf):
                raise ModelError(f"pmf for ({n},{m}) must be nonempty and nonnegative")
            if abs(math.fsum(pmf) - 1.0) > PMF_TOL:
                raise ModelError(f"pmf for ({n},{m}) sums to {math.fsum(pmf)!r}, not 1")
            clean[(int(n), int(m))] = pmf
        object.__setattr__(self, "pmfs", clean)


ArrivalModel = Union[PerUserIRM, IndependentPmf]


def check_model(config: NetworkConfig, model: ArrivalModel):
    if isinstance(model, PerUserIRM):
        if len(model.popularity) != config.contents:
            raise ModelError(f"popularity has {len(model.popularity)} entries for {config.contents} contents")
    elif isinstance(model, IndependentPmf):
        for n, m in model.pmfs:
            if not (0 <= n <= config.num_sbs and 1 <= m <= config.contents):
                raise ModelError(f"arrival pmf given for nonexistent entry ({n},{m})")
    else:
        raise ModelError(f"unknown arrival model {type(model).__name__}")


def zipf_popularity(M: int, alpha: float) -> np.ndarray:
    """Normalized Zipf pmf P_m proportional to m**-alpha, m = 1..M."""
    if M < 1:
        raise ValueError("need at least one content")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    w = np.arange(1, M + 1, dtype=float) ** (-float(alpha))
    return w / w.sum()


def request_popularity(config: NetworkConfig, model: ArrivalModel) -> list[float]:
    """Relative request rate of each content.

    The per-user pmf under IRM arrivals; under independent arrivals the mean
    counts summed over regions and normalized (uniform if nothing arrives).
    """
    if isinstance(model, PerUserIRM):
        return [float(p) for p in model.popularity]
    rates = [0.0] * config.contents
    for (n, m), pmf in model.pmfs.items():
        rates[m - 1] += sum(k * p for k, p in enumerate(pmf))
    total = math.fsum(rates)
    if total == 0:
        return [1.0 / config.contents] * config.contents
    return [r / total for r in rates]


# ---------------------------------------------------------------------------
# actions and costs


def feasible_actions(config: NetworkConfig) -> list[Action]:
    """All actions satisfying the multiple access constraint, lexicographic with u_0 first."""
    N = config.num_sbs
    sbs_joint = itertools.product(*[[0] + sorted(config.cache[n]) for n in range(1, N + 1)])
    actions = [(0,) + tuple(rest) for rest in sbs_joint]
    actions += [(m,) + (0,) * N for m in sorted(config.cache[0])]
    return sorted(actions)


def is_feasible(config: NetworkConfig, u: Action) -> bool:
    if len(u) != config.num_sbs + 1:
        return False
    if any(x != 0 and x not in config.cache[n] for n, x in enumerate(u)):
        return False
    return u[0] * sum(u[1:]) == 0


def power_cost(config: NetworkConfig, u: Action) -> float:
    return sum(config.power[(n, m)] for n, m in enumerate(u) if m != 0)


def delay_cost(state) -> float:
    if isinstance(state, Mapping):
        return float(sum(state.values()))
    return float(np.sum(state))


def stage_cost(config: NetworkConfig, state, u: Action) -> float:
    return delay_cost(state) + config.weight * power_cost(config, u)


# ---------------------------------------------------------------------------
# dynamics


def aggregate_mbs_arrivals(config: NetworkConfig, a) -> dict[int, int]:
    """Total new requests landing in each MBS queue (0, m)."""
    a = np.asarray(a)
    return {m: int(sum(a[n, m - 1] for n in config._mbs_sources(m)))
            for m in range(1, config.contents + 1)}


def next_state(config: NetworkConfig, state, u: Action, a) -> tuple[int, ...]:
    """One slot of the queue recursion; ``a`` is the (N+1) x M arrival matrix."""
    q = config.state_vector(state)
    a = np.asarray(a)
    mbs = aggregate_mbs_arrivals(config, a)
    out = []
    for i, (n, m) in enumerate(config.queues):
        if n == 0:
            kept = q[i] if u[0] != m else 0
            out.append(min(kept + mbs[m], config.caps[i]))
        else:
            kept = q[i] if (u[0] != m and u[n] != m) else 0
            out.append(min(kept + a[n, m - 1], config.caps[i]))
    return tuple(int(x) for x in out)


# ---------------------------------------------------------------------------
# arrival distributions


def _compositions(total: int, parts: int):
    for combo in itertools.combinations_with_replacement(range(parts), total):
        counts = [0] * parts
        for c in combo:
            counts[c] += 1
        yield tuple(counts)


def _multinomial(k: int, popularity) -> list[tuple[tuple[int, ...], float]]:
    out = []
    for counts in _compositions(k, len(popularity)):
        coef = math.factorial(k)
        prob = 1.0
        for c, p in zip(counts, popularity):
            coef //= math.factorial(c)
            prob *= p ** c
        prob *= coef
        if prob > 0:
            out.append((counts, prob))
    return out


def enumerate_joint_arrivals(config: NetworkConfig, model: ArrivalModel,
                             limit: int = DEFAULT_SUPPORT_LIMIT):
    """Full joint support of the arrival matrix.

    Returns ``(matrices, probs)`` with ``matrices`` of shape (S, N+1, M).
    Outcomes of probability zero are dropped.
    """
    check_model(config, model)
    N, M = config.num_sbs, config.contents
    if isinstance(model, PerUserIRM):
        sizes = [math.comb(k + M - 1, M - 1) for k in config.users_per_region]
        _check_size(sizes, limit)
        factors = []
        for n, k in enumerate(config.users_per_region):
            rows = []
            for counts, prob in _multinomial(k, model.popularity):
                mat = np.zeros((N + 1, M), dtype=np.int64)
                mat[n] = counts
                rows.append((mat, prob))
            factors.append(rows)
    else:
        entries = sorted(model.pmfs)
        _check_size([len(model.pmfs[e]) for e in entries], limit)
        factors = []
        for n, m in entries:
            rows = []
            for k, prob in enumerate(model.pmfs[(n, m)]):
                if prob > 0:
                    mat = np.zeros((N + 1, M), dtype=np.int64)
                    mat[n, m - 1] = k
                    rows.append((mat, prob))
            factors.append(rows)

    mats = [np.zeros((N + 1, M), dtype=np.int64)]
    probs = [1.0]
    for rows in factors:
        mats = [a + b for a in mats for b, _ in rows]
        probs = [p * q for p in probs for _, q in rows]
    return np.stack(mats), np.array(probs)


def _check_size(sizes, limit):
    total = 1
    for s in sizes:
        total *= s
    if total > limit:
        raise ResourceLimitError(f"joint arrival support has {total} outcomes, limit is {limit}")


def marginal_arrival_pmf(config: NetworkConfig, model: ArrivalModel, queue: Queue) -> np.ndarray:
    """Pmf of the arrivals entering one queue (aggregated for MBS queues)."""
    check_model(config, model)
    n, m = queue
    if queue not in config.queue_index:
        raise ModelError(f"{queue} is not a queue of this network")
    sources = [n] if n > 0 else config._mbs_sources(m)
    pmf = np.array([1.0])
    for k in sources:
        pmf = np.convolve(pmf, _entry_pmf(config, model, k, m))
    return pmf


def _entry_pmf(config, model, n, m) -> np.ndarray:
    if isinstance(model, PerUserIRM):
        k = config.users_per_region[n]
        return stats.binom.pmf(np.arange(k + 1), k, model.popularity[m - 1])
    return np.array(model.pmfs.get((n, m), (1.0,)), dtype=float)


def queue_arrival_support(config: NetworkConfig, model: ArrivalModel,
                          limit: int = DEFAULT_SUPPORT_LIMIT):
    """Joint support of per-queue arrivals, clipped at the caps and merged.

    Clipping is harmless because every queue is capped at N after adding
    arrivals. Returns ``(arrivals, probs)`` with ``arrivals`` of shape (S, Q).
    """
    mats, probs = enumerate_joint_arrivals(config, model, limit)
    per_queue = mats.reshape(len(mats), -1) @ config.aggregation.T
    per_queue = np.minimum(per_queue, config.caps)
    uniq, inverse = np.unique(per_queue, axis=0, return_inverse=True)
    merged = np.bincount(inverse.ravel(), weights=probs, minlength=len(uniq))
    return uniq, merged
