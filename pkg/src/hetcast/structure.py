"""Empirical certificates for the structure of solved policies.

Checks are scans over unit-increment neighbour pairs of the enumerated state
space: value monotonicity, monotonicity of action differences
Delta_{u,v}(Q) = J(Q,u) - J(Q,v), and the threshold shape of a policy
(persistence of scheduled actions, the idle region, and MBS thresholds that
shrink as the SBS copies of the same content grow).

The idle-region check has two parts. Membership: every state with
Q_{n,m} <= phi+_0(Q_{-n,-m}) along all coordinates is idle. Closure: if a
state is idle, no state below it along (n, m) may serve (n, m), because idle
dominates every such action there. A state below an idle one may still pick
an action that serves *other* queues (lowering Q_{n,m} changes nothing the
argument controls); those cases are listed as ``idle_closure_notes`` rather
than violations.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mdp import EPS, Kernel, Policy, StateSpace, build_kernel, state_action_cost
from .model import Action, ArrivalModel, NetworkConfig


class ClosureConflict(ValueError):
    """Two inherited actions disagree on the same state."""


@dataclass
class CheckResult:
    ok: bool = True
    worst: float = 0.0
    violations: list = field(default_factory=list)

    def add(self, item, magnitude=0.0):
        self.ok = False
        self.worst = max(self.worst, float(magnitude))
        self.violations.append(item)

    def to_dict(self):
        return {"ok": self.ok, "worst": self.worst, "violations": [_jsonable(v) for v in self.violations]}


@dataclass
class StructureReport:
    monotone_value: CheckResult
    delta_monotone: CheckResult
    persistence: CheckResult
    idle_region: CheckResult
    mbs_threshold: CheckResult
    idle_states: np.ndarray
    # (action, queue) -> array of smallest queue length where the action is
    # chosen, one entry per slice (+inf when never chosen)
    phi_minus: dict = field(default_factory=dict)
    # queue -> array of largest queue length where all-idle is chosen (-inf if never)
    phi_plus_idle: dict = field(default_factory=dict)
    # idle state above a busy one whose action does not serve the lowered queue
    idle_closure_notes: list = field(default_factory=list)

    @property
    def threshold_ok(self) -> bool:
        return self.persistence.ok and self.idle_region.ok and self.mbs_threshold.ok

    @property
    def ok(self) -> bool:
        return self.monotone_value.ok and self.delta_monotone.ok and self.threshold_ok

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "monotone_value": self.monotone_value.to_dict(),
            "delta_monotone": self.delta_monotone.to_dict(),
            "threshold_ok": self.threshold_ok,
            "persistence": self.persistence.to_dict(),
            "idle_region": self.idle_region.to_dict(),
            "mbs_threshold": self.mbs_threshold.to_dict(),
            "idle_states": int(len(self.idle_states)),
            "idle_closure_notes": [_jsonable(v) for v in self.idle_closure_notes],
        }


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def delta_uv(config: NetworkConfig, model: ArrivalModel, V, state, u: Action, v: Action,
             space: StateSpace | None = None) -> float:
    """J(Q, u) - J(Q, v)."""
    return (state_action_cost(config, model, V, state, u, space)
            - state_action_cost(config, model, V, state, v, space))


def check_value_monotonicity(V, space: StateSpace, tol: float = EPS) -> CheckResult:
    V = np.asarray(V, dtype=float)
    res = CheckResult()
    for c in range(space.states.shape[1]):
        lo, hi = space.neighbor_pairs(c)
        drop = V[lo] - V[hi]
        for j in np.flatnonzero(drop > tol):
            res.add({"lower": space.state(lo[j]), "upper": space.state(hi[j]), "drop": drop[j]}, drop[j])
    return res


def check_delta_monotonicity(config: NetworkConfig, model: ArrivalModel, V, *,
                             kernel: Kernel | None = None, tol: float = EPS) -> CheckResult:
    """Delta_{u,v} must not increase along every queue that u clears."""
    k = kernel or build_kernel(config, model)
    return check_delta_table(k.q_values(np.asarray(V, dtype=float)), k.space, config, tol)


def check_delta_table(J: np.ndarray, space: StateSpace, config: NetworkConfig,
                      tol: float = EPS) -> CheckResult:
    res = CheckResult()
    served = config.served
    actions = config.actions
    for c in range(space.states.shape[1]):
        lo, hi = space.neighbor_pairs(c)
        if not len(lo):
            continue
        D = J[hi] - J[lo]
        # Delta_{u,v}(hi) - Delta_{u,v}(lo) = D_u - D_v; worst v is the smallest D_v
        v_best = D.argmin(axis=1)
        growth = D - D.min(axis=1, keepdims=True)
        for a in np.flatnonzero(served[:, c]):
            for j in np.flatnonzero(growth[:, a] > tol):
                res.add({"u": actions[a], "v": actions[v_best[j]], "queue": config.queues[c],
                         "state": space.state(lo[j]), "increase": growth[j, a]}, growth[j, a])
    return res


def _phi_minus(is_u: np.ndarray, dims, c):
    """Smallest coordinate value along axis c where is_u holds (+inf if none)."""
    grid = np.moveaxis(is_u.reshape(dims), c, -1)
    return np.where(grid.any(axis=-1), np.argmax(grid, axis=-1), np.inf)


def _phi_plus(is_u: np.ndarray, dims, c):
    grid = np.moveaxis(is_u.reshape(dims), c, -1)
    last = grid.shape[-1] - 1 - np.argmax(grid[..., ::-1], axis=-1)
    return np.where(grid.any(axis=-1), last, -np.inf)


def check_threshold_structure(policy: Policy, space: StateSpace, config: NetworkConfig):
    """Returns (persistence, idle_region, mbs_threshold, phi_minus, phi_plus_idle, notes)."""
    pol = np.asarray(policy.index)
    sched = config.scheduled
    idle = 0  # all-idle is first in canonical order
    nq = space.states.shape[1]
    dims = tuple(int(c) + 1 for c in space.caps)

    persistence, idle_region, mbs = CheckResult(), CheckResult(), CheckResult()
    notes = []
    for c in range(nq):
        lo, hi = space.neighbor_pairs(c)
        a_lo, a_hi = pol[lo], pol[hi]
        bad = sched[a_lo, c] & (a_hi != a_lo)
        for j in np.flatnonzero(bad):
            persistence.add({"queue": config.queues[c], "state": space.state(lo[j]),
                             "action": policy.actions[a_lo[j]], "next_state": space.state(hi[j]),
                             "next_action": policy.actions[a_hi[j]]})
        for j in np.flatnonzero((a_hi == idle) & (a_lo != idle) & ~sched[a_lo, c]):
            notes.append({"queue": config.queues[c], "idle_state": space.state(hi[j]),
                          "busy_state": space.state(lo[j]), "action": policy.actions[a_lo[j]]})

    is_idle = pol == idle
    for c in range(nq):
        # some idle state strictly above along c forbids serving c here
        grid = np.moveaxis(is_idle.reshape(dims), c, -1)
        above = np.flip(np.cumsum(np.flip(grid, -1), axis=-1), -1) - grid > 0
        above = np.moveaxis(above, -1, c).reshape(-1)
        for i in np.flatnonzero(above & sched[pol, c]):
            idle_region.add({"queue": config.queues[c], "busy_state": space.state(i),
                             "action": policy.actions[pol[i]], "reason": "serves a queue below an idle state"})

    phi_minus, phi_plus = {}, {}
    for c in range(nq):
        phi_plus[config.queues[c]] = _phi_plus(is_idle, dims, c)
    # literal idle-region property: Q_{n,m} <= phi_plus along every coordinate => idle
    inside = np.ones(space.size, dtype=bool)
    for c in range(nq):
        phi = np.broadcast_to(np.expand_dims(phi_plus[config.queues[c]], c), dims).reshape(-1)
        inside &= space.states[:, c] <= phi
    for i in np.flatnonzero(inside & ~is_idle):
        idle_region.add({"state": space.state(i), "action": policy.actions[pol[i]],
                         "reason": "inside idle region but not idle"})

    for a, u in enumerate(policy.actions):
        for c in np.flatnonzero(sched[a]):
            phi_minus[(u, config.queues[c])] = _phi_minus(pol == a, dims, c)
    # MBS threshold on Q_{0,m} must not increase with Q_{n,m}, n caching m
    for a, u in enumerate(policy.actions):
        m = u[0]
        if m == 0:
            continue
        c0 = config.queue_index[(0, m)]
        phi = phi_minus[(u, (0, m))]  # axes: all queues except c0, in order
        for n in config.caching_sbs(m):
            cn = config.queue_index[(n, m)]
            axis = cn if cn < c0 else cn - 1
            lo = np.take(phi, np.arange(phi.shape[axis] - 1), axis=axis)
            hi = np.take(phi, np.arange(1, phi.shape[axis]), axis=axis)
            with np.errstate(invalid="ignore"):
                bad = (hi > lo) & ~(np.isinf(hi) & np.isinf(lo))
            for idx in zip(*np.nonzero(bad)):
                mbs.add({"action": u, "queue": (n, m), "slice": tuple(int(x) for x in idx),
                         "phi_lower": float(lo[idx]), "phi_upper": float(hi[idx])})
    return persistence, idle_region, mbs, phi_minus, phi_plus, notes


def verify_structure(config: NetworkConfig, model: ArrivalModel, V, policy: Policy, *,
                     kernel: Kernel | None = None, tol: float = EPS) -> StructureReport:
    k = kernel or build_kernel(config, model)
    mono = check_value_monotonicity(V, k.space, tol)
    delta = check_delta_monotonicity(config, model, V, kernel=k, tol=tol)
    pers, idle, mbs, phi_minus, phi_plus, notes = check_threshold_structure(policy, k.space, config)
    idle_states = np.flatnonzero(np.asarray(policy.index) == 0)
    return StructureReport(mono, delta, pers, idle, mbs, idle_states, phi_minus, phi_plus, notes)


def dominance_closure(space: StateSpace, assignments: dict, config: NetworkConfig) -> dict:
    """Extend state -> action assignments by the persistence rule.

    A state inherits u from any assigned state below it along a coordinate
    (n, m) with u_n = m. Keys and values are tuples; the result includes the
    original assignments.
    """
    out = {tuple(int(x) for x in s): tuple(u) for s, u in assignments.items()}
    todo = deque(out)
    sched = config.scheduled
    while todo:
        s = todo.popleft()
        u = out[s]
        a = config.action_index[u]
        for c in np.flatnonzero(sched[a]):
            if s[c] >= space.caps[c]:
                continue
            t = s[:c] + (s[c] + 1,) + s[c + 1:]
            if t in out:
                if out[t] != u:
                    raise ClosureConflict(f"state {t} inherits {u} but is assigned {out[t]}")
                continue
            out[t] = u
            todo.append(t)
    return out
