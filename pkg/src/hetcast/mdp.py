"""Exact solution of the average-cost scheduling MDP.

Everything here works on the enumerated state space. A :class:`Kernel` holds
the precomputed transition structure (next-state index for every state,
action and arrival outcome) and is shared by all solvers; build it once with
:func:`build_kernel` and pass it around when solving the same instance
repeatedly.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import (Action, ArrivalModel, NetworkConfig, ResourceLimitError,
                    enumerate_joint_arrivals, next_state, queue_arrival_support,
                    stage_cost)

DEFAULT_STATE_LIMIT = 10**7
DENSE_LIMIT = 4096
EPS = 1e-9


class UnichainError(RuntimeError):
    """Policy evaluation system is singular: the policy is not unichain."""


# ---------------------------------------------------------------------------
# state space


@dataclass(eq=False)
class StateSpace:
    caps: np.ndarray
    states: np.ndarray  # (size, num_queues), lexicographic, first queue most significant
    strides: np.ndarray

    @property
    def size(self) -> int:
        return len(self.states)

    def __len__(self):
        return self.size

    def index(self, state) -> int:
        q = np.asarray(state, dtype=np.int64)
        if np.any(q < 0) or np.any(q > self.caps):
            raise KeyError(f"state {tuple(q)} outside the state space")
        return int(q @ self.strides)

    def indices(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=np.int64) @ self.strides

    def state(self, i: int) -> tuple[int, ...]:
        return tuple(int(x) for x in self.states[i])

    def neighbor_pairs(self, coord: int):
        """Index pairs (lo, hi) with hi = lo + e_coord."""
        lo = np.flatnonzero(self.states[:, coord] < self.caps[coord])
        return lo, lo + self.strides[coord]


def enumerate_states(config: NetworkConfig, limit: int = DEFAULT_STATE_LIMIT) -> StateSpace:
    dims = config.caps + 1
    size = reduce(lambda a, b: a * int(b), dims, 1)
    if size > limit:
        raise ResourceLimitError(f"state space has {size} states, limit is {limit}")
    states = np.indices(tuple(dims)).reshape(len(dims), -1).T.astype(np.int64)
    strides = np.ones(len(dims), dtype=np.int64)
    for i in range(len(dims) - 2, -1, -1):
        strides[i] = strides[i + 1] * dims[i + 1]
    return StateSpace(config.caps.copy(), states, strides)


# ---------------------------------------------------------------------------
# policies and reports


@dataclass(eq=False)
class Policy:
    """Deterministic stationary policy stored as action indices per state."""

    space: StateSpace
    actions: list[Action]
    index: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, Policy) and self.actions == other.actions
                and np.array_equal(self.index, other.index))

    def __getitem__(self, state) -> Action:
        return self.actions[self.index[self.space.index(state)]]

    def action_at(self, i: int) -> Action:
        return self.actions[self.index[i]]

    def rows(self):
        """(state vector, action vector) pairs for every state."""
        for i in range(self.space.size):
            yield self.space.state(i), self.actions[self.index[i]]

    @classmethod
    def constant(cls, space, actions, u=None):
        a = 0 if u is None else actions.index(tuple(u))
        return cls(space, list(actions), np.full(space.size, a, dtype=np.int64))


@dataclass
class SolveReport:
    theta: float
    value: np.ndarray
    policy: Policy
    iterations: int
    converged: bool
    residual: float = 0.0
    improvement_skips: int = 0
    improvement_decisions: int = 0
    minimizations: int = 0
    method: str = ""
    theta_history: list[float] = field(default_factory=list)
    evaluation_time: float = 0.0
    improvement_time: float = 0.0

    def to_dict(self, include_policy=False) -> dict:
        out = {
            "method": self.method,
            "theta": self.theta,
            "iterations": self.iterations,
            "converged": self.converged,
            "residual": self.residual,
            "improvement_skips": self.improvement_skips,
            "improvement_decisions": self.improvement_decisions,
            "minimizations": self.minimizations,
            "theta_history": list(self.theta_history),
        }
        if include_policy:
            out["policy"] = [{"state": list(s), "action": list(u)} for s, u in self.policy.rows()]
        return out


# ---------------------------------------------------------------------------
# kernel


@dataclass(eq=False)
class Kernel:
    config: NetworkConfig
    space: StateSpace
    arrivals: np.ndarray  # (S, num_queues) clipped per-queue arrivals
    probs: np.ndarray     # (S,)
    next: np.ndarray      # (size, num_actions, S) next-state indices
    stage: np.ndarray     # (size, num_actions) per-stage cost g(Q, u)

    @property
    def actions(self):
        return self.config.actions

    def q_values(self, V: np.ndarray) -> np.ndarray:
        """J(Q, u) for every state and action."""
        return self.stage + V[self.next] @ self.probs

    def q_row(self, V: np.ndarray, i: int) -> np.ndarray:
        return self.stage[i] + V[self.next[i]] @ self.probs

    def transition_matrix(self, action_index: np.ndarray):
        n, S = self.space.size, len(self.probs)
        cols = self.next[np.arange(n), action_index]  # (n, S)
        rows = np.repeat(np.arange(n), S)
        return sp.csr_matrix((np.tile(self.probs, n), (rows, cols.ravel())), shape=(n, n))


def build_kernel(config: NetworkConfig, model: ArrivalModel,
                 state_limit: int = DEFAULT_STATE_LIMIT,
                 support_limit: int | None = None) -> Kernel:
    space = enumerate_states(config, state_limit)
    kwargs = {} if support_limit is None else {"limit": support_limit}
    arrivals, probs = queue_arrival_support(config, model, **kwargs)
    served = config.served
    nxt = np.empty((space.size, len(config.actions), len(probs)), dtype=np.int64)
    for a in range(len(config.actions)):
        kept = np.where(served[a], 0, space.states)
        q2 = np.minimum(kept[:, None, :] + arrivals[None, :, :], space.caps)
        nxt[:, a, :] = q2 @ space.strides
    delay = space.states.sum(axis=1).astype(float)
    stage = delay[:, None] + config.weight * config.action_power[None, :]
    return Kernel(config, space, arrivals, probs, nxt, stage)


def _kernel(config, model, kernel):
    if kernel is not None:
        return kernel
    return build_kernel(config, model)


def canonical_argmin(J: np.ndarray, eps: float = EPS) -> np.ndarray:
    """First action (in canonical order) within ``eps`` of the row minimum."""
    J = np.atleast_2d(J)
    return np.argmax(J <= J.min(axis=1, keepdims=True) + eps, axis=1)


# ---------------------------------------------------------------------------
# single-state operators (direct, unvectorized)


def expected_next_value(config: NetworkConfig, model: ArrivalModel, V, state, u: Action,
                        space: StateSpace | None = None) -> float:
    """E[V(Q')] by direct summation over the joint arrival support."""
    space = space or enumerate_states(config)
    V = np.asarray(V, dtype=float)
    mats, probs = enumerate_joint_arrivals(config, model)
    return float(sum(p * V[space.index(next_state(config, state, u, a))]
                     for a, p in zip(mats, probs)))


def state_action_cost(config: NetworkConfig, model: ArrivalModel, V, state, u: Action,
                      space: StateSpace | None = None) -> float:
    return stage_cost(config, state, u) + expected_next_value(config, model, V, state, u, space)


# ---------------------------------------------------------------------------
# relative value iteration


def rvia(config: NetworkConfig, model: ArrivalModel, tol: float = 1e-9,
         max_iter: int = 100_000, ref_state=None, *, kernel: Kernel | None = None,
         check_monotone: bool = False, damping: float = 1.0) -> SolveReport:
    """Relative value iteration from V = 0, stopped on the span of successive differences.

    ``damping`` < 1 applies the aperiodicity transform P -> tau P + (1 - tau) I
    (with costs scaled by tau), which leaves theta, V and the optimal actions
    unchanged but makes the iteration converge on periodic chains.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    k = _kernel(config, model, kernel)
    ref = _ref_index(k.space, ref_state)
    V = np.zeros(k.space.size)
    span = np.inf
    it = 0
    worst_mono = 0.0
    converged = False
    while it < max_iter:
        it += 1
        best = k.q_values(V).min(axis=1)
        if damping < 1.0:
            best = damping * best + (1.0 - damping) * V
        V_new = best - best[ref]
        diff = V_new - V
        span = float(diff.max() - diff.min())
        V = V_new
        if check_monotone:
            worst_mono = max(worst_mono, _worst_monotone_drop(k.space, V))
        if span <= tol:
            converged = True
            break
    J = k.q_values(V)
    theta = float(J[ref].min())
    policy = Policy(k.space, list(k.actions), canonical_argmin(J))
    report = SolveReport(theta, V, policy, it, converged, residual=span, method="rvia")
    if check_monotone:
        report.monotone_violation = worst_mono
    return report


def _worst_monotone_drop(space, V):
    worst = 0.0
    for c in range(space.states.shape[1]):
        lo, hi = space.neighbor_pairs(c)
        if len(lo):
            worst = max(worst, float(np.max(V[lo] - V[hi])))
    return worst


def _ref_index(space, ref_state):
    if ref_state is None:
        return 0  # all-zero state comes first in lexicographic order
    return space.index(ref_state)


# ---------------------------------------------------------------------------
# policy evaluation and iteration


def policy_evaluation(config: NetworkConfig, model: ArrivalModel, policy: Policy,
                      ref_state=None, *, kernel: Kernel | None = None):
    """Solve theta + V = g_mu + P_mu V with V(ref) = 0. Returns (theta, V)."""
    k = _kernel(config, model, kernel)
    return _evaluate(k, policy.index, _ref_index(k.space, ref_state))


def _evaluate(k: Kernel, action_index: np.ndarray, ref: int):
    n = k.space.size
    P = k.transition_matrix(action_index)
    g = k.stage[np.arange(n), action_index]
    # unknowns: V with the reference entry replaced by theta
    A = sp.identity(n, format="csr") - P
    A = A.tolil()
    A[:, ref] = 1.0
    A = A.tocsr()
    try:
        if n <= DENSE_LIMIT:
            x = np.linalg.solve(A.toarray(), g)
        else:
            x = spla.spsolve(A.tocsc(), g)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise UnichainError(f"policy evaluation failed ({exc}); policy is not unichain or degenerate") from exc
    if not np.all(np.isfinite(x)):
        raise UnichainError("policy evaluation produced non-finite values; policy is not unichain")
    theta = float(x[ref])
    V = x.copy()
    V[ref] = 0.0
    resid = np.max(np.abs(theta + V - g - P @ V))
    scale = max(1.0, float(np.max(np.abs(g))), float(np.max(np.abs(V))))
    if resid > 1e-8 * scale:
        raise UnichainError(f"policy evaluation residual {resid:.3e} too large; "
                            "policy is not unichain or the system is ill-conditioned")
    return theta, V


def policy_improvement(config: NetworkConfig, model: ArrivalModel, V, *,
                       kernel: Kernel | None = None) -> Policy:
    """Greedy policy w.r.t. V over the full action set, canonical tie-break."""
    k = _kernel(config, model, kernel)
    return Policy(k.space, list(k.actions), canonical_argmin(k.q_values(np.asarray(V, float))))


def _full_pass(k: Kernel, V) -> np.ndarray:
    out = np.empty(k.space.size, dtype=np.int64)
    for i in range(k.space.size):
        out[i] = canonical_argmin(k.q_row(V, i))[0]
    return out


def structured_argmin(space: StateSpace, config: NetworkConfig, row, previous=None):
    """Structured improvement pass; returns (action indices, skipped count).

    ``row(i)`` gives the action costs at state i. A state below i along queue
    (n, m) whose action has u_n = m offers that action to i. With
    ``previous=None`` the offers come from decisions made earlier in this
    pass (states are visited in lexicographic order, so every state below
    another along a coordinate is decided first); otherwise from the
    previous policy. A state with exactly one offered action takes it
    without minimizing; conflicting offers fall back to a full minimization.
    """
    n = space.size
    out = np.full(n, -1, dtype=np.int64)
    source = out if previous is None else np.asarray(previous)
    sched = config.scheduled.tolist()
    strides = [int(x) for x in space.strides]
    coords = range(len(strides))
    empty = frozenset()
    # offers[c][i]: distinct actions offered to i by states strictly below it along c
    offers = [[empty] * n for _ in coords]
    skips = 0
    for i, q in enumerate(space.states.tolist()):
        cands = empty
        for c in coords:
            if q[c]:
                j = i - strides[c]
                got = offers[c][j]
                a = int(source[j])
                if a >= 0 and sched[a][c] and a not in got:
                    got = got | {a}
                offers[c][i] = got
                if got:
                    cands = cands | got
        if len(cands) == 1:
            (out[i],) = cands
            skips += 1
        else:
            out[i] = canonical_argmin(row(i))[0]
    return out, skips


def _structured_pass(k: Kernel, V, previous: np.ndarray | None = None):
    return structured_argmin(k.space, k.config, lambda i: k.q_row(V, i), previous)


def pia(config: NetworkConfig, model: ArrivalModel, ref_state=None, *,
        kernel: Kernel | None = None, initial: Policy | None = None,
        max_iter: int = 1000) -> SolveReport:
    """Policy iteration from the all-idle policy."""
    return _policy_iteration(config, model, ref_state, kernel, initial, max_iter, "pia")


def spia(config: NetworkConfig, model: ArrivalModel, ref_state=None, *,
         kernel: Kernel | None = None, initial: Policy | None = None,
         max_iter: int = 1000, literal: bool = False, certify: bool = True) -> SolveReport:
    """Structured policy iteration.

    ``literal=True`` takes inherited actions from the previous iterate's
    policy instead of from states already decided in the current pass.
    ``certify`` runs one full minimization pass once the structured passes
    reach a fixed point, and keeps iterating if that pass disagrees.
    """
    method = "spia-literal" if literal else "spia"
    return _policy_iteration(config, model, ref_state, kernel, initial, max_iter, method,
                             literal=literal, certify=certify)


def _policy_iteration(config, model, ref_state, kernel, initial, max_iter, method,
                      literal=False, certify=True):
    k = _kernel(config, model, kernel)
    ref = _ref_index(k.space, ref_state)
    n = k.space.size
    current = (np.zeros(n, dtype=np.int64) if initial is None
               else np.asarray(initial.index, dtype=np.int64).copy())
    structured = method != "pia"
    report = SolveReport(np.nan, np.zeros(n), None, 0, False, method=method)
    for _ in range(max_iter):
        t0 = time.perf_counter()
        theta, V = _evaluate(k, current, ref)
        t1 = time.perf_counter()
        report.evaluation_time += t1 - t0
        report.iterations += 1
        report.theta_history.append(theta)
        if structured:
            new, skips = _structured_pass(k, V, current if literal else None)
            report.improvement_skips += skips
            report.improvement_decisions += n
            report.minimizations += n - skips
            if certify and np.array_equal(new, current):
                new = _full_pass(k, V)
                report.minimizations += n
        else:
            new = _full_pass(k, V)
            report.improvement_decisions += n
            report.minimizations += n
        report.improvement_time += time.perf_counter() - t1
        if np.array_equal(new, current):
            report.converged = True
            break
        current = new
    report.theta = theta
    report.value = V
    report.policy = Policy(k.space, list(k.actions), current)
    return report


# ---------------------------------------------------------------------------
# brute-force oracle


def exhaustive_policy_search(config: NetworkConfig, model: ArrivalModel, *,
                             limit: int = 10**6, chunk: int = 8192, kernel: Kernel | None = None):
    """Evaluate every deterministic stationary policy; returns (theta, Policy).

    Non-unichain policies are skipped. Among policies within 1e-9 of the best
    average cost, the one that is greedy (canonical tie-break) with respect
    to its own relative values is returned; this is the policy any exact
    policy-iteration method converges to.
    """
    k = _kernel(config, model, kernel)
    n, U = k.space.size, len(k.actions)
    total = U ** n
    if total > limit:
        raise ResourceLimitError(f"{total} policies to enumerate, limit is {limit}")
    ref = 0
    powers = U ** np.arange(n - 1, -1, -1, dtype=np.int64)
    thetas = np.full(total, np.inf)
    for start in range(0, total, chunk):
        ids = np.arange(start, min(total, start + chunk), dtype=np.int64)
        pols = (ids[:, None] // powers[None, :]) % U
        ok, x = _batch_evaluate(k, pols, ref)
        thetas[ids[ok]] = x[ok, ref]
    best = thetas.min()
    if not np.isfinite(best):
        raise UnichainError("no unichain policy found")
    cands = np.flatnonzero(thetas <= best + EPS)
    pols = (cands[:, None] // powers[None, :]) % U
    _, x = _batch_evaluate(k, pols, ref)
    chosen = pols[0]
    for pol, sol in zip(pols, x):
        V = sol.copy()
        V[ref] = 0.0
        if np.array_equal(canonical_argmin(k.q_values(V)), pol):
            chosen = pol
            break
    return float(best), Policy(k.space, list(k.actions), chosen.astype(np.int64))


def _batch_evaluate(k: Kernel, pols: np.ndarray, ref: int):
    B, n = pols.shape
    S = len(k.probs)
    nxt = k.next[np.arange(n)[None, :], pols]  # (B, n, S)
    flat = (np.arange(B)[:, None, None] * (n * n) + np.arange(n)[None, :, None] * n + nxt).ravel()
    w = np.broadcast_to(k.probs, (B, n, S)).ravel()
    P = np.bincount(flat, weights=w, minlength=B * n * n).reshape(B, n, n)
    A = np.eye(n)[None] - P
    A[:, :, ref] = 1.0
    g = k.stage[np.arange(n)[None, :], pols]
    det = np.linalg.det(A)
    ok = np.abs(det) > 1e-10
    x = np.full((B, n), np.nan)
    if ok.any():
        x[ok] = np.linalg.solve(A[ok], g[ok][..., None])[..., 0]
        resid = np.abs(np.einsum("bij,bj->bi", A[ok], x[ok]) - g[ok]).max(axis=1)
        bad = np.flatnonzero(ok)[resid > 1e-8 * np.maximum(1.0, np.abs(x[ok]).max(axis=1))]
        ok[bad] = False
    return ok, x
