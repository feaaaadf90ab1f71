"""Task runners behind the command line: each returns a table and a report."""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .baselines import GreedyPolicy
from .config import ExperimentSpec, apply_axis
from .mdp import (
    Kernel,
    Policy,
    SolveReport,
    UnichainError,
    build_kernel,
    exhaustive_policy_search,
    pia,
    policy_evaluation,
    rvia,
    spia,
)
from .model import NetworkConfig
from .sim import CostEstimate, estimate_costs
from .structure import check_threshold_structure, verify_structure
from .subopt import DecomposedCosts, decompose, ssa

# policies with at most this many states also get an exact average cost
EXACT_EVAL_LIMIT = 50_000

RESULT_COLUMNS = [
    "task", "axis", "axis_value", "policy", "method",
    "weight", "zipf_alpha", "cache_size", "users", "num_states",
    "seed", "horizon", "replications", "warmup",
    "mean_delay", "ci95_delay", "mean_power", "ci95_power",
    "mean_network", "ci95_network", "per_user_network",
    "theta", "iterations", "skips", "decisions",
]
VERIFY_COLUMNS = ["policy", "check", "ok", "violations", "worst"]
ORACLE_COLUMNS = ["num_states", "num_policies", "exhaustive_theta", "pia_theta", "spia_theta",
                  "rvia_theta", "same_policy", "verdict"]
ORACLE_TOL = 1e-6


@dataclass
class TaskResult:
    columns: list[str]
    rows: list[dict]
    report: dict = field(default_factory=dict)
    ok: bool = True


def num_states(config: NetworkConfig) -> int:
    return math.prod(int(c) + 1 for c in config.caps)


class Instance:
    """One network/arrival setting with lazily built solver artifacts."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.config = spec.config()
        self.model = spec.model()
        self.base = spec.base(self.config)
        self.size = num_states(self.config)

    @cached_property
    def kernel(self) -> Kernel:
        return build_kernel(self.config, self.model, state_limit=self.spec.solver.state_limit)

    @cached_property
    def optimal(self) -> SolveReport:
        s = self.spec.solver
        if s.method == "rvia":
            return rvia(self.config, self.model, tol=s.tol, max_iter=s.max_iter, kernel=self.kernel,
                        damping=s.damping)
        solver = pia if s.method == "pia" else spia
        return solver(self.config, self.model, kernel=self.kernel, max_iter=s.max_iter)

    @cached_property
    def suboptimal(self):
        """(policy or online rule, SSA result or None, per-queue values)."""
        if self.size <= self.spec.solver.ssa_state_limit:
            res = ssa(self.config, self.model, self.base, space=self.kernel.space)
            return res.policy, res, res.values
        values = decompose(self.config, self.model, self.base)
        return DecomposedCosts(self.config, self.model, values), None, values

    @cached_property
    def greedy(self):
        rule = GreedyPolicy(self.config)
        return rule.table(self.kernel.space) if self.size <= EXACT_EVAL_LIMIT else rule

    def exact_theta(self, policy) -> float | None:
        if not isinstance(policy, Policy) or self.size > EXACT_EVAL_LIMIT:
            return None
        try:
            return policy_evaluation(self.config, self.model, policy, kernel=self.kernel)[0]
        except UnichainError:
            return None

    def policy(self, name: str):
        """(simulatable policy, metadata columns) for a named policy."""
        if name == "optimal":
            r = self.optimal
            return r.policy, {"method": r.method, "theta": r.theta, "iterations": r.iterations,
                              "skips": r.improvement_skips, "decisions": r.improvement_decisions}
        if name == "suboptimal":
            pol, res, _ = self.suboptimal
            meta = {"method": "ssa" if res else "decomposed-online", "theta": self.exact_theta(pol)}
            if res is not None:
                meta.update(skips=res.skips, decisions=res.decisions)
            return pol, meta
        if name == "greedy":
            return self.greedy, {"method": "greedy", "theta": self.exact_theta(self.greedy)}
        if name == "base":
            _, _, values = self.suboptimal
            return self.base, {"method": "randomized",
                               "theta": math.fsum(v.theta for v in values.values())}
        raise ValueError(f"unknown policy {name!r}")


def _describe(spec: ExperimentSpec, config: NetworkConfig) -> dict:
    caches = sorted({len(c) for c in config.cache[1:]})
    return {
        "weight": config.weight,
        "zipf_alpha": spec.arrivals.zipf_alpha,
        "cache_size": ";".join(str(c) for c in caches),
        "users": ";".join(str(k) for k in config.users_per_region),
        "num_states": num_states(config),
        "seed": spec.sim.seed,
        "horizon": spec.sim.horizon,
        "replications": spec.sim.replications,
        "warmup": spec.sim.warmup,
    }


def _estimate_columns(est: CostEstimate) -> dict:
    return {
        "mean_delay": est.mean_delay, "ci95_delay": est.ci95_delay,
        "mean_power": est.mean_power, "ci95_power": est.ci95_power,
        "mean_network": est.mean_network, "ci95_network": est.ci95_network,
        "per_user_network": est.per_user_network,
    }


def _policy_rows(task, inst: Instance, policies, simulate: bool, axis="", axis_value=""):
    rows = []
    for name in policies:
        pol, meta = inst.policy(name)
        row = {"task": task, "axis": axis, "axis_value": axis_value, "policy": name}
        row.update(_describe(inst.spec, inst.config))
        row.update(meta)
        if simulate:
            row.update(_estimate_columns(estimate_costs(inst.config, inst.model, pol, inst.spec.sim)))
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# tasks


def run_solve(spec: ExperimentSpec, method: str | None = None) -> TaskResult:
    if method:
        spec = spec.replace(solver=dataclasses.replace(spec.solver, method=method))
    inst = Instance(spec)
    rows = _policy_rows("solve", inst, ["optimal"], simulate=False)
    r = inst.optimal
    report = r.to_dict(include_policy=True)
    return TaskResult(RESULT_COLUMNS, rows, report, ok=r.converged)


def run_subopt(spec: ExperimentSpec) -> TaskResult:
    inst = Instance(spec)
    rows = _policy_rows("subopt", inst, ["suboptimal", "base"], simulate=False)
    pol, res, values = inst.suboptimal
    report = {"theta_base": math.fsum(v.theta for v in values.values()),
              "per_queue": [values[q].to_dict() for q in sorted(values)]}
    if res is not None:
        report.update(res.to_dict())
        report["policy"] = [{"state": list(s), "action": list(u)} for s, u in pol.rows()]
    return TaskResult(RESULT_COLUMNS, rows, report)


def run_greedy(spec: ExperimentSpec) -> TaskResult:
    inst = Instance(spec)
    rows = _policy_rows("greedy", inst, ["greedy"], simulate=False)
    report = {}
    if isinstance(inst.greedy, Policy):
        report["policy"] = [{"state": list(s), "action": list(u)} for s, u in inst.greedy.rows()]
    return TaskResult(RESULT_COLUMNS, rows, report)


def run_simulate(spec: ExperimentSpec) -> TaskResult:
    inst = Instance(spec)
    rows = _policy_rows("simulate", inst, spec.policies, simulate=True)
    return TaskResult(RESULT_COLUMNS, rows, {"rows": rows})


def run_verify(spec: ExperimentSpec) -> TaskResult:
    inst = Instance(spec)
    r = inst.optimal
    checks = {"optimal": verify_structure(inst.config, inst.model, r.value, r.policy, kernel=inst.kernel)}
    rows = []
    for check in ("monotone_value", "delta_monotone", "persistence", "idle_region", "mbs_threshold"):
        res = getattr(checks["optimal"], check)
        rows.append({"policy": "optimal", "check": check, "ok": res.ok,
                     "violations": len(res.violations), "worst": res.worst})
    report = {"optimal": checks["optimal"].to_dict()}
    ok = checks["optimal"].ok
    pol, _, values = inst.suboptimal
    if isinstance(pol, Policy):
        pers, idle, mbs, _, _, _ = check_threshold_structure(pol, inst.kernel.space, inst.config)
        mono = all(np.all(np.diff(v.v) >= -1e-9) for v in values.values())
        sub = {"per_queue_monotone": mono, "persistence": pers.to_dict(),
               "idle_region": idle.to_dict(), "mbs_threshold": mbs.to_dict()}
        rows.append({"policy": "suboptimal", "check": "per_queue_monotone", "ok": mono,
                     "violations": sum(int(np.sum(np.diff(v.v) < -1e-9)) for v in values.values()),
                     "worst": 0.0})
        for check, res in (("persistence", pers), ("idle_region", idle), ("mbs_threshold", mbs)):
            rows.append({"policy": "suboptimal", "check": check, "ok": res.ok,
                         "violations": len(res.violations), "worst": res.worst})
        report["suboptimal"] = sub
        ok = ok and mono and pers.ok and idle.ok and mbs.ok
    return TaskResult(VERIFY_COLUMNS, rows, report, ok=ok)


def run_oracle(spec: ExperimentSpec) -> TaskResult:
    inst = Instance(spec)
    cfg, model, k = inst.config, inst.model, inst.kernel
    theta_x, pol_x = exhaustive_policy_search(cfg, model, kernel=k)
    p = pia(cfg, model, kernel=k)
    s = spia(cfg, model, kernel=k)
    v = rvia(cfg, model, kernel=k)
    same = pol_x == p.policy == s.policy == v.policy
    close = all(abs(t - theta_x) <= ORACLE_TOL for t in (p.theta, s.theta, v.theta))
    verdict = "MATCH" if same and close else "MISMATCH"
    row = {"num_states": k.space.size, "num_policies": len(cfg.actions) ** k.space.size,
           "exhaustive_theta": theta_x, "pia_theta": p.theta, "spia_theta": s.theta,
           "rvia_theta": v.theta, "same_policy": same, "verdict": verdict}
    report = dict(row, policy=[{"state": list(st), "action": list(u)} for st, u in pol_x.rows()])
    return TaskResult(ORACLE_COLUMNS, [row], report, ok=verdict == "MATCH")


def _sweep_point(spec: ExperimentSpec, value) -> list[dict]:
    point = apply_axis(spec, spec.sweep.axis, value)
    return _policy_rows("sweep", Instance(point), spec.sweep.policies, simulate=True,
                        axis=spec.sweep.axis, axis_value=value)


def run_sweep(spec: ExperimentSpec, workers: int = 1) -> TaskResult:
    if spec.sweep is None:
        raise ValueError("the config has no sweep section")
    values = list(spec.sweep.values)
    if workers > 1 and len(values) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_sweep_point, [spec] * len(values), values))
    else:
        chunks = [_sweep_point(spec, v) for v in values]
    rows = [row for chunk in chunks for row in chunk]
    return TaskResult(RESULT_COLUMNS, rows, {"rows": rows})


TASKS = {
    "solve": run_solve,
    "subopt": run_subopt,
    "greedy": run_greedy,
    "simulate": run_simulate,
    "verify": run_verify,
    "oracle": run_oracle,
    "sweep": run_sweep,
}
