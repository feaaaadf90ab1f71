"""Experiment files: YAML schema, validation with line numbers, and dumping.

Schema (every section except ``network`` and ``arrivals`` is optional)::

    network:
      users: [2, 2]            # |K_0|, |K_1|, ..., |K_N|; N = len(users) - 1
      contents: 2              # M
      sbs_cache: [[1]]         # M_n for n = 1..N (default: all empty)
      power:
        mbs: 4                 # p(0, m) for every m
        sbs: 2                 # p(n, m) for n >= 1
        queues: {"1,1": 2.5}   # per-queue overrides "n,m": p
      queue_cap: 4             # default N_{n,m}
      queue_caps: {"0,1": 3}   # per-queue overrides
      weight: 1.0              # w
    arrivals:
      per_user_irm: {popularity: [0.6, 0.4]}   # or {zipf_alpha: 0.75}
      # independent_pmf: {"1,1": [0.4, 0.6], "0,2": [1.0]}
    base_policy: {p_mbs: 0.5, p_idle: 0.3}      # p_idle: scalar or one per BS
    solver: {method: spia, tol: 1.0e-9, max_iter: 10000, damping: 1.0,
             ssa_state_limit: 200000, state_limit: 10000000}
    sim: {horizon: 100000, replications: 20, warmup: 1000, seed: 0, initial_state: null}
    sweep:
      axis: weight             # weight | zipf_alpha | cache_size | users
      values: [0.5, 1, 2]
      policies: [optimal, suboptimal, greedy, base]
      # users_ratio: [1, 2, 2] # users axis only (default: network.users)
    output: {path: null, format: csv}
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import yaml

from .mdp import DEFAULT_STATE_LIMIT
from .model import (
    ArrivalModel,
    IndependentPmf,
    ModelError,
    NetworkConfig,
    PerUserIRM,
    check_model,
    request_popularity,
    zipf_popularity,
)
from .sim import SimPlan
from .subopt import RandomizedBasePolicy

SOLVERS = ("rvia", "pia", "spia")
POLICIES = ("optimal", "suboptimal", "greedy", "base")
AXES = ("weight", "zipf_alpha", "cache_size", "users")
FORMATS = ("csv", "report")


class ConfigError(ValueError):
    """Invalid experiment file; the message carries the offending line."""


# ---------------------------------------------------------------------------
# spec types


@dataclass(frozen=True)
class NetworkSpec:
    users: tuple[int, ...]
    contents: int
    sbs_cache: tuple[tuple[int, ...], ...]
    mbs_power: float | None = None
    sbs_power: float | None = None
    power_overrides: tuple[tuple[tuple[int, int], float], ...] = ()
    queue_cap: int | None = None
    cap_overrides: tuple[tuple[tuple[int, int], int], ...] = ()
    weight: float = 1.0

    def build(self) -> NetworkConfig:
        N = len(self.users) - 1
        cache = (frozenset(range(1, self.contents + 1)),) + tuple(frozenset(c) for c in self.sbs_cache)
        power, caps = {}, {}
        for n, c in enumerate(cache):
            for m in c:
                tier = self.mbs_power if n == 0 else self.sbs_power
                if tier is not None:
                    power[(n, m)] = tier
                if self.queue_cap is not None:
                    caps[(n, m)] = self.queue_cap
        power.update(dict(self.power_overrides))
        caps.update(dict(self.cap_overrides))
        return NetworkConfig(N, self.users, self.contents, cache, power, caps, self.weight)


@dataclass(frozen=True)
class ArrivalSpec:
    kind: str  # "per_user_irm" | "independent_pmf"
    popularity: tuple[float, ...] | None = None
    zipf_alpha: float | None = None
    pmfs: tuple[tuple[tuple[int, int], tuple[float, ...]], ...] = ()

    def build(self, contents: int) -> ArrivalModel:
        if self.kind == "independent_pmf":
            return IndependentPmf(dict(self.pmfs))
        if self.zipf_alpha is not None:
            return PerUserIRM(tuple(zipf_popularity(contents, self.zipf_alpha)))
        return PerUserIRM(self.popularity)


@dataclass(frozen=True)
class BaseSpec:
    p_mbs: float = 0.5
    p_idle: float | tuple[float, ...] = 0.3


@dataclass(frozen=True)
class SolverSpec:
    method: str = "spia"
    tol: float = 1e-9
    max_iter: int = 10_000
    ssa_state_limit: int = 200_000
    state_limit: int = DEFAULT_STATE_LIMIT
    damping: float = 1.0       # rvia only: 1 is plain RVIA, < 1 handles periodic chains


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    policies: tuple[str, ...] = POLICIES
    users_ratio: tuple[int, ...] | None = None


@dataclass(frozen=True)
class OutputSpec:
    path: str | None = None
    format: str = "csv"


@dataclass(frozen=True)
class ExperimentSpec:
    network: NetworkSpec
    arrivals: ArrivalSpec
    base_policy: BaseSpec = BaseSpec()
    solver: SolverSpec = SolverSpec()
    sim: SimPlan = SimPlan()
    sweep: SweepSpec | None = None
    output: OutputSpec = OutputSpec()
    policies: tuple[str, ...] = POLICIES

    def config(self) -> NetworkConfig:
        return self.network.build()

    def model(self) -> ArrivalModel:
        return self.arrivals.build(self.network.contents)

    def base(self, config: NetworkConfig | None = None) -> RandomizedBasePolicy:
        config = config or self.config()
        popularity = request_popularity(config, self.model())
        return RandomizedBasePolicy.from_popularity(config, popularity, self.base_policy.p_mbs,
                                                    self.base_policy.p_idle)

    def replace(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# parsing


def _line_index(text: str) -> dict[tuple, int]:
    """Map key paths to 1-based line numbers; rejects duplicate keys."""
    lines: dict[tuple, int] = {}
    root = yaml.compose(text, Loader=yaml.SafeLoader)

    def walk(node, path):
        lines.setdefault(path, node.start_mark.line + 1)  # keys keep their own line
        if isinstance(node, yaml.MappingNode):
            seen = set()
            for k, v in node.value:
                key = k.value
                if key in seen:
                    raise ConfigError(f"line {k.start_mark.line + 1}: duplicate key {key!r}")
                seen.add(key)
                lines[path + (key,)] = k.start_mark.line + 1
                walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return lines


class _Reader:
    def __init__(self, lines):
        self.lines = lines

    def where(self, path) -> str:
        p = tuple(path)
        while p and p not in self.lines:
            p = p[:-1]
        line = self.lines.get(p)
        name = ".".join(str(x) for x in path) or "<root>"
        return f"line {line}: {name}" if line else name

    def fail(self, path, msg):
        raise ConfigError(f"{self.where(path)}: {msg}")

    def section(self, data, path, allowed, required=()):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            self.fail(path, "expected a mapping")
        for k in data:
            if k not in allowed:
                self.fail(path + (k,), f"unknown key (allowed: {', '.join(allowed)})")
        for k in required:
            if k not in data:
                self.fail(path, f"missing required key {k!r}")
        return data

    def number(self, data, path, key, kind=float, default=None, required=False):
        if key not in data or data[key] is None:
            if required:
                self.fail(path, f"missing required key {key!r}")
            return default
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path + (key,), f"expected a number, got {v!r}")
        if kind is int:
            if float(v) != int(v):
                self.fail(path + (key,), f"expected an integer, got {v!r}")
            return int(v)
        return float(v)

    def number_list(self, v, path, kind=float):
        if not isinstance(v, list):
            self.fail(path, "expected a list")
        out = []
        for i, x in enumerate(v):
            if isinstance(x, bool) or not isinstance(x, (int, float)) or (kind is int and float(x) != int(x)):
                self.fail(path + (i,), f"expected {'an integer' if kind is int else 'a number'}, got {x!r}")
            out.append(kind(x))
        return tuple(out)

    def queue_key(self, key, path):
        try:
            n, m = (int(s) for s in str(key).split(","))
        except ValueError:
            self.fail(path + (key,), f"queue keys are written 'n,m', got {key!r}")
        return (n, m)


def parse_config(text: str) -> ExperimentSpec:
    try:
        lines = _line_index(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    r = _Reader(lines)
    top = r.section(data, (), ("network", "arrivals", "base_policy", "solver", "sim", "sweep",
                               "output", "policies"), required=("network", "arrivals"))
    network = _parse_network(r, top["network"])
    arrivals = _parse_arrivals(r, top["arrivals"])
    base = _parse_base(r, top.get("base_policy"))
    solver = _parse_solver(r, top.get("solver"))
    sim = _parse_sim(r, top.get("sim"))
    sweep = _parse_sweep(r, top["sweep"]) if top.get("sweep") is not None else None
    output = _parse_output(r, top.get("output"))
    policies = _parse_policies(r, top["policies"], ("policies",)) if "policies" in top else POLICIES
    spec = ExperimentSpec(network, arrivals, base, solver, sim, sweep, output, policies)
    _validate(r, spec)
    return spec


def _parse_network(r, d):
    p = ("network",)
    d = r.section(d, p, ("users", "contents", "sbs_cache", "power", "queue_cap", "queue_caps", "weight"),
                  required=("users", "contents"))
    users = r.number_list(d["users"], p + ("users",), int)
    if not users:
        r.fail(p + ("users",), "need at least the MBS region")
    contents = r.number(d, p, "contents", int, required=True)
    raw_cache = d.get("sbs_cache", [[] for _ in users[1:]])
    if not isinstance(raw_cache, list):
        r.fail(p + ("sbs_cache",), "expected a list of content lists")
    sbs_cache = tuple(tuple(sorted(r.number_list(c, p + ("sbs_cache", i), int)))
                      for i, c in enumerate(raw_cache))
    pw = r.section(d.get("power"), p + ("power",), ("mbs", "sbs", "queues"))
    overrides = tuple(sorted(
        (r.queue_key(k, p + ("power", "queues")), r.number({k: v}, p + ("power", "queues"), k))
        for k, v in r.section(pw.get("queues"), p + ("power", "queues"), _AnyKey()).items()))
    for (n, m), v in overrides:
        if m == 0 and v != 0:
            r.fail(p + ("power", "queues", f"{n},{m}"), f"p({n},0) must be 0: idling draws no power")
    caps = tuple(sorted(
        (r.queue_key(k, p + ("queue_caps",)), r.number({k: v}, p + ("queue_caps",), k, int))
        for k, v in r.section(d.get("queue_caps"), p + ("queue_caps",), _AnyKey()).items()))
    return NetworkSpec(users, contents, sbs_cache,
                       r.number(pw, p + ("power",), "mbs"), r.number(pw, p + ("power",), "sbs"),
                       overrides, r.number(d, p, "queue_cap", int), caps,
                       r.number(d, p, "weight", default=1.0))


class _AnyKey:
    def __contains__(self, key):
        return True


def _parse_arrivals(r, d):
    p = ("arrivals",)
    d = r.section(d, p, ("per_user_irm", "independent_pmf"))
    if len(d) != 1:
        r.fail(p, "give exactly one of per_user_irm or independent_pmf")
    if "per_user_irm" in d:
        q = p + ("per_user_irm",)
        irm = r.section(d["per_user_irm"], q, ("popularity", "zipf_alpha"))
        if ("popularity" in irm) == ("zipf_alpha" in irm):
            r.fail(q, "give exactly one of popularity or zipf_alpha")
        if "popularity" in irm:
            return ArrivalSpec("per_user_irm", popularity=r.number_list(irm["popularity"], q + ("popularity",)))
        return ArrivalSpec("per_user_irm", zipf_alpha=r.number(irm, q, "zipf_alpha"))
    q = p + ("independent_pmf",)
    raw = r.section(d["independent_pmf"], q, _AnyKey())
    pmfs = tuple(sorted((r.queue_key(k, q), r.number_list(v, q + (k,))) for k, v in raw.items()))
    return ArrivalSpec("independent_pmf", pmfs=pmfs)


def _parse_base(r, d):
    p = ("base_policy",)
    d = r.section(d, p, ("p_mbs", "p_idle"))
    idle = d.get("p_idle", 0.3)
    idle = r.number_list(idle, p + ("p_idle",)) if isinstance(idle, list) else r.number(d, p, "p_idle", default=0.3)
    return BaseSpec(r.number(d, p, "p_mbs", default=0.5), idle)


def _parse_solver(r, d):
    p = ("solver",)
    d = r.section(d, p, ("method", "tol", "max_iter", "ssa_state_limit", "state_limit",
                                 "damping"))
    method = d.get("method", "spia")
    if method not in SOLVERS:
        r.fail(p + ("method",), f"unknown solver {method!r} (choose from {', '.join(SOLVERS)})")
    s = SolverSpec(method, r.number(d, p, "tol", default=1e-9), r.number(d, p, "max_iter", int, default=10_000),
                   r.number(d, p, "ssa_state_limit", int, default=200_000),
                   r.number(d, p, "state_limit", int, default=DEFAULT_STATE_LIMIT),
                   r.number(d, p, "damping", default=1.0))
    if s.tol <= 0 or s.max_iter < 1:
        r.fail(p, "tol must be > 0 and max_iter >= 1")
    if not 0 < s.damping <= 1:
        r.fail(p + ("damping",), "damping must lie in (0, 1]")
    return s


def _parse_sim(r, d):
    p = ("sim",)
    d = r.section(d, p, ("horizon", "replications", "warmup", "seed", "initial_state"))
    init = d.get("initial_state")
    if init is not None:
        init = r.number_list(init, p + ("initial_state",), int)
    try:
        return SimPlan(r.number(d, p, "horizon", int, default=100_000),
                       r.number(d, p, "replications", int, default=20),
                       r.number(d, p, "warmup", int, default=1_000),
                       r.number(d, p, "seed", int, default=0), init)
    except ValueError as exc:
        r.fail(p, str(exc))


def _parse_policies(r, v, path):
    if not isinstance(v, list) or not v:
        r.fail(path, "expected a nonempty list of policy names")
    for i, name in enumerate(v):
        if name not in POLICIES:
            r.fail(path + (i,), f"unknown policy {name!r} (choose from {', '.join(POLICIES)})")
    return tuple(v)


def _parse_sweep(r, d):
    p = ("sweep",)
    d = r.section(d, p, ("axis", "values", "policies", "users_ratio"), required=("axis", "values"))
    axis = d["axis"]
    if axis not in AXES:
        r.fail(p + ("axis",), f"unknown sweep axis {axis!r} (choose from {', '.join(AXES)})")
    kind = int if axis in ("cache_size", "users") else float
    values = r.number_list(d["values"], p + ("values",), kind)
    if not values:
        r.fail(p + ("values",), "need at least one value")
    policies = _parse_policies(r, d["policies"], p + ("policies",)) if "policies" in d else POLICIES
    ratio = d.get("users_ratio")
    if ratio is not None:
        if axis != "users":
            r.fail(p + ("users_ratio",), "users_ratio only applies to the users axis")
        ratio = r.number_list(ratio, p + ("users_ratio",), int)
    return SweepSpec(axis, values, policies, ratio)


def _parse_output(r, d):
    p = ("output",)
    d = r.section(d, p, ("path", "format"))
    fmt = d.get("format", "csv")
    if fmt not in FORMATS:
        r.fail(p + ("format",), f"unknown format {fmt!r} (choose from {', '.join(FORMATS)})")
    path = d.get("path")
    return OutputSpec(None if path is None else str(path), fmt)


def _validate(r, spec: ExperimentSpec):
    net = spec.network
    if net.queue_cap is None:
        missing = set(_all_queues(net)) - {q for q, _ in net.cap_overrides}
        if missing:
            r.fail(("network", "queue_caps"), f"missing queue caps for {sorted(missing)}; "
                                              "set queue_cap or list every queue")
    try:
        config = spec.config()
    except ModelError as exc:
        r.fail(("network",), str(exc))
    try:
        model = spec.model()
        check_model(config, model)
    except (ModelError, ValueError) as exc:
        r.fail(("arrivals",), str(exc))
    try:
        spec.base(config)
    except ModelError as exc:
        r.fail(("base_policy",), str(exc))
    if spec.sim.initial_state is not None:
        init = spec.sim.initial_state
        if len(init) != config.num_queues or any(not 0 <= x <= c for x, c in zip(init, config.caps)):
            r.fail(("sim", "initial_state"), f"need {config.num_queues} queue lengths within the caps")
    sw = spec.sweep
    if sw is not None:
        if sw.axis == "zipf_alpha" and spec.arrivals.kind != "per_user_irm":
            r.fail(("sweep", "axis"), "a zipf_alpha sweep needs per_user_irm arrivals")
        if sw.axis == "cache_size":
            if net.queue_cap is None or net.sbs_power is None or net.mbs_power is None:
                r.fail(("sweep", "axis"), "a cache_size sweep needs network.queue_cap and tier powers")
            if any(not 0 <= v <= net.contents for v in sw.values):
                r.fail(("sweep", "values"), f"cache sizes must lie in 0..{net.contents}")
        if sw.axis == "users":
            ratio = sw.users_ratio or net.users
            if len(ratio) != len(net.users) or sum(ratio) == 0:
                r.fail(("sweep", "users_ratio"), f"need {len(net.users)} region weights")
            for v in sw.values:
                if v % sum(ratio):
                    r.fail(("sweep", "values"), f"user count {v} does not split in ratio {list(ratio)}")
        for v in sw.values:
            try:
                apply_axis(spec, sw.axis, v).config()
            except (ModelError, ValueError) as exc:
                r.fail(("sweep", "values"), f"value {v}: {exc}")


def _all_queues(net: NetworkSpec):
    out = [(0, m) for m in range(1, net.contents + 1)]
    out += [(n + 1, m) for n, c in enumerate(net.sbs_cache) for m in c]
    return out


def load_config(path) -> ExperimentSpec:
    with open(path) as fh:
        text = fh.read()
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# sweep axes


def most_popular(popularity, size: int) -> tuple[int, ...]:
    """The ``size`` most popular contents; ties go to the lower index."""
    ranked = sorted(range(1, len(popularity) + 1), key=lambda m: (-popularity[m - 1], m))
    return tuple(sorted(ranked[:size]))


def apply_axis(spec: ExperimentSpec, axis: str, value) -> ExperimentSpec:
    net, arr = spec.network, spec.arrivals
    if axis == "weight":
        return spec.replace(network=dataclasses.replace(net, weight=float(value)))
    if axis == "zipf_alpha":
        return spec.replace(arrivals=dataclasses.replace(arr, popularity=None, zipf_alpha=float(value)))
    if axis == "cache_size":
        cache = most_popular(request_popularity(spec.config(), spec.model()), int(value))
        keep = lambda q: q[0] == 0 or q[1] in cache  # noqa: E731
        return spec.replace(network=dataclasses.replace(
            net, sbs_cache=tuple(cache for _ in net.sbs_cache),
            power_overrides=tuple(o for o in net.power_overrides if keep(o[0])),
            cap_overrides=tuple(o for o in net.cap_overrides if keep(o[0]))))
    if axis == "users":
        ratio = (spec.sweep.users_ratio if spec.sweep and spec.sweep.users_ratio else None) or net.users
        unit = int(value) // sum(ratio)
        return spec.replace(network=dataclasses.replace(net, users=tuple(unit * k for k in ratio)))
    raise ValueError(f"unknown sweep axis {axis!r}")


# ---------------------------------------------------------------------------
# dumping


def _qkey(q):
    return f"{q[0]},{q[1]}"


def spec_to_dict(spec: ExperimentSpec) -> dict:
    net = spec.network
    power = {}
    if net.mbs_power is not None:
        power["mbs"] = net.mbs_power
    if net.sbs_power is not None:
        power["sbs"] = net.sbs_power
    if net.power_overrides:
        power["queues"] = {_qkey(q): p for q, p in net.power_overrides}
    network = {"users": list(net.users), "contents": net.contents,
               "sbs_cache": [list(c) for c in net.sbs_cache], "power": power, "weight": net.weight}
    if net.queue_cap is not None:
        network["queue_cap"] = net.queue_cap
    if net.cap_overrides:
        network["queue_caps"] = {_qkey(q): c for q, c in net.cap_overrides}
    arr = spec.arrivals
    if arr.kind == "independent_pmf":
        arrivals = {"independent_pmf": {_qkey(q): list(p) for q, p in arr.pmfs}}
    elif arr.zipf_alpha is not None:
        arrivals = {"per_user_irm": {"zipf_alpha": arr.zipf_alpha}}
    else:
        arrivals = {"per_user_irm": {"popularity": list(arr.popularity)}}
    b = spec.base_policy
    sim = spec.sim
    out = {
        "network": network,
        "arrivals": arrivals,
        "base_policy": {"p_mbs": b.p_mbs, "p_idle": list(b.p_idle) if isinstance(b.p_idle, tuple) else b.p_idle},
        "solver": dataclasses.asdict(spec.solver),
        "sim": {"horizon": sim.horizon, "replications": sim.replications, "warmup": sim.warmup,
                "seed": sim.seed,
                "initial_state": None if sim.initial_state is None else list(sim.initial_state)},
        "policies": list(spec.policies),
        "output": {"path": spec.output.path, "format": spec.output.format},
    }
    if spec.sweep is not None:
        sw = spec.sweep
        out["sweep"] = {"axis": sw.axis, "values": list(sw.values), "policies": list(sw.policies)}
        if sw.users_ratio is not None:
            out["sweep"]["users_ratio"] = list(sw.users_ratio)
    return out


def dump_config(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec_to_dict(spec), sort_keys=False, default_flow_style=None)
