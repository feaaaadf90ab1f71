"""Shared instances and the acceptance-result registry for the test suite."""
from __future__ import annotations

import numpy as np

from hetcast.model import IndependentPmf, NetworkConfig, PerUserIRM, marginal_arrival_pmf, zipf_popularity

ACCEPTANCE_LINES: list[str] = []


def fig3(cap=9, weight=1.0):
    """One SBS caching content 1, two contents requested w.p. 0.6 / 0.4, two users per region."""
    cfg = NetworkConfig.uniform((2, 2), 2, [{1}], mbs_power=4, sbs_power=2, cap=cap, weight=weight)
    return cfg, PerUserIRM((0.6, 0.4))


def fig4(weight=1.0, cap=4):
    """1 MBS, 1 SBS, 4 users, 3 contents, Zipf(0.75), SBS caches content 1."""
    cfg = NetworkConfig.uniform((2, 2), 3, [{1}], mbs_power=4, sbs_power=2, cap=cap, weight=weight)
    return cfg, PerUserIRM(tuple(zipf_popularity(3, 0.75)))


def random_pmf(rng, size):
    p = rng.dirichlet(np.ones(size))
    p[-1] = 1.0 - p[:-1].sum()
    return tuple(float(x) for x in p)


def random_instance(rng, max_states=3000, max_queues=5):
    """A random small network; rejects draws above the state budget."""
    while True:
        N = int(rng.integers(0, 3))
        M = int(rng.integers(1, 4))
        cache = [set(int(c) for c in rng.choice(np.arange(1, M + 1), size=int(rng.integers(0, M + 1)),
                                                   replace=False)) for _ in range(N)]
        users = tuple(int(k) for k in rng.integers(0, 3, size=N + 1))
        cap = int(rng.integers(1, 8))
        cfg = NetworkConfig.uniform(users, M, cache, mbs_power=float(rng.uniform(1, 8)),
                                    sbs_power=float(rng.uniform(0.5, 4)), cap=cap,
                                    weight=float(rng.uniform(0.1, 4)))
        size = int(np.prod(cfg.caps + 1))
        if cfg.num_queues > max_queues or size > max_states or size < 8:
            continue
        if rng.random() < 0.7:
            if sum(users) == 0:
                continue
            model = PerUserIRM(random_pmf(rng, M))
        else:
            pmfs = {(n, m): random_pmf(rng, int(rng.integers(2, 4)))
                    for n in range(N + 1) for m in range(1, M + 1) if rng.random() < 0.7}
            model = IndependentPmf(pmfs)
        # all-idle (the policy-iteration start) must be unichain: every queue needs arrivals
        if any(marginal_arrival_pmf(cfg, model, q)[0] == 1.0 for q in cfg.queues):
            continue
        return cfg, model


def sweep_instances(count=24, seed=20240601):
    """The randomized cross-check set; the fig4.yaml network is always included."""
    rng = np.random.default_rng(seed)
    return [fig4()] + [random_instance(rng) for _ in range(count - 1)]


def tiny_instances():
    """Oracle-scale instances: at most 2 queues, caps at most 2, at most 4 actions."""
    out = []
    one = NetworkConfig.uniform((1,), 1, [], mbs_power=3, sbs_power=1, cap=2, weight=0.7)
    out.append((one, IndependentPmf({(0, 1): (0.4, 0.6)})))
    two = NetworkConfig.uniform((1,), 2, [], mbs_power=2, sbs_power=1, cap=2, weight=1.0)
    out.append((two, PerUserIRM((0.7, 0.3))))
    sbs = NetworkConfig.uniform((1, 1), 1, [{1}], mbs_power=3, sbs_power=1, cap=2, weight=1.0)
    out.append((sbs, IndependentPmf({(0, 1): (0.5, 0.5), (1, 1): (0.3, 0.7)})))
    out.append((sbs.with_weight(0.2), IndependentPmf({(0, 1): (0.8, 0.2), (1, 1): (0.6, 0.4)})))
    nocache = NetworkConfig.uniform((1, 1), 1, [set()], mbs_power=2, sbs_power=1, cap=2, weight=0.5)
    out.append((nocache, PerUserIRM((1.0,))))
    mixed = NetworkConfig(1, (1, 1), 1, ({1}, {1}), {(0, 1): 4.0, (1, 1): 1.5},
                          {(0, 1): 1, (1, 1): 2}, weight=2.0)
    out.append((mixed, IndependentPmf({(0, 1): (0.3, 0.7), (1, 1): (0.5, 0.25, 0.25)})))
    return out
