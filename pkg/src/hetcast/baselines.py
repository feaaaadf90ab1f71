"""Comparison policies: the myopic greedy rule and the randomized base policy sampler."""
from __future__ import annotations

import numpy as np

from .mdp import Policy, StateSpace, canonical_argmin, enumerate_states
from .model import Action, NetworkConfig, QueueState
from .subopt import RandomizedBasePolicy


def greedy_cost(config: NetworkConfig, state: QueueState, u: Action) -> float:
    """C(Q, u): transmission cost minus the requests each transmission clears."""
    Q = config.state_dict(state)
    total = 0.0
    m = u[0]
    if m:
        total += config.weight * config.power[(0, m)] - Q[(0, m)]
        total -= sum(Q[(n, m)] for n in config.caching_sbs(m))
    for n in range(1, config.num_sbs + 1):
        m = u[n]
        if m:
            total += config.weight * config.power[(n, m)] - Q[(n, m)]
    return total


def greedy_action(config: NetworkConfig, state: QueueState) -> Action:
    costs = np.array([greedy_cost(config, state, u) for u in config.actions])
    return config.actions[int(canonical_argmin(costs)[0])]


class GreedyPolicy:
    """Vectorized greedy rule: argmin_u w p(u) - (requests cleared by u)."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        self._served_t = config.served.T.astype(float)
        self._power = config.weight * config.action_power

    def costs(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        return self._power[None, :] - states @ self._served_t

    def actions(self, states: np.ndarray) -> np.ndarray:
        return canonical_argmin(self.costs(states))

    def table(self, space: StateSpace | None = None) -> Policy:
        space = space or enumerate_states(self.config)
        return Policy(space, list(self.config.actions), self.actions(space.states))


def sample_base_action(base: RandomizedBasePolicy, rng: np.random.Generator) -> Action:
    """Draw the operating tier, then an idle/content choice for each operating BS."""
    u = [0] * (base.num_sbs + 1)
    operating = [0] if rng.random() < base.p_mbs else range(1, base.num_sbs + 1)
    for n in operating:
        r = rng.random()
        acc = base.p_idle[n]
        if r < acc:
            continue
        contents = sorted(base.schedule[n])
        for m in contents:
            acc += base.schedule[n][m]
            if r < acc:
                u[n] = m
                break
        else:  # rounding left r above the last partial sum
            u[n] = contents[-1]
    return tuple(u)
