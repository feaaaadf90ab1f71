import json

import numpy as np
import pytest

from hetcast.mdp import UnichainError, build_kernel, pia, policy_improvement
from hetcast.model import IndependentPmf, ModelError, NetworkConfig, PerUserIRM
from hetcast.structure import check_threshold_structure
from hetcast.subopt import (
    DecomposedCosts,
    RandomizedBasePolicy,
    _chain,
    base_policy_residual,
    decompose,
    decomposed_value,
    export_values,
    per_queue_chain,
    serve_probability,
    solve_per_queue_value,
    ssa,
    suboptimal_policy,
)

from helpers import fig3, fig4, sweep_instances


def mbs_two_contents():
    return NetworkConfig.uniform((1,), 2, [], mbs_power=3, sbs_power=1, cap=2)


# -- base policy --------------------------------------------------------------


def test_schedule_probabilities_and_serve_probability():
    cfg = mbs_two_contents()
    base = RandomizedBasePolicy.from_popularity(cfg, (0.6, 0.4))
    assert base.prob(0, 1) == pytest.approx(0.42)
    assert serve_probability(base, (0, 1)) == pytest.approx(0.21)
    for n in range(cfg.num_sbs + 1):
        assert abs(sum(base.schedule[n].values()) + base.p_idle[n] - 1) <= 1e-12


def test_serve_probability_extremes():
    cfg, model = fig3()
    mbs_only = RandomizedBasePolicy.from_popularity(cfg, model.popularity, p_mbs=1.0)
    assert serve_probability(mbs_only, (1, 1)) == pytest.approx(mbs_only.prob(0, 1))
    silent = RandomizedBasePolicy.from_popularity(cfg, model.popularity, p_mbs=0.0, p_idle=1.0)
    assert all(serve_probability(silent, q) == 0 for q in cfg.queues)


def test_action_distribution_sums_to_one():
    cfg, model = fig4()
    base = RandomizedBasePolicy.from_popularity(cfg, model.popularity)
    dist = base.action_distribution(cfg)
    assert dist.sum() == pytest.approx(1.0, abs=1e-12)
    # marginal Pr[u_n = m] agrees with the tiered formula
    for n, m in cfg.queues:
        marg = sum(p for p, u in zip(dist, cfg.actions) if u[n] == m)
        assert marg == pytest.approx(base.transmit_probability(n, m))


def test_empty_cache_is_always_idle():
    cfg = NetworkConfig.uniform((1, 1), 2, [set()], mbs_power=3, sbs_power=1, cap=2)
    base = RandomizedBasePolicy.from_popularity(cfg, (0.5, 0.5))
    assert base.p_idle[1] == 1.0 and base.schedule[1] == {}


def test_base_policy_validation():
    with pytest.raises(ModelError):
        RandomizedBasePolicy(0.5, (0.3,), ({1: 0.6},))
    with pytest.raises(ModelError):
        RandomizedBasePolicy(1.5, (1.0,), ({},))
    cfg, model = fig3()
    wrong = RandomizedBasePolicy(0.5, (0.3, 0.3), ({1: 0.7}, {2: 0.7}))
    with pytest.raises(ModelError, match="uncached"):
        decompose(cfg, model, wrong)


# -- per-queue chains ---------------------------------------------------------


def test_chain_examples():
    absorbing = _chain(np.array([1.0]), 3, 1.0)
    assert np.allclose(absorbing[:, 0], 1)
    accumulate = _chain(np.array([0.5, 0.5]), 2, 0.0)
    assert np.allclose(accumulate, [[0.5, 0.5, 0], [0, 0.5, 0.5], [0, 0, 1]])
    P = _chain(np.array([0.4, 0.6]), 2, 0.21)
    assert np.allclose(P[1], [0.21 * 0.4, 0.21 * 0.6 + 0.79 * 0.4, 0.79 * 0.6])
    assert np.allclose(P.sum(axis=1), 1)


def test_per_queue_chain_rows_sum_to_one():
    cfg, model = fig4()
    base = RandomizedBasePolicy.from_popularity(cfg, model.popularity)
    for q in cfg.queues:
        assert np.allclose(per_queue_chain(cfg, model, base, q).sum(axis=1), 1, atol=1e-9)


def test_zero_arrivals_per_queue_cost_is_blind_power():
    cfg = mbs_two_contents().with_weight(2.0)
    base = RandomizedBasePolicy.from_popularity(cfg, (0.6, 0.4))
    model = IndependentPmf({})
    values = decompose(cfg, model, base)
    for (n, m), val in values.items():
        assert val.theta == pytest.approx(cfg.weight * base.transmit_probability(n, m) * cfg.power[(n, m)])


def test_never_served_empty_queue_is_not_unichain():
    cfg = mbs_two_contents()
    base = RandomizedBasePolicy(0.0, (0.3,), ({1: 0.35, 2: 0.35},))
    chain = per_queue_chain(cfg, IndependentPmf({}), base, (0, 1))
    with pytest.raises(UnichainError):
        solve_per_queue_value(chain, (0, 1), cfg, base)


def test_per_queue_values_monotone_and_normalized():
    for cfg, model in sweep_instances(count=8):
        base = RandomizedBasePolicy.from_popularity(
            cfg, model.popularity if isinstance(model, PerUserIRM) else np.full(cfg.contents, 1 / cfg.contents))
        for val in decompose(cfg, model, base).values():
            assert val.v[0] == 0 and np.all(np.diff(val.v) >= -1e-9)


# -- decomposition exactness --------------------------------------------------


@pytest.mark.parametrize("make", [fig3, fig4])
def test_decomposition_solves_full_base_policy_equation(make):
    cfg, model = make()
    k = build_kernel(cfg, model)
    base = RandomizedBasePolicy.from_popularity(cfg, model.popularity)
    values = decompose(cfg, model, base)
    assert np.max(np.abs(base_policy_residual(cfg, model, base, values, kernel=k))) <= 1e-6


def test_decomposition_residual_detects_wrong_values():
    cfg, model = fig3(cap=4)
    base = RandomizedBasePolicy.from_popularity(cfg, model.popularity)
    values = decompose(cfg, model, base)
    values[(1, 1)].v[2] += 0.1
    assert np.max(np.abs(base_policy_residual(cfg, model, base, values))) > 1e-3


# -- improved policy and SSA ------------------------------------------------


def test_zero_values_give_all_idle():
    cfg, model = fig3(cap=3)
    base = RandomizedBasePolicy.from_popularity(cfg, model.popularity)
    values = decompose(cfg, model, base)
    for val in values.values():
        val.v[:] = 0.0
    assert np.all(suboptimal_policy(cfg, model, values).index == 0)


def test_single_queue_subopt_equals_optimal():
    cfg = NetworkConfig.uniform((2,), 1, [], mbs_power=3, sbs_power=1, cap=5)
    model = PerUserIRM((1.0,))
    for w in (0.2, 1.0, 3.0, 8.0):
        c = cfg.with_weight(w)
        base = RandomizedBasePolicy.from_popularity(c, (1.0,))
        assert suboptimal_policy(c, model, decompose(c, model, base)) == pia(c, model).policy


def test_suboptimal_is_one_step_improvement_of_decomposed_value():
    cfg, model = fig4()
    k = build_kernel(cfg, model)
    base = RandomizedBasePolicy.from_popularity(cfg, model.popularity)
    values = decompose(cfg, model, base)
    _, V = decomposed_value(cfg, values, k.space)
    assert suboptimal_policy(cfg, model, values, space=k.space) == policy_improvement(cfg, model, V, kernel=k)


def test_online_costs_agree_with_table():
    cfg, model = fig4()
    base = RandomizedBasePolicy.from_popularity(cfg, model.popularity)
    values = decompose(cfg, model, base)
    pol = suboptimal_policy(cfg, model, values)
    rule = DecomposedCosts(cfg, model, values)
    assert np.array_equal(rule.actions(pol.space.states), pol.index)


def test_ssa_equals_direct_and_skips_on_fig4():
    cfg, model = fig4()
    base = RandomizedBasePolicy.from_popularity(cfg, model.popularity)
    res = ssa(cfg, model, base)
    assert res.policy == suboptimal_policy(cfg, model, res.values)
    assert res.skips > 0 and res.minimizations == res.decisions - res.skips


def test_ssa_zero_arrivals_idles_where_the_chain_lives():
    # with nothing arriving the empty state is the only reachable one and it idles;
    # nonempty (transient) states are still worth draining
    cfg, _ = fig3(cap=3)
    base = RandomizedBasePolicy.from_popularity(cfg, (0.6, 0.4))
    pol = ssa(cfg, IndependentPmf({}), base).policy
    assert pol[(0, 0, 0)] == (0, 0)
    assert pol[(3, 3, 3)] != (0, 0)


def test_suboptimal_threshold_structure_on_fig3():
    cfg, model = fig3()
    base = RandomizedBasePolicy.from_popularity(cfg, model.popularity)
    pol = ssa(cfg, model, base).policy
    pers, idle, mbs, *_ = check_threshold_structure(pol, pol.space, cfg)
    assert pers.ok and idle.ok and mbs.ok


def test_export_values_round_trips_through_json():
    cfg, model = fig3(cap=3)
    values = decompose(cfg, model, RandomizedBasePolicy.from_popularity(cfg, model.popularity))
    rows = json.loads(json.dumps(export_values(values)))
    assert [tuple(r["queue"]) for r in rows] == cfg.queues
    assert rows[0]["v"] == pytest.approx(list(values[(0, 1)].v))
