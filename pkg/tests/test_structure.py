import numpy as np
import pytest

from hetcast.mdp import Policy, build_kernel, enumerate_states, pia, spia
from hetcast.model import IndependentPmf, NetworkConfig, feasible_actions, power_cost
from hetcast.structure import (
    ClosureConflict,
    check_delta_monotonicity,
    check_threshold_structure,
    check_value_monotonicity,
    delta_uv,
    dominance_closure,
    verify_structure,
)

from helpers import fig3, sweep_instances


@pytest.fixture(scope="module")
def fig3_solved():
    cfg, model = fig3()
    k = build_kernel(cfg, model)
    return cfg, model, k, spia(cfg, model, kernel=k)


# -- delta --------------------------------------------------------------------


def test_delta_diagonal_and_antisymmetry():
    cfg, model = fig3(cap=3)
    rng = np.random.default_rng(5)
    V = rng.normal(size=64)
    acts = feasible_actions(cfg)
    for state in [(0, 0, 0), (1, 3, 2), (3, 3, 3)]:
        for u in acts:
            assert delta_uv(cfg, model, V, state, u, u) == 0
            for v in acts:
                assert delta_uv(cfg, model, V, state, u, v) == -delta_uv(cfg, model, V, state, v, u)


def test_delta_with_zero_values_is_power_difference():
    cfg, model = fig3(cap=3, weight=1.7)
    acts = feasible_actions(cfg)
    for u in acts:
        for v in acts:
            expected = cfg.weight * (power_cost(cfg, u) - power_cost(cfg, v))
            assert delta_uv(cfg, model, np.zeros(64), (2, 1, 3), u, v) == pytest.approx(expected, abs=1e-12)


def test_delta_matches_brute_force_expectation():
    from hetcast.model import enumerate_joint_arrivals, next_state, stage_cost

    cfg, model = fig3(cap=2)
    space = enumerate_states(cfg)
    V = np.random.default_rng(1).normal(size=space.size)
    mats, probs = enumerate_joint_arrivals(cfg, model)

    def J(state, u):
        return stage_cost(cfg, state, u) + sum(p * V[space.index(next_state(cfg, state, u, a))]
                                               for a, p in zip(mats, probs))

    for state in [(0, 0, 0), (2, 1, 0), (1, 2, 2)]:
        u, v = (0, 1), (2, 0)
        assert delta_uv(cfg, model, V, state, u, v) == pytest.approx(J(state, u) - J(state, v))


# -- value and delta monotonicity ---------------------------------------------


def test_value_monotone_on_solved_instance(fig3_solved):
    _, _, k, r = fig3_solved
    assert check_value_monotonicity(r.value, k.space).ok


def test_constant_value_passes():
    cfg, _ = fig3(cap=2)
    assert check_value_monotonicity(np.full(27, 3.0), enumerate_states(cfg)).ok


def test_planted_value_inversion_is_flagged():
    cfg = NetworkConfig.uniform((1,), 1, [], mbs_power=1, sbs_power=1, cap=3)
    space = enumerate_states(cfg)
    res = check_value_monotonicity(np.array([0.0, 2.0, 1.5, 4.0]), space)
    assert not res.ok and len(res.violations) == 1
    assert res.violations[0]["lower"] == (1,) and res.violations[0]["upper"] == (2,)
    assert res.worst == pytest.approx(0.5)


def test_delta_monotone_on_solved_instance(fig3_solved):
    cfg, model, k, r = fig3_solved
    assert check_delta_monotonicity(cfg, model, r.value, kernel=k).ok


def test_delta_smallest_space_with_flat_values_passes():
    # caps are at least 1, so the smallest space has two states
    cfg = NetworkConfig(0, (1,), 1, ({1},), {(0, 1): 1.0}, {(0, 1): 1})
    assert check_delta_monotonicity(cfg, IndependentPmf({}), np.zeros(2)).ok


def test_planted_delta_defect_reports_triple():
    cfg = NetworkConfig.uniform((1,), 1, [], mbs_power=1, sbs_power=1, cap=3)
    model = IndependentPmf({(0, 1): (1.0,)})  # no arrivals: serving lands in 0, idling stays put
    # Delta_{serve,idle}(q) = w*p - V(q) + V(0); a V that dips makes it increase
    V = np.array([0.0, 2.0, 1.0, 3.0])
    res = check_delta_monotonicity(cfg, model, V)
    assert not res.ok
    bad = res.violations[0]
    assert (bad["u"], bad["v"], bad["queue"], bad["state"]) == ((1,), (0,), (0, 1), (1,))
    assert bad["increase"] == pytest.approx(1.0)


# -- threshold structure ------------------------------------------------------


def test_fig3_threshold_structure(fig3_solved):
    cfg, model, k, r = fig3_solved
    rep = verify_structure(cfg, model, r.value, r.policy, kernel=k)
    assert rep.ok, rep.to_dict()
    assert 0 in rep.idle_states
    # a slice through the SBS queue: serving content 1 at the SBS persists once chosen
    phi = rep.phi_minus[((0, 1), (1, 1))]
    assert np.isfinite(phi).any()


def test_all_idle_policy_passes_vacuously():
    cfg, _ = fig3(cap=2)
    space = enumerate_states(cfg)
    pers, idle, mbs, phi_minus, phi_plus, notes = check_threshold_structure(
        Policy.constant(space, feasible_actions(cfg)), space, cfg)
    assert pers.ok and idle.ok and mbs.ok and not notes
    assert all(np.all(v == np.inf) for v in phi_minus.values())
    assert all(np.all(v == 2) for v in phi_plus.values())


def test_phi_sentinels_when_never_chosen():
    cfg, _ = fig3(cap=2)
    space = enumerate_states(cfg)
    always_mbs = Policy.constant(space, feasible_actions(cfg), (1, 0))
    *_, phi_minus, phi_plus, _ = check_threshold_structure(always_mbs, space, cfg)
    assert all(np.all(v == -np.inf) for v in phi_plus.values())
    assert np.all(phi_minus[((1, 0), (0, 1))] == 0)


def test_planted_persistence_violation(fig3_solved):
    cfg, _, k, r = fig3_solved
    index = r.policy.index.copy()
    top = k.space.index((9, 9, 9))
    assert r.policy.actions[index[top]] != (0, 0)
    index[top] = 0
    planted = Policy(k.space, r.policy.actions, index)
    pers, idle, *_ = check_threshold_structure(planted, k.space, cfg)
    assert not pers.ok
    assert all(v["next_state"] == (9, 9, 9) for v in pers.violations)
    assert not idle.ok  # idle at the top forbids serving anywhere below it


def test_planted_mbs_threshold_violation():
    cfg, _ = fig3(cap=2)
    space = enumerate_states(cfg)
    acts = feasible_actions(cfg)
    # MBS serves content 1 from Q_{0,1} = 1 when Q_{1,1} = 0 but only from 2 when Q_{1,1} = 1
    index = np.zeros(space.size, dtype=np.int64)
    for i, (q01, q02, q11) in enumerate(space.states):
        if q01 >= (1 if q11 == 0 else 2):
            index[i] = acts.index((1, 0))
    *_, mbs, _, _, _ = check_threshold_structure(Policy(space, acts, index), space, cfg)
    assert not mbs.ok
    assert {v["queue"] for v in mbs.violations} == {(1, 1)}


def test_idle_closure_exception_is_a_note_not_a_violation():
    # two queues fed by different regions; at (2, 2) the MBS queue is worth
    # batching but at (1, 2) the SBS serves its own queue
    cfg, model = sweep_instances()[3]
    k = build_kernel(cfg, model)
    r = pia(cfg, model, kernel=k)
    rep = verify_structure(cfg, model, r.value, r.policy, kernel=k)
    assert rep.ok
    assert {"queue": (0, 1), "idle_state": (2, 2), "busy_state": (1, 2), "action": (0, 0, 1)} \
        in rep.idle_closure_notes


def test_report_serializes(fig3_solved):
    import json

    cfg, model, k, r = fig3_solved
    d = verify_structure(cfg, model, r.value, r.policy, kernel=k).to_dict()
    assert json.loads(json.dumps(d))["ok"] is True


# -- dominance closure --------------------------------------------------------


def test_closure_examples():
    cfg = NetworkConfig.uniform((1, 1), 1, [{1}], mbs_power=4, sbs_power=2, cap=4)  # queues (0,1), (1,1)
    space = enumerate_states(cfg)
    assert dominance_closure(space, {}, cfg) == {}
    got = dominance_closure(space, {(1, 2): (0, 1)}, cfg)
    assert got == {(1, 2): (0, 1), (1, 3): (0, 1), (1, 4): (0, 1)}
    assert dominance_closure(space, {(1, 2): (0, 0)}, cfg) == {(1, 2): (0, 0)}


def test_closure_idempotent_and_consistent_with_persistence(fig3_solved):
    cfg, _, k, r = fig3_solved
    rng = np.random.default_rng(2)
    seeds = {k.space.state(i): r.policy.action_at(i) for i in rng.choice(k.space.size, 40, replace=False)}
    once = dominance_closure(k.space, seeds, cfg)
    assert dominance_closure(k.space, once, cfg) == once
    assert all(r.policy[s] == u for s, u in once.items())


def test_closure_conflict():
    cfg = NetworkConfig.uniform((1, 1), 1, [{1}], mbs_power=4, sbs_power=2, cap=4)
    space = enumerate_states(cfg)
    with pytest.raises(ClosureConflict):
        dominance_closure(space, {(1, 2): (0, 1), (1, 3): (1, 0)}, cfg)
