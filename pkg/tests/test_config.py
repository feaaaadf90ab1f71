import textwrap
from pathlib import Path

import pytest

import hetcast.config
from hetcast.config import (
    ConfigError,
    apply_axis,
    dump_config,
    load_config,
    most_popular,
    parse_config,
)
from hetcast.model import IndependentPmf, PerUserIRM

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

FIG3 = """\
network:
  users: [2, 2]
  contents: 2
  sbs_cache: [[1]]
  power: {mbs: 4, sbs: 2}
  queue_cap: 9
arrivals:
  per_user_irm: {popularity: [0.6, 0.4]}
"""


def test_fig3_file():
    spec = parse_config(FIG3)
    cfg = spec.config()
    assert cfg.num_sbs == 1 and cfg.contents == 2
    assert cfg.cache[1] == {1}
    assert spec.model() == PerUserIRM((0.6, 0.4))
    assert cfg.queues == [(0, 1), (0, 2), (1, 1)]


def test_minimal_single_queue_defaults():
    spec = parse_config("network: {users: [1], contents: 1, power: {mbs: 2}, queue_cap: 3}\n"
                        "arrivals: {independent_pmf: {'0,1': [0.5, 0.5]}}\n")
    cfg = spec.config()
    assert cfg.queues == [(0, 1)] and cfg.weight == 1.0
    assert spec.solver.method == "spia" and spec.solver.damping == 1.0
    assert (spec.sim.horizon, spec.sim.replications, spec.sim.warmup) == (100_000, 20, 1_000)
    assert (spec.base_policy.p_mbs, spec.base_policy.p_idle) == (0.5, 0.3)
    assert spec.sweep is None and spec.output.format == "csv"
    assert isinstance(spec.model(), IndependentPmf)


def error_line(text):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    return str(exc.value)


def test_idle_power_rejected_with_line():
    text = FIG3.replace("power: {mbs: 4, sbs: 2}", "power:\n    mbs: 4\n    sbs: 2\n    queues: {\"1,0\": 1.5}")
    msg = error_line(text)
    assert msg.startswith("line 8:") and "p(1,0)" in msg


def test_unknown_key_has_line():
    msg = error_line(FIG3 + "sim:\n  horizon: 1000\n  warmpu: 10\n")
    assert msg.startswith("line 11:") and "warmpu" in msg


def test_missing_caps():
    msg = error_line(FIG3.replace("  queue_cap: 9\n", ""))
    assert "missing queue caps" in msg


def test_partial_cap_overrides_are_fine_with_default():
    spec = parse_config(FIG3.replace("queue_cap: 9", "queue_cap: 9\n  queue_caps: {\"1,1\": 4}"))
    assert spec.config().queue_caps[(1, 1)] == 4 and spec.config().queue_caps[(0, 1)] == 9


def test_invariant_violations_are_located():
    assert "line 7" in error_line(FIG3.replace("[0.6, 0.4]", "[0.6, 0.5]"))
    assert "network" in error_line(FIG3.replace("sbs_cache: [[1]]", "sbs_cache: [[3]]"))
    assert "duplicate" in error_line(FIG3 + "network: {}\n")
    assert "malformed" in error_line("network: [1, 2\n")
    assert "expected a number" in error_line(FIG3.replace("queue_cap: 9", "queue_cap: nine"))
    assert "damping" in error_line(FIG3 + "solver: {damping: 0}\n")


def test_sweep_validation():
    assert "users_ratio" in error_line(FIG3 + "sweep: {axis: weight, values: [1], users_ratio: [1, 1]}\n")
    assert "does not split" in error_line(FIG3 + "sweep: {axis: users, values: [5]}\n")
    assert "cache sizes" in error_line(FIG3 + "sweep: {axis: cache_size, values: [3]}\n")
    assert "unknown sweep axis" in error_line(FIG3 + "sweep: {axis: colour, values: [1]}\n")


def test_load_config_prefixes_path(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text(FIG3 + "bogus: 1\n")
    with pytest.raises(ConfigError, match=str(p)):
        load_config(p)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.name)
def test_round_trip(path):
    spec = load_config(path)
    again = parse_config(dump_config(spec))
    assert again == spec
    assert dump_config(again) == dump_config(spec)


def test_round_trip_of_overrides():
    text = """\
network:
  users: [1, 2, 0]
  contents: 3
  sbs_cache: [[1, 2], [3]]
  power: {mbs: 5, sbs: 1.5, queues: {"2,3": 0.75}}
  queue_caps: {"0,1": 2, "0,2": 3, "0,3": 1, "1,1": 2, "1,2": 2, "2,3": 4}
  weight: 0.5
arrivals:
  independent_pmf: {"1,1": [0.2, 0.8], "2,3": [0.5, 0.25, 0.25]}
base_policy: {p_mbs: 0.25, p_idle: [0.1, 0.2, 0.3]}
solver: {method: rvia, damping: 0.5}
sim: {horizon: 500, replications: 2, warmup: 5, seed: 7, initial_state: [1, 0, 0, 2, 1, 3]}
policies: [optimal, base]
output: {path: out.csv, format: report}
"""
    spec = parse_config(text)
    assert parse_config(dump_config(spec)) == spec
    assert spec.config().power[(2, 3)] == 0.75


def test_most_popular_ties_by_index():
    assert most_popular([0.2, 0.4, 0.2, 0.2], 2) == (1, 2)
    assert most_popular([0.5, 0.3, 0.2], 0) == ()


def test_axes():
    spec = load_config(CONFIGS / "fig6_cache.yaml")
    cfg = apply_axis(spec, "cache_size", 4).config()
    assert cfg.cache[1] == cfg.cache[2] == {1, 2, 3, 4}
    users = apply_axis(load_config(CONFIGS / "fig7_users.yaml"), "users", 50).config()
    assert users.users_per_region == (10, 20, 20)
    z = apply_axis(spec, "zipf_alpha", 0.0).model()
    assert z.popularity == pytest.approx([0.05] * 20)
    assert apply_axis(spec, "weight", 2.5).config().weight == 2.5


def test_schema_example_in_module_docstring_parses():
    spec = parse_config(textwrap.dedent(hetcast.config.__doc__.split("::", 1)[1]))
    assert spec.solver.state_limit == 10_000_000 and spec.sweep.axis == "weight"
