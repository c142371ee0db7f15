import json

import numpy as np
import pytest

from swapdyn.analysis import AD_TOL, PhaseLabel
from swapdyn.dynamics import Outcome, StepperConfig
from swapdyn.network import NetworkError, validate
from swapdyn.protocols import ProtocolParams
from swapdyn.scenarios import (
    LINK_INVOLUTION,
    ROUTE_INVOLUTION,
    ScenarioConfig,
    ScenarioSpec,
    apply_reduction,
    build_spec,
    decimal_grid,
    is_route_symmetric,
    load_scenario_config,
    parse_grid,
    run_scenario,
    run_sweep,
    scenario_trajectory,
)

PATHS = {
    "1": ("1", "9", "14"),
    "2": ("1", "5", "10"),
    "3": ("2", "6", "10"),
    "4": ("2", "11", "15"),
    "5": ("3", "11", "16"),
    "6": ("3", "7", "12"),
    "7": ("4", "8", "12"),
    "8": ("4", "13", "17"),
}


@pytest.fixture
def spec(example, reference):
    return ScenarioSpec(example, reference, stepper=StepperConfig(max_days=400, run_to_horizon=True))


# fixture


def test_fixture_topology(example):
    assert validate(example) == []
    assert len(example.links) == 17
    assert {r.id: r.links for r in example.routes} == PATHS
    assert [(w.id, w.demand) for w in example.od_pairs] == [("1-11", 90.0), ("2-12", 90.0)]
    assert [r.od_pair for r in example.routes] == ["1-11"] * 4 + ["2-12"] * 4


def test_link_11_is_the_only_shared_link(example):
    shared = {a: {r.od_pair for r in example.routes if a in r.links} for a in example.link_ids}
    assert [a for a, ods in shared.items() if len(ods) > 1] == ["11"]
    assert [r.id for r in example.routes if "11" in r.links] == ["4", "5"]


def test_fixture_parameters_symmetric(example):
    for a, b in LINK_INVOLUTION.items():
        la, lb = example.links[example.link_index[a]], example.links[example.link_index[b]]
        assert (la.free_flow_time, la.capacity) == (lb.free_flow_time, lb.capacity)
    for r, m in ROUTE_INVOLUTION.items():
        mapped = tuple(LINK_INVOLUTION[x] for x in PATHS[r])
        assert mapped == PATHS[m]


def test_fixture_reference_is_symmetric_equilibrium(example, reference):
    from swapdyn.analysis import is_wardrop_ue, relative_gap

    assert is_route_symmetric(reference.flows, example.route_ids)
    assert relative_gap(example, reference.flows) <= 1e-13
    assert is_wardrop_ue(example, reference, epsilon=1e-10).is_ue
    assert np.all(reference.flows > 1.0)


# reductions


def test_reduction_zero_is_identity(example):
    assert apply_reduction(example, "11", 0.0) == example


def test_reduction_halves_one_link(example):
    reduced = apply_reduction(example, "11", 0.5)
    i = example.link_index["11"]
    assert reduced.capacities[i] == example.capacities[i] / 2
    others = np.arange(17) != i
    assert np.array_equal(reduced.capacities[others], example.capacities[others])
    assert np.array_equal(reduced.free_flow_times, example.free_flow_times)


def test_reductions_compose_multiplicatively(example):
    twice = apply_reduction(apply_reduction(example, "11", 0.5), "11", 0.5)
    i = example.link_index["11"]
    assert twice.capacities[i] == example.capacities[i] / 4


def test_reduction_errors(example):
    with pytest.raises(ValueError):
        apply_reduction(example, "11", 1.0)
    with pytest.raises(ValueError):
        apply_reduction(example, "11", -0.1)
    with pytest.raises(NetworkError):
        apply_reduction(example, "99", 0.5)


# grids


def test_decimal_grid_counts():
    thetas = decimal_grid(0.01, 0.01, 0.3)
    assert len(thetas) == 30
    assert thetas[0] == 0.01 and thetas[-1] == 0.3 and thetas[20] == 0.21
    caps = decimal_grid(0.1, 0.1, 0.9)
    assert caps == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]


def test_parse_grid_forms():
    assert parse_grid([0.1, 0.2]) == [0.1, 0.2]
    assert parse_grid(0.3) == [0.3]
    assert parse_grid({"start": 0.1, "step": 0.2, "stop": 0.5}) == [0.1, 0.3, 0.5]
    with pytest.raises(ValueError):
        parse_grid({"start": 0.1, "stop": 0.5})
    with pytest.raises(ValueError):
        decimal_grid(0.5, 0.1, 0.1)


def test_spec_validation(example, reference):
    for bad in (dict(theta_grid=()), dict(theta_grid=(0.2, 0.1)), dict(cap_grid=(0.1, 0.1)),
                dict(cap_grid=(1.0,)), dict(theta_grid=(0.0,)), dict(cap_link="nope")):  # fmt: skip
        with pytest.raises(ValueError):
            ScenarioSpec(example, reference, **bad)


# single cells


def test_no_reduction_stays_at_equilibrium(spec):
    cell = run_scenario(spec, 0.1, 0.0)
    assert cell.termination.outcome is Outcome.CONVERGED
    assert cell.termination.day == 1
    assert cell.ad <= AD_TOL


def test_unstable_equilibrium_is_not_reported_converged(spec):
    # at high theta the equilibrium is an unstable fixed point; rounding noise grows
    cell = run_scenario(spec, 0.3, 0.0)
    assert cell.termination.outcome is Outcome.CYCLE
    assert cell.days_to_converge is None
    assert cell.ad > AD_TOL


def test_stable_cell_returns_to_reference(spec):
    cell = run_scenario(spec, 0.1, 0.5)
    assert cell.termination.outcome is Outcome.CONVERGED
    assert cell.ad <= AD_TOL
    assert cell.days_to_converge == cell.termination.day


def test_unstable_cell_cycles(spec):
    cell = run_scenario(spec, 0.3, 0.5)
    assert cell.termination.outcome is Outcome.CYCLE
    assert cell.termination.period == 2
    assert cell.ad > 1.0


@pytest.mark.parametrize("theta", [0.05, 0.21, 0.22, 0.3])
@pytest.mark.parametrize("cap", [0.1, 0.5, 0.9])
def test_scr_is_symmetric(spec, theta, cap):
    rec = scenario_trajectory(spec, theta, cap)
    assert is_route_symmetric(rec.flows, rec.route_ids)


def test_acr_breaks_symmetry(spec):
    rec = scenario_trajectory(spec, 0.1, 0.5, link="9")
    day1 = rec.state_at(1).flows
    assert day1[0] - rec.flows[0][0] != day1[7] - rec.flows[0][7]
    assert not is_route_symmetric(day1, rec.route_ids)


def test_interfered_routes_drop_on_day_one(spec):
    rec = scenario_trajectory(spec, 0.1, 0.5)
    f0, f1 = rec.state_at(0).flows, rec.state_at(1).flows
    assert f1[3] < f0[3] and f1[4] < f0[4]


def test_scenario_does_not_mutate_network(spec, example):
    before = example.to_dict()
    run_scenario(spec, 0.25, 0.9)
    assert spec.network.to_dict() == before


def test_reduction_lasts_only_the_listed_days(example, reference):
    longer = ScenarioSpec(example, reference, reduction_days=(0, 1, 2), stepper=StepperConfig(max_days=5, detect_cycles=False))
    short = ScenarioSpec(example, reference, stepper=StepperConfig(max_days=5, detect_cycles=False))
    a, b = scenario_trajectory(longer, 0.1, 0.5), scenario_trajectory(short, 0.1, 0.5)
    assert np.array_equal(a.state_at(1).flows, b.state_at(1).flows)
    assert not np.array_equal(a.state_at(2).flows, b.state_at(2).flows)


# sweeps


def test_one_cell_sweep_is_run_scenario(example, reference):
    spec = ScenarioSpec(example, reference, theta_grid=(0.1,), cap_grid=(0.5,))
    result = run_sweep(spec)
    assert result.cells == [run_scenario(spec, 0.1, 0.5)]
    assert result.phase_of(0.1) is PhaseLabel.STABLE


def test_sweep_is_complete_and_ordered(example, reference):
    spec = ScenarioSpec(example, reference, theta_grid=(0.1, 0.2, 0.3), cap_grid=(0.2, 0.6),
                        stepper=StepperConfig(max_days=300, run_to_horizon=True))  # fmt: skip
    result = run_sweep(spec, jobs=2)
    assert [(c.theta, c.cap_fraction) for c in result.cells] == spec.cells
    assert result.phases[0.1] is PhaseLabel.STABLE
    assert result.phases[0.3] is PhaseLabel.UNSTABLE
    assert result.cells == run_sweep(spec, jobs=1).cells


def test_failing_cells_are_recorded(example, reference):
    protocol = ProtocolParams(variant="pap_fixed", kappa=0.2)
    stepper = StepperConfig(max_days=50)
    spec = ScenarioSpec(example, reference, protocol=protocol, stepper=stepper, cap_grid=(0.0, 0.5))
    result = run_sweep(spec)
    ok, failed = result.cells
    assert ok.error is None and ok.termination.outcome is Outcome.CONVERGED
    assert "over-swapping" in failed.error
    assert result.phases == {}


# config files


def test_config_round_trip(tmp_path):
    raw = {
        "network": "example",
        "protocol": {"variant": "npsd", "theta": 0.1},
        "stepper": {"max_days": 50},
        "reductions": [{"link": "9", "fraction": 0.3, "day": 0}],
        "theta_grid": {"start": 0.01, "step": 0.01, "stop": 0.05},
        "cap_grid": [0.1, 0.2],
    }
    cfg = ScenarioConfig.from_dict(raw)
    assert cfg.theta_grid == (0.01, 0.02, 0.03, 0.04, 0.05)
    assert cfg.sweep_link == "9"
    assert cfg.stepper.run_to_horizon
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
    path = tmp_path / "s.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert load_scenario_config(path) == cfg


def test_config_rejects_unknown_and_multi_reductions():
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"thetas": [0.1]})
    two = [{"link": "9", "fraction": 0.1}, {"link": "11", "fraction": 0.1}]
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"reductions": two})


def test_build_spec_with_external_files(tmp_path, example, reference):
    (tmp_path / "net.json").write_text(json.dumps(example.to_dict()))
    (tmp_path / "ref.json").write_text(json.dumps({"flows": reference.as_mapping(example)}))
    cfg = ScenarioConfig.from_dict({"network": "net.json", "reference": "ref.json"})
    spec = build_spec(cfg, tmp_path)
    assert spec.network == example
    assert np.array_equal(spec.reference.flows, reference.flows)
    oracle_cfg = ScenarioConfig.from_dict({"network": "net.json"})
    solved = build_spec(oracle_cfg, tmp_path).reference
    np.testing.assert_allclose(solved.flows, reference.flows, rtol=1e-6)
